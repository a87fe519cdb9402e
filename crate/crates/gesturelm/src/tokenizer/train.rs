//! Tokenizer training loop, tokenization pipeline and checkpointing.

use super::{vqvae_loss, GestureTokenSeq, LossBreakdown, TokenizerConfig, VqVae};
use crate::motion::{MotionSequence, Skeleton};
use crate::nn;
use crate::{Error, Result};
use candle_core::DType;
use candle_nn::Optimizer;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Clone, Default)]
pub struct TrainLog {
    /// Mean loss breakdown per epoch.
    pub epochs: Vec<LossBreakdown>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct TokenizerMeta {
    pub config: TokenizerConfig,
    pub epoch: usize,
}

/// Train the VQ-VAE on motion reconstruction.
///
/// Single-threaded and deterministic for a fixed config seed.
pub fn train_tokenizer(
    dataset: &[MotionSequence],
    config: &TokenizerConfig,
    skeleton: &Skeleton,
    dtype: DType,
) -> Result<(VqVae, TrainLog)> {
    if dataset.is_empty() {
        return Err(Error::InvalidInput("tokenizer training set is empty".into()));
    }
    let model = VqVae::new(config.clone(), dtype);
    seed_codebook_from_data(&model, dataset)?;
    let params = candle_nn::ParamsAdamW {
        lr: config.lr,
        weight_decay: 0.01,
        ..Default::default()
    };
    let mut opt = candle_nn::AdamW::new(model.store.all_vars(), params)?;
    let mut log = TrainLog::default();
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    for epoch in 0..config.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ (epoch as u64).wrapping_mul(0x9e37));
        order.shuffle(&mut rng);
        let mut sums = [0.0f64; 8];
        let mut seen = 0usize;
        let mut usage = vec![0usize; config.codebook_size];
        let mut steps_since_revival = 0usize;
        for batch_idx in order.chunks(config.batch_size.max(1)) {
            let windows: Vec<&MotionSequence> = batch_idx.iter().map(|&i| &dataset[i]).collect();
            let x = model.motion_batch(&windows)?;
            let z = model.encode(&x)?;
            let (ids, zq, passthrough) = model.quantize_batch(&z)?;
            for id in ids.iter().flatten() {
                usage[*id as usize] += 1;
            }
            let xhat = model.decode(&passthrough)?;
            let (total, parts) = vqvae_loss(
                &x,
                &xhat,
                &z,
                &zq,
                skeleton,
                config.beta,
                config.fps,
                config.derivative_on_positions,
            )?;
            opt.backward_step(&total)?;
            let w = windows.len() as f64;
            for (slot, v) in sums.iter_mut().zip([
                parts.rec6d,
                parts.rec_axis_angle,
                parts.rec_joint_pos,
                parts.rec_geodesic,
                parts.codebook,
                parts.velocity,
                parts.acceleration,
                parts.total,
            ]) {
                *slot += v * w;
            }
            seen += windows.len();
            steps_since_revival += 1;
            if steps_since_revival >= REVIVAL_INTERVAL {
                revive_dead_codes(
                    &model,
                    dataset,
                    &usage,
                    config.seed ^ ((epoch as u64) << 20 | seen as u64),
                )?;
                usage.iter_mut().for_each(|c| *c = 0);
                steps_since_revival = 0;
            }
        }
        let n = seen as f64;
        log.epochs.push(LossBreakdown {
            rec6d: sums[0] / n,
            rec_axis_angle: sums[1] / n,
            rec_joint_pos: sums[2] / n,
            rec_geodesic: sums[3] / n,
            codebook: sums[4] / n,
            velocity: sums[5] / n,
            acceleration: sums[6] / n,
            total: sums[7] / n,
        });
        if steps_since_revival > 0 {
            revive_dead_codes(&model, dataset, &usage, config.seed ^ (epoch as u64 + 1))?;
        }
    }
    Ok((model, log))
}

/// Optimizer steps between dead-code checks during tokenizer training.
const REVIVAL_INTERVAL: usize = 16;

/// Reset codebook entries that went unused since the last check to the sampled
/// latents with the worst quantization error. Without this, the commitment
/// term steadily merges encoder clusters and the codebook collapses onto a
/// handful of codes; resets keep rare motion content representable.
/// Deterministic for a fixed seed.
fn revive_dead_codes(
    model: &VqVae,
    dataset: &[MotionSequence],
    usage: &[usize],
    seed: u64,
) -> Result<()> {
    let dead: Vec<usize> =
        usage.iter().enumerate().filter(|&(_, &c)| c == 0).map(|(i, _)| i).collect();
    if dead.is_empty() {
        return Ok(());
    }
    let cfg = &model.config;
    let d = cfg.embed_dim;
    let sample_windows = (8 * cfg.codebook_size).div_ceil(cfg.chunks).min(dataset.len());
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xdead_c0de);
    order.shuffle(&mut rng);
    // (quantization error, latent) per sampled chunk.
    let mut candidates: Vec<(f64, Vec<f64>)> = Vec::new();
    for chunk_idx in order[..sample_windows].chunks(cfg.batch_size.max(1)) {
        let windows: Vec<&MotionSequence> = chunk_idx.iter().map(|&i| &dataset[i]).collect();
        let x = model.motion_batch(&windows)?;
        let z = model.encode(&x)?;
        let (_ids, zq, _) = model.quantize_batch(&z)?;
        let zf: Vec<f64> = z.to_dtype(DType::F64)?.flatten_all()?.to_vec1()?;
        let qf: Vec<f64> = zq.to_dtype(DType::F64)?.flatten_all()?.to_vec1()?;
        for (zl, ql) in zf.chunks(d).zip(qf.chunks(d)) {
            let err: f64 = zl.iter().zip(ql).map(|(a, b)| (a - b) * (a - b)).sum();
            candidates.push((err, zl.to_vec()));
        }
    }
    candidates.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap_or(std::cmp::Ordering::Equal));
    let entries = model.codebook.entries();
    let mut rows: Vec<f64> =
        entries.as_tensor().to_dtype(DType::F64)?.flatten_all()?.to_vec1()?;
    for (slot, (_, latent)) in dead.iter().zip(&candidates) {
        rows[slot * d..(slot + 1) * d].copy_from_slice(latent);
    }
    let t = candle_core::Tensor::from_vec(rows, (cfg.codebook_size, d), model.store.device())?
        .to_dtype(model.store.dtype())?;
    entries.set(&t)?;
    Ok(())
}

/// Initialize the codebook from encoder latents of the training data.
///
/// A random normal init can leave every latent nearest the same entry, and
/// the commitment term then collapses the whole codebook onto one code.
/// Instead, sample chunk latents with the untrained encoder and pick K of
/// them by farthest-point selection, so initial entries cover the latent
/// distribution. Deterministic for a fixed config seed.
fn seed_codebook_from_data(model: &VqVae, dataset: &[MotionSequence]) -> Result<()> {
    let cfg = &model.config;
    let k = cfg.codebook_size;
    let d = cfg.embed_dim;
    // Sample enough windows that motif-bearing chunks are represented even
    // when most of the corpus is an idle pose.
    let sample_windows = (8 * k).div_ceil(cfg.chunks).min(dataset.len());
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xc0de_b00c);
    order.shuffle(&mut rng);
    let mut latents: Vec<Vec<f64>> = Vec::new();
    for chunk_idx in order[..sample_windows].chunks(cfg.batch_size.max(1)) {
        let windows: Vec<&MotionSequence> = chunk_idx.iter().map(|&i| &dataset[i]).collect();
        let x = model.motion_batch(&windows)?;
        let z = model.encode(&x)?.to_dtype(DType::F64)?;
        let flat: Vec<f64> = z.flatten_all()?.to_vec1()?;
        latents.extend(flat.chunks(d).map(|c| c.to_vec()));
    }
    // Farthest-point selection for coverage; reuse samples cyclically if the
    // corpus offers fewer latents than codebook entries.
    let dist2 = |a: &[f64], b: &[f64]| -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
    };
    let mut chosen: Vec<usize> = vec![0];
    let mut min_d2: Vec<f64> = latents.iter().map(|l| dist2(l, &latents[0])).collect();
    while chosen.len() < k.min(latents.len()) {
        let (next, _) = min_d2
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap_or(std::cmp::Ordering::Equal))
            .unwrap();
        chosen.push(next);
        for (i, l) in latents.iter().enumerate() {
            let d2 = dist2(l, &latents[next]);
            if d2 < min_d2[i] {
                min_d2[i] = d2;
            }
        }
    }
    let mut rows: Vec<f64> = Vec::with_capacity(k * d);
    for i in 0..k {
        let src = &latents[chosen[i % chosen.len()]];
        if i < chosen.len() {
            rows.extend_from_slice(src);
        } else {
            // Duplicate picks get a small deterministic jitter so entries
            // stay distinct.
            use rand_distr::Distribution;
            let normal = rand_distr::Normal::new(0.0f64, 1e-3).unwrap();
            rows.extend(src.iter().map(|v| v + normal.sample(&mut rng)));
        }
    }
    let t = candle_core::Tensor::from_vec(rows, (k, d), model.store.device())?
        .to_dtype(model.store.dtype())?;
    model.codebook.entries().set(&t)?;
    Ok(())
}

/// Tokenize an utterance's motion into a BOG-wrapped id sequence.
///
/// The motion must already be padded to a multiple of the window length;
/// each window contributes M ids and each interior token carries its frame
/// span. One BOG/EOG pair wraps the whole utterance.
pub fn tokenize(model: &VqVae, motion: &MotionSequence) -> Result<GestureTokenSeq> {
    let cfg = &model.config;
    if motion.n_frames % cfg.window != 0 {
        return Err(Error::InvalidInput(format!(
            "{} frames is not a multiple of the {}-frame window; pad upstream",
            motion.n_frames, cfg.window
        )));
    }
    if motion.n_joints != cfg.n_joints {
        return Err(Error::ShapeMismatch(format!(
            "motion has {} joints, tokenizer expects {}",
            motion.n_joints, cfg.n_joints
        )));
    }
    let per = cfg.frames_per_token();
    let mut ids = vec![model.codebook.bog_id()];
    let mut spans: Vec<Option<(usize, usize)>> = vec![None];
    for w in 0..motion.n_frames / cfg.window {
        let window = motion.window(w * cfg.window, (w + 1) * cfg.window)?;
        let z = model.encode_motion(&window)?;
        let (window_ids, _zq, _) = model.codebook.quantize(&z)?;
        for (c, id) in window_ids.into_iter().enumerate() {
            let start = w * cfg.window + c * per;
            ids.push(id);
            spans.push(Some((start, start + per)));
        }
    }
    ids.push(model.codebook.eog_id());
    spans.push(None);
    Ok(GestureTokenSeq { ids, spans })
}

impl VqVae {
    pub fn save(&self, path: &Path, epoch: usize) -> Result<()> {
        let meta = TokenizerMeta { config: self.config.clone(), epoch };
        nn::save_checkpoint(&self.store, path, &meta)
    }

    pub fn load(path: &Path, dtype: DType) -> Result<(Self, usize)> {
        let meta: TokenizerMeta = nn::load_checkpoint_meta(path)?;
        let model = VqVae::new(meta.config, dtype);
        model.store.load(path)?;
        Ok((model, meta.epoch))
    }
}
