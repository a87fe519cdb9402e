//! Alignment training: projector + gesture head against a frozen LM.

use super::model::{AlignConfig, AlignMeta, AlignModel};
use super::pair::{mask_tokens, PairedExample};
use crate::nn::{self, cosine_lr};
use crate::textlm::LmBackbone;
use crate::tokenizer::Codebook;
use crate::{Error, Result};
use candle_core::DType;
use candle_nn::{AdamW, Optimizer, ParamsAdamW};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct AlignLog {
    /// Per-epoch (training L_FA, validation L_FA).
    pub epochs: Vec<(f64, f64)>,
    pub best_epoch: usize,
    pub best_val: f64,
}

/// Train the alignment stage. Only the projector, gesture head, and reserved
/// gesture embeddings receive updates; `lm` and `codebook` are frozen.
///
/// Early-stops on validation L_FA (masking for validation is fixed by seed
/// so epochs are comparable); the best-epoch parameters are restored.
pub fn train_alignment(
    train_pairs: &[PairedExample],
    val_pairs: &[PairedExample],
    lm: &LmBackbone,
    codebook: &Codebook,
    config: AlignConfig,
    dtype: DType,
) -> Result<(AlignModel, AlignLog)> {
    if train_pairs.is_empty() || val_pairs.is_empty() {
        return Err(Error::Data("alignment needs non-empty train and validation sets".into()));
    }
    let model = AlignModel::new(
        config.clone(),
        codebook.size(),
        codebook.dim(),
        lm.hidden(),
        dtype,
    );
    let gmask = codebook.gmask_id();

    let mut opt = AdamW::new(
        model.store.all_vars(),
        ParamsAdamW { lr: config.lr, weight_decay: 0.01, ..Default::default() },
    )?;
    let steps_per_epoch = train_pairs.len().div_ceil(config.batch_size);
    let total_steps = steps_per_epoch * config.epochs;

    // One fixed masking of the validation set for the whole run.
    let mut val_rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_0a11);
    let masked_val: Vec<PairedExample> = val_pairs
        .iter()
        .map(|p| mask_tokens(p, config.mask_text, config.mask_gesture, gmask, &mut val_rng))
        .collect::<Result<_>>()?;

    let mut log = AlignLog::default();
    let mut best: Option<(f64, std::collections::BTreeMap<String, Vec<f64>>)> = None;
    let mut stale = 0usize;
    let mut step = 0usize;
    for epoch in 0..config.epochs {
        let mut order: Vec<usize> = (0..train_pairs.len()).collect();
        let mut epoch_rng =
            ChaCha8Rng::seed_from_u64(config.seed ^ (epoch as u64).wrapping_mul(0x9e37_79b9));
        order.shuffle(&mut epoch_rng);
        let mut train_sum = 0.0;
        let mut train_batches = 0usize;
        for chunk in order.chunks(config.batch_size) {
            let masked: Vec<PairedExample> = chunk
                .iter()
                .map(|&i| {
                    mask_tokens(
                        &train_pairs[i],
                        config.mask_text,
                        config.mask_gesture,
                        gmask,
                        &mut epoch_rng,
                    )
                })
                .collect::<Result<_>>()?;
            let refs: Vec<&PairedExample> = masked.iter().collect();
            let loss = model.loss(lm, codebook, &refs)?;
            opt.set_learning_rate(cosine_lr(step, total_steps, config.warmup_ratio, config.lr));
            opt.backward_step(&loss.total)?;
            train_sum += loss.fa;
            train_batches += 1;
            step += 1;
        }
        let val = validation_loss(&model, lm, codebook, &masked_val, config.batch_size)?;
        log.epochs.push((train_sum / train_batches.max(1) as f64, val));
        let improved = best.as_ref().is_none_or(|(b, _)| val < *b);
        if improved {
            best = Some((val, model.store.snapshot()));
            log.best_epoch = epoch;
            log.best_val = val;
            stale = 0;
        } else {
            stale += 1;
            if stale >= config.patience {
                break;
            }
        }
    }
    if let Some((_, snap)) = best {
        model.store.restore(&snap)?;
    }
    Ok((model, log))
}

/// Mean L_FA over an already-masked evaluation set.
pub fn validation_loss(
    model: &AlignModel,
    lm: &LmBackbone,
    codebook: &Codebook,
    masked_pairs: &[PairedExample],
    batch_size: usize,
) -> Result<f64> {
    let mut sum = 0.0;
    let mut n = 0usize;
    for chunk in masked_pairs.chunks(batch_size.max(1)) {
        let refs: Vec<&PairedExample> = chunk.iter().collect();
        sum += model.loss(lm, codebook, &refs)?.fa;
        n += 1;
    }
    Ok(sum / n.max(1) as f64)
}

/// Train one alignment per masking percentage and report validation L_FA.
/// Returns `(percent, validation loss)` rows in input order.
pub fn masking_sweep(
    pcts: &[u32],
    train_pairs: &[PairedExample],
    val_pairs: &[PairedExample],
    lm: &LmBackbone,
    codebook: &Codebook,
    base: &AlignConfig,
    dtype: DType,
) -> Result<Vec<(u32, f64)>> {
    let mut rows = Vec::with_capacity(pcts.len());
    for &pct in pcts {
        if pct >= 100 {
            return Err(Error::InvalidInput(format!("masking percentage {pct} must be < 100")));
        }
        let p = pct as f64 / 100.0;
        let cfg = AlignConfig { mask_text: p, mask_gesture: p, ..base.clone() };
        let (_, log) = train_alignment(train_pairs, val_pairs, lm, codebook, cfg, dtype)?;
        rows.push((pct, log.best_val));
    }
    Ok(rows)
}

impl AlignModel {
    pub fn save(&self, path: &Path, lm_hidden: usize) -> Result<()> {
        let meta = AlignMeta {
            config: self.config.clone(),
            codebook_size: self.codebook_size(),
            codebook_dim: self.codebook_dim(),
            lm_hidden,
        };
        nn::save_checkpoint(&self.store, path, &meta)
    }

    pub fn load(path: &Path, dtype: DType) -> Result<Self> {
        let meta: AlignMeta = nn::load_checkpoint_meta(path)?;
        let model = AlignModel::new(
            meta.config,
            meta.codebook_size,
            meta.codebook_dim,
            meta.lm_hidden,
            dtype,
        );
        model.store.load(path)?;
        Ok(model)
    }
}
