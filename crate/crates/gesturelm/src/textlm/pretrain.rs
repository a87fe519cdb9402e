//! Masked-language-model pretraining of the full backbone on text.
//!
//! The downstream stages (alignment, adapter fine-tuning) freeze the
//! backbone, so it must already carry useful text representations; this
//! module provides them for setups without external pretrained weights.

use super::{LmBackbone, Vocab};
use crate::nn::{cosine_lr, cross_entropy_mean};
use crate::{Error, Result};
use candle_core::Tensor;
use candle_nn::{AdamW, Optimizer, ParamsAdamW};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PretrainConfig {
    pub lr: f64,
    pub warmup_ratio: f64,
    /// Zero disables pretraining (the backbone stays at its random init).
    pub epochs: usize,
    pub batch_size: usize,
    /// Per-token masking probability.
    pub mask_prob: f64,
    pub weight_decay: f64,
    pub seed: u64,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            warmup_ratio: 0.03,
            epochs: 6,
            batch_size: 32,
            mask_prob: 0.15,
            weight_decay: 0.01,
            seed: 0,
            patience: 2,
        }
    }
}

/// Per-epoch `(train CE, validation CE)` over masked slots.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct PretrainLog {
    pub epochs: Vec<(f64, f64)>,
    pub best_epoch: usize,
    pub best_val: f64,
}

/// One masked sequence: input ids plus `(slot, original id)` targets.
struct MaskedSeq {
    ids: Vec<u32>,
    golds: Vec<(usize, u32)>,
}

fn mask_sequence(ids: &[u32], p: f64, rng: &mut ChaCha8Rng) -> MaskedSeq {
    let mut out = MaskedSeq { ids: ids.to_vec(), golds: Vec::new() };
    for i in 0..out.ids.len() {
        if Vocab::is_special(out.ids[i]) {
            continue;
        }
        if rng.random_range(0.0..1.0) < p {
            out.golds.push((i, out.ids[i]));
            out.ids[i] = Vocab::MASK_ID;
        }
    }
    out
}

/// Mean cross-entropy over the masked slots of a batch; `None` when the
/// batch happens to contain no masked slots.
fn batch_loss(lm: &LmBackbone, batch: &[&MaskedSeq]) -> Result<Option<Tensor>> {
    let device = lm.store.device().clone();
    let max_len = batch.iter().map(|s| s.ids.len()).max().unwrap_or(0);
    let mut flat_idx = Vec::new();
    let mut gold = Vec::new();
    let mut ids = Vec::with_capacity(batch.len() * max_len);
    let mut positions = Vec::with_capacity(batch.len());
    let mut pad = Vec::with_capacity(batch.len());
    for (b, seq) in batch.iter().enumerate() {
        let len = seq.ids.len();
        ids.extend_from_slice(&seq.ids);
        ids.extend(std::iter::repeat_n(Vocab::PAD_ID, max_len - len));
        let mut pos: Vec<i64> = (0..len as i64).collect();
        pos.resize(max_len, 0);
        positions.push(pos);
        let mut mask = vec![false; len];
        mask.resize(max_len, true);
        pad.push(mask);
        for &(slot, id) in &seq.golds {
            flat_idx.push((b * max_len + slot) as u32);
            gold.push(id);
        }
    }
    if gold.is_empty() {
        return Ok(None);
    }
    let ids = Tensor::from_vec(ids, (batch.len(), max_len), &device)?;
    let emb = lm.embed(&ids, &positions)?;
    let hidden = lm.forward(&emb, &positions, &pad)?;
    let flat = hidden.reshape(((), lm.hidden()))?;
    let idx = Tensor::from_vec(flat_idx, gold.len(), &device)?;
    let logits = lm.lm_logits(&flat.index_select(&idx, 0)?)?;
    Ok(Some(cross_entropy_mean(&logits, &gold)?))
}

fn validation_loss(lm: &LmBackbone, masked: &[MaskedSeq], batch_size: usize) -> Result<f64> {
    let mut sum = 0.0;
    let mut n = 0usize;
    for chunk in masked.chunks(batch_size.max(1)) {
        let refs: Vec<&MaskedSeq> = chunk.iter().collect();
        if let Some(loss) = batch_loss(lm, &refs)? {
            sum += loss.to_dtype(candle_core::DType::F64)?.to_scalar::<f64>()?;
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::Data("validation set produced no masked slots".into()));
    }
    Ok(sum / n as f64)
}

/// Pretrain the backbone in place with a masked-token objective.
///
/// All backbone parameters are updated. Validation masking is fixed by seed
/// so epochs are comparable; the best epoch's parameters are restored.
pub fn pretrain_mlm(
    lm: &LmBackbone,
    train: &[Vec<u32>],
    val: &[Vec<u32>],
    config: &PretrainConfig,
) -> Result<PretrainLog> {
    if train.is_empty() || val.is_empty() {
        return Err(Error::Data("pretraining needs non-empty train and validation sets".into()));
    }
    if !(0.0..1.0).contains(&config.mask_prob) || config.mask_prob == 0.0 {
        return Err(Error::InvalidInput(format!(
            "mask_prob must be in (0, 1), got {}",
            config.mask_prob
        )));
    }
    let mut opt = AdamW::new(
        lm.store.all_vars(),
        ParamsAdamW { lr: config.lr, weight_decay: config.weight_decay, ..Default::default() },
    )?;
    let mut val_rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_0a11);
    let masked_val: Vec<MaskedSeq> =
        val.iter().map(|s| mask_sequence(s, config.mask_prob, &mut val_rng)).collect();

    let steps_per_epoch = train.len().div_ceil(config.batch_size.max(1));
    let total_steps = (steps_per_epoch * config.epochs).max(1);
    let mut log = PretrainLog::default();
    let mut best: Option<(f64, std::collections::BTreeMap<String, Vec<f64>>)> = None;
    let mut stale = 0usize;
    let mut step = 0usize;
    for epoch in 0..config.epochs {
        let mut rng =
            ChaCha8Rng::seed_from_u64(config.seed ^ (epoch as u64).wrapping_mul(0x9e37_79b9));
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut rng);
        let mut epoch_sum = 0.0;
        let mut n_batches = 0usize;
        for chunk in order.chunks(config.batch_size.max(1)) {
            let masked: Vec<MaskedSeq> = chunk
                .iter()
                .map(|&i| mask_sequence(&train[i], config.mask_prob, &mut rng))
                .collect();
            let refs: Vec<&MaskedSeq> = masked.iter().collect();
            let Some(loss) = batch_loss(lm, &refs)? else { continue };
            opt.set_learning_rate(cosine_lr(step, total_steps, config.warmup_ratio, config.lr));
            opt.backward_step(&loss)?;
            epoch_sum += loss.to_dtype(candle_core::DType::F64)?.to_scalar::<f64>()?;
            n_batches += 1;
            step += 1;
        }
        let val_loss = validation_loss(lm, &masked_val, config.batch_size)?;
        log.epochs.push((epoch_sum / n_batches.max(1) as f64, val_loss));
        let improved = best.as_ref().is_none_or(|(b, _)| val_loss < *b);
        if improved {
            best = Some((val_loss, lm.store.snapshot()));
            log.best_epoch = epoch;
            log.best_val = val_loss;
            stale = 0;
        } else {
            stale += 1;
            if stale >= config.patience {
                break;
            }
        }
    }
    if let Some((_, snap)) = best {
        lm.store.restore(&snap)?;
    }
    Ok(log)
}
