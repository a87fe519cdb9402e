//! Adapter-only fine-tuning on the restricted-label infilling objective.

use super::eval::{evaluate_predictions, EvalReport};
use super::labels::LabelSet;
use super::model::InfillModel;
use super::task::InfillExample;
use crate::nn::{cosine_lr, cross_entropy_mean};
use crate::textlm::LoraConfig;
use crate::{Error, Result};
use candle_nn::{AdamW, Optimizer, ParamsAdamW};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FinetuneConfig {
    pub lora: LoraConfig,
    pub lr: f64,
    pub warmup_ratio: f64,
    pub epochs: usize,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub seed: u64,
    /// Epochs without validation macro-F1 improvement before stopping.
    pub patience: usize,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        Self {
            lora: LoraConfig::default(),
            lr: 1e-3,
            warmup_ratio: 0.03,
            epochs: 10,
            weight_decay: 1e-3,
            batch_size: 16,
            seed: 0,
            patience: 3,
        }
    }
}

/// Per-epoch training record.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FinetuneLog {
    /// `(train cross-entropy, validation macro F1)` per epoch.
    pub epochs: Vec<(f64, f64)>,
    pub best_epoch: usize,
    pub best_val_f1: f64,
}

fn trainable_snapshot(model: &InfillModel) -> BTreeMap<String, Vec<f64>> {
    let mut snap = model
        .lm
        .adapters
        .as_ref()
        .map(|a| a.snapshot())
        .unwrap_or_default();
    if let super::model::GesturePath::Scratch { store, .. } = &model.path {
        snap.append(&mut store.snapshot());
    }
    snap
}

fn trainable_restore(model: &InfillModel, snap: &BTreeMap<String, Vec<f64>>) -> Result<()> {
    if let Some(adapters) = model.lm.adapters.as_ref() {
        adapters.restore(snap)?;
    }
    if let super::model::GesturePath::Scratch { store, .. } = &model.path {
        store.restore(snap)?;
    }
    Ok(())
}

/// Cross-entropy over the label-restricted logits for one batch.
fn batch_loss(model: &InfillModel, batch: &[&InfillExample]) -> Result<candle_core::Tensor> {
    let logits = model.forward_batch(batch)?;
    let gold: Vec<u32> = batch.iter().map(|e| e.gold as u32).collect();
    Ok(cross_entropy_mean(&logits, &gold)?)
}

/// Score a model on a labelled set.
pub fn evaluate_model(
    model: &InfillModel,
    labels: &LabelSet,
    examples: &[InfillExample],
    batch_size: usize,
) -> Result<EvalReport> {
    if examples.is_empty() {
        return Err(Error::Data("empty evaluation set".into()));
    }
    let mut gold = Vec::with_capacity(examples.len());
    let mut pred = Vec::with_capacity(examples.len());
    for chunk in examples.chunks(batch_size.max(1)) {
        let refs: Vec<&InfillExample> = chunk.iter().collect();
        pred.extend(model.predict(&refs)?);
        gold.extend(chunk.iter().map(|e| e.gold));
    }
    evaluate_predictions(labels, &gold, &pred)
}

/// Fine-tune the adapters (plus any from-scratch embedding table) in place.
/// The backbone, projector, and codebook never change. Early-stops on
/// validation macro F1 and restores the best epoch's parameters.
pub fn finetune(
    model: &mut InfillModel,
    labels: &LabelSet,
    train: &[InfillExample],
    val: &[InfillExample],
    config: &FinetuneConfig,
) -> Result<FinetuneLog> {
    if train.is_empty() || val.is_empty() {
        return Err(Error::Data("fine-tuning needs non-empty train and validation sets".into()));
    }
    let vars = model.trainable_vars();
    if vars.is_empty() {
        return Err(Error::Config(
            "no trainable parameters; inject adapters before fine-tuning".into(),
        ));
    }
    let mut opt = AdamW::new(
        vars,
        ParamsAdamW { lr: config.lr, weight_decay: config.weight_decay, ..Default::default() },
    )?;
    let steps_per_epoch = train.len().div_ceil(config.batch_size.max(1));
    let total_steps = (steps_per_epoch * config.epochs).max(1);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut step = 0usize;
    let mut log = FinetuneLog { epochs: Vec::new(), best_epoch: 0, best_val_f1: f64::NEG_INFINITY };
    let mut best_snapshot = trainable_snapshot(model);
    let mut since_best = 0usize;
    for epoch in 0..config.epochs {
        let mut rng =
            ChaCha8Rng::seed_from_u64(config.seed ^ (epoch as u64).wrapping_mul(0x9e37_79b9));
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut n_batches = 0usize;
        for chunk in order.chunks(config.batch_size.max(1)) {
            let batch: Vec<&InfillExample> = chunk.iter().map(|&i| &train[i]).collect();
            opt.set_learning_rate(cosine_lr(step, total_steps, config.warmup_ratio, config.lr));
            let loss = batch_loss(model, &batch)?;
            let grads = loss.backward()?;
            opt.step(&grads)?;
            epoch_loss += loss.to_dtype(candle_core::DType::F64)?.to_scalar::<f64>()?;
            n_batches += 1;
            step += 1;
        }
        let val_report = evaluate_model(model, labels, val, config.batch_size)?;
        let val_f1 = val_report.macro_f1;
        log.epochs.push((epoch_loss / n_batches as f64, val_f1));
        if val_f1 > log.best_val_f1 {
            log.best_val_f1 = val_f1;
            log.best_epoch = epoch;
            best_snapshot = trainable_snapshot(model);
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= config.patience {
                break;
            }
        }
    }
    trainable_restore(model, &best_snapshot)?;
    Ok(log)
}
