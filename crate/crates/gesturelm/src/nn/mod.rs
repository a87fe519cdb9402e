//! Shared neural-network machinery: parameter store, transformer blocks,
//! custom tensor ops, LR schedule and checkpoint I/O.

pub mod ops;
mod params;
mod transformer;

pub use params::ParamStore;
pub use transformer::{
    cross_entropy_mean, padding_bias, Embedding, EncoderLayer, FeedForward, LayerNorm, Linear,
    MultiHeadAttention, RelativePositionBias, MASK_NEG,
};

use crate::Result;
use serde::de::DeserializeOwned;
use serde::Serialize;
use std::path::{Path, PathBuf};

/// Cosine learning-rate schedule with linear warmup.
pub fn cosine_lr(step: usize, total_steps: usize, warmup_ratio: f64, base_lr: f64) -> f64 {
    let total = total_steps.max(1) as f64;
    let warmup = (total * warmup_ratio).floor().max(0.0);
    let s = step as f64;
    if s < warmup {
        base_lr * (s + 1.0) / warmup.max(1.0)
    } else {
        let progress = ((s - warmup) / (total - warmup).max(1.0)).min(1.0);
        base_lr * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
    }
}

/// Central finite-difference gradient of a scalar loss with respect to one
/// parameter, for checking analytic gradients in tests.
///
/// `loss` must re-evaluate the loss from the current parameter values.
pub fn finite_difference_grad(
    var: &candle_core::Var,
    eps: f64,
    mut loss: impl FnMut() -> Result<f64>,
) -> Result<Vec<f64>> {
    let dims = var.dims().to_vec();
    let base = var
        .flatten_all()?
        .to_dtype(candle_core::DType::F64)?
        .to_vec1::<f64>()?;
    let device = var.device().clone();
    let dtype = var.dtype();
    let set = |values: &[f64]| -> Result<()> {
        let t = candle_core::Tensor::from_vec(values.to_vec(), dims.as_slice(), &device)?
            .to_dtype(dtype)?;
        var.set(&t)?;
        Ok(())
    };
    let mut grad = Vec::with_capacity(base.len());
    for i in 0..base.len() {
        let mut plus = base.clone();
        plus[i] += eps;
        set(&plus)?;
        let up = loss()?;
        let mut minus = base.clone();
        minus[i] -= eps;
        set(&minus)?;
        let down = loss()?;
        grad.push((up - down) / (2.0 * eps));
    }
    set(&base)?;
    Ok(grad)
}

fn meta_path(path: &Path) -> PathBuf {
    let mut p = path.as_os_str().to_owned();
    p.push(".json");
    PathBuf::from(p)
}

/// Save parameters as a named-tensor file plus a JSON metadata sidecar.
pub fn save_checkpoint<M: Serialize>(store: &ParamStore, path: &Path, meta: &M) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    store.save(path)?;
    std::fs::write(meta_path(path), serde_json::to_string_pretty(meta)?)?;
    Ok(())
}

/// Read the JSON metadata sidecar of a checkpoint.
pub fn load_checkpoint_meta<M: DeserializeOwned>(path: &Path) -> Result<M> {
    let text = std::fs::read_to_string(meta_path(path))?;
    Ok(serde_json::from_str(&text)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cosine_schedule_warms_up_then_decays() {
        let base = 1e-3;
        let lr0 = cosine_lr(0, 100, 0.1, base);
        let lr9 = cosine_lr(9, 100, 0.1, base);
        assert!(lr0 < lr9 && lr9 <= base);
        let mid = cosine_lr(55, 100, 0.1, base);
        let late = cosine_lr(99, 100, 0.1, base);
        assert!(mid > late);
        assert!(late >= 0.0);
    }
}
