//! Codebook storage and nearest-neighbor quantization.

use crate::nn::ParamStore;
use crate::{Error, Result};
use candle_core::{Tensor, Var};
use rand_chacha::ChaCha8Rng;

/// K learned d-dimensional embeddings plus reserved special ids.
///
/// BOG/EOG/GMASK ids sit just past the codebook range; their embeddings are
/// learned in the alignment stage, not stored here.
#[derive(Debug, Clone)]
pub struct Codebook {
    entries: Var, // (K, d)
}

impl Codebook {
    pub fn init(store: &mut ParamStore, rng: &mut ChaCha8Rng, size: usize, dim: usize) -> Self {
        // Spread initial entries wide enough that distinct latents populate
        // distinct entries from the start.
        Self { entries: store.randn("codebook.entries", &[size, dim], 0.5, rng) }
    }

    pub fn size(&self) -> usize {
        self.entries.dims()[0]
    }

    pub fn dim(&self) -> usize {
        self.entries.dims()[1]
    }

    pub fn bog_id(&self) -> u32 {
        self.size() as u32
    }

    pub fn eog_id(&self) -> u32 {
        self.size() as u32 + 1
    }

    pub fn gmask_id(&self) -> u32 {
        self.size() as u32 + 2
    }

    pub fn entries(&self) -> &Var {
        &self.entries
    }

    /// Embedding rows for a set of interior token ids.
    pub fn lookup(&self, ids: &[u32]) -> Result<Tensor> {
        let idx = Tensor::from_vec(ids.to_vec(), ids.len(), self.entries.device())?;
        Ok(self.entries.index_select(&idx, 0)?)
    }

    /// Nearest codebook entry per latent, squared-Euclidean, ties broken
    /// toward the lowest index.
    ///
    /// Returns `(ids, zq, zq_passthrough)` where `zq` carries gradients to the
    /// codebook rows and `zq_passthrough = z + sg(zq - z)` routes decoder
    /// gradients straight to the encoder.
    pub fn quantize(&self, z: &Tensor) -> Result<(Vec<u32>, Tensor, Tensor)> {
        let (m, d) = z.dims2().map_err(|_| {
            Error::ShapeMismatch("quantize expects a (M, d) latent tensor".into())
        })?;
        if d != self.dim() {
            return Err(Error::ShapeMismatch(format!(
                "latent dim {d} vs codebook dim {}",
                self.dim()
            )));
        }
        let z_host: Vec<f64> = z
            .to_dtype(candle_core::DType::F64)?
            .flatten_all()?
            .to_vec1()?;
        let e_host: Vec<f64> = self
            .entries
            .to_dtype(candle_core::DType::F64)?
            .flatten_all()?
            .to_vec1()?;
        let k = self.size();
        let mut ids = Vec::with_capacity(m);
        for i in 0..m {
            let zi = &z_host[i * d..(i + 1) * d];
            let mut best = 0usize;
            let mut best_dist = f64::INFINITY;
            for kk in 0..k {
                let ek = &e_host[kk * d..(kk + 1) * d];
                let mut dist = 0.0;
                for j in 0..d {
                    let diff = zi[j] - ek[j];
                    dist += diff * diff;
                }
                if dist < best_dist {
                    best_dist = dist;
                    best = kk;
                }
            }
            ids.push(best as u32);
        }
        let zq = self.lookup(&ids)?;
        let passthrough = ((zq.detach() - z.detach())? + z)?;
        Ok((ids, zq, passthrough))
    }
}
