//! VQ-VAE gesture tokenizer: motion windows in, codebook token ids out,
//! trained on motion reconstruction. Also hosts the grid-based baseline
//! tokenizer used for ablation runs.

mod codebook;
mod grid;
mod loss;
mod model;
mod train;

pub use codebook::Codebook;
pub use grid::{grid_tokenize, project_wrist_2d, GridSpec};
pub use loss::{vqvae_loss, LossBreakdown};
pub use model::{chunk, VqVae};
pub use train::{train_tokenizer, tokenize, TrainLog};

use serde::{Deserialize, Serialize};

/// Gesture tokenizer hyperparameters.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct TokenizerConfig {
    /// Codebook size K.
    pub codebook_size: usize,
    /// Codebook embedding length d.
    pub embed_dim: usize,
    /// Chunks per window, M.
    pub chunks: usize,
    /// Frames per window, N.
    pub window: usize,
    pub n_joints: usize,
    pub fps: f64,
    /// Commitment weight.
    pub beta: f64,
    pub layers: usize,
    pub heads: usize,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Compute the velocity/acceleration terms on joint positions instead of
    /// the 6D rotation channels.
    pub derivative_on_positions: bool,
}

impl Default for TokenizerConfig {
    fn default() -> Self {
        Self {
            codebook_size: 512,
            embed_dim: 256,
            chunks: 8,
            window: 32,
            n_joints: 13,
            fps: 15.0,
            beta: 0.25,
            layers: 2,
            heads: 2,
            lr: 3e-5,
            epochs: 57,
            batch_size: 32,
            seed: 0,
            derivative_on_positions: false,
        }
    }
}

impl TokenizerConfig {
    /// Paper-scale encoder/decoder depth; desk scale keeps the default.
    pub fn paper_scale(mut self) -> Self {
        self.layers = 8;
        self.heads = 4;
        self
    }

    /// Frames covered by one gesture token.
    pub fn frames_per_token(&self) -> usize {
        self.window / self.chunks
    }
}

/// Token id sequence with optional per-token frame spans.
///
/// A wrapped sequence starts with BOG and ends with EOG; interior ids are
/// codebook indices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GestureTokenSeq {
    pub ids: Vec<u32>,
    /// `(start_frame, end_frame)` half-open, `None` for BOG/EOG.
    pub spans: Vec<Option<(usize, usize)>>,
}

impl GestureTokenSeq {
    pub fn interior(&self) -> impl Iterator<Item = (u32, (usize, usize))> + '_ {
        self.ids
            .iter()
            .zip(&self.spans)
            .filter_map(|(id, span)| span.map(|s| (*id, s)))
    }
}
