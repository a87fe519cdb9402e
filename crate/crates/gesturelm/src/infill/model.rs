//! The fine-tuned infilling model: frozen backbone + adapters, with the
//! gesture input path selected by variant.

use super::task::InfillExample;
use crate::align::AlignModel;
use crate::nn::ParamStore;
use crate::textlm::LmBackbone;
use crate::tokenizer::Codebook;
use crate::{Error, Result};
use candle_core::{Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Model variants compared in the experiments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Text stream only; no gesture files are ever read.
    TextOnly,
    /// Full model: aligned projector over codebook embeddings.
    Gesture,
    /// Ablation: randomly initialized (untrained) projector.
    GestureNoFa,
    /// Ablation: learned-absolute positions instead of the relative bias.
    GestureAbsPos,
    /// Baseline: coarse 2D grid-cell tokens with from-scratch embeddings.
    GridTokens,
    /// Baseline: raw codebook indices with from-scratch embeddings.
    CodebookIndices,
}

impl Variant {
    pub fn uses_gestures(self) -> bool {
        !matches!(self, Variant::TextOnly)
    }

    pub fn tag(self) -> &'static str {
        match self {
            Variant::TextOnly => "text_only",
            Variant::Gesture => "gesture",
            Variant::GestureNoFa => "gesture_no_fa",
            Variant::GestureAbsPos => "gesture_abs_pos",
            Variant::GridTokens => "grid_tokens",
            Variant::CodebookIndices => "codebook_indices",
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "text_only" => Variant::TextOnly,
            "gesture" => Variant::Gesture,
            "gesture_no_fa" => Variant::GestureNoFa,
            "gesture_abs_pos" => Variant::GestureAbsPos,
            "grid_tokens" => Variant::GridTokens,
            "codebook_indices" => Variant::CodebookIndices,
            other => return Err(Error::Config(format!("unknown variant {other:?}"))),
        })
    }
}

/// Evaluation-time input corruption for the gesture stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdversarialMode {
    #[default]
    None,
    /// Replace each interior gesture embedding with an i.i.d. standard
    /// normal h-vector, fresh per example but seed-reproducible.
    RandomNormal,
    /// Zero the interior gesture content, keeping positions and specials.
    PositionalOnly,
}

impl std::str::FromStr for AdversarialMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "none" => AdversarialMode::None,
            "random_normal" => AdversarialMode::RandomNormal,
            "positional_only" => AdversarialMode::PositionalOnly,
            other => return Err(Error::Config(format!("unknown adversarial mode {other:?}"))),
        })
    }
}

/// How gesture ids become h-space embeddings.
pub enum GesturePath {
    /// No gesture stream at all.
    None,
    /// Codebook rows (frozen) through the alignment projector.
    Projected { align: AlignModel, codebook: Codebook },
    /// A from-scratch embedding table over `n_ids` ids, trained during
    /// fine-tuning alongside the adapters.
    Scratch { store: ParamStore, n_ids: usize },
}

const SCRATCH_EMB: &str = "infill.scratch_emb";

pub struct InfillModel {
    pub lm: LmBackbone,
    pub path: GesturePath,
    pub label_ids: Vec<u32>,
    pub adversarial: AdversarialMode,
    pub adversarial_seed: u64,
}

impl InfillModel {
    pub fn new(lm: LmBackbone, path: GesturePath, label_ids: Vec<u32>) -> Self {
        Self { lm, path, label_ids, adversarial: AdversarialMode::None, adversarial_seed: 0 }
    }

    /// From-scratch gesture embedding path (grid / codebook-index variants).
    pub fn scratch_path(n_ids: usize, hidden: usize, seed: u64) -> GesturePath {
        let mut store = ParamStore::new(candle_core::DType::F64);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        store.randn(SCRATCH_EMB, &[n_ids, hidden], 0.02, &mut rng);
        GesturePath::Scratch { store, n_ids }
    }

    /// Set the evaluation-time corruption; errors on a text-only pipeline.
    pub fn set_adversarial(&mut self, mode: AdversarialMode, seed: u64) -> Result<()> {
        if mode != AdversarialMode::None && matches!(self.path, GesturePath::None) {
            return Err(Error::InvalidInput(
                "adversarial gesture corruption requires a gesture-augmented pipeline".into(),
            ));
        }
        self.adversarial = mode;
        self.adversarial_seed = seed;
        Ok(())
    }

    /// Trainable parameters: the LoRA adapters plus (for scratch variants)
    /// the gesture embedding table. Everything else stays frozen.
    pub fn trainable_vars(&self) -> Vec<Var> {
        let mut vars = self.lm.adapters.as_ref().map(|a| a.all_vars()).unwrap_or_default();
        if let GesturePath::Scratch { store, .. } = &self.path {
            vars.extend(store.all_vars());
        }
        vars
    }

    /// h-space gesture embeddings for one example, with any adversarial
    /// corruption applied. `None` when the example carries no gestures or
    /// the model is text-only.
    fn gesture_embeddings(&self, ex: &InfillExample) -> Result<Option<Tensor>> {
        if ex.gesture_ids.is_empty() {
            return Ok(None);
        }
        let base = match &self.path {
            GesturePath::None => return Ok(None),
            GesturePath::Projected { align, codebook } => {
                let content = align.gesture_content(&ex.gesture_ids, codebook)?;
                align.project(&content)?
            }
            GesturePath::Scratch { store, n_ids } => {
                let emb = store.get(SCRATCH_EMB).expect("scratch embedding");
                let mut rows = Vec::with_capacity(ex.gesture_ids.len());
                for &id in &ex.gesture_ids {
                    if (id as usize) >= *n_ids {
                        return Err(Error::InvalidInput(format!(
                            "gesture id {id} outside scratch table of {n_ids}"
                        )));
                    }
                    rows.push(emb.as_tensor().narrow(0, id as usize, 1)?);
                }
                Tensor::cat(&rows, 0)?
            }
        };
        let g = ex.gesture_ids.len();
        match self.adversarial {
            AdversarialMode::None => Ok(Some(base)),
            mode => {
                if g < 2 {
                    return Ok(Some(base));
                }
                let h = base.dims2()?.1;
                let device = base.device().clone();
                // Interior slots replaced; BOG/EOG rows kept.
                let interior = match mode {
                    AdversarialMode::RandomNormal => {
                        let mut rng = ChaCha8Rng::seed_from_u64(
                            self.adversarial_seed ^ stable_hash(&ex.id),
                        );
                        use rand_distr::Distribution;
                        let normal = rand_distr::Normal::new(0.0f64, 1.0).unwrap();
                        let data: Vec<f64> =
                            (0..(g - 2) * h).map(|_| normal.sample(&mut rng)).collect();
                        Tensor::from_vec(data, (g - 2, h), &device)?.to_dtype(base.dtype())?
                    }
                    AdversarialMode::PositionalOnly => {
                        Tensor::zeros((g - 2, h), base.dtype(), &device)?
                    }
                    AdversarialMode::None => unreachable!(),
                };
                let bog = base.narrow(0, 0, 1)?;
                let eog = base.narrow(0, g - 1, 1)?;
                Ok(Some(Tensor::cat(&[bog, interior, eog], 0)?))
            }
        }
    }

    /// Label-restricted logits `(B, n_labels)` at each example's mask slot.
    pub fn forward_batch(&self, examples: &[&InfillExample]) -> Result<Tensor> {
        if examples.is_empty() {
            return Err(Error::InvalidInput("empty batch".into()));
        }
        let text_only = matches!(self.path, GesturePath::None);
        let h = self.lm.hidden();
        let device = self.lm.store.device().clone();
        let dtype = self.lm.store.dtype();
        let max_len = examples
            .iter()
            .map(|e| if text_only { e.text_ids.len() } else { e.total_len() })
            .max()
            .unwrap();
        let mut rows = Vec::with_capacity(examples.len());
        let mut positions = Vec::with_capacity(examples.len());
        let mut pad = Vec::with_capacity(examples.len());
        for ex in examples {
            let ids = Tensor::from_vec(ex.text_ids.clone(), (1, ex.text_ids.len()), &device)?;
            let text_emb = self.lm.embed_tokens(&ids)?.squeeze(0)?.detach();
            let (mut content, mut pos) = (text_emb, ex.text_positions.clone());
            if !text_only {
                if let Some(gest) = self.gesture_embeddings(ex)? {
                    content = Tensor::cat(&[content, gest], 0)?;
                    pos.extend(&ex.gesture_positions);
                }
            }
            let len = content.dims2()?.0;
            if len < max_len {
                let fill = Tensor::zeros((max_len - len, h), dtype, &device)?;
                content = Tensor::cat(&[content, fill], 0)?;
            }
            pos.resize(max_len, 0);
            let mut mask = vec![false; len];
            mask.resize(max_len, true);
            rows.push(content.unsqueeze(0)?);
            positions.push(pos);
            pad.push(mask);
        }
        let mut content = Tensor::cat(&rows, 0)?;
        if let Some(pos_emb) = self.lm.positional_embedding(&positions)? {
            content = (content + pos_emb.detach())?;
        }
        let hidden = self.lm.forward(&content, &positions, &pad)?;
        let flat = hidden.reshape(((), h))?;
        let mask_idx: Vec<u32> = examples
            .iter()
            .enumerate()
            .map(|(b, e)| (b * max_len + e.mask_slot) as u32)
            .collect();
        let idx = Tensor::from_vec(mask_idx, examples.len(), &device)?;
        let full = self.lm.lm_logits(&flat.index_select(&idx, 0)?)?;
        let label_idx = Tensor::from_vec(self.label_ids.clone(), self.label_ids.len(), &device)?;
        Ok(full.index_select(&label_idx, 1)?)
    }

    /// Predicted label index per example (restricted argmax, ties to the
    /// lower label index).
    pub fn predict(&self, examples: &[&InfillExample]) -> Result<Vec<usize>> {
        let logits = self.forward_batch(examples)?.to_dtype(candle_core::DType::F64)?;
        let rows = logits.to_vec2::<f64>()?;
        Ok(rows
            .iter()
            .map(|row| {
                let mut best = (0usize, f64::NEG_INFINITY);
                for (i, &v) in row.iter().enumerate() {
                    if v > best.1 {
                        best = (i, v);
                    }
                }
                best.0
            })
            .collect())
    }
}

/// Stable FNV-1a string hash for per-example rng streams.
pub(crate) fn stable_hash(s: &str) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in s.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}
