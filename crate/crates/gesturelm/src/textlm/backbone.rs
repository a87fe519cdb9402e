//! Transformer encoder backbone with LM head.

use super::LoraConfig;
use crate::nn::{
    self, padding_bias, Embedding, EncoderLayer, Linear, ParamStore, RelativePositionBias,
};
use crate::{Error, Result};
use candle_core::{DType, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PositionalScheme {
    /// Learned absolute position embeddings added to the input.
    LearnedAbsolute,
    /// Learned relative-offset attention bias; nothing added to the input.
    Relative,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LmConfig {
    pub vocab_size: usize,
    pub hidden: usize,
    pub layers: usize,
    pub heads: usize,
    pub max_position: usize,
    pub positional: PositionalScheme,
    pub seed: u64,
}

impl Default for LmConfig {
    /// Desk-scale backbone; [`LmConfig::paper_scale`] matches the 12-layer
    /// class of pretrained encoders for users with external weights.
    fn default() -> Self {
        Self {
            vocab_size: 0,
            hidden: 128,
            layers: 4,
            heads: 4,
            max_position: 256,
            positional: PositionalScheme::LearnedAbsolute,
            seed: 0,
        }
    }
}

impl LmConfig {
    pub fn paper_scale(mut self) -> Self {
        self.hidden = 768;
        self.layers = 12;
        self.heads = 12;
        self.max_position = 514;
        self
    }
}

/// Token embeddings, positional scheme, L encoder layers and an LM head.
#[derive(Debug, Clone)]
pub struct LmBackbone {
    pub config: LmConfig,
    pub store: ParamStore,
    /// Present once adapters are injected; the trainable set of fine-tuning.
    pub adapters: Option<ParamStore>,
    token_emb: Embedding,
    pos_emb: Option<Embedding>,
    rel_bias: Option<RelativePositionBias>,
    pub layers: Vec<EncoderLayer>,
    lm_head: Linear,
}

impl LmBackbone {
    pub fn new(config: LmConfig, dtype: DType) -> Self {
        assert!(config.vocab_size > 0, "vocabulary size must be set");
        let mut store = ParamStore::new(dtype);
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let h = config.hidden;
        let token_emb = Embedding::init(&mut store, &mut rng, "lm.token_emb", config.vocab_size, h);
        let (pos_emb, rel_bias) = match config.positional {
            PositionalScheme::LearnedAbsolute => (
                Some(Embedding::init(&mut store, &mut rng, "lm.pos_emb", config.max_position, h)),
                None,
            ),
            PositionalScheme::Relative => (
                None,
                Some(RelativePositionBias::init(
                    &mut store,
                    &mut rng,
                    "lm.rel_bias",
                    config.heads,
                    32,
                )),
            ),
        };
        let layers = (0..config.layers)
            .map(|i| {
                EncoderLayer::init(&mut store, &mut rng, &format!("lm.layer{i}"), h, config.heads, 4 * h)
            })
            .collect();
        let lm_head = Linear::init(&mut store, &mut rng, "lm.head", h, config.vocab_size);
        Self { config, store, adapters: None, token_emb, pos_emb, rel_bias, layers, lm_head }
    }

    pub fn hidden(&self) -> usize {
        self.config.hidden
    }

    /// Content embeddings for token ids `(B, T)`, no positional term.
    pub fn embed_tokens(&self, ids: &Tensor) -> Result<Tensor> {
        let max = ids.flatten_all()?.max(0)?.to_dtype(DType::F64)?.to_scalar::<f64>()?;
        if max as usize >= self.config.vocab_size {
            return Err(Error::InvalidInput(format!(
                "token id {max} out of range for vocabulary of {}",
                self.config.vocab_size
            )));
        }
        Ok(self.token_emb.forward(ids)?)
    }

    /// Positional embeddings `(B, T, h)` for the absolute scheme, `None` for
    /// the relative scheme (positions enter through the attention bias).
    pub fn positional_embedding(&self, positions: &[Vec<i64>]) -> Result<Option<Tensor>> {
        let Some(pos_emb) = &self.pos_emb else { return Ok(None) };
        let b = positions.len();
        let t = positions[0].len();
        let mut flat = Vec::with_capacity(b * t);
        for row in positions {
            for &p in row {
                if p < 0 || p as usize >= self.config.max_position {
                    return Err(Error::InvalidInput(format!(
                        "position {p} out of range 0..{}",
                        self.config.max_position
                    )));
                }
                flat.push(p as u32);
            }
        }
        let ids = Tensor::from_vec(flat, (b, t), self.store.device())?;
        Ok(Some(pos_emb.forward(&ids)?))
    }

    /// Token plus positional embedding; positions may repeat and need not be
    /// contiguous (gesture tokens share the positions of their text tokens).
    pub fn embed(&self, ids: &Tensor, positions: &[Vec<i64>]) -> Result<Tensor> {
        let content = self.embed_tokens(ids)?;
        match self.positional_embedding(positions)? {
            Some(pos) => Ok((content + pos)?),
            None => Ok(content),
        }
    }

    /// Run the encoder stack over prepared input embeddings.
    ///
    /// `pad` marks slots that must never be attended to.
    pub fn forward(
        &self,
        embeddings: &Tensor,
        positions: &[Vec<i64>],
        pad: &[Vec<bool>],
    ) -> Result<Tensor> {
        let (b, t, _h) = embeddings.dims3()?;
        if pad.len() != b || pad[0].len() != t || positions.len() != b {
            return Err(Error::ShapeMismatch(format!(
                "embeddings are ({b}, {t}), mask/position batch does not match"
            )));
        }
        let mut bias = padding_bias(pad, embeddings.dtype(), embeddings.device())?;
        if let Some(rel) = &self.rel_bias {
            bias = rel.forward(positions)?.broadcast_add(&bias)?;
        }
        let mut h = embeddings.clone();
        for layer in &self.layers {
            h = layer.forward(&h, Some(&bias))?;
        }
        Ok(h)
    }

    /// LM-head logits over the vocabulary for hidden states `(..., h)`.
    pub fn lm_logits(&self, hidden: &Tensor) -> Result<Tensor> {
        Ok(self.lm_head.forward(hidden)?)
    }

    /// Attach low-rank adapters to the configured attention projections.
    ///
    /// Freshly injected adapters leave the forward pass bitwise unchanged
    /// (B is zero-initialized); only the adapter store is trainable.
    pub fn inject_lora(&mut self, cfg: &LoraConfig, seed: u64) -> Result<()> {
        if self.adapters.is_some() {
            return Err(Error::InvalidInput("adapters already injected".into()));
        }
        let mut adapters = ParamStore::new(self.store.dtype());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for (i, layer) in self.layers.iter_mut().enumerate() {
            let attn = &mut layer.attn;
            let mut targets: Vec<(&str, &mut Linear)> = Vec::new();
            if cfg.targets.query {
                targets.push(("q", &mut attn.q));
            }
            if cfg.targets.key {
                targets.push(("k", &mut attn.k));
            }
            if cfg.targets.value {
                targets.push(("v", &mut attn.v));
            }
            if cfg.targets.output {
                targets.push(("o", &mut attn.o));
            }
            for (tag, lin) in targets {
                lin.inject_lora(
                    &mut adapters,
                    &mut rng,
                    &format!("lm.layer{i}.attn.{tag}"),
                    cfg.rank,
                    cfg.alpha,
                );
            }
        }
        self.adapters = Some(adapters);
        Ok(())
    }

    /// Parameter count; with `trainable_only` the count is the adapter set
    /// (zero when nothing is injected, matching a fully frozen model).
    pub fn count_parameters(&self, trainable_only: bool) -> usize {
        if trainable_only {
            self.adapters.as_ref().map_or(0, |a| a.parameter_count())
        } else {
            self.store.parameter_count()
                + self.adapters.as_ref().map_or(0, |a| a.parameter_count())
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        nn::save_checkpoint(&self.store, path, &self.config)
    }

    pub fn load(path: &Path, dtype: DType) -> Result<Self> {
        let config: LmConfig = nn::load_checkpoint_meta(path)?;
        let model = Self::new(config, dtype);
        model.store.load(path)?;
        Ok(model)
    }

    pub fn save_adapters(&self, path: &Path) -> Result<()> {
        let adapters = self
            .adapters
            .as_ref()
            .ok_or_else(|| Error::InvalidInput("no adapters to save".into()))?;
        nn::save_checkpoint(adapters, path, &serde_json::json!({"kind": "lora-adapters"}))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::textlm::LoraTargets;
    use candle_core::Device;

    fn small_model() -> LmBackbone {
        LmBackbone::new(
            LmConfig { vocab_size: 12, hidden: 16, layers: 2, heads: 2, max_position: 10, ..LmConfig::default() },
            DType::F64,
        )
    }

    fn row(ids: &[u32]) -> Tensor {
        Tensor::from_vec(ids.to_vec(), (1, ids.len()), &Device::Cpu).unwrap()
    }

    #[test]
    fn embedding_is_token_plus_position() {
        let m = small_model();
        let ids = row(&[5, 5]);
        let emb = m.embed(&ids, &[vec![0, 3]]).unwrap();
        let content = m.embed_tokens(&ids).unwrap();
        let pos = m.positional_embedding(&[vec![0, 3]]).unwrap().unwrap();
        let diff = (emb.clone() - (content + pos).unwrap())
            .unwrap()
            .abs()
            .unwrap()
            .max_all()
            .unwrap()
            .to_scalar::<f64>()
            .unwrap();
        assert_eq!(diff, 0.0);
        // Same id at two positions differs exactly by the positional term.
        let e0 = emb.narrow(1, 0, 1).unwrap();
        let e1 = emb.narrow(1, 1, 1).unwrap();
        let p = m.positional_embedding(&[vec![0, 3]]).unwrap().unwrap();
        let pd = (p.narrow(1, 0, 1).unwrap() - p.narrow(1, 1, 1).unwrap()).unwrap();
        let delta = ((e0 - e1).unwrap() - pd)
            .unwrap()
            .abs()
            .unwrap()
            .max_all()
            .unwrap()
            .to_scalar::<f64>()
            .unwrap();
        assert!(delta < 1e-12);
    }

    #[test]
    fn shared_positions_are_accepted() {
        let m = small_model();
        let ids = row(&[1, 2, 3, 4]);
        assert!(m.embed(&ids, &[vec![0, 1, 1, 2]]).is_ok());
    }

    #[test]
    fn out_of_range_ids_and_positions_error() {
        let m = small_model();
        assert!(m.embed_tokens(&row(&[99])).is_err());
        assert!(m.embed(&row(&[1]), &[vec![99]]).is_err());
    }

    #[test]
    fn pad_content_never_changes_unmasked_outputs() {
        let m = small_model();
        let pos = vec![vec![0i64, 1, 2, 3]];
        let pad = vec![vec![false, false, true, true]];
        let h1 = m
            .forward(&m.embed(&row(&[4, 5, 3, 3]), &pos).unwrap(), &pos, &pad)
            .unwrap();
        let h2 = m
            .forward(&m.embed(&row(&[4, 5, 7, 8]), &pos).unwrap(), &pos, &pad)
            .unwrap();
        let d = (h1.narrow(1, 0, 2).unwrap() - h2.narrow(1, 0, 2).unwrap())
            .unwrap()
            .abs()
            .unwrap()
            .max_all()
            .unwrap()
            .to_scalar::<f64>()
            .unwrap();
        assert!(d < 1e-12, "masked-out slots leaked into unmasked outputs: {d}");
    }

    #[test]
    fn forward_is_deterministic_and_shaped() {
        let m = small_model();
        let pos = vec![vec![0i64]];
        let pad = vec![vec![false]];
        let emb = m.embed(&row(&[7]), &pos).unwrap();
        let h = m.forward(&emb, &pos, &pad).unwrap();
        assert_eq!(h.dims(), &[1, 1, 16]);
        let h2 = m.forward(&emb, &pos, &pad).unwrap();
        assert_eq!(
            h.flatten_all().unwrap().to_vec1::<f64>().unwrap(),
            h2.flatten_all().unwrap().to_vec1::<f64>().unwrap()
        );
        let m2 = small_model();
        let h3 = m2
            .forward(&m2.embed(&row(&[7]), &pos).unwrap(), &pos, &pad)
            .unwrap();
        assert_eq!(
            h.flatten_all().unwrap().to_vec1::<f64>().unwrap(),
            h3.flatten_all().unwrap().to_vec1::<f64>().unwrap()
        );
    }

    #[test]
    fn logits_are_shift_invariant_normalized() {
        let m = small_model();
        let hidden = Tensor::zeros((1, 16), DType::F64, &Device::Cpu).unwrap();
        let logits = m.lm_logits(&hidden).unwrap();
        // Zero hidden with zero bias -> all-equal logits.
        let v = logits.flatten_all().unwrap().to_vec1::<f64>().unwrap();
        assert!(v.iter().all(|x| *x == v[0]));
        let probs = candle_nn::ops::softmax(&logits, 1).unwrap();
        let sum = probs.sum_all().unwrap().to_scalar::<f64>().unwrap();
        assert!((sum - 1.0).abs() < 1e-6);
    }

    #[test]
    fn lora_injection_is_identity_at_step_zero() {
        let mut m = small_model();
        let pos = vec![vec![0i64, 1, 2]];
        let pad = vec![vec![false; 3]];
        let emb = m.embed(&row(&[1, 2, 3]), &pos).unwrap();
        let before = m
            .lm_logits(&m.forward(&emb, &pos, &pad).unwrap())
            .unwrap()
            .flatten_all()
            .unwrap()
            .to_vec1::<f64>()
            .unwrap();
        m.inject_lora(&LoraConfig::default(), 9).unwrap();
        let after = m
            .lm_logits(&m.forward(&emb, &pos, &pad).unwrap())
            .unwrap()
            .flatten_all()
            .unwrap()
            .to_vec1::<f64>()
            .unwrap();
        assert_eq!(before, after);
        // Repeated injection is rejected.
        assert!(m.inject_lora(&LoraConfig::default(), 9).is_err());
    }

    #[test]
    fn trainable_parameter_count_is_adapter_arithmetic() {
        let mut m = small_model();
        assert_eq!(m.count_parameters(true), 0);
        let cfg = LoraConfig { rank: 4, alpha: 8.0, ..LoraConfig::default() };
        m.inject_lora(&cfg, 0).unwrap();
        // 2 layers x 4 projections x r * (in + out).
        assert_eq!(m.count_parameters(true), 2 * 4 * 4 * (16 + 16));
    }

    #[test]
    fn paper_scale_query_value_adapters_are_about_4_7m() {
        let cfg = LoraConfig {
            rank: 128,
            alpha: 256.0,
            targets: LoraTargets { query: true, key: false, value: true, output: false },
        };
        let shapes = vec![(768, 768); 12 * 2];
        let count = cfg.parameter_count(&shapes);
        assert!((4_600_000..=4_800_000).contains(&count), "{count}");
    }

    #[test]
    fn relative_scheme_uses_positions_through_attention() {
        let cfg = LmConfig {
            vocab_size: 12,
            hidden: 16,
            layers: 1,
            heads: 2,
            max_position: 10,
            positional: PositionalScheme::Relative,
            ..LmConfig::default()
        };
        let m = LmBackbone::new(cfg, DType::F64);
        let ids = row(&[1, 2]);
        let pad = vec![vec![false; 2]];
        let emb = m.embed(&ids, &[vec![0, 1]]).unwrap();
        let h_near = m.forward(&emb, &[vec![0, 1]], &pad).unwrap();
        let h_far = m.forward(&emb, &[vec![0, 9]], &pad).unwrap();
        let d = (h_near - h_far)
            .unwrap()
            .abs()
            .unwrap()
            .max_all()
            .unwrap()
            .to_scalar::<f64>()
            .unwrap();
        assert!(d > 0.0, "relative positions had no effect");
    }
}
