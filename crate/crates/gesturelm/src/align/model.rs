//! Projector, gesture head, and the joint masked objective.

use super::PairedExample;
use crate::nn::{cross_entropy_mean, Linear, ParamStore};
use crate::textlm::LmBackbone;
use crate::tokenizer::Codebook;
use crate::{Error, Result};
use candle_core::{DType, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AlignConfig {
    /// Hidden width of the two-layer projector MLP.
    pub projector_hidden: usize,
    pub mask_text: f64,
    pub mask_gesture: f64,
    pub lr: f64,
    pub warmup_ratio: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Stop after this many epochs without validation improvement.
    pub patience: usize,
}

impl Default for AlignConfig {
    fn default() -> Self {
        Self {
            projector_hidden: 256,
            mask_text: 0.30,
            mask_gesture: 0.30,
            lr: 1e-3,
            warmup_ratio: 0.03,
            epochs: 20,
            batch_size: 32,
            seed: 0,
            patience: 5,
        }
    }
}

/// Two dense layers with a GeLU between: d -> hidden -> h. Applies
/// independently per token (no cross-token mixing).
#[derive(Debug, Clone)]
pub struct Projector {
    l1: Linear,
    l2: Linear,
}

impl Projector {
    pub fn init(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        d_in: usize,
        hidden: usize,
        d_out: usize,
    ) -> Self {
        Self {
            l1: Linear::init(store, rng, &format!("{name}.l1"), d_in, hidden),
            l2: Linear::init(store, rng, &format!("{name}.l2"), hidden, d_out),
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.l2.forward(&self.l1.forward(x)?.gelu_erf()?)?)
    }
}

/// Linear classifier over the K codebook classes from final hidden states.
#[derive(Debug, Clone)]
pub struct GestureHead {
    lin: Linear,
}

impl GestureHead {
    pub fn init(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        h: usize,
        k: usize,
    ) -> Self {
        Self { lin: Linear::init(store, rng, name, h, k) }
    }

    pub fn forward(&self, hidden: &Tensor) -> Result<Tensor> {
        Ok(self.lin.forward(hidden)?)
    }
}

/// The trainable alignment stage: projector, gesture head, and learned
/// embeddings for the three reserved gesture ids (BOG, EOG, gesture mask).
/// The LM backbone and the codebook stay frozen.
#[derive(Debug, Clone)]
pub struct AlignModel {
    pub config: AlignConfig,
    pub store: ParamStore,
    pub projector: Projector,
    pub head: GestureHead,
    codebook_size: usize,
    codebook_dim: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AlignMeta {
    pub config: AlignConfig,
    pub codebook_size: usize,
    pub codebook_dim: usize,
    pub lm_hidden: usize,
}

/// The three per-component terms of the joint objective. `total` is the
/// tensor to differentiate; the floats are detached values for logging.
#[derive(Debug)]
pub struct FaLoss {
    pub total: Tensor,
    pub mlm: f64,
    pub mgp: f64,
    pub fa: f64,
}

impl AlignModel {
    pub fn new(
        config: AlignConfig,
        codebook_size: usize,
        codebook_dim: usize,
        lm_hidden: usize,
        dtype: DType,
    ) -> Self {
        let mut store = ParamStore::new(dtype);
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let projector = Projector::init(
            &mut store,
            &mut rng,
            "align.projector",
            codebook_dim,
            config.projector_hidden,
            lm_hidden,
        );
        let head = GestureHead::init(&mut store, &mut rng, "align.head", lm_hidden, codebook_size);
        // Learned embeddings for BOG / EOG / gesture-mask, in codebook space.
        store.randn("align.special_emb", &[3, codebook_dim], 0.02, &mut rng);
        Self { config, store, projector, head, codebook_size, codebook_dim }
    }

    pub fn codebook_size(&self) -> usize {
        self.codebook_size
    }

    pub fn codebook_dim(&self) -> usize {
        self.codebook_dim
    }

    /// d-space content vectors for a gesture id stream: codebook rows for
    /// interior ids (frozen via detach), learned rows for the reserved ids.
    pub fn gesture_content(&self, ids: &[u32], codebook: &Codebook) -> Result<Tensor> {
        let k = self.codebook_size as u32;
        let special = self.store.get("align.special_emb").expect("special_emb");
        let mut rows = Vec::with_capacity(ids.len());
        for &id in ids {
            if id < k {
                rows.push(codebook.lookup(&[id])?.detach());
            } else if id < k + 3 {
                rows.push(special.as_tensor().narrow(0, (id - k) as usize, 1)?);
            } else {
                return Err(Error::InvalidInput(format!(
                    "gesture id {id} outside codebook+specials range"
                )));
            }
        }
        Ok(Tensor::cat(&rows, 0)?)
    }

    /// Project a `(G, d)` content block into the LM's `(G, h)` space.
    pub fn project(&self, content: &Tensor) -> Result<Tensor> {
        self.projector.forward(content)
    }

    /// Encode a batch of (already masked) pairs through the frozen LM and
    /// return per-slot logits restricted to the masked sets:
    /// `(text logits (|M_t|, V), text gold, gesture logits (|M_g|, K),
    /// gesture gold)`.
    pub fn forward_batch(
        &self,
        lm: &LmBackbone,
        codebook: &Codebook,
        pairs: &[&PairedExample],
    ) -> Result<(Option<Tensor>, Vec<u32>, Option<Tensor>, Vec<u32>)> {
        if pairs.is_empty() {
            return Err(Error::InvalidInput("empty batch".into()));
        }
        let max_len = pairs.iter().map(|p| p.total_len()).max().unwrap();
        let h = lm.hidden();
        let device = self.store.device().clone();
        let dtype = self.store.dtype();
        let mut rows = Vec::with_capacity(pairs.len());
        let mut positions = Vec::with_capacity(pairs.len());
        let mut pad = Vec::with_capacity(pairs.len());
        for p in pairs {
            let text_ids = Tensor::from_vec(p.text_ids.clone(), (1, p.text_len()), &device)?;
            let text_emb = lm.embed_tokens(&text_ids)?.squeeze(0)?.detach();
            let gest = self.gesture_content(&p.gesture_ids, codebook)?;
            let gest_emb = self.project(&gest)?;
            let mut content = Tensor::cat(&[text_emb, gest_emb], 0)?;
            let len = p.total_len();
            if len < max_len {
                let fill = Tensor::zeros((max_len - len, h), dtype, &device)?;
                content = Tensor::cat(&[content, fill], 0)?;
            }
            rows.push(content.unsqueeze(0)?);
            let mut pos: Vec<i64> = p
                .text_positions
                .iter()
                .chain(p.gesture_positions.iter())
                .copied()
                .collect();
            pos.resize(max_len, 0);
            positions.push(pos);
            let mut mask = vec![false; len];
            mask.resize(max_len, true);
            pad.push(mask);
        }
        let mut content = Tensor::cat(&rows, 0)?;
        if let Some(pos_emb) = lm.positional_embedding(&positions)? {
            content = (content + pos_emb.detach())?;
        }
        let hidden = lm.forward(&content, &positions, &pad)?;
        let flat = hidden.reshape(((), h))?;

        let mut text_idx = Vec::new();
        let mut text_gold = Vec::new();
        let mut gest_idx = Vec::new();
        let mut gest_gold = Vec::new();
        for (b, p) in pairs.iter().enumerate() {
            let base = (b * max_len) as u32;
            for (i, &m) in p.text_mask.iter().enumerate() {
                if m {
                    text_idx.push(base + i as u32);
                    text_gold.push(p.text_gold[i].expect("gold for masked slot"));
                }
            }
            for (i, &m) in p.gesture_mask.iter().enumerate() {
                if m {
                    gest_idx.push(base + (p.text_len() + i) as u32);
                    gest_gold.push(p.gesture_gold[i].expect("gold for masked slot"));
                }
            }
        }
        let select = |idx: &[u32]| -> Result<Tensor> {
            let t = Tensor::from_vec(idx.to_vec(), idx.len(), &device)?;
            Ok(flat.index_select(&t, 0)?)
        };
        let text_logits = if text_idx.is_empty() {
            None
        } else {
            Some(lm.lm_logits(&select(&text_idx)?)?)
        };
        let gest_logits = if gest_idx.is_empty() {
            None
        } else {
            Some(self.head.forward(&select(&gest_idx)?)?)
        };
        Ok((text_logits, text_gold, gest_logits, gest_gold))
    }

    /// Full loss for a batch of masked pairs.
    pub fn loss(
        &self,
        lm: &LmBackbone,
        codebook: &Codebook,
        pairs: &[&PairedExample],
    ) -> Result<FaLoss> {
        let (tl, tg, gl, gg) = self.forward_batch(lm, codebook, pairs)?;
        fa_loss(tl.as_ref(), &tg, gl.as_ref(), &gg, self.store.dtype())
    }
}

/// Joint objective: mean cross-entropy over each masked set, summed.
/// An empty set contributes exactly 0.
pub fn fa_loss(
    text_logits: Option<&Tensor>,
    text_gold: &[u32],
    gesture_logits: Option<&Tensor>,
    gesture_gold: &[u32],
    dtype: DType,
) -> Result<FaLoss> {
    let device = candle_core::Device::Cpu;
    let zero = || Tensor::zeros((), dtype, &device).map_err(Error::from);
    let mlm = match text_logits {
        Some(l) if !text_gold.is_empty() => cross_entropy_mean(l, text_gold)?,
        _ => zero()?,
    };
    let mgp = match gesture_logits {
        Some(l) if !gesture_gold.is_empty() => cross_entropy_mean(l, gesture_gold)?,
        _ => zero()?,
    };
    let mlm_v = mlm.to_dtype(DType::F64)?.to_scalar::<f64>()?;
    let mgp_v = mgp.to_dtype(DType::F64)?.to_scalar::<f64>()?;
    for (name, v) in [("masked language modeling", mlm_v), ("masked gesture prediction", mgp_v)] {
        if !v.is_finite() {
            return Err(Error::NonFinite(format!("{name} loss is {v}")));
        }
    }
    let total = (&mlm + &mgp)?;
    Ok(FaLoss { total, mlm: mlm_v, mgp: mgp_v, fa: mlm_v + mgp_v })
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::Device;

    #[test]
    fn projector_is_pointwise_and_permutation_equivariant() {
        let mut store = ParamStore::new(DType::F64);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let p = Projector::init(&mut store, &mut rng, "p", 4, 8, 6);
        let x = Tensor::randn(0.0f64, 1.0, (3, 4), &Device::Cpu).unwrap();
        let y = p.forward(&x).unwrap();
        assert_eq!(y.dims(), &[3, 6]);
        // Permute rows: output permutes identically.
        let perm = Tensor::from_vec(vec![2u32, 0, 1], 3, &Device::Cpu).unwrap();
        let xp = x.index_select(&perm, 0).unwrap();
        let yp = p.forward(&xp).unwrap();
        let y_perm = y.index_select(&perm, 0).unwrap();
        let d = (yp - y_perm).unwrap().abs().unwrap().max_all().unwrap().to_scalar::<f64>().unwrap();
        assert_eq!(d, 0.0);
    }

    #[test]
    fn projector_gradient_matches_finite_differences() {
        let mut store = ParamStore::new(DType::F64);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = Projector::init(&mut store, &mut rng, "p", 2, 3, 2);
        let x = Tensor::from_vec(vec![0.4f64, -1.1, 0.7, 0.2], (2, 2), &Device::Cpu).unwrap();
        let loss_of = |p: &Projector, x: &Tensor| p.forward(x).unwrap().sqr().unwrap().sum_all().unwrap();
        let loss = loss_of(&p, &x);
        let grads = loss.backward().unwrap();
        for name in ["p.l1.weight", "p.l1.bias", "p.l2.weight", "p.l2.bias"] {
            let var = store.get(name).unwrap();
            let analytic = grads
                .get(var)
                .unwrap()
                .flatten_all()
                .unwrap()
                .to_vec1::<f64>()
                .unwrap();
            let numeric = crate::nn::finite_difference_grad(var, 1e-5, || {
                Ok(loss_of(&p, &x).to_scalar::<f64>().unwrap())
            })
            .unwrap();
            for (a, n) in analytic.iter().zip(&numeric) {
                let denom = n.abs().max(1e-6);
                assert!((a - n).abs() / denom < 1e-4, "{name}: {a} vs {n}");
            }
        }
    }

    #[test]
    fn empty_mask_sets_give_zero_loss() {
        let l = fa_loss(None, &[], None, &[], DType::F64).unwrap();
        assert_eq!(l.fa, 0.0);
        assert_eq!(l.total.to_scalar::<f64>().unwrap(), 0.0);
    }

    #[test]
    fn uniform_logits_over_k_classes_give_ln_k() {
        let k = 512usize;
        let logits = Tensor::zeros((1, k), DType::F64, &Device::Cpu).unwrap();
        let l = fa_loss(None, &[], Some(&logits), &[17], DType::F64).unwrap();
        assert!((l.mgp - (k as f64).ln()).abs() < 1e-6, "{}", l.mgp);
        assert!((l.mgp - 6.2383).abs() < 1e-3);
        // Decomposition is exact.
        assert_eq!(l.fa - l.mgp - l.mlm, 0.0);
    }

    #[test]
    fn loss_matches_per_slot_softmax_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        use rand::Rng;
        let (n, c) = (6, 9);
        let raw: Vec<f64> = (0..n * c).map(|_| rng.random_range(-2.0..2.0)).collect();
        let gold: Vec<u32> = (0..n).map(|_| rng.random_range(0..c as u32)).collect();
        let logits = Tensor::from_vec(raw.clone(), (n, c), &Device::Cpu).unwrap();
        let l = fa_loss(Some(&logits), &gold, None, &[], DType::F64).unwrap();
        let mut expect = 0.0;
        for i in 0..n {
            let row = &raw[i * c..(i + 1) * c];
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            expect += lse - row[gold[i] as usize];
        }
        expect /= n as f64;
        assert!((l.mlm - expect).abs() < 1e-6, "{} vs {expect}", l.mlm);
    }

    #[test]
    fn nan_logits_name_the_failing_term() {
        let logits = Tensor::from_vec(vec![f64::NAN, 0.0], (1, 2), &Device::Cpu).unwrap();
        let err = fa_loss(Some(&logits), &[0], None, &[], DType::F64).unwrap_err();
        assert!(matches!(err, Error::NonFinite(ref m) if m.contains("language")), "{err}");
    }
}
