//! Minimal transformer encoder building blocks over [`ParamStore`] variables.

use super::params::ParamStore;
use candle_core::{DType, Result, Tensor, Var};
use rand_chacha::ChaCha8Rng;

/// Additive attention mask value for padded key positions.
pub const MASK_NEG: f64 = -1e9;

#[derive(Debug, Clone)]
pub struct Linear {
    weight: Var, // (out, in)
    bias: Var,   // (out,)
    lora: Option<LoraAdapter>,
}

#[derive(Debug, Clone)]
pub struct LoraAdapter {
    a: Var, // (r, in)
    b: Var, // (out, r)
    scale: f64,
}

impl Linear {
    pub fn init(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        in_dim: usize,
        out_dim: usize,
    ) -> Self {
        let bound = 1.0 / (in_dim as f64).sqrt();
        Self {
            weight: store.uniform(&format!("{name}.weight"), &[out_dim, in_dim], bound, rng),
            bias: store.zeros(&format!("{name}.bias"), &[out_dim]),
            lora: None,
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.dims()[1]
    }

    pub fn out_dim(&self) -> usize {
        self.weight.dims()[0]
    }

    pub fn has_lora(&self) -> bool {
        self.lora.is_some()
    }

    /// Attach a low-rank adapter `W + (alpha/r) * B A`.
    ///
    /// `A` is small-Gaussian initialized, `B` starts at zero so the adapted
    /// layer is exactly the base layer until training moves `B`.
    pub fn inject_lora(
        &mut self,
        adapters: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        rank: usize,
        alpha: f64,
    ) {
        assert!(self.lora.is_none(), "adapter already injected into {name}");
        let (out_dim, in_dim) = (self.out_dim(), self.in_dim());
        let a = adapters.randn(&format!("{name}.lora_a"), &[rank, in_dim], 0.01, rng);
        let b = adapters.zeros(&format!("{name}.lora_b"), &[out_dim, rank]);
        self.lora = Some(LoraAdapter { a, b, scale: alpha / rank as f64 });
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut y = x
            .broadcast_matmul(&self.weight.t()?)?
            .broadcast_add(self.bias.as_tensor())?;
        if let Some(lora) = &self.lora {
            let delta = x
                .broadcast_matmul(&lora.a.t()?)?
                .broadcast_matmul(&lora.b.t()?)?;
            y = (y + (delta * lora.scale)?)?;
        }
        Ok(y)
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    weight: Var,
    bias: Var,
    eps: f64,
}

impl LayerNorm {
    pub fn init(store: &mut ParamStore, name: &str, dim: usize) -> Self {
        Self {
            weight: store.ones(&format!("{name}.weight"), &[dim]),
            bias: store.zeros(&format!("{name}.bias"), &[dim]),
            eps: 1e-5,
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let last = x.rank() - 1;
        let mean = x.mean_keepdim(last)?;
        let centered = x.broadcast_sub(&mean)?;
        let var = centered.sqr()?.mean_keepdim(last)?;
        let normed = centered.broadcast_div(&(var + self.eps)?.sqrt()?)?;
        normed
            .broadcast_mul(self.weight.as_tensor())?
            .broadcast_add(self.bias.as_tensor())
    }
}

#[derive(Debug, Clone)]
pub struct Embedding {
    weight: Var, // (vocab, dim)
}

impl Embedding {
    pub fn init(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        vocab: usize,
        dim: usize,
    ) -> Self {
        Self { weight: store.randn(&format!("{name}.weight"), &[vocab, dim], 0.02, rng) }
    }

    pub fn from_var(weight: Var) -> Self {
        Self { weight }
    }

    pub fn vocab_size(&self) -> usize {
        self.weight.dims()[0]
    }

    pub fn dim(&self) -> usize {
        self.weight.dims()[1]
    }

    pub fn weight(&self) -> &Var {
        &self.weight
    }

    /// `ids` of any shape (u32) -> embeddings with a trailing `dim` axis.
    pub fn forward(&self, ids: &Tensor) -> Result<Tensor> {
        let shape = ids.dims().to_vec();
        let flat = ids.flatten_all()?;
        let picked = self.weight.index_select(&flat, 0)?;
        let mut out_shape = shape;
        out_shape.push(self.dim());
        picked.reshape(out_shape)
    }
}

#[derive(Debug, Clone)]
pub struct MultiHeadAttention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
    n_heads: usize,
}

impl MultiHeadAttention {
    pub fn init(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        dim: usize,
        n_heads: usize,
    ) -> Self {
        assert!(dim % n_heads == 0, "model width must divide into heads");
        Self {
            q: Linear::init(store, rng, &format!("{name}.q"), dim, dim),
            k: Linear::init(store, rng, &format!("{name}.k"), dim, dim),
            v: Linear::init(store, rng, &format!("{name}.v"), dim, dim),
            o: Linear::init(store, rng, &format!("{name}.o"), dim, dim),
            n_heads,
        }
    }

    /// `x` is `(B, T, dim)`; `attn_bias`, when given, is additive and
    /// broadcastable to `(B, heads, T, T)`.
    pub fn forward(&self, x: &Tensor, attn_bias: Option<&Tensor>) -> Result<Tensor> {
        let (b, t, dim) = x.dims3()?;
        let dk = dim / self.n_heads;
        let split = |t_: Tensor| -> Result<Tensor> {
            t_.reshape((b, t, self.n_heads, dk))?.transpose(1, 2)?.contiguous()
        };
        let q = split(self.q.forward(x)?)?;
        let k = split(self.k.forward(x)?)?;
        let v = split(self.v.forward(x)?)?;
        let mut scores = (q.matmul(&k.transpose(2, 3)?.contiguous()?)? / (dk as f64).sqrt())?;
        if let Some(bias) = attn_bias {
            scores = scores.broadcast_add(bias)?;
        }
        let probs = candle_nn::ops::softmax(&scores, 3)?;
        let ctx = probs.matmul(&v)?; // (B, H, T, dk)
        let merged = ctx.transpose(1, 2)?.contiguous()?.reshape((b, t, dim))?;
        self.o.forward(&merged)
    }
}

#[derive(Debug, Clone)]
pub struct FeedForward {
    lin1: Linear,
    lin2: Linear,
}

impl FeedForward {
    pub fn init(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        dim: usize,
        hidden: usize,
    ) -> Self {
        Self {
            lin1: Linear::init(store, rng, &format!("{name}.lin1"), dim, hidden),
            lin2: Linear::init(store, rng, &format!("{name}.lin2"), hidden, dim),
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.lin2.forward(&self.lin1.forward(x)?.gelu_erf()?)
    }
}

/// Post-LN encoder layer: `x = LN(x + attn(x)); x = LN(x + ffn(x))`.
#[derive(Debug, Clone)]
pub struct EncoderLayer {
    pub attn: MultiHeadAttention,
    ffn: FeedForward,
    ln1: LayerNorm,
    ln2: LayerNorm,
}

impl EncoderLayer {
    pub fn init(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        dim: usize,
        n_heads: usize,
        ffn_hidden: usize,
    ) -> Self {
        Self {
            attn: MultiHeadAttention::init(store, rng, &format!("{name}.attn"), dim, n_heads),
            ffn: FeedForward::init(store, rng, &format!("{name}.ffn"), dim, ffn_hidden),
            ln1: LayerNorm::init(store, &format!("{name}.ln1"), dim),
            ln2: LayerNorm::init(store, &format!("{name}.ln2"), dim),
        }
    }

    pub fn forward(&self, x: &Tensor, attn_bias: Option<&Tensor>) -> Result<Tensor> {
        let x = self.ln1.forward(&(x + self.attn.forward(x, attn_bias)?)?)?;
        self.ln2.forward(&(&x + self.ffn.forward(&x)?)?)
    }
}

/// Learned bias on attention logits from clipped relative position offsets.
#[derive(Debug, Clone)]
pub struct RelativePositionBias {
    table: Var, // (2 * max_offset + 1, heads)
    max_offset: i64,
    n_heads: usize,
}

impl RelativePositionBias {
    pub fn init(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        n_heads: usize,
        max_offset: usize,
    ) -> Self {
        let table = store.randn(
            &format!("{name}.table"),
            &[2 * max_offset + 1, n_heads],
            0.02,
            rng,
        );
        Self { table, max_offset: max_offset as i64, n_heads }
    }

    /// Bias `(B, heads, T, T)` for per-example position vectors.
    pub fn forward(&self, positions: &[Vec<i64>]) -> Result<Tensor> {
        let b = positions.len();
        let t = positions[0].len();
        let mut idx = Vec::with_capacity(b * t * t);
        for pos in positions {
            assert_eq!(pos.len(), t, "ragged position batch");
            for &pi in pos {
                for &pj in pos {
                    let off = (pj - pi).clamp(-self.max_offset, self.max_offset);
                    idx.push((off + self.max_offset) as u32);
                }
            }
        }
        let idx = Tensor::from_vec(idx, b * t * t, self.table.device())?;
        self.table
            .index_select(&idx, 0)? // (B*T*T, H)
            .reshape((b, t, t, self.n_heads))?
            .permute((0, 3, 1, 2))?
            .contiguous()
    }
}

/// Padding mask `(B, 1, 1, T)`: `MASK_NEG` on padded key slots, 0 elsewhere.
pub fn padding_bias(pad: &[Vec<bool>], dtype: DType, device: &candle_core::Device) -> Result<Tensor> {
    let b = pad.len();
    let t = pad[0].len();
    let data: Vec<f64> = pad
        .iter()
        .flat_map(|row| row.iter().map(|&p| if p { MASK_NEG } else { 0.0 }))
        .collect();
    Tensor::from_vec(data, (b, 1, 1, t), device)?.to_dtype(dtype)
}

/// Mean cross-entropy of `logits (N, C)` against class indices.
pub fn cross_entropy_mean(logits: &Tensor, targets: &[u32]) -> Result<Tensor> {
    let t = Tensor::from_vec(targets.to_vec(), targets.len(), logits.device())?;
    let log_probs = candle_nn::ops::log_softmax(logits, 1)?;
    let picked = log_probs
        .gather(&t.unsqueeze(1)?, 1)?
        .squeeze(1)?;
    picked.mean_all()?.neg()
}
