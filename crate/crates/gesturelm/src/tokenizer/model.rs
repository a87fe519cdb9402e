//! VQ-VAE encoder/decoder over motion windows.

use super::{Codebook, TokenizerConfig};
use crate::motion::MotionSequence;
use crate::nn::{EncoderLayer, Linear, ParamStore};
use crate::{Error, Result};
use candle_core::{DType, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Contiguous, non-overlapping, order-preserving partition of a motion
/// sequence into `m` equal chunks.
pub fn chunk(motion: &MotionSequence, m: usize) -> Result<Vec<MotionSequence>> {
    if m == 0 || motion.n_frames % m != 0 {
        return Err(Error::InvalidInput(format!(
            "{} frames cannot be divided into {m} equal chunks",
            motion.n_frames
        )));
    }
    let per = motion.n_frames / m;
    (0..m).map(|i| motion.window(i * per, (i + 1) * per)).collect()
}

/// Transformer VQ-VAE: frame encoder with learned frame positions, chunk
/// pooling, codebook quantization, and a single transformer decoder over the
/// whole token sequence.
#[derive(Debug, Clone)]
pub struct VqVae {
    pub config: TokenizerConfig,
    pub store: ParamStore,
    pub codebook: Codebook,
    input_proj: Linear,
    enc_pos: Var, // (N, d)
    enc_layers: Vec<EncoderLayer>,
    dec_pos: Var, // (M, d)
    dec_layers: Vec<EncoderLayer>,
    output_proj: Linear,
}

impl VqVae {
    pub fn new(config: TokenizerConfig, dtype: DType) -> Self {
        let mut store = ParamStore::new(dtype);
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let d = config.embed_dim;
        let frame_dim = config.n_joints * 6;
        let input_proj = Linear::init(&mut store, &mut rng, "enc.input", frame_dim, d);
        let enc_pos = store.randn("enc.pos", &[config.window, d], 0.02, &mut rng);
        let enc_layers = (0..config.layers)
            .map(|i| {
                EncoderLayer::init(&mut store, &mut rng, &format!("enc.layer{i}"), d, config.heads, 4 * d)
            })
            .collect();
        let codebook = Codebook::init(&mut store, &mut rng, config.codebook_size, d);
        let dec_pos = store.randn("dec.pos", &[config.chunks, d], 0.02, &mut rng);
        let dec_layers = (0..config.layers)
            .map(|i| {
                EncoderLayer::init(&mut store, &mut rng, &format!("dec.layer{i}"), d, config.heads, 4 * d)
            })
            .collect();
        let frames_per_chunk = config.window / config.chunks;
        let output_proj = Linear::init(
            &mut store,
            &mut rng,
            "dec.output",
            d,
            frames_per_chunk * frame_dim,
        );
        Self {
            config,
            store,
            codebook,
            input_proj,
            enc_pos,
            enc_layers,
            dec_pos,
            dec_layers,
            output_proj,
        }
    }

    /// Motion windows as a `(B, N, J*6)` tensor.
    pub fn motion_batch(&self, windows: &[&MotionSequence]) -> Result<Tensor> {
        let cfg = &self.config;
        let mut data = Vec::with_capacity(windows.len() * cfg.window * cfg.n_joints * 6);
        for w in windows {
            if w.n_frames != cfg.window || w.n_joints != cfg.n_joints {
                return Err(Error::ShapeMismatch(format!(
                    "window is {}x{} joints, tokenizer expects {}x{}",
                    w.n_frames, w.n_joints, cfg.window, cfg.n_joints
                )));
            }
            data.extend_from_slice(&w.data);
        }
        let t = Tensor::from_vec(
            data,
            (windows.len(), cfg.window, cfg.n_joints * 6),
            self.store.device(),
        )?;
        Ok(t.to_dtype(self.store.dtype())?)
    }

    /// Encode `(B, N, J*6)` motion into `(B, M, d)` latents.
    pub fn encode(&self, x: &Tensor) -> Result<Tensor> {
        let (b, n, _f) = x.dims3()?;
        if n != self.config.window {
            return Err(Error::ShapeMismatch(format!(
                "expected {} frames, got {n}",
                self.config.window
            )));
        }
        let mut h = self
            .input_proj
            .forward(x)?
            .broadcast_add(&self.enc_pos.unsqueeze(0)?)?;
        for layer in &self.enc_layers {
            h = layer.forward(&h, None)?;
        }
        // Mean-pool each chunk's frames into one latent.
        let per = self.config.window / self.config.chunks;
        let pooled = h
            .reshape((b, self.config.chunks, per, self.config.embed_dim))?
            .mean(2)?;
        Ok(pooled)
    }

    /// Decode `(B, M, d)` (quantized) latents into `(B, N, J*6)` motion.
    pub fn decode(&self, zq: &Tensor) -> Result<Tensor> {
        let (b, m, d) = zq.dims3()?;
        if m != self.config.chunks || d != self.config.embed_dim {
            return Err(Error::ShapeMismatch(format!(
                "expected ({}, {}) latents, got ({m}, {d})",
                self.config.chunks, self.config.embed_dim
            )));
        }
        let mut h = zq.broadcast_add(&self.dec_pos.unsqueeze(0)?)?;
        for layer in &self.dec_layers {
            h = layer.forward(&h, None)?;
        }
        let per_chunk = self.output_proj.forward(&h)?; // (B, M, per*J*6)
        per_chunk.reshape((b, self.config.window, self.config.n_joints * 6)).map_err(Into::into)
    }

    /// Encode one motion window to its `(M, d)` latent sequence.
    pub fn encode_motion(&self, motion: &MotionSequence) -> Result<Tensor> {
        let x = self.motion_batch(&[motion])?;
        Ok(self.encode(&x)?.squeeze(0)?)
    }

    /// Quantize latents `(B, M, d)`; returns ids `(B, M)`, codebook rows and
    /// the straight-through pass-through value, both `(B, M, d)`.
    pub fn quantize_batch(&self, z: &Tensor) -> Result<(Vec<Vec<u32>>, Tensor, Tensor)> {
        let (b, m, d) = z.dims3()?;
        let flat = z.reshape((b * m, d))?;
        let (ids, zq, passthrough) = self.codebook.quantize(&flat)?;
        let ids = ids.chunks(m).map(|c| c.to_vec()).collect();
        Ok((ids, zq.reshape((b, m, d))?, passthrough.reshape((b, m, d))?))
    }

    /// Decoded reconstruction of one motion window (inference path).
    pub fn reconstruct(&self, motion: &MotionSequence) -> Result<MotionSequence> {
        let x = self.motion_batch(&[motion])?;
        let z = self.encode(&x)?;
        let (_ids, zq, _) = self.quantize_batch(&z)?;
        let xhat = self.decode(&zq)?;
        let data: Vec<f64> = xhat.to_dtype(DType::F64)?.flatten_all()?.to_vec1()?;
        MotionSequence::new(data, self.config.window, self.config.n_joints, self.config.fps)
    }
}
