//! Encoder-only masked language model backbone with an LM head and low-rank
//! adapter injection.

mod backbone;
mod lora;
mod pretrain;
mod vocab;

pub use backbone::{LmBackbone, LmConfig, PositionalScheme};
pub use lora::{LoraConfig, LoraTargets};
pub use pretrain::{pretrain_mlm, PretrainConfig, PretrainLog};
pub use vocab::{Vocab, BOS as BOS_TOKEN, EOS as EOS_TOKEN, MASK as MASK_TOKEN, PAD as PAD_TOKEN};
