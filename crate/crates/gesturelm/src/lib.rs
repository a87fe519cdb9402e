//! Gesture tokenization and gesture-aligned masked language modeling.
//!
//! The pipeline has three stages: a VQ-VAE that turns 3D upper-body motion
//! into discrete gesture tokens, a feature-alignment stage that projects
//! gesture token embeddings into a masked language model's input space, and
//! restricted-vocabulary fine-tuning for spoken discourse marker infilling
//! (discourse connectives, quantifiers, stance markers).
//!
//! A deterministic synthetic corpus generator ([`data::generate_synthetic`])
//! makes every stage verifiable at desk scale without external datasets.

pub mod align;
pub mod config;
pub mod data;
pub mod error;
pub mod infill;
pub mod motion;
pub mod nn;
pub mod textlm;
pub mod tokenizer;

pub use error::{Error, Result};
