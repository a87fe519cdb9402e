//! Corpus ingestion, dataset splitting, and the deterministic synthetic
//! gesture–text generator used for desk-scale verification.

mod manifest;
mod synth;

pub use manifest::{
    load_corpus, split_corpus, CorpusManifest, LoadReport, ManifestEntry, Split, Utterance,
};
pub use synth::{
    cue_joints, default_templates, generate_synthetic, generate_utterance, motif_rotation,
    motif_trajectory, nearest_motif, SynthConfig, SynthRecord,
};
