//! Run configuration: one TOML file drives every pipeline stage, with CLI
//! flags overriding file values and file values overriding defaults.

use crate::align::AlignConfig;
use crate::data::SynthConfig;
use crate::infill::FinetuneConfig;
use crate::textlm::{LmConfig, PretrainConfig};
use crate::tokenizer::{GridSpec, TokenizerConfig};
use crate::{Error, Result};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

/// Evaluation / experiment section.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    /// Fine-tuning seeds; metrics are aggregated over them.
    pub seeds: Vec<u64>,
    /// Extra eval-time gesture corruptions ("random_normal",
    /// "positional_only").
    pub adversarial: Vec<String>,
    pub adversarial_seed: u64,
    /// Markers kept only with training-split count strictly above this.
    pub frequency_threshold: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            seeds: vec![1, 2, 3, 4, 5],
            adversarial: Vec::new(),
            adversarial_seed: 0xadf0,
            frequency_threshold: 30,
        }
    }
}

fn default_grid() -> GridSpec {
    GridSpec::default_normalized()
}

/// The full run configuration. Unknown keys anywhere are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Global seed; stage seeds default to values derived from it when the
    /// stage sections leave theirs at 0.
    pub seed: u64,
    pub out_dir: PathBuf,
    /// Force single-threaded numeric paths (all bundled backends already
    /// are; the flag is recorded for reproducibility audits).
    pub deterministic: bool,
    /// Task name: "discourse", "quantifier", or "stance".
    pub task: String,
    /// Corpus directory containing `manifest.jsonl`.
    pub corpus_dir: PathBuf,
    pub synth: SynthConfig,
    pub tokenizer: TokenizerConfig,
    pub align: AlignConfig,
    pub lm: LmConfig,
    pub pretrain: PretrainConfig,
    pub finetune: FinetuneConfig,
    pub eval: EvalSection,
    #[serde(default = "default_grid")]
    pub grid: GridSpec,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out_dir: PathBuf::from("out"),
            deterministic: true,
            task: "discourse".into(),
            corpus_dir: PathBuf::from("corpus"),
            synth: SynthConfig::default(),
            tokenizer: TokenizerConfig::default(),
            align: AlignConfig::default(),
            lm: LmConfig::default(),
            pretrain: PretrainConfig::default(),
            finetune: FinetuneConfig::default(),
            eval: EvalSection::default(),
            grid: default_grid(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Write the fully resolved configuration next to a run's outputs so the
    /// run can be reproduced from that file alone.
    pub fn save_resolved(&self, out_dir: &Path) -> Result<PathBuf> {
        std::fs::create_dir_all(out_dir)?;
        let path = out_dir.join("resolved_config.toml");
        std::fs::write(&path, self.to_toml()?)?;
        Ok(path)
    }
}
