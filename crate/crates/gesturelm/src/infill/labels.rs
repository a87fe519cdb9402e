//! Marker label sets for the three infilling tasks.

use crate::textlm::Vocab;
use crate::{Error, Result};
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Ordered marker list for one task. Order is part of the contract: it fixes
/// tie-breaking in prediction and row order in reports.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSet {
    pub task: String,
    pub markers: Vec<String>,
}

pub const DISCOURSE_MARKERS: &[&str] = &[
    "after", "also", "although", "and", "as", "because", "but", "for example", "however", "if",
    "if then", "or", "since", "so", "then", "though", "when", "while",
];

pub const QUANTIFIER_MARKERS: &[&str] = &[
    "all", "each", "enough", "entire", "few", "little", "less", "many", "more", "most", "much",
    "no", "one", "some", "three", "two", "whole",
];

pub const STANCE_MARKERS: &[&str] = &[
    "actually", "almost", "amazing", "especially", "extremely", "happy", "important", "may",
    "maybe", "might", "must", "probably", "really", "very",
];

impl LabelSet {
    pub fn new(task: &str, markers: Vec<String>) -> Result<Self> {
        let set = Self { task: task.to_string(), markers };
        set.validate()?;
        Ok(set)
    }

    /// The built-in list for one of the three tasks.
    pub fn builtin(task: &str) -> Result<Self> {
        let markers = match task {
            "discourse" => DISCOURSE_MARKERS,
            "quantifier" => QUANTIFIER_MARKERS,
            "stance" => STANCE_MARKERS,
            _ => {
                return Err(Error::Config(format!(
                    "unknown task {task:?}; expected discourse, quantifier, or stance"
                )))
            }
        };
        Self::new(task, markers.iter().map(|s| s.to_string()).collect())
    }

    pub fn validate(&self) -> Result<()> {
        if self.markers.is_empty() {
            return Err(Error::Config(format!("task {:?} has no markers", self.task)));
        }
        let mut seen = std::collections::HashSet::new();
        for m in &self.markers {
            let norm = m.to_lowercase();
            if norm != *m || m.trim() != m || m.is_empty() {
                return Err(Error::Config(format!("marker {m:?} must be trimmed lowercase")));
            }
            if !seen.insert(norm) {
                return Err(Error::Config(format!("duplicate marker {m:?}")));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.markers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.markers.is_empty()
    }

    /// Index of a marker (case-insensitive).
    pub fn index_of(&self, marker: &str) -> Option<usize> {
        let norm = marker.to_lowercase();
        self.markers.iter().position(|m| *m == norm)
    }

    /// Register every marker as a single vocabulary entry (multi-word
    /// markers included) and return the ids in label order.
    pub fn register(&self, vocab: &mut Vocab) -> Vec<u32> {
        self.markers.iter().map(|m| vocab.add_token(m)).collect()
    }

    /// Resolve the vocabulary id of every marker, erroring on any gap (the
    /// task is undefined if a label cannot be predicted).
    pub fn ids(&self, vocab: &Vocab) -> Result<Vec<u32>> {
        self.markers
            .iter()
            .map(|m| {
                vocab.id(m).ok_or_else(|| {
                    Error::Config(format!("marker {m:?} missing from vocabulary"))
                })
            })
            .collect()
    }

    /// One marker per line.
    pub fn load_override(task: &str, path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let markers: Vec<String> = text
            .lines()
            .map(|l| l.trim().to_string())
            .filter(|l| !l.is_empty())
            .collect();
        Self::new(task, markers)
    }
}
