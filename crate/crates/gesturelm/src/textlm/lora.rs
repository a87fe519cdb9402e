//! Low-rank adapter configuration.

use serde::{Deserialize, Serialize};

/// Which attention projections receive adapters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LoraTargets {
    pub query: bool,
    pub key: bool,
    pub value: bool,
    pub output: bool,
}

impl Default for LoraTargets {
    fn default() -> Self {
        Self { query: true, key: true, value: true, output: true }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LoraConfig {
    pub rank: usize,
    pub alpha: f64,
    pub targets: LoraTargets,
}

impl Default for LoraConfig {
    /// Desk-scale default.
    fn default() -> Self {
        Self { rank: 8, alpha: 16.0, targets: LoraTargets::default() }
    }
}

impl LoraConfig {
    /// Full-scale setting (r=128, alpha=256).
    pub fn paper_scale() -> Self {
        Self { rank: 128, alpha: 256.0, targets: LoraTargets::default() }
    }

    /// Trainable parameter count for a set of (in, out) target shapes:
    /// `sum r * (in + out)`.
    pub fn parameter_count(&self, shapes: &[(usize, usize)]) -> usize {
        shapes.iter().map(|(i, o)| self.rank * (i + o)).sum()
    }
}
