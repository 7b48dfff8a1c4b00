use serde::{Deserialize, Serialize};

use crate::corpus::DEFAULT_THRESHOLD;
use crate::error::{contract, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// Sequence-level predictor on a causal backbone.
    Clm,
    /// Token-level predictor on a bidirectional backbone.
    Mlm,
}

/// Which part of a response block is masked first.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaskStrategy {
    /// Masked suffix grows; the visible prefix shrinks.
    End,
    /// Masked prefix grows; the visible suffix shrinks.
    Start,
    /// Seeded uniform subset.
    Random,
}

/// Routing-label targets for the BCE objective.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelMode {
    #[default]
    Hard,
    /// Normalized scores used directly as soft targets.
    Soft,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LookaheadConfig {
    pub variant: Variant,
    pub models: usize,
    /// Weight of the response-modeling loss.
    pub lambda: f64,
    /// MID tokens per response block (MLM only).
    pub block_len: usize,
    /// Fraction of training over which the mask ratio ramps to 1 (MLM only).
    pub alpha: f64,
    pub strategy: MaskStrategy,
    /// When false the blocks are fully masked from the first step.
    pub curriculum: bool,
    pub threshold: f64,
    pub labels: LabelMode,
    /// Response tokens kept per model for CLM teacher forcing.
    pub max_response_len: usize,
}

impl LookaheadConfig {
    pub fn clm(models: usize) -> Self {
        Self {
            variant: Variant::Clm,
            models,
            lambda: 0.5,
            block_len: 64,
            alpha: 0.4,
            strategy: MaskStrategy::End,
            curriculum: true,
            threshold: DEFAULT_THRESHOLD,
            labels: LabelMode::Hard,
            max_response_len: 128,
        }
    }

    pub fn mlm(models: usize) -> Self {
        Self {
            variant: Variant::Mlm,
            lambda: 0.2,
            ..Self::clm(models)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.models < 2 {
            return Err(contract(format!("need at least 2 candidate models, got {}", self.models)));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(contract(format!("lambda must be non-negative, got {}", self.lambda)));
        }
        if self.block_len == 0 {
            return Err(contract("block length must be at least 1"));
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(contract(format!("alpha must lie in (0, 1], got {}", self.alpha)));
        }
        if self.max_response_len == 0 {
            return Err(contract("max response length must be at least 1"));
        }
        Ok(())
    }
}
