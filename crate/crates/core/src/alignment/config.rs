use serde::{Deserialize, Serialize};

use crate::codec::MAX_CODE_ATTRIBUTES;
use crate::error::{GramError, Result};
use crate::seqmodel::AdamWConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AlignmentConfig {
    pub beta_w: f64,
    pub beta_l: f64,
    /// Longest code, in attributes, for the length penalty.
    pub max_code_l: usize,
    pub negatives_per_positive: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: AdamWConfig,
    pub dropout: f64,
    /// Fraction of queries whose pairs are held out for margin tracking.
    pub heldout_fraction: f64,
    pub seed: u64,
}

impl Default for AlignmentConfig {
    fn default() -> Self {
        Self {
            beta_w: 0.1,
            beta_l: 0.1,
            max_code_l: MAX_CODE_ATTRIBUTES,
            negatives_per_positive: 4,
            epochs: 1,
            batch_size: 32,
            optimizer: AdamWConfig {
                lr: 1e-5,
                ..Default::default()
            },
            dropout: 0.0,
            heldout_fraction: 0.05,
            seed: 1,
        }
    }
}

impl AlignmentConfig {
    pub fn validate(&self) -> Result<()> {
        self.optimizer.validate()?;
        if !(self.beta_w > 0.0 && self.beta_l > 0.0) {
            return Err(GramError::Config("beta_w and beta_l must be positive".into()));
        }
        if self.max_code_l == 0 || self.batch_size == 0 {
            return Err(GramError::Config("max_code_l and batch_size must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) || !(0.0..1.0).contains(&self.heldout_fraction) {
            return Err(GramError::Config("dropout and heldout_fraction must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WeightConfig {
    /// Hinge margin.
    pub mu: f64,
    /// Number of highest-relevance candidates taken as positives per query.
    pub top_k: usize,
    /// Relevance at or above which a candidate may be a positive.
    pub relevance_threshold: f64,
    /// Negatives sampled per positive.
    pub negatives_per_positive: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Fraction of queries whose triples are held out.
    pub heldout_fraction: f64,
    pub seed: u64,
}

impl Default for WeightConfig {
    fn default() -> Self {
        Self {
            mu: 0.5,
            top_k: 5,
            relevance_threshold: 0.5,
            negatives_per_positive: 4,
            epochs: 20,
            batch_size: 64,
            lr: 0.05,
            heldout_fraction: 0.1,
            seed: 1,
        }
    }
}

impl WeightConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.mu >= 0.0) || self.top_k == 0 || self.batch_size == 0 || !(self.lr > 0.0) {
            return Err(GramError::Config(format!("invalid weight training settings: {self:?}")));
        }
        if !(0.0..1.0).contains(&self.heldout_fraction) {
            return Err(GramError::Config("heldout_fraction must lie in [0, 1)".into()));
        }
        Ok(())
    }
}
