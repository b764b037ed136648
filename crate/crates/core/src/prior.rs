//! Gibbs structure prior `p(G) ∝ exp(-λ_t g(A) - λ_s ||A||_1)` and the
//! annealing schedule for `λ_t`. The normalizer is never computed.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{dag_penalty, AdjacencyMatrix};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PriorConfig {
    pub lambda_sparse: f64,
    pub temp_min: f64,
    pub temp_max: f64,
}

impl Default for PriorConfig {
    fn default() -> Self {
        Self {
            lambda_sparse: 0.01,
            temp_min: 10.0,
            temp_max: 1000.0,
        }
    }
}

impl PriorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_sparse >= 0.0 && self.lambda_sparse.is_finite()) {
            return Err(Error::InvalidArgument("lambda_sparse must be >= 0".into()));
        }
        if !(self.temp_min > 0.0 && self.temp_min <= self.temp_max && self.temp_max.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "need 0 < temp_min <= temp_max, got {} and {}",
                self.temp_min, self.temp_max
            )));
        }
        Ok(())
    }
}

pub fn log_prior_unnormalized(a: &AdjacencyMatrix, lambda_t: f64, config: &PriorConfig) -> f64 {
    let penalty = if lambda_t == 0.0 { 0.0 } else { lambda_t * dag_penalty(a) };
    -penalty - config.lambda_sparse * a.edge_count() as f64
}

/// `λ_t(i) = temp_min + 10^(-2 max(0, k - 1.1 i) / k) (temp_max - temp_min)`
/// for epoch `i` of `k`.
pub fn temperature_schedule(epoch: usize, total_epochs: usize, config: &PriorConfig) -> f64 {
    let k = total_epochs.max(1) as f64;
    let exponent = -2.0 * (k - 1.1 * epoch as f64).max(0.0) / k;
    config.temp_min + 10f64.powf(exponent) * (config.temp_max - config.temp_min)
}
