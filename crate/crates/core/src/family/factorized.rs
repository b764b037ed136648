use nalgebra::DMatrix;
use rand::Rng;

use super::{bernoulli_log_mass, sigmoid, ParamGradient};
use crate::error::{Error, Result};
use crate::graph::{num_positions, positions, AdjacencyMatrix};

/// Independent Bernoulli per off-diagonal entry; one logit per linear position.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorizedModel {
    d: usize,
    logits: Vec<f64>,
}

impl FactorizedModel {
    pub fn zeros(d: usize) -> Self {
        Self {
            d,
            logits: vec![0.0; num_positions(d)],
        }
    }

    pub fn init<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Self {
        Self {
            d,
            logits: (0..num_positions(d)).map(|_| rng.random_range(-0.1..=0.1)).collect(),
        }
    }

    pub fn from_logits(d: usize, logits: Vec<f64>) -> Result<Self> {
        if logits.len() != num_positions(d) {
            return Err(Error::DimensionMismatch {
                expected: num_positions(d),
                got: logits.len(),
            });
        }
        if logits.iter().any(|l| !l.is_finite()) {
            return Err(Error::InvalidArgument("non-finite logit".into()));
        }
        Ok(Self { d, logits })
    }

    pub fn num_nodes(&self) -> usize {
        self.d
    }

    pub fn params(&self) -> &[f64] {
        &self.logits
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.logits
    }

    pub fn log_prob(&self, a: &AdjacencyMatrix) -> f64 {
        assert_eq!(a.num_nodes(), self.d, "graph size does not match model");
        a.linearize()
            .iter()
            .zip(&self.logits)
            .map(|(&bit, &z)| bernoulli_log_mass(z, bit))
            .sum()
    }

    pub fn sample_batch<R: Rng + ?Sized>(&self, count: usize, rng: &mut R) -> Vec<(AdjacencyMatrix, f64)> {
        let probs: Vec<f64> = self.logits.iter().map(|&z| sigmoid(z)).collect();
        (0..count)
            .map(|_| {
                let mut a = AdjacencyMatrix::empty(self.d);
                let mut lp = 0.0;
                for (((i, j), &p), &z) in positions(self.d).zip(&probs).zip(&self.logits) {
                    let bit = rng.random::<f64>() < p;
                    lp += bernoulli_log_mass(z, bit);
                    if bit {
                        a.set_edge(i, j, true);
                    }
                }
                (a, lp)
            })
            .collect()
    }

    /// `d log q / d logit_t = a_t - p_t`.
    pub fn weighted_score(&self, graphs: &[AdjacencyMatrix], weights: &[f64]) -> ParamGradient {
        assert_eq!(graphs.len(), weights.len());
        let mut grad = ParamGradient::zeros(self.logits.len());
        let probs: Vec<f64> = self.logits.iter().map(|&z| sigmoid(z)).collect();
        let g = grad.as_mut_slice();
        for (a, &w) in graphs.iter().zip(weights) {
            for (t, &bit) in a.linearize().iter().enumerate() {
                g[t] += w * (bit as u8 as f64 - probs[t]);
            }
        }
        grad
    }

    pub fn edge_marginals(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.d, self.d);
        for ((i, j), &z) in positions(self.d).zip(&self.logits) {
            m[(i, j)] = sigmoid(z);
        }
        m
    }
}
