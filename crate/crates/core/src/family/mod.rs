//! Variational distributions over adjacency matrices.
//!
//! Both families model the `d(d-1)` off-diagonal entries in linearization order
//! (see [`crate::graph`]); the diagonal is never part of the sequence.

mod autoregressive;
mod factorized;

use std::ops::Deref;
use std::path::Path;

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

pub use autoregressive::{AutoregressiveModel, DEFAULT_EMBED_SIZE, DEFAULT_HIDDEN_SIZE};
use autoregressive::Trace;
pub use factorized::FactorizedModel;

use crate::error::{Error, Result};
use crate::graph::AdjacencyMatrix;
use crate::io::write_atomic;

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + e^x)` without overflow.
fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Log-mass of `bit` under a Bernoulli with the given logit, computed as a
/// log-sigmoid so saturated logits stay finite.
pub(crate) fn bernoulli_log_mass(logit: f64, bit: bool) -> f64 {
    if bit {
        -softplus(-logit)
    } else {
        -softplus(logit)
    }
}

/// Graphs drawn from a model, with their log-probabilities.
pub struct SampleBatch {
    pub samples: Vec<(AdjacencyMatrix, f64)>,
    trace: Option<Trace>,
}

impl SampleBatch {
    pub fn graphs(&self) -> Vec<AdjacencyMatrix> {
        self.samples.iter().map(|(a, _)| a.clone()).collect()
    }
}

/// Anything that assigns a normalized log-probability to every graph.
pub trait GraphDensity {
    fn num_nodes(&self) -> usize;
    fn log_prob(&self, a: &AdjacencyMatrix) -> f64;
}

/// Gradient of a scalar w.r.t. a model's flattened parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGradient(Vec<f64>);

impl ParamGradient {
    pub fn zeros(len: usize) -> Self {
        Self(vec![0.0; len])
    }

    pub fn from_vec(v: Vec<f64>) -> Self {
        Self(v)
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|g| g * g).sum::<f64>().sqrt()
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

impl Deref for ParamGradient {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    #[default]
    Autoregressive,
    Factorized,
}

impl std::str::FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "autoregressive" | "ar" | "lstm" => Ok(Family::Autoregressive),
            "factorized" | "factorised" | "bernoulli" => Ok(Family::Factorized),
            other => Err(Error::InvalidArgument(format!("unknown family {other:?}"))),
        }
    }
}

impl std::fmt::Display for Family {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Family::Autoregressive => "autoregressive",
            Family::Factorized => "factorized",
        })
    }
}

/// A variational distribution of either family.
#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    Autoregressive(AutoregressiveModel),
    Factorized(FactorizedModel),
}

impl Model {
    /// Fresh model with small random weights (edge probabilities near 1/2).
    pub fn init<R: Rng + ?Sized>(family: Family, d: usize, hidden_size: usize, rng: &mut R) -> Result<Self> {
        Ok(match family {
            Family::Autoregressive => Model::Autoregressive(AutoregressiveModel::init(d, hidden_size, rng)?),
            Family::Factorized => Model::Factorized(FactorizedModel::init(d, rng)),
        })
    }

    pub fn family(&self) -> Family {
        match self {
            Model::Autoregressive(_) => Family::Autoregressive,
            Model::Factorized(_) => Family::Factorized,
        }
    }

    pub fn params(&self) -> &[f64] {
        match self {
            Model::Autoregressive(m) => m.params(),
            Model::Factorized(m) => m.params(),
        }
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        match self {
            Model::Autoregressive(m) => m.params_mut(),
            Model::Factorized(m) => m.params_mut(),
        }
    }

    /// `count` independent graphs with their log-probabilities.
    pub fn sample_batch<R: Rng + ?Sized>(&self, count: usize, rng: &mut R) -> Vec<(AdjacencyMatrix, f64)> {
        match self {
            Model::Autoregressive(m) => m.sample_batch(count, rng),
            Model::Factorized(m) => m.sample_batch(count, rng),
        }
    }

    /// Draws exactly what [`Self::sample_batch`] would, keeping the forward
    /// activations for [`Self::score_batch`].
    pub fn sample_for_score<R: Rng + ?Sized>(&self, count: usize, rng: &mut R) -> SampleBatch {
        match self {
            Model::Autoregressive(m) => {
                let (samples, trace) = m.sample_traced(count, rng);
                SampleBatch {
                    samples,
                    trace: Some(trace),
                }
            }
            Model::Factorized(m) => SampleBatch {
                samples: m.sample_batch(count, rng),
                trace: None,
            },
        }
    }

    /// Same as [`Self::weighted_score`] on the batch's graphs. The batch must
    /// come from this model with its current parameters.
    pub fn score_batch(&self, batch: &SampleBatch, weights: &[f64]) -> ParamGradient {
        match (self, &batch.trace) {
            (Model::Autoregressive(m), Some(trace)) => m.backward(trace, weights),
            _ => self.weighted_score(&batch.graphs(), weights),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> (AdjacencyMatrix, f64) {
        self.sample_batch(1, rng).pop().expect("one sample")
    }

    pub fn log_prob_batch(&self, graphs: &[AdjacencyMatrix]) -> Vec<f64> {
        match self {
            Model::Autoregressive(m) => m.log_prob_batch(graphs),
            Model::Factorized(m) => graphs.iter().map(|g| m.log_prob(g)).collect(),
        }
    }

    /// `sum_k weights[k] * grad log q(graphs[k])`.
    pub fn weighted_score(&self, graphs: &[AdjacencyMatrix], weights: &[f64]) -> ParamGradient {
        match self {
            Model::Autoregressive(m) => m.weighted_score(graphs, weights),
            Model::Factorized(m) => m.weighted_score(graphs, weights),
        }
    }

    pub fn grad_log_prob(&self, a: &AdjacencyMatrix) -> ParamGradient {
        self.weighted_score(std::slice::from_ref(a), &[1.0])
    }

    /// Per-edge marginal probabilities. Exact for the factorized family,
    /// a Monte Carlo frequency over `num_samples` draws otherwise.
    pub fn edge_marginals<R: Rng + ?Sized>(&self, num_samples: usize, rng: &mut R) -> DMatrix<f64> {
        match self {
            Model::Factorized(m) => m.edge_marginals(),
            Model::Autoregressive(m) => monte_carlo_marginals(m.num_nodes(), num_samples, |c, r| m.sample_batch(c, r), rng),
        }
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let (hidden_size, embed_size) = match self {
            Model::Autoregressive(m) => (Some(m.hidden_size()), Some(m.embed_size())),
            Model::Factorized(_) => (None, None),
        };
        Checkpoint {
            version: Checkpoint::VERSION,
            d: self.num_nodes(),
            family: self.family(),
            hidden_size,
            embed_size,
            params: self.params().to_vec(),
        }
    }

    pub fn from_checkpoint(c: Checkpoint) -> Result<Self> {
        if c.version != Checkpoint::VERSION {
            return Err(Error::CheckpointVersion(c.version));
        }
        Ok(match c.family {
            Family::Autoregressive => {
                let missing = || Error::InvalidArgument("autoregressive checkpoint needs hidden_size and embed_size".into());
                Model::Autoregressive(AutoregressiveModel::from_params(
                    c.d,
                    c.hidden_size.ok_or_else(missing)?,
                    c.embed_size.ok_or_else(missing)?,
                    c.params,
                )?)
            }
            Family::Factorized => Model::Factorized(FactorizedModel::from_logits(c.d, c.params)?),
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let json = serde_json::to_string(&self.to_checkpoint())?;
        write_atomic(path.as_ref(), json.as_bytes())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_checkpoint(serde_json::from_str(&text)?)
    }
}

impl GraphDensity for Model {
    fn num_nodes(&self) -> usize {
        match self {
            Model::Autoregressive(m) => m.num_nodes(),
            Model::Factorized(m) => m.num_nodes(),
        }
    }

    fn log_prob(&self, a: &AdjacencyMatrix) -> f64 {
        match self {
            Model::Autoregressive(m) => m.log_prob(a),
            Model::Factorized(m) => m.log_prob(a),
        }
    }
}

/// Versioned on-disk form of a [`Model`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub d: usize,
    pub family: Family,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hidden_size: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embed_size: Option<usize>,
    pub params: Vec<f64>,
}

impl Checkpoint {
    pub const VERSION: u32 = 1;
}

const MARGINAL_CHUNK: usize = 4096;

fn monte_carlo_marginals<R, F>(d: usize, num_samples: usize, mut draw: F, rng: &mut R) -> DMatrix<f64>
where
    R: Rng + ?Sized,
    F: FnMut(usize, &mut R) -> Vec<(AdjacencyMatrix, f64)>,
{
    let total = num_samples.max(1);
    let mut counts = DMatrix::<f64>::zeros(d, d);
    let mut left = total;
    while left > 0 {
        let chunk = left.min(MARGINAL_CHUNK);
        for (g, _) in draw(chunk, rng) {
            for (i, j) in g.edges() {
                counts[(i, j)] += 1.0;
            }
        }
        left -= chunk;
    }
    counts / total as f64
}
