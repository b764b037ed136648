//! Exact posterior by enumeration (up to four nodes) and evaluation metrics:
//! Hellinger distance, expected SHD and edge AUROC.
//!
//! The enumerated support is every directed graph, cyclic ones included, so the
//! exact posterior and the variational distribution live on the same space.
//! Cycles are suppressed only through the Gibbs prior. Evidence values carry
//! the prior's unknown log normalizer as an additive constant.

use std::fmt::Write as _;

use nalgebra::DMatrix;
use rand::Rng;
use serde::Serialize;

use crate::bge::BgeScorer;
use crate::error::{Error, Result};
use crate::family::{GraphDensity, Model, ParamGradient};
use crate::graph::{is_acyclic, num_graphs, positions, shd, AdjacencyMatrix, GraphIndex};
use crate::prior::{log_prior_unnormalized, PriorConfig};
use crate::trainer::{per_sample_signal, Estimate};

/// Largest node count handled by enumeration (4096 graphs).
pub const MAX_EXACT_NODES: usize = 4;

const TABLE_TOLERANCE: f64 = 1e-8;

fn check_exact(d: usize) -> Result<()> {
    if d > MAX_EXACT_NODES {
        Err(Error::TooManyNodes {
            d,
            max: MAX_EXACT_NODES,
        })
    } else {
        Ok(())
    }
}

/// Probability table over all directed graphs on `d` nodes, indexed by [`GraphIndex`].
#[derive(Debug, Clone, PartialEq)]
pub struct GraphDistribution {
    d: usize,
    probs: Vec<f64>,
}

impl GraphDistribution {
    pub fn new(d: usize, probs: Vec<f64>) -> Result<Self> {
        check_exact(d)?;
        if probs.len() as u64 != num_graphs(d) {
            return Err(Error::DimensionMismatch {
                expected: num_graphs(d) as usize,
                got: probs.len(),
            });
        }
        if probs.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
            return Err(Error::InvalidArgument("probabilities must be finite and >= 0".into()));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > TABLE_TOLERANCE {
            return Err(Error::InvalidArgument(format!("probabilities sum to {total}")));
        }
        Ok(Self { d, probs })
    }

    /// Normalizes a table of log-weights with a max-shifted log-sum-exp.
    /// Returns the table and the log of the normalizer.
    pub fn from_log_weights(d: usize, log_weights: &[f64]) -> Result<(Self, f64)> {
        let max = log_weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !max.is_finite() {
            return Err(Error::InvalidArgument("no finite log-weight".into()));
        }
        let shifted: Vec<f64> = log_weights.iter().map(|w| (w - max).exp()).collect();
        let total: f64 = shifted.iter().sum();
        let probs = shifted.into_iter().map(|w| w / total).collect();
        Ok((Self::new(d, probs)?, max + total.ln()))
    }

    /// Point mass on one graph.
    pub fn point_mass(a: &AdjacencyMatrix) -> Result<Self> {
        let d = a.num_nodes();
        check_exact(d)?;
        let mut probs = vec![0.0; num_graphs(d) as usize];
        probs[a.index().0 as usize] = 1.0;
        Self::new(d, probs)
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn prob(&self, a: &AdjacencyMatrix) -> f64 {
        self.probs[a.index().0 as usize]
    }

    /// `(graph, probability)` in index order.
    pub fn iter(&self) -> impl Iterator<Item = (AdjacencyMatrix, f64)> + '_ {
        self.probs
            .iter()
            .enumerate()
            .map(move |(k, &p)| (AdjacencyMatrix::from_index(self.d, GraphIndex(k as u64)), p))
    }

    pub fn edge_marginals(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.d, self.d);
        for (a, p) in self.iter() {
            for (i, j) in a.edges() {
                m[(i, j)] += p;
            }
        }
        m
    }

    /// CSV with columns `index,probability,is_acyclic,shd_to_gt`; the last
    /// column is empty without a ground truth.
    pub fn to_csv(&self, ground_truth: Option<&AdjacencyMatrix>) -> Result<String> {
        let mut out = String::from("index,probability,is_acyclic,shd_to_gt\n");
        for (k, (a, p)) in self.iter().enumerate() {
            let dist = match ground_truth {
                Some(gt) => shd(&a, gt)?.to_string(),
                None => String::new(),
            };
            let _ = writeln!(out, "{k},{p},{},{dist}", is_acyclic(&a));
        }
        Ok(out)
    }
}

impl GraphDensity for GraphDistribution {
    fn num_nodes(&self) -> usize {
        self.d
    }

    fn log_prob(&self, a: &AdjacencyMatrix) -> f64 {
        self.prob(a).ln()
    }
}

/// Exact posterior table with its log normalizer.
#[derive(Debug, Clone, PartialEq)]
pub struct ExactPosterior {
    pub distribution: GraphDistribution,
    /// `log sum_G p(D | G) p~(G)`, equal to `log p(D) + log Z` where `Z` is
    /// the unknown normalizer of the Gibbs prior.
    pub log_evidence_unnormalized: f64,
}

/// `p(G | D) ∝ p(D | G) p~(G)` over every directed graph on up to four nodes.
pub fn enumerate_posterior(scorer: &BgeScorer, lambda_t: f64, prior: &PriorConfig) -> Result<ExactPosterior> {
    let d = scorer.num_nodes();
    check_exact(d)?;
    let log_weights = AdjacencyMatrix::all(d)
        .map(|a| Ok(scorer.log_marginal_likelihood(&a)? + log_prior_unnormalized(&a, lambda_t, prior)))
        .collect::<Result<Vec<f64>>>()?;
    let (distribution, log_norm) = GraphDistribution::from_log_weights(d, &log_weights)?;
    Ok(ExactPosterior {
        distribution,
        log_evidence_unnormalized: log_norm,
    })
}

/// The model's probability for every graph.
pub fn model_distribution(model: &Model) -> Result<GraphDistribution> {
    let d = model.num_nodes();
    check_exact(d)?;
    let graphs: Vec<AdjacencyMatrix> = AdjacencyMatrix::all(d).collect();
    let probs = model.log_prob_batch(&graphs).into_iter().map(f64::exp).collect();
    GraphDistribution::new(d, probs)
}

/// `(1/sqrt 2) || sqrt p - sqrt q ||_2`, in `[0, 1]`.
pub fn hellinger(p: &GraphDistribution, q: &GraphDistribution) -> Result<f64> {
    if p.d != q.d {
        return Err(Error::DimensionMismatch {
            expected: p.d,
            got: q.d,
        });
    }
    let sq: f64 = p
        .probs
        .iter()
        .zip(&q.probs)
        .map(|(a, b)| (a.sqrt() - b.sqrt()).powi(2))
        .sum();
    Ok((sq / 2.0).sqrt().min(1.0))
}

/// Exact ELBO (up to the prior's log normalizer) by summing over every graph
/// with non-zero probability under `q`.
pub fn exact_elbo(
    q: &dyn GraphDensity,
    scorer: &BgeScorer,
    lambda_t: f64,
    prior: &PriorConfig,
) -> Result<f64> {
    let d = q.num_nodes();
    check_exact(d)?;
    let mut total = 0.0;
    for a in AdjacencyMatrix::all(d) {
        let signal = per_sample_signal(&a, q, scorer, lambda_t, prior)?;
        let p = signal.log_q.exp();
        if p > 0.0 {
            total += p * signal.value();
        }
    }
    Ok(total)
}

/// Exact ELBO gradient `sum_A q(A) l(A) grad log q(A)`.
pub fn exact_elbo_gradient(
    model: &Model,
    scorer: &BgeScorer,
    lambda_t: f64,
    prior: &PriorConfig,
) -> Result<ParamGradient> {
    let d = model.num_nodes();
    check_exact(d)?;
    let graphs: Vec<AdjacencyMatrix> = AdjacencyMatrix::all(d).collect();
    let log_q = model.log_prob_batch(&graphs);
    let weights = graphs
        .iter()
        .zip(&log_q)
        .map(|(a, &lq)| {
            let s = scorer.log_marginal_likelihood(a)? + log_prior_unnormalized(a, lambda_t, prior) - lq;
            Ok(lq.exp() * s)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(model.weighted_score(&graphs, &weights))
}

/// Monte Carlo expected SHD to the ground truth over `num_samples` draws.
pub fn expected_shd<R: Rng + ?Sized>(
    model: &Model,
    ground_truth: &AdjacencyMatrix,
    num_samples: usize,
    rng: &mut R,
) -> Result<Estimate> {
    if num_samples == 0 {
        return Err(Error::InvalidArgument("need at least one sample".into()));
    }
    if model.num_nodes() != ground_truth.num_nodes() {
        return Err(Error::DimensionMismatch {
            expected: model.num_nodes(),
            got: ground_truth.num_nodes(),
        });
    }
    let dists = model
        .sample_batch(num_samples, rng)
        .iter()
        .map(|(a, _)| shd(a, ground_truth).map(|s| s as f64))
        .collect::<Result<Vec<_>>>()?;
    Ok(Estimate::from_samples(&dists))
}

/// `sum_G q(G) SHD(G, ground_truth)`.
pub fn exact_expected_shd(q: &GraphDistribution, ground_truth: &AdjacencyMatrix) -> Result<f64> {
    q.iter()
        .map(|(a, p)| Ok(p * shd(&a, ground_truth)? as f64))
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RocPoint {
    pub threshold: f64,
    pub true_positive_rate: f64,
    pub false_positive_rate: f64,
}

fn scored_cells(marginals: &DMatrix<f64>, ground_truth: &AdjacencyMatrix) -> Result<(Vec<(f64, bool)>, usize, usize)> {
    let d = ground_truth.num_nodes();
    if marginals.shape() != (d, d) {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: marginals.nrows(),
        });
    }
    let cells: Vec<(f64, bool)> = positions(d)
        .map(|(i, j)| (marginals[(i, j)], ground_truth.has_edge(i, j)))
        .collect();
    if cells.iter().any(|(s, _)| s.is_nan()) {
        return Err(Error::InvalidArgument("NaN edge score".into()));
    }
    let pos = cells.iter().filter(|c| c.1).count();
    let neg = cells.len() - pos;
    if pos == 0 {
        return Err(Error::UndefinedAuroc("positive"));
    }
    if neg == 0 {
        return Err(Error::UndefinedAuroc("negative"));
    }
    Ok((cells, pos, neg))
}

/// ROC curve over off-diagonal cells, one point per distinct score (descending),
/// starting at `(0, 0)`. Tied scores enter together.
pub fn roc_curve(marginals: &DMatrix<f64>, ground_truth: &AdjacencyMatrix) -> Result<Vec<RocPoint>> {
    let (mut cells, pos, neg) = scored_cells(marginals, ground_truth)?;
    cells.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut curve = vec![RocPoint {
        threshold: f64::INFINITY,
        true_positive_rate: 0.0,
        false_positive_rate: 0.0,
    }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut k = 0;
    while k < cells.len() {
        let threshold = cells[k].0;
        while k < cells.len() && cells[k].0 == threshold {
            if cells[k].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            k += 1;
        }
        curve.push(RocPoint {
            threshold,
            true_positive_rate: tp as f64 / pos as f64,
            false_positive_rate: fp as f64 / neg as f64,
        });
    }
    Ok(curve)
}

/// Trapezoidal area under [`roc_curve`]; ties contribute a diagonal segment,
/// which matches the rank statistic with averaged ranks.
pub fn auroc(marginals: &DMatrix<f64>, ground_truth: &AdjacencyMatrix) -> Result<f64> {
    let curve = roc_curve(marginals, ground_truth)?;
    Ok(curve
        .windows(2)
        .map(|w| {
            (w[1].false_positive_rate - w[0].false_positive_rate)
                * (w[1].true_positive_rate + w[0].true_positive_rate)
                / 2.0
        })
        .sum())
}
