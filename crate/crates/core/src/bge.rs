//! BGe marginal likelihood: the evidence of a linear-Gaussian network under a
//! Normal-Wishart prior on the mean and precision, with parameters integrated
//! out in closed form.
//!
//! Prior: `W ~ Wishart(alpha_w, T)` where `T` plays the role of the inverse
//! scale (it accumulates scatter in the update), and `mu | W ~ N(gamma,
//! (alpha_mu W)^-1)`. The evidence of the coordinates in a subset `S`, `l = |S|`,
//! uses the marginal Wishart with `alpha_w - d + l` degrees of freedom:
//!
//! ```text
//! log p(D_S) = -(n l / 2) log(pi) + (l / 2) log(alpha_mu / (alpha_mu + n))
//!            + log Gamma_l((a + n) / 2) - log Gamma_l(a / 2)
//!            + (a / 2) log|T_SS| - ((a + n) / 2) log|T'_SS|,   a = alpha_w - d + l
//! ```
//!
//! A node's local score is `log p(D_{pa ∪ {i}}) - log p(D_pa)`.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::RwLock;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::graph::AdjacencyMatrix;
use crate::scm::SufficientStats;

#[derive(Debug, Clone, PartialEq)]
pub struct BgeHyperparams {
    pub alpha_mu: f64,
    pub alpha_w: f64,
    pub gamma: DVector<f64>,
    pub t_scale: DMatrix<f64>,
}

impl BgeHyperparams {
    /// Default Wishart degrees of freedom: 10 up to five nodes, 1000 beyond.
    pub fn default_alpha_w(d: usize) -> f64 {
        if d <= 5 {
            10.0
        } else {
            1000.0
        }
    }

    /// `T = alpha_mu (alpha_w - d - 1) / (alpha_mu + 1) * I`, which makes the
    /// prior predictive covariance the identity.
    pub fn default_t_scale(d: usize, alpha_mu: f64, alpha_w: f64) -> DMatrix<f64> {
        DMatrix::identity(d, d) * (alpha_mu * (alpha_w - d as f64 - 1.0) / (alpha_mu + 1.0))
    }

    pub fn defaults(d: usize) -> Self {
        BgeConfig::default()
            .hyperparams(d)
            .expect("default hyperparameters are valid")
    }

    pub fn num_nodes(&self) -> usize {
        self.gamma.len()
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.gamma.len();
        if !(self.alpha_mu > 0.0 && self.alpha_mu.is_finite()) {
            return Err(Error::InvalidArgument(format!("alpha_mu must be > 0, got {}", self.alpha_mu)));
        }
        if !(self.alpha_w > d as f64 - 1.0 && self.alpha_w.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "alpha_w must exceed d - 1 = {}, got {}",
                d as f64 - 1.0,
                self.alpha_w
            )));
        }
        if self.t_scale.shape() != (d, d) {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: self.t_scale.nrows(),
            });
        }
        if (&self.t_scale - self.t_scale.transpose()).amax() > 1e-12 * self.t_scale.amax().max(1.0) {
            return Err(Error::NotPositiveDefinite("T is not symmetric".into()));
        }
        log_det_spd(&self.t_scale, "T").map(|_| ())
    }

    /// Hyperparameters of the marginal model over the given coordinates: the
    /// sub-blocks of `gamma` and `T`, with `alpha_w` reduced by the number of
    /// dropped coordinates.
    pub fn restrict(&self, cols: &[usize]) -> Self {
        let dropped = (self.num_nodes() - cols.len()) as f64;
        Self {
            alpha_mu: self.alpha_mu,
            alpha_w: self.alpha_w - dropped,
            gamma: DVector::from_iterator(cols.len(), cols.iter().map(|&c| self.gamma[c])),
            t_scale: self.t_scale.select_rows(cols).select_columns(cols),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TScaleMode {
    /// `alpha_mu (alpha_w - d - 1) / (alpha_mu + 1) * I`.
    #[default]
    Default,
    Identity,
}

/// The `"bge"` block of an experiment config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BgeConfig {
    pub alpha_mu: f64,
    /// `None` picks [`BgeHyperparams::default_alpha_w`].
    pub alpha_w: Option<f64>,
    pub gamma_scalar: f64,
    pub t_scale_mode: TScaleMode,
}

impl Default for BgeConfig {
    fn default() -> Self {
        Self {
            alpha_mu: 1.0,
            alpha_w: None,
            gamma_scalar: 2.0,
            t_scale_mode: TScaleMode::Default,
        }
    }
}

impl BgeConfig {
    pub fn hyperparams(&self, d: usize) -> Result<BgeHyperparams> {
        let alpha_w = self.alpha_w.unwrap_or_else(|| BgeHyperparams::default_alpha_w(d));
        let t_scale = match self.t_scale_mode {
            TScaleMode::Default => BgeHyperparams::default_t_scale(d, self.alpha_mu, alpha_w),
            TScaleMode::Identity => DMatrix::identity(d, d),
        };
        let h = BgeHyperparams {
            alpha_mu: self.alpha_mu,
            alpha_w,
            gamma: DVector::from_element(d, self.gamma_scalar),
            t_scale,
        };
        h.validate()?;
        Ok(h)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorParams {
    pub gamma_post: DVector<f64>,
    /// `alpha_mu + n`; the posterior mean precision is this times `W`.
    pub precision_scale: f64,
    pub alpha_w_post: f64,
    pub t_post: DMatrix<f64>,
}

pub fn posterior_update(stats: &SufficientStats, hyper: &BgeHyperparams) -> PosteriorParams {
    let n = stats.n as f64;
    let a = hyper.alpha_mu;
    let gamma_post = (&hyper.gamma * a + &stats.mean * n) / (a + n);
    let diff = &hyper.gamma - &stats.mean;
    let t_post = &hyper.t_scale + &stats.scatter + &diff * diff.transpose() * (a * n / (a + n));
    PosteriorParams {
        gamma_post,
        precision_scale: a + n,
        alpha_w_post: hyper.alpha_w + n,
        t_post,
    }
}

/// Log of the multivariate gamma function `Gamma_p(a)`.
pub fn ln_multigamma(p: usize, a: f64) -> f64 {
    let p_f = p as f64;
    p_f * (p_f - 1.0) / 4.0 * PI.ln() + (1..=p).map(|j| ln_gamma(a + (1.0 - j as f64) / 2.0)).sum::<f64>()
}

fn log_det_spd(m: &DMatrix<f64>, what: &str) -> Result<f64> {
    let chol = m
        .clone()
        .cholesky()
        .ok_or_else(|| Error::NotPositiveDefinite(what.to_string()))?;
    Ok(2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>())
}

fn subset_evidence(
    stats: &SufficientStats,
    hyper: &BgeHyperparams,
    t_post: &DMatrix<f64>,
    subset: &[usize],
) -> Result<f64> {
    let l = subset.len();
    if l == 0 {
        return Ok(0.0);
    }
    let d = stats.num_nodes();
    let n = stats.n as f64;
    let l_f = l as f64;
    let dof = hyper.alpha_w - d as f64 + l_f;
    let t_sub = hyper.t_scale.select_rows(subset).select_columns(subset);
    let t_post_sub = t_post.select_rows(subset).select_columns(subset);
    let log_det_t = log_det_spd(&t_sub, "prior T block")?;
    let log_det_post = log_det_spd(&t_post_sub, "posterior T block")?;
    Ok(-(n * l_f / 2.0) * PI.ln()
        + (l_f / 2.0) * (hyper.alpha_mu / (hyper.alpha_mu + n)).ln()
        + ln_multigamma(l, (dof + n) / 2.0)
        - ln_multigamma(l, dof / 2.0)
        + (dof / 2.0) * log_det_t
        - ((dof + n) / 2.0) * log_det_post)
}

fn check_subset(d: usize, subset: &[usize]) -> Result<()> {
    match subset.iter().find(|&&s| s >= d) {
        Some(&s) => Err(Error::InvalidArgument(format!("node {s} out of range for {d} nodes"))),
        None => Ok(()),
    }
}

/// Log evidence of the columns in `subset` (0 for the empty set).
pub fn log_marginal_subset(stats: &SufficientStats, subset: &[usize], hyper: &BgeHyperparams) -> Result<f64> {
    check_dims(stats, hyper)?;
    check_subset(stats.num_nodes(), subset)?;
    let post = posterior_update(stats, hyper);
    subset_evidence(stats, hyper, &post.t_post, subset)
}

fn check_dims(stats: &SufficientStats, hyper: &BgeHyperparams) -> Result<()> {
    if stats.num_nodes() != hyper.num_nodes() {
        return Err(Error::DimensionMismatch {
            expected: hyper.num_nodes(),
            got: stats.num_nodes(),
        });
    }
    Ok(())
}

fn mask_to_nodes(mask: u64) -> Vec<usize> {
    (0..64).filter(|&i| mask >> i & 1 == 1).collect()
}

/// Memoized local scores keyed by `(node, parent bit set)`.
#[derive(Debug, Default)]
pub struct ScoreCache {
    map: RwLock<HashMap<(usize, u64), f64>>,
}

impl ScoreCache {
    pub fn get(&self, node: usize, parents: u64) -> Option<f64> {
        self.map.read().expect("score cache poisoned").get(&(node, parents)).copied()
    }

    pub fn insert(&self, node: usize, parents: u64, score: f64) {
        self.map
            .write()
            .expect("score cache poisoned")
            .entry((node, parents))
            .or_insert(score);
    }

    pub fn len(&self) -> usize {
        self.map.read().expect("score cache poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// BGe scorer bound to one dataset, with a shared local-score cache.
#[derive(Debug)]
pub struct BgeScorer {
    stats: SufficientStats,
    hyper: BgeHyperparams,
    posterior: PosteriorParams,
    cache: ScoreCache,
}

/// Largest node count representable by the parent bit sets.
pub const MAX_SCORED_NODES: usize = 64;

impl BgeScorer {
    pub fn new(stats: SufficientStats, hyper: BgeHyperparams) -> Result<Self> {
        check_dims(&stats, &hyper)?;
        let d = stats.num_nodes();
        if d > MAX_SCORED_NODES {
            return Err(Error::TooManyNodes {
                d,
                max: MAX_SCORED_NODES,
            });
        }
        hyper.validate()?;
        let posterior = posterior_update(&stats, &hyper);
        if posterior.t_post.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite sufficient statistics".into()));
        }
        log_det_spd(&posterior.t_post, "posterior T")?;
        Ok(Self {
            stats,
            hyper,
            posterior,
            cache: ScoreCache::default(),
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.stats.num_nodes()
    }

    pub fn stats(&self) -> &SufficientStats {
        &self.stats
    }

    pub fn hyperparams(&self) -> &BgeHyperparams {
        &self.hyper
    }

    pub fn posterior(&self) -> &PosteriorParams {
        &self.posterior
    }

    pub fn cache(&self) -> &ScoreCache {
        &self.cache
    }

    pub fn log_marginal_subset(&self, subset: &[usize]) -> Result<f64> {
        check_subset(self.num_nodes(), subset)?;
        subset_evidence(&self.stats, &self.hyper, &self.posterior.t_post, subset)
    }

    /// Local score of `node` given a parent bit set.
    pub fn local_score_mask(&self, node: usize, parents: u64) -> Result<f64> {
        if parents >> node & 1 == 1 {
            return Err(Error::SelfParent { node });
        }
        if node >= self.num_nodes() || parents >> self.num_nodes() != 0 {
            return Err(Error::InvalidArgument(format!(
                "node or parent out of range for {} nodes",
                self.num_nodes()
            )));
        }
        if let Some(s) = self.cache.get(node, parents) {
            return Ok(s);
        }
        let pa = mask_to_nodes(parents);
        let mut family = pa.clone();
        family.push(node);
        family.sort_unstable();
        let score = self.log_marginal_subset(&family)? - self.log_marginal_subset(&pa)?;
        self.cache.insert(node, parents, score);
        Ok(score)
    }

    pub fn local_score(&self, node: usize, parents: &[usize]) -> Result<f64> {
        check_subset(self.num_nodes(), parents)?;
        let mask = parents.iter().fold(0u64, |m, &p| m | 1u64 << p);
        self.local_score_mask(node, mask)
    }

    /// `log p(D | G)` as the sum of local scores. Cyclic graphs are scored by
    /// the same sum.
    pub fn log_marginal_likelihood(&self, a: &AdjacencyMatrix) -> Result<f64> {
        if a.num_nodes() != self.num_nodes() {
            return Err(Error::DimensionMismatch {
                expected: self.num_nodes(),
                got: a.num_nodes(),
            });
        }
        (0..self.num_nodes())
            .map(|j| self.local_score_mask(j, a.parent_mask(j)))
            .sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scm::{sufficient_stats, Dataset};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn random_stats(n: usize, d: usize, seed: u64) -> SufficientStats {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = DMatrix::from_fn(n, d, |_, _| StandardNormal.sample(&mut rng));
        sufficient_stats(&Dataset::new(x).unwrap())
    }

    #[test]
    fn defaults_follow_dimension() {
        let h = BgeHyperparams::defaults(3);
        assert_eq!(h.alpha_w, 10.0);
        assert_eq!(h.alpha_mu, 1.0);
        assert!(h.gamma.iter().all(|&g| g == 2.0));
        assert_eq!(h.t_scale[(0, 0)], 1.0 * (10.0 - 3.0 - 1.0) / 2.0);
        assert_eq!(BgeHyperparams::defaults(6).alpha_w, 1000.0);
        assert!(BgeConfig {
            alpha_w: Some(1.5),
            ..Default::default()
        }
        .hyperparams(3)
        .is_err());
    }

    #[test]
    fn posterior_update_examples() {
        let h = BgeHyperparams::defaults(1);
        let one = sufficient_stats(&Dataset::from_rows(&[vec![0.0]]).unwrap());
        let p = posterior_update(&one, &h);
        assert_eq!(p.gamma_post[0], 1.0);
        assert_eq!(p.precision_scale, 2.0);

        let empty = SufficientStats::empty(3);
        let h3 = BgeHyperparams::defaults(3);
        let p = posterior_update(&empty, &h3);
        assert_eq!(p.gamma_post, h3.gamma);
        assert_eq!(p.t_post, h3.t_scale);
        assert_eq!(p.alpha_w_post, h3.alpha_w);
        assert_eq!(p.precision_scale, h3.alpha_mu);

        let seven = random_stats(7, 3, 1);
        assert_eq!(posterior_update(&seven, &h3).alpha_w_post, 17.0);
    }

    #[test]
    fn multigamma_reduces_to_gamma() {
        assert!((ln_multigamma(1, 3.5) - ln_gamma(3.5)).abs() < 1e-14);
        // Gamma_2(a) = sqrt(pi) Gamma(a) Gamma(a - 1/2)
        let a = 4.2;
        let expect = 0.5 * PI.ln() + ln_gamma(a) + ln_gamma(a - 0.5);
        assert!((ln_multigamma(2, a) - expect).abs() < 1e-12);
    }

    #[test]
    fn empty_subset_and_purity() {
        let s = random_stats(20, 3, 2);
        let h = BgeHyperparams::defaults(3);
        assert_eq!(log_marginal_subset(&s, &[], &h).unwrap(), 0.0);
        let a = log_marginal_subset(&s, &[0, 2], &h).unwrap();
        let b = log_marginal_subset(&s, &[0, 2], &h).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
        assert!(log_marginal_subset(&s, &[5], &h).is_err());
    }

    #[test]
    fn local_scores_and_cache() {
        let s = random_stats(30, 3, 3);
        let scorer = BgeScorer::new(s.clone(), BgeHyperparams::defaults(3)).unwrap();
        let root = scorer.local_score(1, &[]).unwrap();
        assert_eq!(root, scorer.log_marginal_subset(&[1]).unwrap());
        let first = scorer.local_score(2, &[0, 1]).unwrap();
        assert_eq!(scorer.cache().get(2, 0b011), Some(first));
        let again = scorer.local_score(2, &[1, 0]).unwrap();
        assert_eq!(first.to_bits(), again.to_bits());
        let fresh = BgeScorer::new(s, BgeHyperparams::defaults(3)).unwrap();
        assert_eq!(fresh.local_score(2, &[0, 1]).unwrap().to_bits(), first.to_bits());
        assert!(matches!(scorer.local_score(1, &[1]), Err(Error::SelfParent { node: 1 })));
    }

    #[test]
    fn two_node_score_equivalence() {
        let s = random_stats(40, 2, 4);
        let scorer = BgeScorer::new(s, BgeHyperparams::defaults(2)).unwrap();
        let fwd = scorer.local_score(1, &[0]).unwrap() + scorer.local_score(0, &[]).unwrap();
        let bwd = scorer.local_score(0, &[1]).unwrap() + scorer.local_score(1, &[]).unwrap();
        assert!((fwd - bwd).abs() < 1e-8);
    }

    #[test]
    fn submatrix_consistency() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = DMatrix::from_fn(25, 4, |_, _| StandardNormal.sample(&mut rng));
        let data = Dataset::new(x).unwrap();
        let h = BgeHyperparams::defaults(4);
        let full = sufficient_stats(&data);
        for cols in [vec![0], vec![1, 3], vec![0, 2, 3]] {
            let direct = log_marginal_subset(&full, &cols, &h).unwrap();
            let sub = sufficient_stats(&data.select_columns(&cols).unwrap());
            let all: Vec<usize> = (0..cols.len()).collect();
            let restricted = log_marginal_subset(&sub, &all, &h.restrict(&cols)).unwrap();
            assert!((direct - restricted).abs() < 1e-9, "{cols:?}: {direct} vs {restricted}");
        }
    }

    #[test]
    fn degenerate_hyperparameters_are_typed_errors() {
        let mut h = BgeHyperparams::defaults(2);
        h.t_scale[(0, 0)] = -1.0;
        assert!(matches!(h.validate(), Err(Error::NotPositiveDefinite(_))));
        assert!(BgeScorer::new(random_stats(5, 2, 6), h).is_err());
    }
}
