//! ELBO maximization with score-function gradients.
//!
//! Each step draws `L` graphs from `q`, scores each with the learning signal
//! `l(A) = log p(D | A) + log p~(A) - log q(A)`, and forms
//! `g = (1/L) sum (l(A_i) - b) grad log q(A_i)` with an exponential moving
//! average baseline `b`. The unnormalized prior only shifts `l` by a constant,
//! which the gradient ignores. Parameters move uphill with Adam.

use std::fmt::Write as _;
use std::path::Path;

use rand::SeedableRng;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bge::{BgeConfig, BgeScorer};
use crate::error::{Error, Result};
use crate::family::{Family, GraphDensity, Model, ParamGradient, DEFAULT_HIDDEN_SIZE};
use crate::graph::AdjacencyMatrix;
use crate::io::write_atomic;
use crate::prior::{log_prior_unnormalized, temperature_schedule, PriorConfig};
use crate::scm::{sufficient_stats, Dataset};

/// Plateau detection window for the optional early stop.
pub const EARLY_STOP_WINDOW: usize = 500;
pub const EARLY_STOP_REL_CHANGE: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub baseline_decay: f64,
    pub seed: u64,
    pub family: Family,
    pub hidden_size: usize,
    pub early_stop: bool,
    pub prior: PriorConfig,
    pub bge: BgeConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30_000,
            batch_size: 1000,
            learning_rate: 1e-2,
            baseline_decay: 0.99,
            seed: 0,
            family: Family::Autoregressive,
            hidden_size: DEFAULT_HIDDEN_SIZE,
            early_stop: false,
            prior: PriorConfig::default(),
            bge: BgeConfig::default(),
        }
    }
}

impl TrainConfig {
    /// Small budget that still fits small graphs well: 3000 epochs of 64 samples.
    pub fn desk() -> Self {
        Self {
            epochs: 3000,
            batch_size: 64,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.hidden_size == 0 {
            return Err(Error::InvalidArgument(
                "epochs, batch_size and hidden_size must be positive".into(),
            ));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidArgument("learning_rate must be >= 0".into()));
        }
        if !(0.0..1.0).contains(&self.baseline_decay) {
            return Err(Error::InvalidArgument("baseline_decay must lie in [0, 1)".into()));
        }
        self.prior.validate()
    }
}

/// Adam moments for gradient ascent on a flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u32,
}

impl Adam {
    pub fn new(num_params: usize, learning_rate: f64) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            m: vec![0.0; num_params],
            v: vec![0.0; num_params],
            t: 0,
        }
    }

    pub fn steps(&self) -> u32 {
        self.t
    }

    /// One ascent step: `params += lr * m_hat / (sqrt(v_hat) + eps)`.
    pub fn ascend(&mut self, params: &mut [f64], grad: &[f64]) {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grad.len(), self.m.len());
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for k in 0..params.len() {
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * grad[k];
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * grad[k] * grad[k];
            let m_hat = self.m[k] / c1;
            let v_hat = self.v[k] / c2;
            params[k] += self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub model: Model,
    pub optimizer: Adam,
    /// `None` until the first batch has been seen.
    pub baseline: Option<f64>,
    pub epoch: usize,
}

impl TrainState {
    pub fn new(model: Model, learning_rate: f64) -> Self {
        let optimizer = Adam::new(model.params().len(), learning_rate);
        Self {
            model,
            optimizer,
            baseline: None,
            epoch: 0,
        }
    }
}

/// The three terms of the learning signal for one graph.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Signal {
    pub log_likelihood: f64,
    pub log_prior: f64,
    pub log_q: f64,
}

impl Signal {
    pub fn value(&self) -> f64 {
        self.log_likelihood + self.log_prior - self.log_q
    }
}

/// `log p(D | A) + log p~(A) - log q(A)`.
pub fn per_sample_signal(
    a: &AdjacencyMatrix,
    model: &dyn GraphDensity,
    scorer: &BgeScorer,
    lambda_t: f64,
    prior: &PriorConfig,
) -> Result<Signal> {
    signal_with_log_q(a, model.log_prob(a), scorer, lambda_t, prior)
}

fn signal_with_log_q(
    a: &AdjacencyMatrix,
    log_q: f64,
    scorer: &BgeScorer,
    lambda_t: f64,
    prior: &PriorConfig,
) -> Result<Signal> {
    Ok(Signal {
        log_likelihood: scorer.log_marginal_likelihood(a)?,
        log_prior: log_prior_unnormalized(a, lambda_t, prior),
        log_q,
    })
}

/// Monte Carlo mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub mean: f64,
    pub std_err: f64,
}

impl Estimate {
    pub fn from_samples(xs: &[f64]) -> Self {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = if xs.len() > 1 {
            xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        Self {
            mean,
            std_err: (var / n).sqrt(),
        }
    }
}

/// ELBO (up to the prior's log normalizer) averaged over `num_samples` draws from `q`.
pub fn elbo_estimate<R: Rng + ?Sized>(
    model: &Model,
    scorer: &BgeScorer,
    lambda_t: f64,
    prior: &PriorConfig,
    num_samples: usize,
    rng: &mut R,
) -> Result<Estimate> {
    if num_samples == 0 {
        return Err(Error::InvalidArgument("need at least one sample".into()));
    }
    let values = model
        .sample_batch(num_samples, rng)
        .iter()
        .map(|(a, lq)| signal_with_log_q(a, *lq, scorer, lambda_t, prior).map(|s| s.value()))
        .collect::<Result<Vec<_>>>()?;
    Ok(Estimate::from_samples(&values))
}

#[derive(Debug, Clone)]
pub struct GradientEstimate {
    pub grad: ParamGradient,
    pub signals: Vec<Signal>,
    /// Baseline subtracted from every signal.
    pub baseline: f64,
}

impl GradientEstimate {
    pub fn mean_signal(&self) -> f64 {
        self.signals.iter().map(Signal::value).sum::<f64>() / self.signals.len() as f64
    }
}

/// `(1/L) sum (l(A_i) - b) grad log q(A_i)` over `L` fresh samples.
/// A `None` baseline uses the batch's own mean signal.
pub fn estimate_gradient<R: Rng + ?Sized>(
    model: &Model,
    scorer: &BgeScorer,
    lambda_t: f64,
    prior: &PriorConfig,
    batch_size: usize,
    baseline: Option<f64>,
    rng: &mut R,
) -> Result<GradientEstimate> {
    if batch_size == 0 {
        return Err(Error::InvalidArgument("batch_size must be positive".into()));
    }
    let batch = model.sample_for_score(batch_size, rng);
    let signals = batch
        .samples
        .iter()
        .map(|(a, lq)| signal_with_log_q(a, *lq, scorer, lambda_t, prior))
        .collect::<Result<Vec<_>>>()?;
    let l = batch_size as f64;
    let baseline = baseline.unwrap_or_else(|| signals.iter().map(Signal::value).sum::<f64>() / l);
    let weights: Vec<f64> = signals.iter().map(|s| (s.value() - baseline) / l).collect();
    Ok(GradientEstimate {
        grad: model.score_batch(&batch, &weights),
        signals,
        baseline,
    })
}

/// One row of the training history.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Batch mean of the learning signal.
    pub elbo: f64,
    pub loglik: f64,
    /// Batch mean of `log q - log p~`.
    pub kl_est: f64,
    pub lambda_t: f64,
    /// Baseline after this epoch's update.
    pub baseline: f64,
    pub grad_norm: f64,
}

impl EpochRecord {
    pub const CSV_HEADER: &'static str = "epoch,elbo,loglik,kl_est,lambda_t,baseline,grad_norm";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.epoch, self.elbo, self.loglik, self.kl_est, self.lambda_t, self.baseline, self.grad_norm
        )
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainHistory {
    pub records: Vec<EpochRecord>,
}

impl TrainHistory {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn last(&self) -> Option<&EpochRecord> {
        self.records.last()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(EpochRecord::CSV_HEADER);
        out.push('\n');
        for r in &self.records {
            let _ = writeln!(out, "{}", r.csv_row());
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        write_atomic(path.as_ref(), self.to_csv().as_bytes())
    }
}

/// One score-function update: sample, estimate, move the baseline, step Adam.
pub fn grad_step<R: Rng + ?Sized>(
    state: &mut TrainState,
    scorer: &BgeScorer,
    lambda_t: f64,
    config: &TrainConfig,
    rng: &mut R,
) -> Result<EpochRecord> {
    let est = estimate_gradient(
        &state.model,
        scorer,
        lambda_t,
        &config.prior,
        config.batch_size,
        state.baseline,
        rng,
    )?;
    let l = est.signals.len() as f64;
    let mean = est.mean_signal();
    let loglik = est.signals.iter().map(|s| s.log_likelihood).sum::<f64>() / l;
    let kl_est = est.signals.iter().map(|s| s.log_q - s.log_prior).sum::<f64>() / l;
    let grad_norm = est.grad.norm();
    if !grad_norm.is_finite() || !mean.is_finite() {
        return Err(Error::NonFiniteGradient {
            epoch: state.epoch,
            signal_mean: mean,
            grad_norm,
        });
    }
    let decay = config.baseline_decay;
    let baseline = decay * est.baseline + (1.0 - decay) * mean;
    state.baseline = Some(baseline);
    state.optimizer.learning_rate = config.learning_rate;
    state.optimizer.ascend(state.model.params_mut(), &est.grad);
    let record = EpochRecord {
        epoch: state.epoch,
        elbo: mean,
        loglik,
        kl_est,
        lambda_t,
        baseline,
        grad_norm,
    };
    state.epoch += 1;
    Ok(record)
}

fn plateaued(records: &[EpochRecord]) -> bool {
    let w = EARLY_STOP_WINDOW;
    if records.len() < 2 * w {
        return false;
    }
    let mean = |rs: &[EpochRecord]| rs.iter().map(|r| r.elbo).sum::<f64>() / rs.len() as f64;
    let recent = mean(&records[records.len() - w..]);
    let before = mean(&records[records.len() - 2 * w..records.len() - w]);
    ((recent - before) / before.abs().max(f64::MIN_POSITIVE)).abs() < EARLY_STOP_REL_CHANGE
}

/// Fits a model to `data`. Equivalent to [`train_with`] without a callback.
pub fn train(data: &Dataset, config: &TrainConfig) -> Result<(Model, TrainHistory)> {
    train_with(data, config, |_| Ok(()))
}

/// Runs `config.epochs` steps with the annealed `λ_t`, calling `on_epoch` after
/// each one. The model and every sample derive from one stream seeded with
/// `config.seed`, so a rerun reproduces the history bit for bit.
pub fn train_with<F>(data: &Dataset, config: &TrainConfig, mut on_epoch: F) -> Result<(Model, TrainHistory)>
where
    F: FnMut(&EpochRecord) -> Result<()>,
{
    config.validate()?;
    let d = data.num_nodes();
    let scorer = BgeScorer::new(sufficient_stats(data), config.bge.hyperparams(d)?)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let model = Model::init(config.family, d, config.hidden_size, &mut rng)?;
    let mut state = TrainState::new(model, config.learning_rate);
    let mut history = TrainHistory::default();
    for epoch in 0..config.epochs {
        let lambda_t = temperature_schedule(epoch, config.epochs, &config.prior);
        let record = grad_step(&mut state, &scorer, lambda_t, config, &mut rng)?;
        on_epoch(&record)?;
        history.records.push(record);
        if config.early_stop && plateaued(&history.records) {
            break;
        }
    }
    Ok((state.model, history))
}
