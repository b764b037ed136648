//! Experiment runner behind the `dagvi` binary.
//!
//! Every command reads one JSON [`ExperimentConfig`] (optional) and applies
//! command-line overrides on top. Outputs land in one directory per command and
//! always carry the configuration hash and seed, either inline (result JSON) or
//! in a `manifest.json` next to plain data files.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use statrs::statistics::{Data, OrderStatistics};

use crate::bge::BgeScorer;
use crate::error::{Error, Result};
use crate::eval::{auroc, enumerate_posterior, expected_shd, hellinger, model_distribution, MAX_EXACT_NODES};
use crate::family::{Family, GraphDensity, Model};
use crate::io::write_atomic;
use crate::scm::{sample_er_dag, sample_er_dag_nontrivial_mec, sample_weights, simulate, sufficient_stats, Dataset, WeightedScm};
use crate::trainer::{elbo_estimate, train_with, EpochRecord, TrainConfig, TrainHistory};

pub const SCHEMA_VERSION: u32 = 1;
/// Default parent directory for outputs when neither `--out` nor the config names one.
pub const OUTPUT_ROOT_ENV: &str = "DAGVI_OUTPUT_ROOT";

// Independent random streams derived from one seed.
const DATA_STREAM: u64 = 1;
const EVAL_STREAM: u64 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Elbo,
    ExpectedShd,
    Auroc,
    Hellinger,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSettings {
    /// Draws for the expected SHD and the final ELBO estimate.
    pub shd_samples: usize,
    /// Draws for Monte Carlo edge marginals (AUROC input).
    pub marginal_samples: usize,
    /// Temperature of the exact posterior; `None` means `prior.temp_max`.
    pub posterior_lambda_t: Option<f64>,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self {
            shd_samples: 1000,
            marginal_samples: 10_000,
            posterior_lambda_t: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub nodes: usize,
    pub samples: usize,
    /// Defaults to the node count, capped at the number of node pairs.
    pub expected_edges: Option<f64>,
    /// Resample ground truths until their equivalence class has two or more members.
    pub nontrivial_mec: bool,
    pub seed: u64,
    pub num_seeds: usize,
    /// Omit wall-clock timings so reruns are byte-identical.
    pub deterministic: bool,
    /// Sweep both families on shared data.
    pub paired: bool,
    pub metrics: Vec<Metric>,
    pub eval: EvalSettings,
    /// `train.seed` is ignored; each run trains with its own seed.
    pub train: TrainConfig,
    pub output_dir: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            nodes: 3,
            samples: 100,
            expected_edges: None,
            nontrivial_mec: false,
            seed: 0,
            num_seeds: 1,
            deterministic: false,
            paired: false,
            metrics: vec![Metric::Elbo, Metric::ExpectedShd, Metric::Auroc, Metric::Hellinger],
            eval: EvalSettings::default(),
            train: TrainConfig::desk(),
            output_dir: None,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let config: Self = serde_json::from_str(text)?;
        if config.schema_version != SCHEMA_VERSION {
            return Err(Error::InvalidArgument(format!(
                "config schema version {} is not supported (expected {SCHEMA_VERSION})",
                config.schema_version
            )));
        }
        Ok(config)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.nodes < 2 {
            return Err(Error::InvalidArgument("nodes must be >= 2".into()));
        }
        if self.samples == 0 || self.num_seeds == 0 {
            return Err(Error::InvalidArgument("samples and num_seeds must be >= 1".into()));
        }
        if self.eval.shd_samples == 0 || self.eval.marginal_samples == 0 {
            return Err(Error::InvalidArgument("evaluation sample counts must be >= 1".into()));
        }
        self.train.validate()
    }

    pub fn expected_edges(&self) -> f64 {
        let d = self.nodes as f64;
        self.expected_edges.unwrap_or(d.min(d * (d - 1.0) / 2.0))
    }

    /// The training configuration for one run.
    pub fn train_config(&self, seed: u64, family: Family) -> TrainConfig {
        TrainConfig {
            seed,
            family,
            ..self.train.clone()
        }
    }

    /// SHA-256 over the canonical JSON form, excluding the output location.
    pub fn hash(&self) -> String {
        let canonical = Self {
            output_dir: None,
            ..self.clone()
        };
        let bytes = serde_json::to_vec(&canonical).expect("config serializes");
        hex::encode(Sha256::digest(&bytes))
    }

    fn wants(&self, m: Metric) -> bool {
        self.metrics.contains(&m)
    }
}

/// Metrics of one trained model against its ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub schema_version: u32,
    pub config_hash: String,
    pub seed: u64,
    pub family: Family,
    pub nodes: usize,
    pub samples: usize,
    pub final_elbo: Option<f64>,
    pub expected_shd: Option<f64>,
    pub expected_shd_std_err: Option<f64>,
    pub auroc: Option<f64>,
    /// Only for graphs small enough to enumerate.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub hellinger: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub wall_clock_seconds: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub command: String,
    pub config_hash: String,
    pub seed: u64,
    pub files: Vec<String>,
    pub config: ExperimentConfig,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_manifest(dir: &Path, command: &str, config: &ExperimentConfig, seed: u64, files: &[&str]) -> Result<()> {
    let manifest = Manifest {
        schema_version: SCHEMA_VERSION,
        command: command.into(),
        config_hash: config.hash(),
        seed,
        files: files.iter().map(|f| f.to_string()).collect(),
        config: config.clone(),
    };
    write_json(&dir.join("manifest.json"), &manifest)
}

fn stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Ground-truth SCM and data for one seed.
pub fn generate(config: &ExperimentConfig, seed: u64) -> Result<(WeightedScm, Dataset)> {
    let mut rng = stream(seed, DATA_STREAM);
    let graph = if config.nontrivial_mec {
        sample_er_dag_nontrivial_mec(config.nodes, config.expected_edges(), &mut rng)?
    } else {
        sample_er_dag(config.nodes, config.expected_edges(), &mut rng)?
    };
    let scm = sample_weights(&graph, &mut rng)?;
    let data = simulate(&scm, config.samples, &mut rng)?;
    Ok((scm, data))
}

/// Writes `data.csv`, `scm.json` and a manifest into `dir`.
pub fn cmd_generate(config: &ExperimentConfig, dir: &Path) -> Result<(WeightedScm, Dataset)> {
    config.validate()?;
    ensure_dir(dir)?;
    let (scm, data) = generate(config, config.seed)?;
    data.write_csv(dir.join("data.csv"))?;
    write_atomic(&dir.join("scm.json"), scm.to_json()?.as_bytes())?;
    write_manifest(dir, "generate", config, config.seed, &["data.csv", "scm.json"])?;
    Ok((scm, data))
}

/// Trains on `data`, streaming history rows to `history.csv`. On failure the
/// rows produced so far are still written before the error is returned.
pub fn cmd_train(config: &ExperimentConfig, data: &Dataset, seed: u64, family: Family, dir: &Path) -> Result<(Model, TrainHistory)> {
    config.validate()?;
    ensure_dir(dir)?;
    let train_config = config.train_config(seed, family);
    let mut partial = TrainHistory::default();
    let outcome = train_with(data, &train_config, |r: &EpochRecord| {
        partial.records.push(*r);
        Ok(())
    });
    let history_path = dir.join("history.csv");
    match outcome {
        Ok((model, history)) => {
            history.write_csv(&history_path)?;
            model.save(dir.join("checkpoint.json"))?;
            write_manifest(dir, "train", config, seed, &["history.csv", "checkpoint.json"])?;
            Ok((model, history))
        }
        Err(e) => {
            partial.write_csv(&history_path)?;
            Err(e)
        }
    }
}

/// Computes the configured metrics for `model` against `truth`. The exact
/// posterior (for Hellinger) needs `data` and at most four nodes.
pub fn evaluate(
    config: &ExperimentConfig,
    model: &Model,
    truth: &WeightedScm,
    data: Option<&Dataset>,
    seed: u64,
) -> Result<RunResult> {
    let d = model.num_nodes();
    if truth.num_nodes() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: truth.num_nodes(),
        });
    }
    if let Some(data) = data {
        if data.num_nodes() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: data.num_nodes(),
            });
        }
    }
    let gt = truth.graph();
    let mut rng = stream(seed, EVAL_STREAM);
    let prior = &config.train.prior;
    let lambda_t = config.eval.posterior_lambda_t.unwrap_or(prior.temp_max);
    let scorer = match data {
        Some(data) => Some(BgeScorer::new(sufficient_stats(data), config.train.bge.hyperparams(d)?)?),
        None => None,
    };

    let mut result = RunResult {
        schema_version: SCHEMA_VERSION,
        config_hash: config.hash(),
        seed,
        family: model.family(),
        nodes: d,
        samples: data.map_or(config.samples, Dataset::num_samples),
        final_elbo: None,
        expected_shd: None,
        expected_shd_std_err: None,
        auroc: None,
        hellinger: None,
        wall_clock_seconds: None,
    };
    if let (true, Some(scorer)) = (config.wants(Metric::Elbo), &scorer) {
        let est = elbo_estimate(model, scorer, lambda_t, prior, config.eval.shd_samples, &mut rng)?;
        result.final_elbo = Some(est.mean);
    }
    if config.wants(Metric::ExpectedShd) {
        let est = expected_shd(model, gt, config.eval.shd_samples, &mut rng)?;
        result.expected_shd = Some(est.mean);
        result.expected_shd_std_err = Some(est.std_err);
    }
    if config.wants(Metric::Auroc) {
        let marginals = model.edge_marginals(config.eval.marginal_samples, &mut rng);
        result.auroc = match auroc(&marginals, gt) {
            Ok(v) => Some(v),
            Err(Error::UndefinedAuroc(_)) => None,
            Err(e) => return Err(e),
        };
    }
    if let (true, Some(scorer)) = (config.wants(Metric::Hellinger) && d <= MAX_EXACT_NODES, &scorer) {
        let truth_dist = enumerate_posterior(scorer, lambda_t, prior)?.distribution;
        result.hellinger = Some(hellinger(&truth_dist, &model_distribution(model)?)?);
    }
    Ok(result)
}

pub fn cmd_eval(
    config: &ExperimentConfig,
    model: &Model,
    truth: &WeightedScm,
    data: Option<&Dataset>,
    dir: &Path,
) -> Result<RunResult> {
    ensure_dir(dir)?;
    let result = evaluate(config, model, truth, data, config.seed)?;
    write_json(&dir.join("result.json"), &result)?;
    Ok(result)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExactReport {
    pub schema_version: u32,
    pub config_hash: String,
    pub seed: u64,
    pub nodes: usize,
    pub lambda_t: f64,
    /// Log evidence up to the prior's unknown log normalizer.
    pub log_evidence_unnormalized: f64,
    pub hellinger: Option<f64>,
}

/// Enumerates the posterior of `data` into `posterior.csv`; with a model,
/// also reports its Hellinger distance to it.
pub fn cmd_exact(
    config: &ExperimentConfig,
    data: &Dataset,
    model: Option<&Model>,
    truth: Option<&WeightedScm>,
    dir: &Path,
) -> Result<ExactReport> {
    ensure_dir(dir)?;
    let d = data.num_nodes();
    let scorer = BgeScorer::new(sufficient_stats(data), config.train.bge.hyperparams(d)?)?;
    let lambda_t = config.eval.posterior_lambda_t.unwrap_or(config.train.prior.temp_max);
    let exact = enumerate_posterior(&scorer, lambda_t, &config.train.prior)?;
    let hellinger = match model {
        Some(m) => Some(hellinger(&exact.distribution, &model_distribution(m)?)?),
        None => None,
    };
    let csv = exact.distribution.to_csv(truth.map(WeightedScm::graph))?;
    write_atomic(&dir.join("posterior.csv"), csv.as_bytes())?;
    let report = ExactReport {
        schema_version: SCHEMA_VERSION,
        config_hash: config.hash(),
        seed: config.seed,
        nodes: d,
        lambda_t,
        log_evidence_unnormalized: exact.log_evidence_unnormalized,
        hellinger,
    };
    write_json(&dir.join("exact.json"), &report)?;
    Ok(report)
}

/// One row of `sweep.csv`: a single run, or a summary statistic over runs.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub row: String,
    pub seed: Option<u64>,
    pub family: Family,
    pub status: String,
    pub final_elbo: Option<f64>,
    pub expected_shd: Option<f64>,
    pub auroc: Option<f64>,
    pub hellinger: Option<f64>,
    pub wall_clock_seconds: Option<f64>,
    /// Autoregressive minus factorized expected SHD on the same data (paired sweeps).
    pub shd_vs_factorized: Option<f64>,
}

pub const SWEEP_HEADER: &str =
    "row,seed,family,status,final_elbo,expected_shd,auroc,hellinger,wall_clock_seconds,shd_vs_factorized,config_hash";

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl SweepRow {
    fn failed(seed: u64, family: Family, err: &Error) -> Self {
        Self {
            row: "run".into(),
            seed: Some(seed),
            family,
            status: format!("error: {err}"),
            final_elbo: None,
            expected_shd: None,
            auroc: None,
            hellinger: None,
            wall_clock_seconds: None,
            shd_vs_factorized: None,
        }
    }

    fn csv(&self, hash: &str) -> String {
        let status = self.status.replace(['"', ',', '\n'], " ");
        format!(
            "{},{},{},{},{},{},{},{},{},{},{}",
            self.row,
            self.seed.map(|s| s.to_string()).unwrap_or_default(),
            self.family,
            status,
            opt(self.final_elbo),
            opt(self.expected_shd),
            opt(self.auroc),
            opt(self.hellinger),
            opt(self.wall_clock_seconds),
            opt(self.shd_vs_factorized),
            hash
        )
    }
}

/// Median, lower and upper quartile rows for one family's successful runs.
fn summary_rows(rows: &[SweepRow], family: Family) -> Vec<SweepRow> {
    let runs: Vec<&SweepRow> = rows
        .iter()
        .filter(|r| r.row == "run" && r.family == family && r.status == "ok")
        .collect();
    let column = |f: fn(&SweepRow) -> Option<f64>| -> Vec<f64> { runs.iter().filter_map(|r| f(r)).collect() };
    type Stat = fn(&mut Data<Vec<f64>>) -> f64;
    let stats: [(&str, Stat); 3] = [
        ("median", |d| d.median()),
        ("q1", |d| d.lower_quartile()),
        ("q3", |d| d.upper_quartile()),
    ];
    stats
        .iter()
        .map(|(name, stat)| {
            let summarize = |xs: Vec<f64>| if xs.is_empty() { None } else { Some(stat(&mut Data::new(xs))) };
            SweepRow {
                row: name.to_string(),
                seed: None,
                family,
                status: format!("n={}", runs.len()),
                final_elbo: summarize(column(|r| r.final_elbo)),
                expected_shd: summarize(column(|r| r.expected_shd)),
                auroc: summarize(column(|r| r.auroc)),
                hellinger: summarize(column(|r| r.hellinger)),
                wall_clock_seconds: summarize(column(|r| r.wall_clock_seconds)),
                shd_vs_factorized: summarize(column(|r| r.shd_vs_factorized)),
            }
        })
        .collect()
}

pub fn sweep_csv(rows: &[SweepRow], hash: &str) -> String {
    let mut out = String::from(SWEEP_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(out, "{}", r.csv(hash));
    }
    out
}

fn sweep_one(config: &ExperimentConfig, seed: u64, family: Family, data: &Dataset, scm: &WeightedScm, dir: &Path) -> Result<SweepRow> {
    let start = Instant::now();
    let (model, _) = cmd_train(config, data, seed, family, dir)?;
    let mut result = evaluate(config, &model, scm, Some(data), seed)?;
    if !config.deterministic {
        result.wall_clock_seconds = Some(start.elapsed().as_secs_f64());
    }
    write_json(&dir.join("result.json"), &result)?;
    Ok(SweepRow {
        row: "run".into(),
        seed: Some(seed),
        family,
        status: "ok".into(),
        final_elbo: result.final_elbo,
        expected_shd: result.expected_shd,
        auroc: result.auroc,
        hellinger: result.hellinger,
        wall_clock_seconds: result.wall_clock_seconds,
        shd_vs_factorized: None,
    })
}

/// generate, train and evaluate for seeds `seed .. seed + num_seeds`. A failed
/// run becomes an error row; the sweep carries on.
pub fn cmd_sweep(config: &ExperimentConfig, dir: &Path) -> Result<Vec<SweepRow>> {
    config.validate()?;
    ensure_dir(dir)?;
    let families = if config.paired {
        vec![Family::Autoregressive, Family::Factorized]
    } else {
        vec![config.train.family]
    };
    let mut rows = Vec::new();
    for seed in config.seed..config.seed + config.num_seeds as u64 {
        let seed_dir = dir.join(format!("seed-{seed}"));
        let generated = ensure_dir(&seed_dir).and_then(|_| {
            let (scm, data) = generate(config, seed)?;
            data.write_csv(seed_dir.join("data.csv"))?;
            write_atomic(&seed_dir.join("scm.json"), scm.to_json()?.as_bytes())?;
            Ok((scm, data))
        });
        let (scm, data) = match generated {
            Ok(v) => v,
            Err(e) => {
                rows.extend(families.iter().map(|&f| SweepRow::failed(seed, f, &e)));
                continue;
            }
        };
        let mut seed_rows: Vec<SweepRow> = families
            .iter()
            .map(|&family| {
                let run_dir = seed_dir.join(family.to_string());
                sweep_one(config, seed, family, &data, &scm, &run_dir).unwrap_or_else(|e| SweepRow::failed(seed, family, &e))
            })
            .collect();
        if let [ar, fa] = &mut seed_rows[..] {
            if let (Some(a), Some(f)) = (ar.expected_shd, fa.expected_shd) {
                ar.shd_vs_factorized = Some(a - f);
            }
        }
        rows.extend(seed_rows);
    }
    for &family in &families {
        rows.extend(summary_rows(&rows, family));
    }
    let hash = config.hash();
    write_atomic(&dir.join("sweep.csv"), sweep_csv(&rows, &hash).as_bytes())?;
    write_manifest(dir, "sweep", config, config.seed, &["sweep.csv"])?;
    Ok(rows)
}

/// Settings shared by every subcommand; anything given here wins over the config file.
#[derive(Debug, Clone, Default, Args)]
pub struct Overrides {
    /// JSON experiment configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub nodes: Option<usize>,
    #[arg(long, global = true)]
    pub samples: Option<usize>,
    #[arg(long, global = true)]
    pub epochs: Option<usize>,
    #[arg(long, global = true)]
    pub batch: Option<usize>,
    #[arg(long, global = true)]
    pub lr: Option<f64>,
    #[arg(long, global = true)]
    pub family: Option<Family>,
    #[arg(long, global = true)]
    pub hidden: Option<usize>,
    #[arg(long, global = true)]
    pub lambda_sparse: Option<f64>,
    #[arg(long, global = true)]
    pub temp_min: Option<f64>,
    #[arg(long, global = true)]
    pub temp_max: Option<f64>,
    #[arg(long, global = true)]
    pub num_seeds: Option<usize>,
    /// Output directory; defaults to `$DAGVI_OUTPUT_ROOT/<command>` or `runs/<command>`.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Leave wall-clock timings out of every output.
    #[arg(long, global = true)]
    pub deterministic: bool,
    /// Sweep both families on the same data.
    #[arg(long, global = true)]
    pub paired: bool,
}

impl Overrides {
    pub fn resolve(&self) -> Result<ExperimentConfig> {
        let mut c = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::default(),
        };
        if let Some(v) = self.seed {
            c.seed = v;
        }
        if let Some(v) = self.nodes {
            c.nodes = v;
        }
        if let Some(v) = self.samples {
            c.samples = v;
        }
        if let Some(v) = self.epochs {
            c.train.epochs = v;
        }
        if let Some(v) = self.batch {
            c.train.batch_size = v;
        }
        if let Some(v) = self.lr {
            c.train.learning_rate = v;
        }
        if let Some(v) = self.family {
            c.train.family = v;
        }
        if let Some(v) = self.hidden {
            c.train.hidden_size = v;
        }
        if let Some(v) = self.lambda_sparse {
            c.train.prior.lambda_sparse = v;
        }
        if let Some(v) = self.temp_min {
            c.train.prior.temp_min = v;
        }
        if let Some(v) = self.temp_max {
            c.train.prior.temp_max = v;
        }
        if let Some(v) = self.num_seeds {
            c.num_seeds = v;
        }
        if self.deterministic {
            c.deterministic = true;
        }
        if self.paired {
            c.paired = true;
        }
        if let Some(out) = &self.out {
            c.output_dir = Some(out.clone());
        }
        c.validate()?;
        Ok(c)
    }
}

#[derive(Debug, Parser)]
#[command(name = "dagvi", version, about = "Variational inference over causal DAG structures")]
pub struct Cli {
    #[command(flatten)]
    pub overrides: Overrides,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sample a ground-truth SCM and a dataset from it.
    Generate,
    /// Fit a variational model to a dataset.
    Train {
        #[arg(long)]
        data: PathBuf,
    },
    /// Score a checkpoint against a ground-truth SCM.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        /// Needed for the ELBO and Hellinger metrics.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// generate, train and eval over a range of seeds.
    Sweep,
    /// Enumerate the exact posterior of a small dataset.
    Exact {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        truth: Option<PathBuf>,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Generate => "generate",
            Command::Train { .. } => "train",
            Command::Eval { .. } => "eval",
            Command::Sweep => "sweep",
            Command::Exact { .. } => "exact",
        }
    }
}

/// Output directory: the flag or config value, else the environment root, else `runs/`.
pub fn output_dir(config: &ExperimentConfig, command: &str) -> PathBuf {
    if let Some(dir) = &config.output_dir {
        return dir.clone();
    }
    let root = std::env::var_os(OUTPUT_ROOT_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("runs"));
    root.join(command)
}

fn load_scm(path: &Path) -> Result<WeightedScm> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    WeightedScm::from_json(&text)
}

/// Runs one parsed command line; returns a one-line summary for stdout.
pub fn run(cli: &Cli) -> Result<String> {
    let config = cli.overrides.resolve()?;
    let dir = output_dir(&config, cli.command.name());
    match &cli.command {
        Command::Generate => {
            let (scm, data) = cmd_generate(&config, &dir)?;
            Ok(format!(
                "wrote {} samples over {} nodes ({} true edges) to {}",
                data.num_samples(),
                data.num_nodes(),
                scm.graph().edge_count(),
                dir.display()
            ))
        }
        Command::Train { data } => {
            let data = Dataset::read_csv(data)?;
            let (_, history) = cmd_train(&config, &data, config.seed, config.train.family, &dir)?;
            let last = history.last().map_or(f64::NAN, |r| r.elbo);
            Ok(format!("trained {} epochs, final ELBO {last:.4}; outputs in {}", history.len(), dir.display()))
        }
        Command::Eval { checkpoint, truth, data } => {
            let model = Model::load(checkpoint)?;
            let truth = load_scm(truth)?;
            let data = data.as_deref().map(Dataset::read_csv).transpose()?;
            let result = cmd_eval(&config, &model, &truth, data.as_ref(), &dir)?;
            Ok(serde_json::to_string(&result)?)
        }
        Command::Sweep => {
            let rows = cmd_sweep(&config, &dir)?;
            let failed = rows.iter().filter(|r| r.row == "run" && r.status != "ok").count();
            if failed > 0 {
                eprintln!("warning: {failed} run(s) failed; see sweep.csv");
            }
            Ok(format!("wrote {} rows to {}", rows.len(), dir.join("sweep.csv").display()))
        }
        Command::Exact { data, checkpoint, truth } => {
            let data = Dataset::read_csv(data)?;
            let model = checkpoint.as_deref().map(Model::load).transpose()?;
            let truth = truth.as_deref().map(load_scm).transpose()?;
            let report = cmd_exact(&config, &data, model.as_ref(), truth.as_ref(), &dir)?;
            Ok(serde_json::to_string(&report)?)
        }
    }
}
