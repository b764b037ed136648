use std::path::Path;
use std::process::Command;

use dagvi::cli::{cmd_eval, cmd_generate, cmd_sweep, evaluate, ExperimentConfig, RunResult, SWEEP_HEADER};
use dagvi::family::{FactorizedModel, Family, Model};
use dagvi::graph::is_acyclic;
use dagvi::scm::{Dataset, WeightedScm};
use dagvi::trainer::TrainConfig;
use statrs::statistics::{Data, OrderStatistics};

fn dagvi(dir: &Path, args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_dagvi"))
        .current_dir(dir)
        .env_remove("DAGVI_OUTPUT_ROOT")
        .args(args)
        .output()
        .unwrap()
}

fn small_config(nodes: usize) -> ExperimentConfig {
    ExperimentConfig {
        nodes,
        samples: 30,
        deterministic: true,
        train: TrainConfig {
            epochs: 40,
            batch_size: 8,
            hidden_size: 6,
            ..TrainConfig::desk()
        },
        ..Default::default()
    }
}

/// Logits that put all mass on one graph.
fn point_mass(g: &dagvi::AdjacencyMatrix) -> Model {
    let logits = g.linearize().into_iter().map(|b| if b { 40.0 } else { -40.0 }).collect();
    Model::Factorized(FactorizedModel::from_logits(g.num_nodes(), logits).unwrap())
}

#[test]
fn generate_is_seeded_and_acyclic() {
    let root = tempfile::tempdir().unwrap();
    let config = small_config(4);
    let (a, b) = (root.path().join("a"), root.path().join("b"));
    let (scm, data) = cmd_generate(&config, &a).unwrap();
    cmd_generate(&config, &b).unwrap();
    for f in ["data.csv", "scm.json", "manifest.json"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
    assert!(is_acyclic(scm.graph()));
    assert_eq!(Dataset::read_csv(a.join("data.csv")).unwrap(), data);
    let back = WeightedScm::from_json(&std::fs::read_to_string(a.join("scm.json")).unwrap()).unwrap();
    assert_eq!(&back, &scm);
    let manifest: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(a.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["config_hash"], config.hash());
    assert_eq!(manifest["seed"], 0);
}

#[test]
fn point_mass_at_the_truth_scores_perfectly() {
    let root = tempfile::tempdir().unwrap();
    let config = small_config(3);
    let (scm, data) = cmd_generate(&config, root.path()).unwrap();
    let model = point_mass(scm.graph());
    let result = cmd_eval(&config, &model, &scm, Some(&data), root.path()).unwrap();
    assert_eq!(result.expected_shd, Some(0.0));
    if scm.graph().edge_count() > 0 {
        assert_eq!(result.auroc, Some(1.0));
    }
    assert!(result.hellinger.is_some());
    let text = std::fs::read_to_string(root.path().join("result.json")).unwrap();
    let parsed: RunResult = serde_json::from_str(&text).unwrap();
    assert_eq!(parsed, result);
    assert_eq!(parsed.config_hash, config.hash());
    assert!(!text.contains("wall_clock"));
}

#[test]
fn large_graphs_skip_hellinger() {
    let config = ExperimentConfig {
        eval: dagvi::cli::EvalSettings {
            shd_samples: 50,
            marginal_samples: 50,
            posterior_lambda_t: None,
        },
        ..small_config(10)
    };
    let (scm, data) = dagvi::cli::generate(&config, 0).unwrap();
    let result = evaluate(&config, &point_mass(scm.graph()), &scm, Some(&data), 0).unwrap();
    assert!(result.hellinger.is_none());
    let json = serde_json::to_value(&result).unwrap();
    assert!(json.get("hellinger").is_none());
    assert!(json.get("expected_shd").is_some());
}

#[test]
fn evaluation_rejects_mismatched_sizes() {
    let config = small_config(3);
    let (scm, _) = dagvi::cli::generate(&config, 0).unwrap();
    let model = Model::Factorized(FactorizedModel::zeros(4));
    assert!(evaluate(&config, &model, &scm, None, 0).is_err());
}

fn column(csv: &str, name: &str) -> usize {
    csv.lines().next().unwrap().split(',').position(|c| c == name).unwrap()
}

#[test]
fn paired_sweep_rows_and_summaries() {
    let root = tempfile::tempdir().unwrap();
    let config = ExperimentConfig {
        num_seeds: 3,
        paired: true,
        ..small_config(3)
    };
    let rows = cmd_sweep(&config, root.path()).unwrap();
    let csv = std::fs::read_to_string(root.path().join("sweep.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), SWEEP_HEADER);
    // 3 seeds x 2 families + 3 summaries x 2 families
    assert_eq!(csv.lines().count(), 1 + 6 + 6);
    assert_eq!(rows.len(), 12);
    assert!(rows.iter().filter(|r| r.row == "run").all(|r| r.status == "ok"));

    let shd = column(&csv, "expected_shd");
    let cmp = column(&csv, "shd_vs_factorized");
    let mut ar_shd = Vec::new();
    for line in csv.lines().skip(1).filter(|l| l.starts_with("run,") && l.contains(",autoregressive,")) {
        let cells: Vec<&str> = line.split(',').collect();
        ar_shd.push(cells[shd].parse::<f64>().unwrap());
        assert!(!cells[cmp].is_empty());
    }
    let mut data = Data::new(ar_shd);
    let median_row = rows.iter().find(|r| r.row == "median" && r.family == Family::Autoregressive).unwrap();
    assert_eq!(median_row.expected_shd, Some(data.median()));
    let q1 = rows.iter().find(|r| r.row == "q1" && r.family == Family::Autoregressive).unwrap();
    assert_eq!(q1.expected_shd, Some(data.lower_quartile()));

    // rerunning the sweep reproduces it byte for byte
    let again = tempfile::tempdir().unwrap();
    cmd_sweep(&config, again.path()).unwrap();
    assert_eq!(csv, std::fs::read_to_string(again.path().join("sweep.csv")).unwrap());
    for sub in ["seed-1/autoregressive/history.csv", "seed-1/autoregressive/result.json"] {
        assert_eq!(std::fs::read(root.path().join(sub)).unwrap(), std::fs::read(again.path().join(sub)).unwrap());
    }
}

#[test]
fn binary_end_to_end() {
    let root = tempfile::tempdir().unwrap();
    let dir = root.path();
    let common = ["--nodes", "3", "--samples", "30", "--epochs", "25", "--batch", "8", "--hidden", "6", "--deterministic"];
    let run = |cmd: &[&str], out: &str| {
        let mut args: Vec<&str> = cmd.to_vec();
        args.extend_from_slice(&common);
        args.extend_from_slice(&["--out", out]);
        let o = dagvi(dir, &args);
        assert!(o.status.success(), "{cmd:?}: {}", String::from_utf8_lossy(&o.stderr));
    };
    run(&["generate"], "gen");
    run(&["train", "--data", "gen/data.csv"], "fit");
    let history = std::fs::read_to_string(dir.join("fit/history.csv")).unwrap();
    assert_eq!(history.lines().count(), 1 + 25);
    run(&["eval", "--checkpoint", "fit/checkpoint.json", "--truth", "gen/scm.json", "--data", "gen/data.csv"], "ev");
    let result: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.join("ev/result.json")).unwrap()).unwrap();
    assert!(result["expected_shd"].is_number());
    assert!(result["hellinger"].is_number());
    run(&["exact", "--data", "gen/data.csv", "--checkpoint", "fit/checkpoint.json", "--truth", "gen/scm.json"], "ex");
    let posterior = std::fs::read_to_string(dir.join("ex/posterior.csv")).unwrap();
    assert_eq!(posterior.lines().count(), 1 + 64);

    // the same command twice gives the same training history
    run(&["train", "--data", "gen/data.csv"], "fit2");
    assert_eq!(history, std::fs::read_to_string(dir.join("fit2/history.csv")).unwrap());
}

#[test]
fn binary_reports_fatal_errors() {
    let root = tempfile::tempdir().unwrap();
    let o = dagvi(root.path(), &["train", "--data", "missing.csv"]);
    assert!(!o.status.success());
    assert!(!o.stderr.is_empty());
    let o = dagvi(root.path(), &["generate", "--nodes", "1"]);
    assert!(!o.status.success());
}

#[test]
fn output_root_comes_from_the_environment() {
    let root = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_dagvi"))
        .current_dir(root.path())
        .env("DAGVI_OUTPUT_ROOT", root.path().join("outputs"))
        .args(["generate", "--nodes", "2", "--samples", "5"])
        .output()
        .unwrap();
    assert!(o.status.success());
    assert!(root.path().join("outputs/generate/data.csv").exists());
}
