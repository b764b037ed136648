//! Synthetic linear-Gaussian SCMs: random DAGs, edge weights, ancestral
//! sampling, CSV datasets and sufficient statistics.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{has_equivalent_reversal, is_acyclic, topological_order, AdjacencyMatrix};

/// Rejection budget when requiring a non-trivial equivalence class.
pub const MEC_FILTER_ATTEMPTS: usize = 1000;

pub const WEIGHT_MEAN: f64 = 2.0;
pub const WEIGHT_STD: f64 = 1.0;

/// Linear SCM `x_j = sum_i w_ij x_i + e_j`, `e_j ~ N(0, noise_variance[j])`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedScm {
    graph: AdjacencyMatrix,
    weights: DMatrix<f64>,
    noise_variance: Vec<f64>,
}

impl WeightedScm {
    pub fn new(graph: AdjacencyMatrix, weights: DMatrix<f64>, noise_variance: Vec<f64>) -> Result<Self> {
        let d = graph.num_nodes();
        if weights.shape() != (d, d) {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: weights.nrows(),
            });
        }
        if noise_variance.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: noise_variance.len(),
            });
        }
        if !is_acyclic(&graph) {
            return Err(Error::CyclicGraph);
        }
        for i in 0..d {
            for j in 0..d {
                let w = weights[(i, j)];
                if !w.is_finite() || (w != 0.0 && (i == j || !graph.has_edge(i, j))) {
                    return Err(Error::InvalidArgument(format!(
                        "weight ({}, {}) = {w} does not match the graph",
                        i + 1,
                        j + 1
                    )));
                }
            }
        }
        if noise_variance.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidArgument("noise variances must be finite and >= 0".into()));
        }
        Ok(Self {
            graph,
            weights,
            noise_variance,
        })
    }

    pub fn graph(&self) -> &AdjacencyMatrix {
        &self.graph
    }

    pub fn weights(&self) -> &DMatrix<f64> {
        &self.weights
    }

    pub fn noise_variance(&self) -> &[f64] {
        &self.noise_variance
    }

    pub fn num_nodes(&self) -> usize {
        self.graph.num_nodes()
    }

    /// Relabels nodes: node `i` becomes `perm[i]`.
    pub fn permute(&self, perm: &[usize]) -> Self {
        let d = self.num_nodes();
        let mut weights = DMatrix::zeros(d, d);
        let mut noise = vec![0.0; d];
        for i in 0..d {
            noise[perm[i]] = self.noise_variance[i];
            for j in 0..d {
                weights[(perm[i], perm[j])] = self.weights[(i, j)];
            }
        }
        Self {
            graph: self.graph.permute(perm),
            weights,
            noise_variance: noise,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&ScmJson::from(self))?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str::<ScmJson>(text)?.try_into()
    }
}

/// On-disk form: `{d, edges: [[i, j, weight], ...], noise_variance}` with 1-based nodes.
#[derive(Serialize, Deserialize)]
struct ScmJson {
    d: usize,
    edges: Vec<(usize, usize, f64)>,
    noise_variance: Vec<f64>,
}

impl From<&WeightedScm> for ScmJson {
    fn from(scm: &WeightedScm) -> Self {
        ScmJson {
            d: scm.num_nodes(),
            edges: scm
                .graph
                .edges()
                .map(|(i, j)| (i + 1, j + 1, scm.weights[(i, j)]))
                .collect(),
            noise_variance: scm.noise_variance.clone(),
        }
    }
}

impl TryFrom<ScmJson> for WeightedScm {
    type Error = Error;

    fn try_from(j: ScmJson) -> Result<Self> {
        let mut graph = AdjacencyMatrix::empty(j.d);
        let mut weights = DMatrix::zeros(j.d, j.d);
        for &(a, b, w) in &j.edges {
            if a == 0 || b == 0 || a > j.d || b > j.d || a == b {
                return Err(Error::InvalidArgument(format!("bad edge {a} -> {b}")));
            }
            graph.set_edge(a - 1, b - 1, true);
            weights[(a - 1, b - 1)] = w;
        }
        WeightedScm::new(graph, weights, j.noise_variance)
    }
}

fn check_expected_edges(d: usize, expected_edges: f64) -> Result<f64> {
    if d < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 nodes, got {d}")));
    }
    let pairs = (d * (d - 1) / 2) as f64;
    if !(expected_edges > 0.0 && expected_edges <= pairs) {
        return Err(Error::InvalidArgument(format!(
            "expected edge count {expected_edges} outside (0, {pairs}]"
        )));
    }
    Ok(expected_edges / pairs)
}

/// Erdos-Renyi DAG: a random node order, then each forward pair is an edge
/// independently with probability `expected_edges / (d(d-1)/2)`.
pub fn sample_er_dag<R: Rng + ?Sized>(d: usize, expected_edges: f64, rng: &mut R) -> Result<AdjacencyMatrix> {
    let p = check_expected_edges(d, expected_edges)?;
    let mut order: Vec<usize> = (0..d).collect();
    order.shuffle(rng);
    let mut a = AdjacencyMatrix::empty(d);
    for hi in 1..d {
        for lo in 0..hi {
            if rng.random::<f64>() < p {
                a.set_edge(order[lo], order[hi], true);
            }
        }
    }
    Ok(a)
}

/// Like [`sample_er_dag`], but resamples until the DAG's equivalence class has
/// more than one member. Gives up after [`MEC_FILTER_ATTEMPTS`] draws.
pub fn sample_er_dag_nontrivial_mec<R: Rng + ?Sized>(
    d: usize,
    expected_edges: f64,
    rng: &mut R,
) -> Result<AdjacencyMatrix> {
    for _ in 0..MEC_FILTER_ATTEMPTS {
        let a = sample_er_dag(d, expected_edges, rng)?;
        if has_equivalent_reversal(&a) {
            return Ok(a);
        }
    }
    Err(Error::InvalidArgument(format!(
        "no DAG with a non-trivial equivalence class in {MEC_FILTER_ATTEMPTS} draws"
    )))
}

/// Independent `N(2, 1)` weight per edge (row-major edge order), unit noise variance.
pub fn sample_weights<R: Rng + ?Sized>(graph: &AdjacencyMatrix, rng: &mut R) -> Result<WeightedScm> {
    if !is_acyclic(graph) {
        return Err(Error::CyclicGraph);
    }
    let d = graph.num_nodes();
    let normal = Normal::new(WEIGHT_MEAN, WEIGHT_STD).expect("valid normal");
    let mut weights = DMatrix::zeros(d, d);
    for (i, j) in graph.edges() {
        weights[(i, j)] = normal.sample(rng);
    }
    WeightedScm::new(graph.clone(), weights, vec![1.0; d])
}

/// `n` observations by ancestral sampling. Noise is drawn row by row, node
/// index order within a row.
pub fn simulate<R: Rng + ?Sized>(scm: &WeightedScm, n: usize, rng: &mut R) -> Result<Dataset> {
    let d = scm.num_nodes();
    let mut noise = DMatrix::zeros(n, d);
    for r in 0..n {
        for c in 0..d {
            noise[(r, c)] = StandardNormal.sample(rng);
        }
    }
    simulate_with_noise(scm, &noise)
}

/// Ancestral sampling with caller-supplied standard-normal draws (`n x d`);
/// node `j`'s noise is `sqrt(noise_variance[j]) * noise[(r, j)]`.
pub fn simulate_with_noise(scm: &WeightedScm, noise: &DMatrix<f64>) -> Result<Dataset> {
    let d = scm.num_nodes();
    if noise.ncols() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: noise.ncols(),
        });
    }
    if noise.nrows() == 0 {
        return Err(Error::EmptyDataset);
    }
    let order = topological_order(&scm.graph)?;
    let parents: Vec<Vec<usize>> = (0..d).map(|j| scm.graph.parents(j)).collect();
    let scale: Vec<f64> = scm.noise_variance.iter().map(|v| v.sqrt()).collect();
    let mut x = DMatrix::zeros(noise.nrows(), d);
    for r in 0..noise.nrows() {
        for &j in &order {
            let mut v = scale[j] * noise[(r, j)];
            for &i in &parents[j] {
                v += scm.weights[(i, j)] * x[(r, i)];
            }
            x[(r, j)] = v;
        }
    }
    Dataset::new(x)
}

/// Observations as an `n x d` matrix, one row per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    values: DMatrix<f64>,
}

impl Dataset {
    pub fn new(values: DMatrix<f64>) -> Result<Self> {
        if values.nrows() == 0 || values.ncols() == 0 {
            return Err(Error::EmptyDataset);
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("dataset contains non-finite values".into()));
        }
        Ok(Self { values })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let d = rows.first().map(Vec::len).ok_or(Error::EmptyDataset)?;
        if let Some(bad) = rows.iter().find(|r| r.len() != d) {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: bad.len(),
            });
        }
        Self::new(DMatrix::from_fn(rows.len(), d, |r, c| rows[r][c]))
    }

    pub fn num_samples(&self) -> usize {
        self.values.nrows()
    }

    pub fn num_nodes(&self) -> usize {
        self.values.ncols()
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    /// Dataset restricted to the given columns, in that order.
    pub fn select_columns(&self, cols: &[usize]) -> Result<Self> {
        Self::new(self.values.select_columns(cols))
    }

    /// First `n` rows.
    pub fn head(&self, n: usize) -> Result<Self> {
        Self::new(self.values.rows(0, n.min(self.num_samples())).into_owned())
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_csv_string()?).map_err(|e| Error::io(path, e))
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record((1..=self.num_nodes()).map(|j| format!("X{j}")))?;
        for r in 0..self.num_samples() {
            w.write_record(self.values.row(r).iter().map(|v| v.to_string()))?;
        }
        let bytes = w.into_inner().map_err(|e| Error::io("<csv buffer>", e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_csv(&text)
    }

    pub fn parse_csv(text: &str) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        let header = reader.headers()?.clone();
        if header.is_empty() || (header.len() == 1 && header[0].is_empty()) {
            return Err(Error::Parse {
                line: 1,
                msg: "missing header".into(),
            });
        }
        let d = header.len();
        let mut rows = Vec::new();
        for (k, record) in reader.records().enumerate() {
            let line = k + 2;
            let record = record.map_err(|e| Error::Parse {
                line,
                msg: e.to_string(),
            })?;
            if record.len() != d {
                return Err(Error::Parse {
                    line,
                    msg: format!("expected {d} fields, found {}", record.len()),
                });
            }
            let row = record
                .iter()
                .map(|f| {
                    f.parse::<f64>().map_err(|_| Error::Parse {
                        line,
                        msg: format!("not a number: {f:?}"),
                    })
                })
                .collect::<Result<Vec<f64>>>()?;
            rows.push(row);
        }
        if rows.is_empty() {
            return Err(Error::EmptyDataset);
        }
        Self::from_rows(&rows)
    }
}

/// Sample size, sample mean and unnormalized scatter matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SufficientStats {
    pub n: usize,
    pub mean: DVector<f64>,
    pub scatter: DMatrix<f64>,
}

impl SufficientStats {
    /// Statistics of zero observations; scoring with these yields the prior predictive.
    pub fn empty(d: usize) -> Self {
        Self {
            n: 0,
            mean: DVector::zeros(d),
            scatter: DMatrix::zeros(d, d),
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.mean.len()
    }

    /// Pooled statistics of two disjoint samples.
    pub fn merge(&self, other: &Self) -> Self {
        let n = self.n + other.n;
        if n == 0 {
            return self.clone();
        }
        let (na, nb) = (self.n as f64, other.n as f64);
        let delta = &other.mean - &self.mean;
        let mean = &self.mean + &delta * (nb / n as f64);
        let scatter = &self.scatter + &other.scatter + &delta * delta.transpose() * (na * nb / n as f64);
        Self { n, mean, scatter }
    }

    /// Statistics restricted to the given coordinates.
    pub fn select(&self, cols: &[usize]) -> Self {
        Self {
            n: self.n,
            mean: DVector::from_iterator(cols.len(), cols.iter().map(|&c| self.mean[c])),
            scatter: self.scatter.select_rows(cols).select_columns(cols),
        }
    }
}

pub fn sufficient_stats(data: &Dataset) -> SufficientStats {
    let x = data.values();
    let n = x.nrows();
    let mean = x.row_mean().transpose();
    let mut centered = x.clone();
    for mut row in centered.row_iter_mut() {
        row -= mean.transpose();
    }
    let mut scatter = centered.transpose() * &centered;
    // exact symmetry
    scatter = (&scatter + scatter.transpose()) * 0.5;
    SufficientStats { n, mean, scatter }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn er_dags_are_acyclic() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for d in 2..9 {
            for _ in 0..50 {
                let a = sample_er_dag(d, (d - 1) as f64 * 0.9, &mut rng).unwrap();
                assert!(is_acyclic(&a));
            }
        }
    }

    #[test]
    fn er_rejects_bad_arguments() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(sample_er_dag(1, 1.0, &mut rng).is_err());
        assert!(sample_er_dag(3, 0.0, &mut rng).is_err());
        assert!(sample_er_dag(3, 3.5, &mut rng).is_err());
    }

    #[test]
    fn er_two_nodes_always_one_edge() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut seen = [0usize; 2];
        for _ in 0..200 {
            let a = sample_er_dag(2, 1.0, &mut rng).unwrap();
            assert_eq!(a.edge_count(), 1);
            seen[a.has_edge(0, 1) as usize] += 1;
        }
        assert!(seen[0] > 0 && seen[1] > 0);
    }

    #[test]
    fn er_complete_on_three_nodes_gives_the_six_orders() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut seen = std::collections::BTreeSet::new();
        for _ in 0..500 {
            let a = sample_er_dag(3, 3.0, &mut rng).unwrap();
            assert_eq!(a.edge_count(), 3);
            assert!(is_acyclic(&a));
            seen.insert(a.index());
        }
        assert_eq!(seen.len(), 6);
    }

    #[test]
    fn er_mean_edge_count() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let draws = 10_000;
        let total: usize = (0..draws)
            .map(|_| sample_er_dag(10, 10.0, &mut rng).unwrap().edge_count())
            .sum();
        let mean = total as f64 / draws as f64;
        assert!((9.7..=10.3).contains(&mean), "{mean}");
    }

    #[test]
    fn mec_filter_returns_nontrivial_class() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let a = sample_er_dag_nontrivial_mec(4, 4.0, &mut rng).unwrap();
            assert!(has_equivalent_reversal(&a));
        }
    }

    #[test]
    fn weights_follow_graph() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let empty = sample_weights(&AdjacencyMatrix::empty(4), &mut rng).unwrap();
        assert!(empty.weights().iter().all(|&w| w == 0.0));
        let g = sample_er_dag(6, 6.0, &mut rng).unwrap();
        let scm = sample_weights(&g, &mut rng).unwrap();
        for i in 0..6 {
            for j in 0..6 {
                assert_eq!(scm.weights()[(i, j)] != 0.0, g.has_edge(i, j));
            }
        }
        assert_eq!(scm.noise_variance(), &[1.0; 6]);
        let cyc = AdjacencyMatrix::from_edges(2, &[(0, 1), (1, 0)]).unwrap();
        assert!(matches!(sample_weights(&cyc, &mut rng), Err(Error::CyclicGraph)));
    }

    #[test]
    fn weight_mean_is_two() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let full: Vec<_> = crate::graph::positions(12).filter(|(i, j)| i < j).collect();
        let g = AdjacencyMatrix::from_edges(12, &full).unwrap();
        let mut sum = 0.0;
        let mut count = 0;
        while count < 100_000 {
            let scm = sample_weights(&g, &mut rng).unwrap();
            for (i, j) in g.edges() {
                sum += scm.weights()[(i, j)];
                count += 1;
            }
        }
        let mean = sum / count as f64;
        assert!((1.99..=2.01).contains(&mean), "{mean}");
    }

    #[test]
    fn deterministic_chain_propagation() {
        let g = AdjacencyMatrix::from_edges(2, &[(0, 1)]).unwrap();
        let mut w = DMatrix::zeros(2, 2);
        w[(0, 1)] = 2.0;
        let scm = WeightedScm::new(g, w, vec![1.0, 0.0]).unwrap();
        let noise = DMatrix::from_row_slice(1, 2, &[1.0, 0.7]);
        let data = simulate_with_noise(&scm, &noise).unwrap();
        assert_eq!(data.values()[(0, 0)], 1.0);
        assert_eq!(data.values()[(0, 1)], 2.0);
    }

    #[test]
    fn variance_propagation() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let single = WeightedScm::new(AdjacencyMatrix::empty(1), DMatrix::zeros(1, 1), vec![1.0]).unwrap();
        let stats = sufficient_stats(&simulate(&single, 100_000, &mut rng).unwrap());
        let var = stats.scatter[(0, 0)] / (stats.n - 1) as f64;
        assert!((0.98..=1.02).contains(&var), "{var}");

        let g = AdjacencyMatrix::from_edges(2, &[(0, 1)]).unwrap();
        let mut w = DMatrix::zeros(2, 2);
        w[(0, 1)] = 2.0;
        let chain = WeightedScm::new(g, w, vec![1.0, 1.0]).unwrap();
        let stats = sufficient_stats(&simulate(&chain, 100_000, &mut rng).unwrap());
        let var = stats.scatter[(1, 1)] / (stats.n - 1) as f64;
        assert!((var - 5.0).abs() < 0.1, "{var}");
    }

    #[test]
    fn simulation_commutes_with_relabeling() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let g = sample_er_dag(5, 5.0, &mut rng).unwrap();
        let scm = sample_weights(&g, &mut rng).unwrap();
        let noise = DMatrix::from_fn(50, 5, |_, _| StandardNormal.sample(&mut rng));
        let perm = [3, 0, 4, 1, 2];
        let mut permuted_noise = DMatrix::zeros(50, 5);
        for c in 0..5 {
            permuted_noise.set_column(perm[c], &noise.column(c));
        }
        let base = simulate_with_noise(&scm, &noise).unwrap();
        let relabeled = simulate_with_noise(&scm.permute(&perm), &permuted_noise).unwrap();
        for c in 0..5 {
            // parent sums run in a different order after relabeling
            let diff = (base.values().column(c) - relabeled.values().column(perm[c])).amax();
            assert!(diff < 1e-12, "{diff}");
        }
    }

    #[test]
    fn stats_examples() {
        let one = Dataset::from_rows(&[vec![1.5, -2.0]]).unwrap();
        let s = sufficient_stats(&one);
        assert_eq!(s.mean.as_slice(), &[1.5, -2.0]);
        assert!(s.scatter.iter().all(|&v| v == 0.0));

        let two = Dataset::from_rows(&[vec![0.0], vec![2.0]]).unwrap();
        let s = sufficient_stats(&two);
        assert_eq!(s.mean[0], 1.0);
        assert_eq!(s.scatter[(0, 0)], 2.0);
        assert!(matches!(Dataset::from_rows(&[]), Err(Error::EmptyDataset)));
    }

    #[test]
    fn scatter_is_symmetric_psd() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let x = DMatrix::from_fn(7, 5, |_, _| StandardNormal.sample(&mut rng));
        let s = sufficient_stats(&Dataset::new(x).unwrap());
        assert_eq!(s.scatter, s.scatter.transpose());
        let eig = s.scatter.clone().symmetric_eigenvalues();
        assert!(eig.iter().all(|&l| l >= -1e-10));
    }

    #[test]
    fn pooled_stats_match_concatenation() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = DMatrix::from_fn(30, 3, |_, _| StandardNormal.sample(&mut rng));
        let all = sufficient_stats(&Dataset::new(x.clone()).unwrap());
        let a = sufficient_stats(&Dataset::new(x.rows(0, 12).into_owned()).unwrap());
        let b = sufficient_stats(&Dataset::new(x.rows(12, 18).into_owned()).unwrap());
        let pooled = a.merge(&b);
        assert_eq!(pooled.n, 30);
        assert!((pooled.mean - all.mean).amax() < 1e-12);
        assert!((pooled.scatter - all.scatter).amax() < 1e-10);
    }

    #[test]
    fn csv_round_trip_and_errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let x = DMatrix::from_fn(9, 4, |_, _| 1e3 * rng.random::<f64>() - 0.1);
        let data = Dataset::new(x).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.csv");
        data.write_csv(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("X1,X2,X3,X4\n"));
        let back = Dataset::read_csv(&path).unwrap();
        assert!((back.values() - data.values()).amax() <= 1e-12);

        assert!(Dataset::parse_csv("X1,X2\n1,2\n3\n").is_err());
        assert!(Dataset::parse_csv("").is_err());
        assert!(Dataset::parse_csv("X1,X2\n").is_err());
        assert!(Dataset::parse_csv("X1\nabc\n").is_err());
        assert!(Dataset::read_csv(dir.path().join("missing.csv")).is_err());
    }

    #[test]
    fn scm_json_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let g = sample_er_dag(4, 4.0, &mut rng).unwrap();
        let scm = sample_weights(&g, &mut rng).unwrap();
        let json = scm.to_json().unwrap();
        let v: serde_json::Value = serde_json::from_str(&json).unwrap();
        assert_eq!(v["d"], 4);
        assert_eq!(v["edges"].as_array().unwrap().len(), g.edge_count());
        assert_eq!(WeightedScm::from_json(&json).unwrap(), scm);
    }
}
