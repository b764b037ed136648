//! Directed graphs as binary adjacency matrices.
//!
//! Entry `(i, j)` set means the edge `i -> j`. Self-loops are never stored.
//! The off-diagonal entries are linearized row-major, skipping the diagonal:
//! for `d = 3` the order is `(0,1), (0,2), (1,0), (1,2), (2,0), (2,1)`.
//! A [`GraphIndex`] packs that bit sequence little-endian, so linear position
//! `t` is bit `t` of the code.

use std::fmt;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<u8>>", into = "Vec<Vec<u8>>")]
pub struct AdjacencyMatrix {
    d: usize,
    entries: Vec<bool>,
}

/// Compact code of a graph's off-diagonal entries.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct GraphIndex(pub u64);

/// Number of off-diagonal positions of a `d`-node graph.
pub fn num_positions(d: usize) -> usize {
    d * d.saturating_sub(1)
}

/// Number of directed graphs (cyclic included) on `d` labelled nodes.
///
/// Only meaningful while `d * (d - 1) < 64`.
pub fn num_graphs(d: usize) -> u64 {
    1u64 << num_positions(d)
}

/// Row/column pair of each linear position, in linearization order.
pub fn positions(d: usize) -> impl Iterator<Item = (usize, usize)> {
    (0..d).flat_map(move |i| (0..d).filter(move |&j| j != i).map(move |j| (i, j)))
}

impl AdjacencyMatrix {
    /// The empty graph on `d` nodes.
    pub fn empty(d: usize) -> Self {
        Self {
            d,
            entries: vec![false; d * d],
        }
    }

    pub fn from_rows(rows: &[Vec<u8>]) -> Result<Self> {
        let d = rows.len();
        let mut a = Self::empty(d);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    got: row.len(),
                });
            }
            for (j, &v) in row.iter().enumerate() {
                match (v, i == j) {
                    (0, _) => {}
                    (1, false) => a.entries[i * d + j] = true,
                    (1, true) => {
                        return Err(Error::InvalidArgument(format!(
                            "self-loop on node {}",
                            i + 1
                        )))
                    }
                    _ => {
                        return Err(Error::InvalidArgument(format!(
                            "entry ({}, {}) is {v}, expected 0 or 1",
                            i + 1,
                            j + 1
                        )))
                    }
                }
            }
        }
        Ok(a)
    }

    /// Builds a graph from 0-based `(from, to)` pairs.
    pub fn from_edges(d: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut a = Self::empty(d);
        for &(i, j) in edges {
            if i >= d || j >= d {
                return Err(Error::InvalidArgument(format!(
                    "edge ({i}, {j}) out of range for {d} nodes"
                )));
            }
            if i == j {
                return Err(Error::InvalidArgument(format!("self-loop on node {i}")));
            }
            a.entries[i * d + j] = true;
        }
        Ok(a)
    }

    pub fn num_nodes(&self) -> usize {
        self.d
    }

    #[inline]
    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.entries[i * self.d + j]
    }

    /// Sets or clears `i -> j`.
    ///
    /// # Panics
    /// When `i == j`.
    pub fn set_edge(&mut self, i: usize, j: usize, present: bool) {
        assert_ne!(i, j, "adjacency matrices have no self-loops");
        self.entries[i * self.d + j] = present;
    }

    pub fn edge_count(&self) -> usize {
        self.entries.iter().filter(|&&e| e).count()
    }

    /// 0-based edges in row-major order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        positions(self.d).filter(|&(i, j)| self.has_edge(i, j))
    }

    pub fn parents(&self, j: usize) -> Vec<usize> {
        (0..self.d).filter(|&i| self.has_edge(i, j)).collect()
    }

    /// Parents of `j` as a bit set (bit `i` set iff `i -> j`). Requires `d <= 64`.
    pub fn parent_mask(&self, j: usize) -> u64 {
        (0..self.d)
            .filter(|&i| self.has_edge(i, j))
            .fold(0u64, |m, i| m | (1u64 << i))
    }

    pub fn linearize(&self) -> Vec<bool> {
        positions(self.d).map(|(i, j)| self.has_edge(i, j)).collect()
    }

    pub fn delinearize(d: usize, bits: &[bool]) -> Result<Self> {
        if bits.len() != num_positions(d) {
            return Err(Error::DimensionMismatch {
                expected: num_positions(d),
                got: bits.len(),
            });
        }
        let mut a = Self::empty(d);
        for ((i, j), &b) in positions(d).zip(bits) {
            a.entries[i * d + j] = b;
        }
        Ok(a)
    }

    /// # Panics
    /// When `d * (d - 1) > 64`.
    pub fn index(&self) -> GraphIndex {
        assert!(num_positions(self.d) <= 64, "graph too large to index");
        GraphIndex(
            self.linearize()
                .iter()
                .enumerate()
                .fold(0u64, |code, (t, &b)| code | ((b as u64) << t)),
        )
    }

    pub fn from_index(d: usize, index: GraphIndex) -> Self {
        let mut a = Self::empty(d);
        for (t, (i, j)) in positions(d).enumerate() {
            a.entries[i * d + j] = (index.0 >> t) & 1 == 1;
        }
        a
    }

    /// Every directed graph on `d` nodes, in index order.
    pub fn all(d: usize) -> impl Iterator<Item = AdjacencyMatrix> {
        (0..num_graphs(d)).map(move |c| Self::from_index(d, GraphIndex(c)))
    }

    pub fn to_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.d, self.d, |i, j| {
            if self.has_edge(i, j) {
                1.0
            } else {
                0.0
            }
        })
    }

    pub fn to_rows(&self) -> Vec<Vec<u8>> {
        (0..self.d)
            .map(|i| (0..self.d).map(|j| self.has_edge(i, j) as u8).collect())
            .collect()
    }

    /// The graph with every edge reversed.
    pub fn transpose(&self) -> Self {
        let mut t = Self::empty(self.d);
        for (i, j) in self.edges() {
            t.entries[j * self.d + i] = true;
        }
        t
    }

    /// Relabels nodes: node `i` becomes `perm[i]`.
    pub fn permute(&self, perm: &[usize]) -> Self {
        let mut p = Self::empty(self.d);
        for (i, j) in self.edges() {
            p.entries[perm[i] * self.d + perm[j]] = true;
        }
        p
    }

    /// Edge list text, one `"i j"` line per edge, 1-based.
    pub fn to_edge_list(&self) -> String {
        self.edges()
            .map(|(i, j)| format!("{} {}\n", i + 1, j + 1))
            .collect()
    }

    pub fn from_edge_list(d: usize, text: &str) -> Result<Self> {
        let mut edges = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let parse = |s: Option<&str>| -> Result<usize> {
                s.and_then(|s| s.parse::<usize>().ok())
                    .filter(|&v| v >= 1)
                    .ok_or_else(|| Error::Parse {
                        line: n + 1,
                        msg: format!("expected two 1-based node ids, got {line:?}"),
                    })
            };
            let mut it = line.split_whitespace();
            let (i, j) = (parse(it.next())?, parse(it.next())?);
            if it.next().is_some() {
                return Err(Error::Parse {
                    line: n + 1,
                    msg: "trailing tokens".into(),
                });
            }
            edges.push((i - 1, j - 1));
        }
        Self::from_edges(d, &edges)
    }
}

impl TryFrom<Vec<Vec<u8>>> for AdjacencyMatrix {
    type Error = Error;

    fn try_from(rows: Vec<Vec<u8>>) -> Result<Self> {
        Self::from_rows(&rows)
    }
}

impl From<AdjacencyMatrix> for Vec<Vec<u8>> {
    fn from(a: AdjacencyMatrix) -> Self {
        a.to_rows()
    }
}

impl fmt::Debug for AdjacencyMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let edges: Vec<String> = self
            .edges()
            .map(|(i, j)| format!("{}->{}", i + 1, j + 1))
            .collect();
        write!(f, "Graph(d={}, [{}])", self.d, edges.join(", "))
    }
}

/// Source elimination order, smallest available index first.
/// Returns the eliminated prefix, which covers every node iff the graph is acyclic.
fn eliminate_sources(a: &AdjacencyMatrix) -> Vec<usize> {
    let d = a.num_nodes();
    let mut indegree: Vec<usize> = (0..d).map(|j| a.parents(j).len()).collect();
    let mut removed = vec![false; d];
    let mut order = Vec::with_capacity(d);
    while let Some(v) = (0..d).find(|&v| !removed[v] && indegree[v] == 0) {
        removed[v] = true;
        order.push(v);
        for w in 0..d {
            if a.has_edge(v, w) {
                indegree[w] -= 1;
            }
        }
    }
    order
}

pub fn is_acyclic(a: &AdjacencyMatrix) -> bool {
    eliminate_sources(a).len() == a.num_nodes()
}

/// Node order in which every edge points forward. Ties go to the lowest index.
pub fn topological_order(a: &AdjacencyMatrix) -> Result<Vec<usize>> {
    let order = eliminate_sources(a);
    if order.len() == a.num_nodes() {
        Ok(order)
    } else {
        Err(Error::CyclicGraph)
    }
}

/// Matrix exponential by truncated Taylor series with scaling and squaring.
///
/// The input is scaled by `2^-s` until its 1-norm is at most 1/2, the series is
/// summed until the next term is below `1e-17` relative to the partial sum, and
/// the result is squared `s` times.
pub fn expm(m: &DMatrix<f64>) -> DMatrix<f64> {
    assert!(m.is_square(), "expm needs a square matrix");
    let n = m.nrows();
    let norm = (0..n)
        .map(|j| m.column(j).iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max);
    let mut squarings = 0u32;
    if norm > 0.5 {
        squarings = (norm / 0.5).log2().ceil() as u32;
    }
    let scaled = m / 2f64.powi(squarings as i32);

    let mut sum = DMatrix::<f64>::identity(n, n);
    let mut term = DMatrix::<f64>::identity(n, n);
    for k in 1..64 {
        term = &term * &scaled / k as f64;
        sum += &term;
        if term.abs().max() <= 1e-17 * sum.abs().max() {
            break;
        }
    }
    for _ in 0..squarings {
        sum = &sum * &sum;
    }
    sum
}

/// Trace-exponential acyclicity penalty `tr(exp(A)) - d`; zero exactly on DAGs.
pub fn dag_penalty(a: &AdjacencyMatrix) -> f64 {
    if a.edge_count() == 0 {
        return 0.0;
    }
    expm(&a.to_matrix()).trace() - a.num_nodes() as f64
}

/// Structural Hamming distance. Each unordered node pair whose edge state
/// differs counts once, so a reversed edge costs 1.
pub fn shd(a: &AdjacencyMatrix, b: &AdjacencyMatrix) -> Result<usize> {
    let d = a.num_nodes();
    if b.num_nodes() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: b.num_nodes(),
        });
    }
    let mut dist = 0;
    for i in 0..d {
        for j in (i + 1)..d {
            if (a.has_edge(i, j), a.has_edge(j, i)) != (b.has_edge(i, j), b.has_edge(j, i)) {
                dist += 1;
            }
        }
    }
    Ok(dist)
}

fn adjacent(a: &AdjacencyMatrix, i: usize, j: usize) -> bool {
    a.has_edge(i, j) || a.has_edge(j, i)
}

/// Unshielded colliders `(i, k, j)` with `i < j`, `i -> k <- j`, and `i`, `j` non-adjacent.
pub fn v_structures(a: &AdjacencyMatrix) -> Vec<(usize, usize, usize)> {
    let d = a.num_nodes();
    let mut out = Vec::new();
    for k in 0..d {
        let pa = a.parents(k);
        for (x, &i) in pa.iter().enumerate() {
            for &j in &pa[x + 1..] {
                if !adjacent(a, i, j) {
                    out.push((i, k, j));
                }
            }
        }
    }
    out
}

/// Same skeleton and same v-structures (the Markov equivalence criterion for DAGs).
pub fn markov_equivalent(a: &AdjacencyMatrix, b: &AdjacencyMatrix) -> bool {
    let d = a.num_nodes();
    if b.num_nodes() != d {
        return false;
    }
    for i in 0..d {
        for j in (i + 1)..d {
            if adjacent(a, i, j) != adjacent(b, i, j) {
                return false;
            }
        }
    }
    v_structures(a) == v_structures(b)
}

/// True when some single-edge reversal of the DAG gives a different, Markov
/// equivalent DAG, i.e. its equivalence class holds at least two graphs.
pub fn has_equivalent_reversal(a: &AdjacencyMatrix) -> bool {
    a.edges().any(|(i, j)| {
        let mut r = a.clone();
        r.set_edge(i, j, false);
        r.set_edge(j, i, true);
        is_acyclic(&r) && markov_equivalent(a, &r)
    })
}
