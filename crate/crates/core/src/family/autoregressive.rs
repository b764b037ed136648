//! Autoregressive Bernoulli model driven by a single-layer LSTM.
//!
//! Step `t` sees the previous bit as a one-hot token (`start`, `0`, `1`)
//! concatenated with a learned embedding of `t`, advances the cell, and emits
//! one logit for bit `t`.
//!
//! Flattened parameters, in order (matrices column-major):
//!
//! | block   | shape          |
//! |---------|----------------|
//! | `w_ih`  | `4H x (3 + E)` |
//! | `w_hh`  | `4H x H`       |
//! | `bias`  | `4H`           |
//! | `w_out` | `H`            |
//! | `b_out` | `1`            |
//! | `embed` | `E x S`        |
//!
//! Gate rows are ordered input, forget, cell, output. `S = d(d-1)`.
//! The logit is `b_out + w_out . h / sqrt(H)`; the scale keeps the logit's
//! sensitivity to `w_out` independent of `H`.
//! Sequences in a batch run in lockstep so each step is one matrix product.

use nalgebra::{DMatrix, DMatrixView, DVectorView};
use rand::Rng;

use super::{bernoulli_log_mass, sigmoid, ParamGradient};
use crate::error::{Error, Result};
use crate::graph::{num_positions, positions, AdjacencyMatrix};

pub const DEFAULT_HIDDEN_SIZE: usize = 48;
pub const DEFAULT_EMBED_SIZE: usize = 8;
const INIT_RANGE: f64 = 0.1;
const TOKENS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq)]
struct Layout {
    hidden: usize,
    embed: usize,
    steps: usize,
    w_ih: usize,
    w_hh: usize,
    bias: usize,
    w_out: usize,
    b_out: usize,
    emb: usize,
    len: usize,
}

impl Layout {
    fn new(d: usize, hidden: usize, embed: usize) -> Self {
        let steps = num_positions(d);
        let g = 4 * hidden;
        let w_ih = 0;
        let w_hh = w_ih + g * (TOKENS + embed);
        let bias = w_hh + g * hidden;
        let w_out = bias + g;
        let b_out = w_out + hidden;
        let emb = b_out + 1;
        let len = emb + embed * steps;
        Self {
            hidden,
            embed,
            steps,
            w_ih,
            w_hh,
            bias,
            w_out,
            b_out,
            emb,
            len,
        }
    }

    fn gates(&self) -> usize {
        4 * self.hidden
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AutoregressiveModel {
    d: usize,
    layout: Layout,
    params: Vec<f64>,
}

/// Activations of a batch run, kept for the backward pass. Per-step buffers
/// are column-major with one column per sequence.
pub(crate) struct Trace {
    n: usize,
    /// `[step][sample]`
    bits: Vec<Vec<bool>>,
    probs: Vec<Vec<f64>>,
    log_probs: Vec<f64>,
    /// Activated gates, `4H x N`.
    gates: Vec<Vec<f64>>,
    /// `H x N` each.
    cells: Vec<Vec<f64>>,
    tanh_cells: Vec<Vec<f64>>,
    hidden: Vec<Vec<f64>>,
}

impl AutoregressiveModel {
    /// All parameters zero: every conditional probability is 1/2.
    pub fn zeros(d: usize, hidden_size: usize, embed_size: usize) -> Self {
        let layout = Layout::new(d, hidden_size, embed_size);
        Self {
            d,
            layout,
            params: vec![0.0; layout.len],
        }
    }

    /// Weights uniform in `[-0.1, 0.1]`, output bias zero.
    pub fn init<R: Rng + ?Sized>(d: usize, hidden_size: usize, rng: &mut R) -> Result<Self> {
        if hidden_size == 0 {
            return Err(Error::InvalidArgument("hidden_size must be >= 1".into()));
        }
        if d < 2 {
            return Err(Error::InvalidArgument(format!("need at least 2 nodes, got {d}")));
        }
        let mut m = Self::zeros(d, hidden_size, DEFAULT_EMBED_SIZE);
        let b_out = m.layout.b_out;
        for (k, p) in m.params.iter_mut().enumerate() {
            if k != b_out {
                *p = rng.random_range(-INIT_RANGE..=INIT_RANGE);
            }
        }
        Ok(m)
    }

    pub fn from_params(d: usize, hidden_size: usize, embed_size: usize, params: Vec<f64>) -> Result<Self> {
        if hidden_size == 0 {
            return Err(Error::InvalidArgument("hidden_size must be >= 1".into()));
        }
        let layout = Layout::new(d, hidden_size, embed_size);
        if params.len() != layout.len {
            return Err(Error::DimensionMismatch {
                expected: layout.len,
                got: params.len(),
            });
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::InvalidArgument("non-finite parameter".into()));
        }
        Ok(Self { d, layout, params })
    }

    pub fn num_nodes(&self) -> usize {
        self.d
    }

    pub fn hidden_size(&self) -> usize {
        self.layout.hidden
    }

    pub fn embed_size(&self) -> usize {
        self.layout.embed
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// Output-head bias; shifts every logit.
    pub fn output_bias_mut(&mut self) -> &mut f64 {
        &mut self.params[self.layout.b_out]
    }

    fn block(&self, off: usize, rows: usize, cols: usize) -> DMatrixView<'_, f64> {
        DMatrixView::from_slice(&self.params[off..off + rows * cols], rows, cols)
    }

    fn vector(&self, off: usize, len: usize) -> DVectorView<'_, f64> {
        DVectorView::from_slice(&self.params[off..off + len], len)
    }

    fn w_input(&self) -> DMatrixView<'_, f64> {
        self.block(self.layout.w_ih, self.layout.gates(), TOKENS + self.layout.embed)
    }

    fn embedding(&self) -> DMatrixView<'_, f64> {
        self.block(self.layout.emb, self.layout.embed, self.layout.steps)
    }

    /// Per-step input contribution shared by all sequences:
    /// `W_e e_t + bias`, one column per step.
    fn step_inputs(&self) -> DMatrix<f64> {
        let l = &self.layout;
        let w_e = self.w_input().columns(TOKENS, l.embed).into_owned();
        let mut p = w_e * self.embedding();
        let bias = self.vector(l.bias, l.gates());
        for mut col in p.column_iter_mut() {
            col += &bias;
        }
        p
    }

    fn head_scale(&self) -> f64 {
        1.0 / (self.layout.hidden as f64).sqrt()
    }

    /// Runs `n` sequences in lockstep. `choose(step, sample, prob)` picks each bit.
    fn run<F>(&self, n: usize, mut choose: F, keep: bool) -> Trace
    where
        F: FnMut(usize, usize, f64) -> bool,
    {
        let l = self.layout;
        let h = l.hidden;
        let g4 = l.gates();
        let w_in = self.w_input();
        let w_hh = &self.params[l.w_hh..l.bias];
        let w_out = &self.params[l.w_out..l.b_out];
        let b_out = self.params[l.b_out];
        let scale = self.head_scale();
        let inputs = self.step_inputs();

        let mut trace = Trace {
            n,
            bits: Vec::with_capacity(l.steps),
            probs: Vec::with_capacity(l.steps),
            log_probs: vec![0.0; n],
            gates: Vec::new(),
            cells: Vec::new(),
            tanh_cells: Vec::new(),
            hidden: Vec::new(),
        };
        let mut hid = vec![0.0; h * n];
        let mut cell = vec![0.0; h * n];
        let mut tanh_c = vec![0.0; h * n];

        for t in 0..l.steps {
            let mut z = vec![0.0; g4 * n];
            if t > 0 {
                gemm(g4, h, n, w_hh, (1, g4), &hid, (1, h), 0.0, &mut z);
            }
            let step_in = inputs.column(t);
            for s in 0..n {
                let token = if t == 0 { 0 } else { 1 + trace.bits[t - 1][s] as usize };
                let tok = w_in.column(token);
                let zc = &mut z[s * g4..(s + 1) * g4];
                for r in 0..g4 {
                    zc[r] = zc[r] + step_in[r] + tok[r];
                }
                let cs = &mut cell[s * h..(s + 1) * h];
                let hs = &mut hid[s * h..(s + 1) * h];
                let ts = &mut tanh_c[s * h..(s + 1) * h];
                for r in 0..h {
                    let i = sigmoid(zc[r]);
                    let f = sigmoid(zc[h + r]);
                    let g = zc[2 * h + r].tanh();
                    let o = sigmoid(zc[3 * h + r]);
                    zc[r] = i;
                    zc[h + r] = f;
                    zc[2 * h + r] = g;
                    zc[3 * h + r] = o;
                    let c = f * cs[r] + i * g;
                    cs[r] = c;
                    ts[r] = c.tanh();
                    hs[r] = o * ts[r];
                }
            }
            let mut bits = Vec::with_capacity(n);
            let mut probs = Vec::with_capacity(n);
            for s in 0..n {
                let dot: f64 = hid[s * h..(s + 1) * h].iter().zip(w_out).map(|(x, w)| x * w).sum();
                let logit = b_out + scale * dot;
                let p = sigmoid(logit);
                let bit = choose(t, s, p);
                trace.log_probs[s] += bernoulli_log_mass(logit, bit);
                bits.push(bit);
                probs.push(p);
            }
            if keep {
                trace.gates.push(z);
                trace.cells.push(cell.clone());
                trace.tanh_cells.push(tanh_c.clone());
                trace.hidden.push(hid.clone());
            }
            trace.bits.push(bits);
            trace.probs.push(probs);
        }
        trace
    }

    fn check_graph(&self, a: &AdjacencyMatrix) {
        assert_eq!(a.num_nodes(), self.d, "graph size does not match model");
    }

    fn teacher(&self, graphs: &[AdjacencyMatrix]) -> Vec<Vec<bool>> {
        graphs
            .iter()
            .map(|g| {
                self.check_graph(g);
                g.linearize()
            })
            .collect()
    }

    pub fn log_prob(&self, a: &AdjacencyMatrix) -> f64 {
        self.log_prob_batch(std::slice::from_ref(a))[0]
    }

    pub fn log_prob_batch(&self, graphs: &[AdjacencyMatrix]) -> Vec<f64> {
        let seqs = self.teacher(graphs);
        self.run(graphs.len(), |t, s, _| seqs[s][t], false).log_probs
    }

    fn graphs_of(&self, trace: &Trace) -> Vec<(AdjacencyMatrix, f64)> {
        (0..trace.n)
            .map(|s| {
                let mut a = AdjacencyMatrix::empty(self.d);
                for (t, (i, j)) in positions(self.d).enumerate() {
                    if trace.bits[t][s] {
                        a.set_edge(i, j, true);
                    }
                }
                (a, trace.log_probs[s])
            })
            .collect()
    }

    /// Draws `count` graphs; uniforms are consumed step by step, sample by sample.
    pub fn sample_batch<R: Rng + ?Sized>(&self, count: usize, rng: &mut R) -> Vec<(AdjacencyMatrix, f64)> {
        let trace = self.run(count, |_, _, p| rng.random::<f64>() < p, false);
        self.graphs_of(&trace)
    }

    /// Like [`Self::sample_batch`], also returning the activations so the samples
    /// can be scored by [`Self::backward`] without a second forward pass.
    pub(crate) fn sample_traced<R: Rng + ?Sized>(&self, count: usize, rng: &mut R) -> (Vec<(AdjacencyMatrix, f64)>, Trace) {
        let trace = self.run(count, |_, _, p| rng.random::<f64>() < p, true);
        (self.graphs_of(&trace), trace)
    }

    /// `sum_k weights[k] * grad log q(graphs[k])` by backpropagation through time.
    pub fn weighted_score(&self, graphs: &[AdjacencyMatrix], weights: &[f64]) -> ParamGradient {
        assert_eq!(graphs.len(), weights.len());
        let seqs = self.teacher(graphs);
        let trace = self.run(graphs.len(), |t, s, _| seqs[s][t], true);
        self.backward(&trace, weights)
    }

    /// Reverse pass over a trace produced by this model with unchanged parameters.
    pub(crate) fn backward(&self, trace: &Trace, weights: &[f64]) -> ParamGradient {
        let l = self.layout;
        let n = trace.n;
        assert_eq!(n, weights.len());
        let mut grad = ParamGradient::zeros(l.len);
        if n == 0 || l.steps == 0 {
            return grad;
        }
        let h = l.hidden;
        let g4 = l.gates();
        let n_in = TOKENS + l.embed;
        let scale = self.head_scale();
        let w_hh = &self.params[l.w_hh..l.bias];
        let w_out = &self.params[l.w_out..l.b_out];
        let w_in = &self.params[l.w_ih..l.w_hh];
        let embedding = &self.params[l.emb..l.len];

        let g = grad.as_mut_slice();
        let (g_ih, rest) = g.split_at_mut(l.w_hh);
        let (g_hh, rest) = rest.split_at_mut(l.bias - l.w_hh);
        let (g_bias, rest) = rest.split_at_mut(l.w_out - l.bias);
        let (g_out, rest) = rest.split_at_mut(h);
        let (g_bout, g_emb) = rest.split_at_mut(1);

        let mut d_hid = vec![0.0; h * n];
        let mut d_cell = vec![0.0; h * n];
        let mut dz = vec![0.0; g4 * n];
        let zero_cell = vec![0.0; h * n];
        let mut col_sum = vec![0.0; g4];

        for t in (0..l.steps).rev() {
            let hid = &trace.hidden[t];
            let gates = &trace.gates[t];
            let tanh_c = &trace.tanh_cells[t];
            let prev_cell = if t == 0 { &zero_cell } else { &trace.cells[t - 1] };
            col_sum.iter_mut().for_each(|v| *v = 0.0);

            for s in 0..n {
                let d_logit = weights[s] * (trace.bits[t][s] as u8 as f64 - trace.probs[t][s]);
                g_bout[0] += d_logit;
                let hs = &hid[s * h..(s + 1) * h];
                let dh = &mut d_hid[s * h..(s + 1) * h];
                for r in 0..h {
                    g_out[r] += scale * hs[r] * d_logit;
                    dh[r] += scale * w_out[r] * d_logit;
                }
                let gs = &gates[s * g4..(s + 1) * g4];
                let ts = &tanh_c[s * h..(s + 1) * h];
                let ps = &prev_cell[s * h..(s + 1) * h];
                let dc_s = &mut d_cell[s * h..(s + 1) * h];
                let dzs = &mut dz[s * g4..(s + 1) * g4];
                for r in 0..h {
                    let (i, f, gg, o) = (gs[r], gs[h + r], gs[2 * h + r], gs[3 * h + r]);
                    let tc = ts[r];
                    let dc = dc_s[r] + dh[r] * o * (1.0 - tc * tc);
                    dzs[r] = dc * gg * i * (1.0 - i);
                    dzs[h + r] = dc * ps[r] * f * (1.0 - f);
                    dzs[2 * h + r] = dc * i * (1.0 - gg * gg);
                    dzs[3 * h + r] = dh[r] * tc * o * (1.0 - o);
                    dc_s[r] = dc * f;
                }
                let token = if t == 0 { 0 } else { 1 + trace.bits[t - 1][s] as usize };
                let g_tok = &mut g_ih[token * g4..(token + 1) * g4];
                for r in 0..g4 {
                    g_tok[r] += dzs[r];
                    col_sum[r] += dzs[r];
                }
            }

            for (b, c) in g_bias.iter_mut().zip(&col_sum) {
                *b += c;
            }
            let emb_t = &embedding[t * l.embed..(t + 1) * l.embed];
            for e in 0..l.embed {
                let col = TOKENS + e;
                let g_col = &mut g_ih[col * g4..(col + 1) * g4];
                let w_col = &w_in[col * g4..(col + 1) * g4];
                let mut acc = 0.0;
                for r in 0..g4 {
                    g_col[r] += col_sum[r] * emb_t[e];
                    acc += w_col[r] * col_sum[r];
                }
                g_emb[t * l.embed + e] += acc;
            }
            debug_assert_eq!(g_ih.len(), g4 * n_in);

            if t > 0 {
                // g_hh += dz * h_{t-1}^T;  d_hid = W_hh^T dz
                gemm(g4, n, h, &dz, (1, g4), &trace.hidden[t - 1], (h, 1), 1.0, g_hh);
                gemm(h, g4, n, w_hh, (g4, 1), &dz, (1, g4), 0.0, &mut d_hid);
            }
        }
        grad
    }
}

/// `c = a * b + beta * c` for an `m x k` by `k x n` product, with `c` stored
/// column-major and `a`, `b` described by (row, column) strides. One packed
/// kernel call: the summation order for an output entry does not depend on
/// `n`, so a sequence's result is the same whatever batch it shares.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    beta: f64,
    c: &mut [f64],
) {
    let extent = |rows: usize, cols: usize, rs: usize, cs: usize| {
        if rows == 0 || cols == 0 {
            0
        } else {
            (rows - 1) * rs + (cols - 1) * cs + 1
        }
    };
    assert!(a.len() >= extent(m, k, rsa, csa));
    assert!(b.len() >= extent(k, n, rsb, csb));
    assert!(c.len() >= m * n);
    // SAFETY: the asserts above keep every strided access inside the slices,
    // and `c` is a unique borrow so it cannot alias `a` or `b`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            1,
            m as isize,
        );
    }
}
