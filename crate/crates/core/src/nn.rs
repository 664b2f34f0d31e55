//! Dense numerics for the GCN, the weight-evolving matrix GRU, softmax
//! cross-entropy and plain gradient descent.
//!
//! Every differentiable op has a `*_forward` returning a cache and a
//! matching `*_backward`. The composite models in [`crate::history`] and
//! [`current`] chain them by hand.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{CccError, Result};
use crate::graph::GraphSnapshot;
use crate::matrix::{CsrMatrix, Matrix};

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

#[inline]
fn relu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        0.0
    }
}

/// Symmetric normalization `D^-1/2 (A + I) D^-1/2` over `n` nodes joined by
/// the given undirected index pairs.
pub fn normalize_adjacency_pairs(n: usize, pairs: impl IntoIterator<Item = (usize, usize)>) -> CsrMatrix {
    let mut rows: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
    for (a, b) in pairs {
        if a != b {
            rows[a].push(b);
            rows[b].push(a);
        }
    }
    for r in &mut rows {
        r.sort_unstable();
        r.dedup();
    }
    let deg: Vec<f64> = rows.iter().map(|r| r.len() as f64).collect();
    CsrMatrix::from_rows(
        rows.iter()
            .enumerate()
            .map(|(i, r)| r.iter().map(|&j| (j, 1.0 / libm::sqrt(deg[i] * deg[j]))).collect())
            .collect(),
    )
}

pub fn normalize_adjacency(g: &GraphSnapshot) -> CsrMatrix {
    let pairs = g
        .edges()
        .iter()
        .map(|&(a, b)| (g.index_of(a).unwrap(), g.index_of(b).unwrap()));
    normalize_adjacency_pairs(g.len(), pairs)
}

/// Cache of one GCN layer `relu((A X) W)`.
#[derive(Debug, Clone)]
pub struct GcnLayerCache {
    /// `A X`
    pub propagated: Matrix,
    /// `(A X) W` before the ReLU.
    pub pre: Matrix,
    pub out: Matrix,
}

pub fn gcn_layer_forward(adj: &CsrMatrix, x: &Matrix, w: &Matrix) -> Result<GcnLayerCache> {
    let propagated = adj.matmul(x)?;
    let pre = propagated.matmul(w)?;
    let out = pre.map(relu);
    Ok(GcnLayerCache { propagated, pre, out })
}

/// Returns `(dW, dX)` given the gradient w.r.t. the layer output. `adj` must
/// be symmetric.
pub fn gcn_layer_backward(
    adj: &CsrMatrix,
    w: &Matrix,
    cache: &GcnLayerCache,
    d_out: &Matrix,
) -> Result<(Matrix, Matrix)> {
    // ReLU subgradient at exactly 0 is 0
    let d_pre = cache.pre.zip_map(d_out, "relu_backward", |z, g| if z > 0.0 { g } else { 0.0 })?;
    let d_w = cache.propagated.t_matmul(&d_pre)?;
    let d_x = adj.matmul(&d_pre.matmul_t(w)?)?;
    Ok((d_w, d_x))
}

/// Stacked GCN: `relu(A relu(A X W1) W2)` for two layers.
pub fn gcn_forward(adj: &CsrMatrix, x: &Matrix, weights: &[Matrix]) -> Result<Matrix> {
    let mut h = x.clone();
    for w in weights {
        h = gcn_layer_forward(adj, &h, w)?.out;
    }
    h.ensure_finite("gcn_forward")?;
    Ok(h)
}

/// Gate parameters of the matrix GRU evolving an `r x c` weight matrix.
/// `u_*` act on the previous weights, `v_*` on the input summary.
#[derive(Debug, Clone, PartialEq)]
pub struct GruParams {
    pub u_z: Matrix,
    pub v_z: Matrix,
    pub b_z: Matrix,
    pub u_r: Matrix,
    pub v_r: Matrix,
    pub b_r: Matrix,
    pub u_h: Matrix,
    pub v_h: Matrix,
    pub b_h: Matrix,
}

pub const GRU_PARAM_NAMES: [&str; 9] = ["u_z", "v_z", "b_z", "u_r", "v_r", "b_r", "u_h", "v_h", "b_h"];

impl GruParams {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        let sq = || Matrix::zeros(rows, rows);
        let b = || Matrix::zeros(rows, cols);
        Self {
            u_z: sq(),
            v_z: sq(),
            b_z: b(),
            u_r: sq(),
            v_r: sq(),
            b_r: b(),
            u_h: sq(),
            v_h: sq(),
            b_h: b(),
        }
    }

    pub fn init(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut p = Self::zeros(rows, cols);
        for m in [&mut p.u_z, &mut p.v_z, &mut p.u_r, &mut p.v_r, &mut p.u_h, &mut p.v_h] {
            *m = glorot(rows, rows, rng);
        }
        p
    }

    /// Shape of the evolved weight matrix.
    pub fn state_shape(&self) -> (usize, usize) {
        self.b_z.shape()
    }

    pub fn parts(&self) -> [&Matrix; 9] {
        [
            &self.u_z, &self.v_z, &self.b_z, &self.u_r, &self.v_r, &self.b_r, &self.u_h, &self.v_h, &self.b_h,
        ]
    }

    pub fn parts_mut(&mut self) -> [&mut Matrix; 9] {
        [
            &mut self.u_z,
            &mut self.v_z,
            &mut self.b_z,
            &mut self.u_r,
            &mut self.v_r,
            &mut self.b_r,
            &mut self.u_h,
            &mut self.v_h,
            &mut self.b_h,
        ]
    }
}

#[derive(Debug, Clone)]
pub struct GruCache {
    pub w_prev: Matrix,
    pub input: Matrix,
    pub z: Matrix,
    pub r: Matrix,
    pub candidate: Matrix,
    pub out: Matrix,
}

/// Gradients of one matrix GRU step.
#[derive(Debug, Clone)]
pub struct GruGrads {
    pub params: GruParams,
    pub d_w_prev: Matrix,
    pub d_input: Matrix,
}

fn gate(u: &Matrix, a: &Matrix, v: &Matrix, inp: &Matrix, b: &Matrix) -> Result<Matrix> {
    let mut acc = u.matmul(a)?;
    acc.add_assign(&v.matmul(inp)?)?;
    acc.add_assign(b)?;
    Ok(acc)
}

pub fn matrix_gru_forward(w_prev: &Matrix, input: &Matrix, p: &GruParams) -> Result<GruCache> {
    let shape = p.state_shape();
    for (m, op) in [(w_prev, "gru w_prev"), (input, "gru input")] {
        if m.shape() != shape {
            return Err(CccError::Shape {
                op,
                expected: shape,
                found: m.shape(),
            });
        }
    }
    let z = gate(&p.u_z, w_prev, &p.v_z, input, &p.b_z)?.map(sigmoid);
    let r = gate(&p.u_r, w_prev, &p.v_r, input, &p.b_r)?.map(sigmoid);
    let gated = r.hadamard(w_prev)?;
    let candidate = gate(&p.u_h, &gated, &p.v_h, input, &p.b_h)?.map(libm::tanh);
    let out = Matrix::from_fn(shape.0, shape.1, |i, j| {
        let zi = z[(i, j)];
        (1.0 - zi) * w_prev[(i, j)] + zi * candidate[(i, j)]
    });
    Ok(GruCache {
        w_prev: w_prev.clone(),
        input: input.clone(),
        z,
        r,
        candidate,
        out,
    })
}

/// `W_next = (1 - Z) * W_prev + Z * tanh(U_h (R * W_prev) + V_h Inp + B_h)`
/// with `Z`, `R` the usual sigmoid gates.
pub fn matrix_gru_step(w_prev: &Matrix, input: &Matrix, p: &GruParams) -> Result<Matrix> {
    Ok(matrix_gru_forward(w_prev, input, p)?.out)
}

pub fn matrix_gru_backward(p: &GruParams, c: &GruCache, d_out: &Matrix) -> Result<GruGrads> {
    let (rows, cols) = p.state_shape();
    let d_z = Matrix::from_fn(rows, cols, |i, j| d_out[(i, j)] * (c.candidate[(i, j)] - c.w_prev[(i, j)]));
    let d_cand = d_out.hadamard(&c.z)?;
    let mut d_w_prev = Matrix::from_fn(rows, cols, |i, j| d_out[(i, j)] * (1.0 - c.z[(i, j)]));

    let d_ah = Matrix::from_fn(rows, cols, |i, j| {
        let h = c.candidate[(i, j)];
        d_cand[(i, j)] * (1.0 - h * h)
    });
    let gated = c.r.hadamard(&c.w_prev)?;
    let d_u_h = d_ah.matmul_t(&gated)?;
    let d_v_h = d_ah.matmul_t(&c.input)?;
    let d_gated = p.u_h.t_matmul(&d_ah)?;
    let d_r = d_gated.hadamard(&c.w_prev)?;
    d_w_prev.add_assign(&d_gated.hadamard(&c.r)?)?;

    let d_ar = Matrix::from_fn(rows, cols, |i, j| {
        let r = c.r[(i, j)];
        d_r[(i, j)] * r * (1.0 - r)
    });
    let d_az = Matrix::from_fn(rows, cols, |i, j| {
        let z = c.z[(i, j)];
        d_z[(i, j)] * z * (1.0 - z)
    });

    d_w_prev.add_assign(&p.u_r.t_matmul(&d_ar)?)?;
    d_w_prev.add_assign(&p.u_z.t_matmul(&d_az)?)?;
    let mut d_input = p.v_h.t_matmul(&d_ah)?;
    d_input.add_assign(&p.v_r.t_matmul(&d_ar)?)?;
    d_input.add_assign(&p.v_z.t_matmul(&d_az)?)?;

    Ok(GruGrads {
        params: GruParams {
            u_z: d_az.matmul_t(&c.w_prev)?,
            v_z: d_az.matmul_t(&c.input)?,
            b_z: d_az,
            u_r: d_ar.matmul_t(&c.w_prev)?,
            v_r: d_ar.matmul_t(&c.input)?,
            b_r: d_ar,
            u_h: d_u_h,
            v_h: d_v_h,
            b_h: d_ah,
        },
        d_w_prev,
        d_input,
    })
}

/// Input summary for the matrix GRU: the row-mean of the embeddings
/// entering a layer, repeated across every column of the `d_in x d_out`
/// weight shape (so row `i` of the summary describes input feature `i`).
pub fn feature_summary_phi(embeddings: &Matrix, target_shape: (usize, usize)) -> Result<Matrix> {
    if embeddings.rows() == 0 {
        return Err(CccError::Empty("feature summary over zero nodes"));
    }
    if embeddings.cols() != target_shape.0 {
        return Err(CccError::Shape {
            op: "feature_summary_phi",
            expected: (embeddings.rows(), target_shape.0),
            found: embeddings.shape(),
        });
    }
    let mean = embeddings.column_mean();
    Ok(Matrix::from_fn(target_shape.0, target_shape.1, |i, _| mean[i]))
}

/// Gradient of [`feature_summary_phi`] w.r.t. the embeddings.
pub fn feature_summary_phi_backward(n_rows: usize, d_summary: &Matrix) -> Matrix {
    let per_feature: Vec<f64> = (0..d_summary.rows())
        .map(|i| d_summary.row(i).iter().sum::<f64>() / n_rows as f64)
        .collect();
    Matrix::from_fn(n_rows, d_summary.rows(), |_, i| per_feature[i])
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows(logits: &Matrix) -> Matrix {
    let mut out = logits.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let max = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = libm::exp(*v - max);
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    out
}

/// Mean cross-entropy over rows with a target and its gradient w.r.t. the
/// logits (zero on rows without a target).
pub fn softmax_xent(logits: &Matrix, targets: &[Option<usize>]) -> Result<(f64, Matrix)> {
    if targets.len() != logits.rows() {
        return Err(CccError::Shape {
            op: "softmax_xent",
            expected: (logits.rows(), 1),
            found: (targets.len(), 1),
        });
    }
    let classes = logits.cols();
    let count = targets.iter().flatten().count();
    if count == 0 {
        return Err(CccError::NoSupervisedNodes);
    }
    let n = count as f64;
    let mut loss = 0.0;
    let mut grad = Matrix::zeros(logits.rows(), classes);
    for (r, t) in targets.iter().enumerate() {
        let Some(y) = *t else { continue };
        if y >= classes {
            return Err(CccError::InvalidLabel { label: y, classes });
        }
        let row = logits.row(r);
        let max = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        let sum: f64 = row.iter().map(|&v| libm::exp(v - max)).sum();
        let log_z = max + libm::log(sum);
        loss += log_z - row[y];
        let g = grad.row_mut(r);
        for (c, gv) in g.iter_mut().enumerate() {
            *gv = libm::exp(row[c] - log_z) / n;
        }
        g[y] -= 1.0 / n;
    }
    let loss = loss / n;
    if !loss.is_finite() {
        return Err(CccError::NonFinite("softmax_xent"));
    }
    Ok((loss, grad))
}

/// Glorot-uniform matrix: `U(-a, a)` with `a = sqrt(6 / (fan_in + fan_out))`.
pub fn glorot(fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng) -> Matrix {
    let a = libm::sqrt(6.0 / (fan_in + fan_out) as f64);
    Matrix::from_fn(fan_in, fan_out, |_, _| rng.random_range(-a..a))
}

/// Layer widths of a two-layer GCN with a linear head.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelDims {
    pub input: usize,
    pub hidden: usize,
    pub classes: usize,
    /// Extra classifier inputs appended after the GCN output.
    pub extra: usize,
    /// Whether the GCN weights are evolved by a matrix GRU.
    pub evolving: bool,
}

/// Model parameters: GCN weights, optional GRU gates (one set per layer)
/// and the classifier head.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    pub gcn_weights: Vec<Matrix>,
    pub gru: Vec<GruParams>,
    pub classifier_weight: Matrix,
    pub classifier_bias: Matrix,
}

impl ModelState {
    pub fn init(dims: ModelDims, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let shapes = [(dims.input, dims.hidden), (dims.hidden, dims.hidden)];
        let gcn_weights = shapes.iter().map(|&(i, o)| glorot(i, o, &mut rng)).collect();
        let gru = if dims.evolving {
            shapes.iter().map(|&(i, o)| GruParams::init(i, o, &mut rng)).collect()
        } else {
            Vec::new()
        };
        let width = dims.hidden + dims.extra;
        Self {
            gcn_weights,
            gru,
            classifier_weight: glorot(width, dims.classes, &mut rng),
            classifier_bias: Matrix::zeros(1, dims.classes),
        }
    }

    /// Same structure, all zeros. Used as a gradient accumulator.
    pub fn zeros_like(&self) -> Self {
        let z = |m: &Matrix| Matrix::zeros(m.rows(), m.cols());
        Self {
            gcn_weights: self.gcn_weights.iter().map(z).collect(),
            gru: self
                .gru
                .iter()
                .map(|g| {
                    let (r, c) = g.state_shape();
                    GruParams::zeros(r, c)
                })
                .collect(),
            classifier_weight: z(&self.classifier_weight),
            classifier_bias: z(&self.classifier_bias),
        }
    }

    pub fn classes(&self) -> usize {
        self.classifier_weight.cols()
    }

    /// Parameters in a fixed order with stable names.
    pub fn named_params(&self) -> Vec<(String, &Matrix)> {
        let mut out = Vec::new();
        for (l, w) in self.gcn_weights.iter().enumerate() {
            out.push((format!("gcn.{l}"), w));
        }
        for (l, g) in self.gru.iter().enumerate() {
            for (name, m) in GRU_PARAM_NAMES.iter().zip(g.parts()) {
                out.push((format!("gru.{l}.{name}"), m));
            }
        }
        out.push((String::from("classifier.weight"), &self.classifier_weight));
        out.push((String::from("classifier.bias"), &self.classifier_bias));
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Matrix> {
        let mut out: Vec<&mut Matrix> = self.gcn_weights.iter_mut().collect();
        for g in &mut self.gru {
            out.extend(g.parts_mut());
        }
        out.push(&mut self.classifier_weight);
        out.push(&mut self.classifier_bias);
        out
    }

    pub fn is_finite(&self) -> bool {
        self.named_params().iter().all(|(_, m)| m.is_finite())
    }

    /// Rebuilds a state from named matrices in [`Self::named_params`] order
    /// with the same structure as `template`.
    pub fn with_values(template: &ModelState, mut values: impl FnMut(&str) -> Option<Matrix>) -> Result<Self> {
        let mut out = template.clone();
        let names: Vec<String> = template.named_params().into_iter().map(|(n, _)| n).collect();
        for (name, slot) in names.iter().zip(out.params_mut()) {
            let m = values(name).ok_or(CccError::Empty("checkpoint parameter"))?;
            if m.shape() != slot.shape() {
                return Err(CccError::Shape {
                    op: "checkpoint",
                    expected: slot.shape(),
                    found: m.shape(),
                });
            }
            *slot = m;
        }
        Ok(out)
    }
}

/// Plain gradient descent: `p <- p - lr * g` for every parameter.
pub fn sgd_step(state: &ModelState, grads: &ModelState, lr: f64) -> Result<ModelState> {
    if lr.is_nan() || lr <= 0.0 {
        return Err(CccError::config("lr", "must be positive"));
    }
    let mut next = state.clone();
    let mut g = grads.clone();
    for (p, d) in next.params_mut().into_iter().zip(g.params_mut()) {
        p.axpy_neg(lr, d)?;
    }
    if !next.is_finite() {
        return Err(CccError::NonFinite("sgd_step"));
    }
    Ok(next)
}

/// Linear head `X W + b`.
pub fn linear_forward(x: &Matrix, w: &Matrix, b: &Matrix) -> Result<Matrix> {
    let mut out = x.matmul(w)?;
    for r in 0..out.rows() {
        for (o, &bv) in out.row_mut(r).iter_mut().zip(b.row(0)) {
            *o += bv;
        }
    }
    Ok(out)
}

/// Returns `(dW, db, dX)`.
pub fn linear_backward(x: &Matrix, w: &Matrix, d_out: &Matrix) -> Result<(Matrix, Matrix, Matrix)> {
    let d_w = x.t_matmul(d_out)?;
    let d_b = Matrix::from_vec(1, d_out.cols(), d_out.column_sum())?;
    let d_x = d_out.matmul_t(w)?;
    Ok((d_w, d_b, d_x))
}

/// The per-task model: a static two-layer GCN whose output is concatenated
/// with a fixed block (historical embeddings or zeros) before the linear
/// head.
pub mod current {
    use super::*;

    /// Graph inputs reused for every epoch of one task.
    #[derive(Debug, Clone)]
    pub struct TaskInputs {
        pub adj: CsrMatrix,
        pub features: Matrix,
        /// Fixed right-hand block of the classifier input.
        pub block: Matrix,
    }

    #[derive(Debug, Clone)]
    pub struct Forward {
        pub layers: Vec<GcnLayerCache>,
        pub combined: Matrix,
        pub logits: Matrix,
    }

    impl Forward {
        pub fn hidden(&self) -> &Matrix {
            &self.layers.last().expect("at least one layer").out
        }
    }

    pub fn forward(state: &ModelState, inputs: &TaskInputs) -> Result<Forward> {
        let mut layers = Vec::with_capacity(state.gcn_weights.len());
        let mut h = inputs.features.clone();
        for w in &state.gcn_weights {
            let cache = gcn_layer_forward(&inputs.adj, &h, w)?;
            h = cache.out.clone();
            layers.push(cache);
        }
        let combined = h.hconcat(&inputs.block)?;
        let logits = linear_forward(&combined, &state.classifier_weight, &state.classifier_bias)?;
        logits.ensure_finite("current forward")?;
        Ok(Forward {
            layers,
            combined,
            logits,
        })
    }

    /// Gradients of the loss with respect to every parameter given the
    /// gradient on the logits.
    pub fn backward(state: &ModelState, inputs: &TaskInputs, fwd: &Forward, d_logits: &Matrix) -> Result<ModelState> {
        let mut grads = state.zeros_like();
        let (d_w, d_b, d_comb) = linear_backward(&fwd.combined, &state.classifier_weight, d_logits)?;
        grads.classifier_weight = d_w;
        grads.classifier_bias = d_b;
        let hidden = fwd.hidden().cols();
        let mut d_h = d_comb.columns(0, hidden);
        for l in (0..state.gcn_weights.len()).rev() {
            let (d_w, d_x) = gcn_layer_backward(&inputs.adj, &state.gcn_weights[l], &fwd.layers[l], &d_h)?;
            grads.gcn_weights[l] = d_w;
            d_h = d_x;
        }
        Ok(grads)
    }

    pub fn loss_and_grads(
        state: &ModelState,
        inputs: &TaskInputs,
        targets: &[Option<usize>],
    ) -> Result<(f64, ModelState)> {
        let fwd = forward(state, inputs)?;
        let (loss, d_logits) = softmax_xent(&fwd.logits, targets)?;
        Ok((loss, backward(state, inputs, &fwd, &d_logits)?))
    }
}
