//! Central finite-difference checks of every hand-written backward pass.
//!
//! Each check draws small seeded random instances, contracts the op output
//! with a random upstream gradient to get a scalar, and compares analytic
//! gradients against `(f(p + h) - f(p - h)) / 2h` entry by entry. Instances
//! with a ReLU pre-activation too close to zero are redrawn, since the
//! difference quotient is meaningless across a kink.

use alloc::string::String;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::history::{step_backward, step_forward, CondensedInputs};
use crate::matrix::{CsrMatrix, Matrix};
use crate::nn::{
    current, feature_summary_phi, feature_summary_phi_backward, gcn_layer_backward, gcn_layer_forward,
    linear_backward, linear_forward, matrix_gru_backward, matrix_gru_forward, normalize_adjacency_pairs,
    softmax_xent, GruParams, ModelDims, ModelState,
};

pub const STEP: f64 = 1e-4;
pub const TOLERANCE: f64 = 1e-4;
/// Magnitude floor in the relative-error denominator.
pub const FLOOR: f64 = 1e-4;
/// Minimum distance of any ReLU pre-activation from zero.
const KINK_MARGIN: f64 = 1e-2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpCheck {
    pub op: String,
    pub instances: usize,
    pub redrawn: usize,
    pub entries: usize,
    pub max_rel_error: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub seed: u64,
    pub step: f64,
    pub tolerance: f64,
    pub ops: Vec<OpCheck>,
    pub passed: bool,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FLOOR)
}

/// Central differences of `f` at every entry of `point`.
pub fn numeric_gradient(point: &Matrix, mut f: impl FnMut(&Matrix) -> f64) -> Matrix {
    let mut probe = point.clone();
    let mut out = Matrix::zeros(point.rows(), point.cols());
    for k in 0..point.as_slice().len() {
        let orig = point.as_slice()[k];
        probe.as_mut_slice()[k] = orig + STEP;
        let up = f(&probe);
        probe.as_mut_slice()[k] = orig - STEP;
        let down = f(&probe);
        probe.as_mut_slice()[k] = orig;
        out.as_mut_slice()[k] = (up - down) / (2.0 * STEP);
    }
    out
}

fn max_error(analytic: &Matrix, numeric: &Matrix) -> f64 {
    analytic
        .as_slice()
        .iter()
        .zip(numeric.as_slice())
        .map(|(&a, &n)| relative_error(a, n))
        .fold(0.0, f64::max)
}

fn uniform(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.random_range(-scale..scale))
}

fn random_adjacency(rng: &mut ChaCha8Rng, n: usize) -> CsrMatrix {
    let mut pairs = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if rng.random::<f64>() < 0.5 {
                pairs.push((i, j));
            }
        }
    }
    normalize_adjacency_pairs(n, pairs)
}

fn contract(out: &Matrix, upstream: &Matrix) -> f64 {
    out.as_slice().iter().zip(upstream.as_slice()).map(|(a, b)| a * b).sum()
}

fn near_kink(pre: &Matrix) -> bool {
    pre.as_slice().iter().any(|v| v.abs() < KINK_MARGIN)
}

fn inject(mut m: Matrix, fault: Option<f64>) -> Matrix {
    if let (Some(delta), Some(first)) = (fault, m.as_mut_slice().first_mut()) {
        *first += delta;
    }
    m
}

struct Tally {
    op: &'static str,
    instances: usize,
    redrawn: usize,
    entries: usize,
    max_rel_error: f64,
}

impl Tally {
    fn new(op: &'static str) -> Self {
        Self {
            op,
            instances: 0,
            redrawn: 0,
            entries: 0,
            max_rel_error: 0.0,
        }
    }

    fn record(&mut self, analytic: &Matrix, numeric: &Matrix) {
        self.entries += analytic.as_slice().len();
        self.max_rel_error = self.max_rel_error.max(max_error(analytic, numeric));
    }

    fn finish(self) -> OpCheck {
        OpCheck {
            op: String::from(self.op),
            instances: self.instances,
            redrawn: self.redrawn,
            entries: self.entries,
            max_rel_error: self.max_rel_error,
            passed: self.max_rel_error <= TOLERANCE,
        }
    }
}

fn check_gcn_layer(rng: &mut ChaCha8Rng, instances: usize, fault: Option<f64>) -> Result<OpCheck> {
    let mut t = Tally::new("gcn_layer");
    while t.instances < instances {
        let adj = random_adjacency(rng, 5);
        let x = uniform(rng, 5, 3, 1.0);
        let w = uniform(rng, 3, 4, 1.0);
        let g = uniform(rng, 5, 4, 1.0);
        let cache = gcn_layer_forward(&adj, &x, &w)?;
        if near_kink(&cache.pre) {
            t.redrawn += 1;
            continue;
        }
        let (d_w, d_x) = gcn_layer_backward(&adj, &w, &cache, &g)?;
        let loss = |x: &Matrix, w: &Matrix| contract(&gcn_layer_forward(&adj, x, w).unwrap().out, &g);
        t.record(&inject(d_w, fault), &numeric_gradient(&w, |p| loss(&x, p)));
        t.record(&d_x, &numeric_gradient(&x, |p| loss(p, &w)));
        t.instances += 1;
    }
    Ok(t.finish())
}

fn random_gru(rng: &mut ChaCha8Rng, r: usize, c: usize) -> GruParams {
    let mut p = GruParams::zeros(r, c);
    for m in p.parts_mut() {
        *m = uniform(rng, m.rows(), m.cols(), 0.8);
    }
    p
}

fn check_gru(rng: &mut ChaCha8Rng, instances: usize, fault: Option<f64>) -> Result<OpCheck> {
    let mut t = Tally::new("matrix_gru_step");
    while t.instances < instances {
        let (r, c) = (3, 4);
        let p = random_gru(rng, r, c);
        let w_prev = uniform(rng, r, c, 1.0);
        let inp = uniform(rng, r, c, 1.0);
        let g = uniform(rng, r, c, 1.0);
        let cache = matrix_gru_forward(&w_prev, &inp, &p)?;
        let grads = matrix_gru_backward(&p, &cache, &g)?;
        let loss = |w: &Matrix, i: &Matrix, p: &GruParams| contract(&matrix_gru_forward(w, i, p).unwrap().out, &g);
        for (k, analytic) in grads.params.parts().into_iter().enumerate() {
            let numeric = numeric_gradient(p.parts()[k], |m| {
                let mut q = p.clone();
                *q.parts_mut()[k] = m.clone();
                loss(&w_prev, &inp, &q)
            });
            let analytic = if k == 0 { inject(analytic.clone(), fault) } else { analytic.clone() };
            t.record(&analytic, &numeric);
        }
        t.record(&grads.d_w_prev, &numeric_gradient(&w_prev, |m| loss(m, &inp, &p)));
        t.record(&grads.d_input, &numeric_gradient(&inp, |m| loss(&w_prev, m, &p)));
        t.instances += 1;
    }
    Ok(t.finish())
}

fn check_phi(rng: &mut ChaCha8Rng, instances: usize, fault: Option<f64>) -> Result<OpCheck> {
    let mut t = Tally::new("feature_summary_phi");
    while t.instances < instances {
        let e = uniform(rng, 4, 3, 1.0);
        let g = uniform(rng, 3, 5, 1.0);
        let analytic = inject(feature_summary_phi_backward(4, &g), fault);
        let numeric = numeric_gradient(&e, |m| contract(&feature_summary_phi(m, (3, 5)).unwrap(), &g));
        t.record(&analytic, &numeric);
        t.instances += 1;
    }
    Ok(t.finish())
}

fn check_xent(rng: &mut ChaCha8Rng, instances: usize, fault: Option<f64>) -> Result<OpCheck> {
    let mut t = Tally::new("softmax_xent");
    while t.instances < instances {
        let logits = uniform(rng, 3, 4, 3.0);
        let targets: Vec<Option<usize>> = (0..3)
            .map(|_| rng.random_bool(0.8).then(|| rng.random_range(0..4)))
            .collect();
        if targets.iter().all(Option::is_none) {
            t.redrawn += 1;
            continue;
        }
        let (_, grad) = softmax_xent(&logits, &targets)?;
        let numeric = numeric_gradient(&logits, |m| softmax_xent(m, &targets).unwrap().0);
        t.record(&inject(grad, fault), &numeric);
        t.instances += 1;
    }
    Ok(t.finish())
}

fn check_linear(rng: &mut ChaCha8Rng, instances: usize, fault: Option<f64>) -> Result<OpCheck> {
    let mut t = Tally::new("linear");
    while t.instances < instances {
        let x = uniform(rng, 4, 3, 1.0);
        let w = uniform(rng, 3, 2, 1.0);
        let b = uniform(rng, 1, 2, 1.0);
        let g = uniform(rng, 4, 2, 1.0);
        let (d_w, d_b, d_x) = linear_backward(&x, &w, &g)?;
        let f = |x: &Matrix, w: &Matrix, b: &Matrix| contract(&linear_forward(x, w, b).unwrap(), &g);
        t.record(&inject(d_w, fault), &numeric_gradient(&w, |m| f(&x, m, &b)));
        t.record(&d_b, &numeric_gradient(&b, |m| f(&x, &w, m)));
        t.record(&d_x, &numeric_gradient(&x, |m| f(m, &w, &b)));
        t.instances += 1;
    }
    Ok(t.finish())
}

/// Checks every parameter of `state` against `loss`, given analytic
/// gradients with the same layout.
fn check_all_params(
    t: &mut Tally,
    state: &ModelState,
    grads: &ModelState,
    fault: Option<f64>,
    loss: impl Fn(&ModelState) -> f64,
) {
    let mut grads = grads.clone();
    let analytic: Vec<Matrix> = grads.params_mut().into_iter().map(|m| m.clone()).collect();
    let mut probe = state.clone();
    for (k, a) in analytic.into_iter().enumerate() {
        let point = probe.params_mut()[k].clone();
        let numeric = numeric_gradient(&point, |m| {
            let mut s = state.clone();
            *s.params_mut()[k] = m.clone();
            loss(&s)
        });
        let a = if k == 0 { inject(a, fault) } else { a };
        t.record(&a, &numeric);
    }
    let _ = probe.params_mut();
}

fn check_history_model(rng: &mut ChaCha8Rng, instances: usize, fault: Option<f64>) -> Result<OpCheck> {
    let mut t = Tally::new("history_model");
    while t.instances < instances {
        let n = 5;
        let dims = ModelDims {
            input: 3,
            hidden: 4,
            classes: 3,
            extra: 0,
            evolving: true,
        };
        let mut state = ModelState::init(dims, rng.random());
        for g in &mut state.gru {
            let (r, c) = g.state_shape();
            *g = random_gru(rng, r, c);
        }
        let w_prev: Vec<Matrix> = state.gcn_weights.iter().map(|w| uniform(rng, w.rows(), w.cols(), 1.0)).collect();
        let inputs = CondensedInputs {
            adj: random_adjacency(rng, n),
            features: uniform(rng, n, 3, 1.0),
            targets: (0..n).map(|_| Some(rng.random_range(0..3))).collect(),
        };
        let fwd = step_forward(&state, &w_prev, &inputs)?;
        if fwd.layers.iter().any(|l| near_kink(&l.pre)) {
            t.redrawn += 1;
            continue;
        }
        let (_, d_logits) = softmax_xent(&fwd.logits, &inputs.targets)?;
        let grads = step_backward(&state, &inputs, &fwd, &d_logits)?;
        let loss = |s: &ModelState| {
            let f = step_forward(s, &w_prev, &inputs).unwrap();
            softmax_xent(&f.logits, &inputs.targets).unwrap().0
        };
        check_all_params(&mut t, &state, &grads, fault, loss);
        t.instances += 1;
    }
    Ok(t.finish())
}

fn check_current_model(rng: &mut ChaCha8Rng, instances: usize, fault: Option<f64>) -> Result<OpCheck> {
    let mut t = Tally::new("current_model");
    while t.instances < instances {
        let n = 5;
        let dims = ModelDims {
            input: 3,
            hidden: 4,
            classes: 3,
            extra: 2,
            evolving: false,
        };
        let mut state = ModelState::init(dims, rng.random());
        state.classifier_bias = uniform(rng, 1, 3, 0.5);
        let inputs = current::TaskInputs {
            adj: random_adjacency(rng, n),
            features: uniform(rng, n, 3, 1.0),
            block: uniform(rng, n, 2, 1.0),
        };
        let targets: Vec<Option<usize>> = (0..n)
            .map(|i| (i != 0).then(|| rng.random_range(0..3)))
            .collect();
        let fwd = current::forward(&state, &inputs)?;
        if fwd.layers.iter().any(|l| near_kink(&l.pre)) {
            t.redrawn += 1;
            continue;
        }
        let (_, d_logits) = softmax_xent(&fwd.logits, &targets)?;
        let grads = current::backward(&state, &inputs, &fwd, &d_logits)?;
        let loss = |s: &ModelState| {
            let f = current::forward(s, &inputs).unwrap();
            softmax_xent(&f.logits, &targets).unwrap().0
        };
        check_all_params(&mut t, &state, &grads, fault, loss);
        t.instances += 1;
    }
    Ok(t.finish())
}

/// Runs every check with `instances` random instances each. `fault`, when
/// set, is added to one analytic gradient entry per check (negative
/// control).
pub fn run_suite(seed: u64, instances: usize, fault: Option<f64>) -> Result<GradcheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ops = alloc::vec![
        check_gcn_layer(&mut rng, instances, fault)?,
        check_gru(&mut rng, instances, fault)?,
        check_phi(&mut rng, instances, fault)?,
        check_xent(&mut rng, instances, fault)?,
        check_linear(&mut rng, instances, fault)?,
        check_history_model(&mut rng, instances, fault)?,
        check_current_model(&mut rng, instances, fault)?,
    ];
    let passed = ops.iter().all(|o| o.passed);
    Ok(GradcheckReport {
        seed,
        step: STEP,
        tolerance: TOLERANCE,
        ops,
        passed,
    })
}
