mod common;

use ccc_core::nn::{
    gcn_forward, matrix_gru_step, normalize_adjacency, sgd_step, sigmoid, softmax_rows, softmax_xent, GruParams,
    ModelDims, ModelState,
};
use ccc_core::Matrix;
use common::arb_graph;
use proptest::prelude::*;

fn mat(rows: usize, cols: usize, scale: f64) -> impl Strategy<Value = Matrix> {
    proptest::collection::vec(-scale..scale, rows * cols).prop_map(move |v| Matrix::from_vec(rows, cols, v).unwrap())
}

fn gru(r: usize, c: usize) -> impl Strategy<Value = GruParams> {
    proptest::collection::vec(mat(r, r, 2.0), 6)
        .prop_flat_map(move |sq| (Just(sq), proptest::collection::vec(mat(r, c, 2.0), 3)))
        .prop_map(move |(sq, b)| {
            let mut p = GruParams::zeros(r, c);
            let [u_z, v_z, b_z, u_r, v_r, b_r, u_h, v_h, b_h] = p.parts_mut();
            *u_z = sq[0].clone();
            *v_z = sq[1].clone();
            *u_r = sq[2].clone();
            *v_r = sq[3].clone();
            *u_h = sq[4].clone();
            *v_h = sq[5].clone();
            *b_z = b[0].clone();
            *b_r = b[1].clone();
            *b_h = b[2].clone();
            p
        })
}

/// Scalar-loop evaluation of the gate equations.
fn gru_reference(w: &Matrix, x: &Matrix, p: &GruParams) -> Vec<Vec<f64>> {
    let (r, c) = w.shape();
    let lin = |u: &Matrix, a: &dyn Fn(usize, usize) -> f64, v: &Matrix, b: &Matrix, i: usize, j: usize| {
        let mut s = b[(i, j)];
        for k in 0..r {
            s += u[(i, k)] * a(k, j) + v[(i, k)] * x[(k, j)];
        }
        s
    };
    let wf = |k: usize, j: usize| w[(k, j)];
    let rg = |k: usize, j: usize| sigmoid(lin(&p.u_r, &wf, &p.v_r, &p.b_r, k, j)) * w[(k, j)];
    (0..r)
        .map(|i| {
            (0..c)
                .map(|j| {
                    let z = sigmoid(lin(&p.u_z, &wf, &p.v_z, &p.b_z, i, j));
                    let cand = lin(&p.u_h, &rg, &p.v_h, &p.b_h, i, j).tanh();
                    (1.0 - z) * w[(i, j)] + z * cand
                })
                .collect()
        })
        .collect()
}

/// Largest eigenvalue magnitude of a symmetric matrix by power iteration.
fn spectral_radius(a: &Matrix) -> f64 {
    let n = a.rows();
    let mut v = Matrix::from_fn(n, 1, |i, _| 1.0 + (i as f64) * 0.37 % 1.0);
    let mut lambda = 0.0;
    for _ in 0..500 {
        let next = a.matmul(&v).unwrap();
        let norm = next.as_slice().iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            return 0.0;
        }
        lambda = norm / v.as_slice().iter().map(|x| x * x).sum::<f64>().sqrt();
        v = next.scale(1.0 / norm);
    }
    lambda
}

proptest! {
    #[test]
    fn gru_matches_scalar_reference((p, w, x) in (1usize..4, 1usize..4).prop_flat_map(|(r, c)| (gru(r, c), mat(r, c, 3.0), mat(r, c, 3.0)))) {
        let got = matrix_gru_step(&w, &x, &p).unwrap();
        let want = gru_reference(&w, &x, &p);
        for (i, row) in want.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                prop_assert!((got[(i, j)] - v).abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn gru_output_is_bounded((p, w, x) in (1usize..4, 1usize..4).prop_flat_map(|(r, c)| (gru(r, c), mat(r, c, 10.0), mat(r, c, 10.0)))) {
        let out = matrix_gru_step(&w, &x, &p).unwrap();
        let bound = w.max_abs().max(1.0) + 1.0;
        prop_assert!(out.max_abs() <= bound);
    }

    #[test]
    fn adjacency_is_symmetric_with_unit_spectral_radius(g in arb_graph(12)) {
        let a = normalize_adjacency(&g).to_dense();
        prop_assert_eq!(&a, &a.transpose());
        prop_assert!(spectral_radius(&a) <= 1.0 + 1e-9);
        for &id in g.node_ids() {
            let i = g.index_of(id).unwrap();
            if g.neighbors(id).unwrap().is_empty() {
                prop_assert_eq!(a[(i, i)], 1.0);
            }
        }
    }

    #[test]
    fn gcn_matches_dense_reference(g in arb_graph(8), w1 in mat(2, 3, 1.0), w2 in mat(3, 2, 1.0)) {
        let n = g.len();
        let mut a = Matrix::identity(n);
        for &(u, v) in g.edges() {
            let (i, j) = (g.index_of(u).unwrap(), g.index_of(v).unwrap());
            a[(i, j)] = 1.0;
            a[(j, i)] = 1.0;
        }
        let deg: Vec<f64> = (0..n).map(|i| a.row(i).iter().sum()).collect();
        let hat = Matrix::from_fn(n, n, |i, j| a[(i, j)] / (deg[i] * deg[j]).sqrt());
        let relu = |m: Matrix| m.map(|v| v.max(0.0));
        let h1 = relu(hat.matmul(&g.features().matmul(&w1).unwrap()).unwrap());
        let h2 = relu(hat.matmul(&h1.matmul(&w2).unwrap()).unwrap());
        let got = gcn_forward(&normalize_adjacency(&g), g.features(), &[w1, w2]).unwrap();
        for (x, y) in got.as_slice().iter().zip(h2.as_slice()) {
            prop_assert!((x - y).abs() <= 1e-9 * (1.0 + y.abs()));
        }
    }

    #[test]
    fn softmax_rows_sum_to_one(m in (1usize..6, 1usize..6).prop_flat_map(|(r, c)| mat(r, c, 50.0))) {
        let s = softmax_rows(&m);
        for r in 0..s.rows() {
            prop_assert!((s.row(r).iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        }
    }
}

#[test]
fn uniform_logits_give_log_c() {
    for c in 1..6 {
        let (loss, _) = softmax_xent(&Matrix::zeros(3, c), &[Some(0), None, Some(c - 1)]).unwrap();
        assert!((loss - (c as f64).ln()).abs() < 1e-12);
    }
}

#[test]
fn gradient_descent_on_quadratic_decreases_monotonically() {
    // loss = 0.5 * |p|^2 over every parameter, gradient p
    let dims = ModelDims {
        input: 3,
        hidden: 2,
        classes: 2,
        extra: 0,
        evolving: false,
    };
    let mut state = ModelState::init(dims, 5);
    let loss = |s: &ModelState| -> f64 {
        s.named_params().iter().map(|(_, m)| m.as_slice().iter().map(|v| 0.5 * v * v).sum::<f64>()).sum()
    };
    let mut prev = loss(&state);
    for _ in 0..50 {
        let grads = state.clone();
        state = sgd_step(&state, &grads, 0.1).unwrap();
        let now = loss(&state);
        assert!(now < prev);
        prev = now;
    }
}
