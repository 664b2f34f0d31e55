//! Trains the weight-evolving GCN over a sequence of condensed graphs and
//! extracts historical embeddings from the last one.
//!
//! At step `t` each layer's weights are evolved by its matrix GRU from the
//! previous step's weights and a summary of the embeddings entering that
//! layer; the evolved weights then run a GCN pass over the condensed graph.
//! Gradients flow through the current step's GRU only; the previous weights
//! are constants.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::condense::CondensedGraph;
use crate::error::{CccError, Result};
use crate::matrix::{CsrMatrix, Matrix};
use crate::nn::{
    feature_summary_phi, feature_summary_phi_backward, gcn_forward, gcn_layer_backward, gcn_layer_forward,
    linear_backward, linear_forward, matrix_gru_backward, matrix_gru_forward, normalize_adjacency_pairs, sgd_step,
    softmax_xent, GcnLayerCache, GruCache, ModelDims, ModelState,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HistoryConfig {
    /// Width `d_h` of the historical embeddings.
    pub hidden_dim: usize,
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for HistoryConfig {
    fn default() -> Self {
        Self {
            hidden_dim: 32,
            epochs: 100,
            lr: 0.01,
            seed: 0,
        }
    }
}

/// Output of history training.
#[derive(Debug, Clone, PartialEq)]
pub struct HistoryArtifacts {
    /// Parameters at the final step: evolved GCN weights, GRU gates and the
    /// classifier head.
    pub final_state: ModelState,
    /// Weights every epoch starts evolving from.
    pub initial_weights: Vec<Matrix>,
    /// One row per node of `condensed_final`, `hidden_dim` columns.
    pub historical_embeddings: Matrix,
    pub condensed_final: CondensedGraph,
    /// Mean loss over the sequence, per epoch.
    pub epoch_losses: Vec<f64>,
}

impl HistoryArtifacts {
    pub fn history_dim(&self) -> usize {
        self.historical_embeddings.cols()
    }
}

/// Graph-side inputs of one condensed graph.
#[derive(Debug, Clone)]
pub struct CondensedInputs {
    pub adj: CsrMatrix,
    pub features: Matrix,
    pub targets: Vec<Option<usize>>,
}

impl CondensedInputs {
    /// Similarity weights are already gated by the threshold, so edges are
    /// used unweighted.
    pub fn new(g: &CondensedGraph) -> Result<Self> {
        if g.is_empty() {
            return Err(CccError::Empty("condensed graph with zero nodes"));
        }
        Ok(Self {
            adj: normalize_adjacency_pairs(g.len(), g.edge_pairs()),
            features: g.node_features.clone(),
            targets: g.node_labels.iter().map(|&y| Some(y)).collect(),
        })
    }
}

/// Cached forward pass of one evolution step.
#[derive(Debug, Clone)]
pub struct StepForward {
    pub grus: Vec<GruCache>,
    pub layers: Vec<GcnLayerCache>,
    pub logits: Matrix,
}

impl StepForward {
    pub fn evolved_weights(&self) -> Vec<Matrix> {
        self.grus.iter().map(|g| g.out.clone()).collect()
    }

    pub fn embeddings(&self) -> &Matrix {
        &self.layers.last().expect("at least one layer").out
    }
}

/// Evolves every layer from `w_prev` and runs the GCN on `inputs`.
pub fn step_forward(state: &ModelState, w_prev: &[Matrix], inputs: &CondensedInputs) -> Result<StepForward> {
    let mut grus = Vec::with_capacity(state.gru.len());
    let mut layers = Vec::with_capacity(state.gru.len());
    let mut h = inputs.features.clone();
    for (params, prev) in state.gru.iter().zip(w_prev) {
        let summary = feature_summary_phi(&h, params.state_shape())?;
        let gru = matrix_gru_forward(prev, &summary, params)?;
        let layer = gcn_layer_forward(&inputs.adj, &h, &gru.out)?;
        h = layer.out.clone();
        grus.push(gru);
        layers.push(layer);
    }
    let logits = linear_forward(&h, &state.classifier_weight, &state.classifier_bias)?;
    logits.ensure_finite("history forward")?;
    Ok(StepForward { grus, layers, logits })
}

/// Gradients for GRU gates and classifier. The returned state's
/// `gcn_weights` entries are zero since the evolved weights are not free
/// parameters.
pub fn step_backward(
    state: &ModelState,
    inputs: &CondensedInputs,
    fwd: &StepForward,
    d_logits: &Matrix,
) -> Result<ModelState> {
    let mut grads = state.zeros_like();
    let (d_w, d_b, mut d_h) = linear_backward(fwd.embeddings(), &state.classifier_weight, d_logits)?;
    grads.classifier_weight = d_w;
    grads.classifier_bias = d_b;
    for l in (0..state.gru.len()).rev() {
        let (d_evolved, mut d_in) = gcn_layer_backward(&inputs.adj, &fwd.grus[l].out, &fwd.layers[l], &d_h)?;
        let g = matrix_gru_backward(&state.gru[l], &fwd.grus[l], &d_evolved)?;
        // the summary is a function of this layer's input embeddings
        d_in.add_assign(&feature_summary_phi_backward(d_in.rows(), &g.d_input))?;
        grads.gru[l] = g.params;
        d_h = d_in;
    }
    Ok(grads)
}

pub fn step_loss_and_grads(
    state: &ModelState,
    w_prev: &[Matrix],
    inputs: &CondensedInputs,
) -> Result<(f64, ModelState, StepForward)> {
    let fwd = step_forward(state, w_prev, inputs)?;
    let (loss, d_logits) = softmax_xent(&fwd.logits, &inputs.targets)?;
    let grads = step_backward(state, inputs, &fwd, &d_logits)?;
    Ok((loss, grads, fwd))
}

/// Evolves the weights through the whole sequence with fixed parameters.
pub fn evolve_weights(state: &ModelState, initial: &[Matrix], seq: &[CondensedInputs]) -> Result<Vec<Matrix>> {
    let mut w = initial.to_vec();
    for inputs in seq {
        w = step_forward(state, &w, inputs)?.evolved_weights();
    }
    Ok(w)
}

/// Trains GRU gates and classifier over `condensed` in order, for
/// `cfg.epochs` epochs, then emits embeddings of the final condensed graph
/// under the final evolved weights.
pub fn train_history(condensed: &[CondensedGraph], num_classes: usize, cfg: &HistoryConfig) -> Result<HistoryArtifacts> {
    let last = condensed.last().ok_or(CccError::Empty("condensed sequence"))?;
    if cfg.lr.is_nan() || cfg.lr <= 0.0 {
        return Err(CccError::config("model.history_lr", "must be positive"));
    }
    let seq = condensed.iter().map(CondensedInputs::new).collect::<Result<Vec<_>>>()?;
    let dims = ModelDims {
        input: last.node_features.cols(),
        hidden: cfg.hidden_dim,
        classes: num_classes,
        extra: 0,
        evolving: true,
    };
    let mut state = ModelState::init(dims, cfg.seed);
    let initial_weights = state.gcn_weights.clone();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);

    for _ in 0..cfg.epochs {
        let mut w = initial_weights.clone();
        let mut total = 0.0;
        for inputs in &seq {
            let (loss, grads, fwd) = step_loss_and_grads(&state, &w, inputs)?;
            total += loss;
            w = fwd.evolved_weights();
            state = sgd_step(&state, &grads, cfg.lr)?;
        }
        epoch_losses.push(total / seq.len() as f64);
    }

    let final_weights = evolve_weights(&state, &initial_weights, &seq)?;
    let last_inputs = seq.last().unwrap();
    let historical_embeddings = gcn_forward(&last_inputs.adj, &last_inputs.features, &final_weights)?;
    state.gcn_weights = final_weights;
    Ok(HistoryArtifacts {
        final_state: state,
        initial_weights,
        historical_embeddings,
        condensed_final: last.clone(),
        epoch_losses,
    })
}

/// Stored historical embeddings.
pub fn extract_embeddings(art: &HistoryArtifacts) -> Matrix {
    art.historical_embeddings.clone()
}

/// Re-runs the final GCN pass from `final_state`.
pub fn recompute_embeddings(art: &HistoryArtifacts) -> Result<Matrix> {
    let inputs = CondensedInputs::new(&art.condensed_final)?;
    gcn_forward(&inputs.adj, &inputs.features, &art.final_state.gcn_weights)
}

/// Fraction of condensed nodes of the final graph the history classifier
/// labels correctly.
pub fn condensed_accuracy(art: &HistoryArtifacts) -> Result<f64> {
    let s = &art.final_state;
    let logits = linear_forward(&art.historical_embeddings, &s.classifier_weight, &s.classifier_bias)?;
    let labels = &art.condensed_final.node_labels;
    let correct = (0..logits.rows())
        .filter(|&r| crate::metrics::argmax(logits.row(r)) == labels[r])
        .count();
    Ok(correct as f64 / labels.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::condense::build_edges;
    use alloc::vec;

    fn condensed(features: Vec<Vec<f64>>, labels: Vec<usize>, theta: f64, t: u32) -> CondensedGraph {
        let node_features = Matrix::from_rows(&features).unwrap();
        let n = labels.len();
        CondensedGraph {
            timestep: t,
            theta,
            edges: build_edges(&node_features, theta),
            node_features,
            node_labels: labels,
            provenance: (0..n as u64).map(|i| vec![i]).collect(),
            zero_norm_nodes: vec![],
        }
    }

    fn separable() -> CondensedGraph {
        let mut f = Vec::new();
        let mut y = Vec::new();
        for i in 0..6 {
            let s = 0.1 * i as f64;
            f.push(vec![1.0 + s, 0.2 - s, 0.5]);
            y.push(0);
            f.push(vec![-1.0 - s, 0.1 + s, 0.5]);
            y.push(1);
        }
        condensed(f, y, 0.9, 0)
    }

    #[test]
    fn zero_epochs_is_initial_model_and_deterministic() {
        let g = separable();
        let cfg = HistoryConfig { epochs: 0, hidden_dim: 4, ..Default::default() };
        let a = train_history(core::slice::from_ref(&g), 2, &cfg).unwrap();
        let b = train_history(&[g], 2, &cfg).unwrap();
        assert_eq!(a, b);
        assert!(a.epoch_losses.is_empty());
        assert_eq!(extract_embeddings(&a).shape(), (12, 4));
    }

    #[test]
    fn repeated_graph_is_bitwise_reproducible() {
        let g = separable();
        let cfg = HistoryConfig { epochs: 5, hidden_dim: 4, ..Default::default() };
        let seq = [g.clone(), g.clone(), g];
        let a = train_history(&seq, 2, &cfg).unwrap();
        let b = train_history(&seq, 2, &cfg).unwrap();
        assert_eq!(a, b);
        let inputs: Vec<_> = seq.iter().map(|g| CondensedInputs::new(g).unwrap()).collect();
        let w1 = evolve_weights(&a.final_state, &a.initial_weights, &inputs[..1]).unwrap();
        let w2 = evolve_weights(&a.final_state, &a.initial_weights, &inputs[..2]).unwrap();
        assert_ne!(w1, w2);
    }

    #[test]
    fn separable_condensed_graph_is_learned() {
        let cfg = HistoryConfig { epochs: 200, hidden_dim: 8, lr: 0.1, seed: 3 };
        let art = train_history(&[separable()], 2, &cfg).unwrap();
        assert!(condensed_accuracy(&art).unwrap() >= 0.95);
        assert!(art.epoch_losses.last().unwrap() < &art.epoch_losses[0]);
    }

    #[test]
    fn recompute_reproduces_stored_embeddings() {
        let cfg = HistoryConfig { epochs: 3, hidden_dim: 5, ..Default::default() };
        let art = train_history(&[separable(), separable()], 2, &cfg).unwrap();
        assert_eq!(recompute_embeddings(&art).unwrap(), art.historical_embeddings);
        assert_eq!(extract_embeddings(&art), extract_embeddings(&art));
        assert_eq!(art.history_dim(), 5);
    }

    #[test]
    fn errors() {
        let cfg = HistoryConfig::default();
        assert!(train_history(&[], 2, &cfg).is_err());
        let empty = condensed(vec![], vec![], 0.5, 0);
        assert!(train_history(&[empty], 2, &cfg).is_err());
    }
}
