//! Synthetic dynamic-graph streams with controllable churn and drift, and
//! the sequential experiment comparing CCC against its ablation arms.

use alloc::collections::BTreeSet;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::condense::{condense_snapshot, CondenseConfig, CondensedGraph};
use crate::error::{CccError, Result};
use crate::graph::{canonical_edge, Edge, GraphSnapshot, NodeId, NodeRecord, SnapshotParts};
use crate::history::{train_history, HistoryArtifacts, HistoryConfig};
use crate::matrix::Matrix;
use crate::metrics::{evaluate_task, MetricsReport, TaskRecord};
use crate::nn::{current, normalize_adjacency, sgd_step, ModelDims, ModelState};
use crate::replay::{plan_replay, CombinedEmbeddings, RegionPolicy, ReplayConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchConfig {
    pub num_tasks: usize,
    pub nodes_per_task: usize,
    pub num_classes: usize,
    pub feature_dim: usize,
    pub intra_class_edge_prob: f64,
    pub inter_class_edge_prob: f64,
    /// Fraction of nodes replaced and of edges rewired per step.
    pub churn_rate: f64,
    /// Rotation (radians) applied to every class centroid per step.
    pub drift_rate: f64,
    /// Standard deviation of per-node feature noise around the centroid.
    pub feature_noise: f64,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            num_tasks: 5,
            nodes_per_task: 120,
            num_classes: 3,
            feature_dim: 16,
            intra_class_edge_prob: 0.08,
            inter_class_edge_prob: 0.01,
            churn_rate: 0.15,
            drift_rate: 0.1,
            feature_noise: 0.45,
            seed: 0,
        }
    }
}

impl BenchConfig {
    pub fn validate(&self) -> Result<()> {
        let prob = |v: f64| (0.0..=1.0).contains(&v);
        if self.num_tasks < 2 {
            return Err(CccError::config("bench.num_tasks", "need at least 2 tasks"));
        }
        if self.num_classes == 0 {
            return Err(CccError::config("bench.num_classes", "must be positive"));
        }
        if self.nodes_per_task < self.num_classes {
            return Err(CccError::config("bench.nodes_per_task", "fewer nodes than classes"));
        }
        if self.feature_dim < 2 {
            return Err(CccError::config("bench.feature_dim", "must be at least 2"));
        }
        if !prob(self.intra_class_edge_prob) {
            return Err(CccError::config("bench.intra_class_edge_prob", "must lie in [0, 1]"));
        }
        if !prob(self.inter_class_edge_prob) {
            return Err(CccError::config("bench.inter_class_edge_prob", "must lie in [0, 1]"));
        }
        if self.intra_class_edge_prob <= self.inter_class_edge_prob {
            return Err(CccError::config(
                "bench.intra_class_edge_prob",
                "must exceed inter_class_edge_prob",
            ));
        }
        if !prob(self.churn_rate) {
            return Err(CccError::config("bench.churn_rate", "must lie in [0, 1]"));
        }
        if !self.drift_rate.is_finite() {
            return Err(CccError::config("bench.drift_rate", "must be finite"));
        }
        if !(self.feature_noise >= 0.0 && self.feature_noise.is_finite()) {
            return Err(CccError::config("bench.feature_noise", "must be non-negative"));
        }
        Ok(())
    }
}

fn normal_vec(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    (0..d).map(|_| StandardNormal.sample(rng)).collect()
}

fn normalize(v: &mut [f64]) {
    let n = libm::sqrt(v.iter().map(|x| x * x).sum::<f64>());
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
}

/// Unit centroid rotating in a fixed plane.
struct Centroid {
    origin: Vec<f64>,
    ortho: Vec<f64>,
}

impl Centroid {
    fn new(rng: &mut ChaCha8Rng, d: usize) -> Self {
        let mut origin = normal_vec(rng, d);
        normalize(&mut origin);
        let mut ortho = normal_vec(rng, d);
        let dot: f64 = ortho.iter().zip(&origin).map(|(a, b)| a * b).sum();
        ortho.iter_mut().zip(&origin).for_each(|(o, u)| *o -= dot * u);
        normalize(&mut ortho);
        Self { origin, ortho }
    }

    fn at(&self, angle: f64) -> impl Iterator<Item = f64> + '_ {
        let (s, c) = (libm::sin(angle), libm::cos(angle));
        self.origin.iter().zip(&self.ortho).map(move |(u, w)| c * u + s * w)
    }
}

struct LiveNode {
    id: NodeId,
    class: usize,
    noise: Vec<f64>,
}

/// Draws a stream of `num_tasks` snapshots: a stochastic block model first,
/// then per step node replacement, edge rewiring and centroid rotation.
pub fn generate_stream(cfg: &BenchConfig) -> Result<Vec<GraphSnapshot>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let d = cfg.feature_dim;
    let centroids: Vec<Centroid> = (0..cfg.num_classes).map(|_| Centroid::new(&mut rng, d)).collect();
    let edge_prob = |a: usize, b: usize| {
        if a == b {
            cfg.intra_class_edge_prob
        } else {
            cfg.inter_class_edge_prob
        }
    };

    let mut next_id: NodeId = 0;
    let mut spawn = |class: usize, rng: &mut ChaCha8Rng| {
        let noise = normal_vec(rng, d).into_iter().map(|v| v * cfg.feature_noise).collect();
        let node = LiveNode { id: next_id, class, noise };
        next_id += 1;
        node
    };
    let mut nodes: Vec<LiveNode> = (0..cfg.nodes_per_task)
        .map(|i| spawn(i % cfg.num_classes, &mut rng))
        .collect();
    let mut edges: BTreeSet<Edge> = BTreeSet::new();
    for i in 0..nodes.len() {
        for j in i + 1..nodes.len() {
            if rng.random::<f64>() < edge_prob(nodes[i].class, nodes[j].class) {
                edges.insert(canonical_edge(nodes[i].id, nodes[j].id));
            }
        }
    }

    let mut out = Vec::with_capacity(cfg.num_tasks);
    for t in 0..cfg.num_tasks {
        if t > 0 {
            churn_step(cfg, &mut rng, &mut nodes, &mut edges, &mut spawn, &edge_prob);
        }
        let angle = cfg.drift_rate * t as f64;
        let records = nodes
            .iter()
            .map(|n| NodeRecord {
                id: n.id,
                features: centroids[n.class].at(angle).zip(&n.noise).map(|(c, e)| c + e).collect(),
                label: Some(n.class),
            })
            .collect();
        out.push(GraphSnapshot::new(SnapshotParts {
            timestep: t as u32,
            nodes: records,
            edges: edges.iter().copied().collect(),
        })?);
    }
    Ok(out)
}

fn churn_step(
    cfg: &BenchConfig,
    rng: &mut ChaCha8Rng,
    nodes: &mut Vec<LiveNode>,
    edges: &mut BTreeSet<Edge>,
    spawn: &mut impl FnMut(usize, &mut ChaCha8Rng) -> LiveNode,
    edge_prob: &impl Fn(usize, usize) -> f64,
) {
    let n_swap = libm::round(cfg.churn_rate * nodes.len() as f64) as usize;
    if n_swap > 0 {
        let mut gone: Vec<usize> = sample(rng, nodes.len(), n_swap).into_vec();
        gone.sort_unstable();
        let removed_ids: BTreeSet<NodeId> = gone.iter().map(|&i| nodes[i].id).collect();
        let classes: Vec<usize> = gone.iter().map(|&i| nodes[i].class).collect();
        edges.retain(|(a, b)| !removed_ids.contains(a) && !removed_ids.contains(b));
        nodes.retain(|n| !removed_ids.contains(&n.id));
        // replacements keep the class histogram fixed
        for class in classes {
            let node = spawn(class, rng);
            for other in nodes.iter() {
                if rng.random::<f64>() < edge_prob(class, other.class) {
                    edges.insert(canonical_edge(node.id, other.id));
                }
            }
            nodes.push(node);
        }
    }

    let n_rewire = libm::round(cfg.churn_rate * edges.len() as f64) as usize;
    if n_rewire == 0 || nodes.len() < 2 {
        return;
    }
    let listed: Vec<Edge> = edges.iter().copied().collect();
    for i in sample(rng, listed.len(), n_rewire).into_iter() {
        edges.remove(&listed[i]);
    }
    let mut added = 0;
    let mut attempts = 0;
    while added < n_rewire && attempts < 1000 * n_rewire {
        attempts += 1;
        let a = rng.random_range(0..nodes.len());
        let b = rng.random_range(0..nodes.len());
        if a == b {
            continue;
        }
        let e = canonical_edge(nodes[a].id, nodes[b].id);
        if edges.contains(&e) {
            continue;
        }
        if rng.random::<f64>() < edge_prob(nodes[a].class, nodes[b].class) {
            edges.insert(e);
            added += 1;
        }
    }
}

/// Experiment arm.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Arm {
    /// Replay inside the k-hop change region.
    Ccc,
    /// No replay.
    Finetune,
    /// Replay for every node.
    FullReplay,
}

impl Arm {
    pub const ALL: [Arm; 3] = [Arm::Ccc, Arm::Finetune, Arm::FullReplay];

    pub fn name(self) -> &'static str {
        match self {
            Arm::Ccc => "ccc",
            Arm::Finetune => "finetune",
            Arm::FullReplay => "full_replay",
        }
    }

    pub fn policy(self, replay: &ReplayConfig) -> RegionPolicy {
        match self {
            Arm::Finetune => RegionPolicy::Nothing,
            _ if !replay.enabled => RegionPolicy::Nothing,
            Arm::Ccc => RegionPolicy::Selective(replay.k_hops),
            Arm::FullReplay => RegionPolicy::All,
        }
    }
}

impl fmt::Display for Arm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Arm {
    type Err = CccError;

    fn from_str(s: &str) -> Result<Self> {
        Arm::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| CccError::UnknownArm(s.to_string()))
    }
}

/// Settings for the per-task model and the history model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Width `d_n` of the current-model embeddings.
    pub hidden_dim: usize,
    /// Width `d_h` of the historical embeddings.
    pub history_dim: usize,
    pub epochs_per_task: usize,
    pub lr: f64,
    pub history_epochs: usize,
    pub history_lr: f64,
    /// Share of each task's nodes used for training; the rest is held out.
    pub train_fraction: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden_dim: 32,
            history_dim: 32,
            epochs_per_task: 100,
            lr: 0.2,
            history_epochs: 100,
            history_lr: 0.01,
            train_fraction: 0.6,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden_dim == 0 {
            return Err(CccError::config("model.hidden_dim", "must be positive"));
        }
        if self.history_dim == 0 {
            return Err(CccError::config("model.history_dim", "must be positive"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(CccError::config("model.lr", "must be positive"));
        }
        if !(self.history_lr > 0.0 && self.history_lr.is_finite()) {
            return Err(CccError::config("model.history_lr", "must be positive"));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(CccError::config("model.train_fraction", "must lie in (0, 1)"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ExperimentConfig {
    pub condense: CondenseConfig,
    pub model: ModelConfig,
    pub replay: ReplayConfig,
    pub seed: u64,
    pub dump_embeddings: bool,
}

/// Held-out logits of one task, enough to recompute its [`TaskRecord`].
#[derive(Debug, Clone, PartialEq)]
pub struct TaskPredictions {
    pub task: usize,
    pub node_ids: Vec<NodeId>,
    pub labels: Vec<usize>,
    pub logits: Matrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArmOutcome {
    pub arm: Arm,
    pub records: Vec<TaskRecord>,
    pub metrics: MetricsReport,
    /// Row `t`: accuracy on tasks `0..=t` right after training task `t`.
    pub accuracy_after: Vec<Vec<f64>>,
    /// Training loss at the last epoch of each task.
    pub final_train_loss: Vec<f64>,
    /// Nodes that received historical embeddings, per task.
    pub replayed_nodes: Vec<usize>,
    pub predictions: Vec<TaskPredictions>,
    pub embeddings: Vec<CombinedEmbeddings>,
}

fn mix(seed: u64, salt: u64) -> u64 {
    let mut z = seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Fixed train/held-out role of a node, independent of the task it
/// appears in.
pub fn is_training_node(seed: u64, id: NodeId, train_fraction: f64) -> bool {
    let mut rng = ChaCha8Rng::seed_from_u64(mix(seed, id.wrapping_add(0x5EED)));
    rng.random::<f64>() < train_fraction
}

struct TaskContext {
    inputs: current::TaskInputs,
    targets: Vec<Option<usize>>,
    eval: Vec<NodeId>,
    plan_mask: Vec<bool>,
}

/// Trains each arm sequentially over the stream and scores every task on
/// its held-out nodes.
pub fn run_experiment(stream: &[GraphSnapshot], arms: &[Arm], cfg: &ExperimentConfig) -> Result<Vec<ArmOutcome>> {
    let needs_history = arms.iter().any(|a| a.policy(&cfg.replay) != RegionPolicy::Nothing);
    let histories = if needs_history {
        build_histories(stream, cfg)?
    } else {
        vec![None; stream.len()]
    };
    run_with_histories(stream, arms, &histories, cfg)
}

/// Number of classes, one past the largest label in the stream.
pub fn stream_classes(stream: &[GraphSnapshot]) -> Result<usize> {
    stream
        .iter()
        .flat_map(|s| s.labels().iter().flatten())
        .max()
        .map(|m| m + 1)
        .ok_or(CccError::NoSupervisedNodes)
}

fn check_inputs(stream: &[GraphSnapshot], cfg: &ExperimentConfig) -> Result<()> {
    if stream.len() < 2 {
        return Err(CccError::config("stream", "need at least 2 snapshots"));
    }
    cfg.model.validate()?;
    cfg.replay.validate()?;
    cfg.condense.validate()
}

/// [`run_experiment`] with precomputed history artifacts, one slot per task.
pub fn run_with_histories(
    stream: &[GraphSnapshot],
    arms: &[Arm],
    histories: &[Option<HistoryArtifacts>],
    cfg: &ExperimentConfig,
) -> Result<Vec<ArmOutcome>> {
    check_inputs(stream, cfg)?;
    if histories.len() != stream.len() {
        return Err(CccError::config("histories", "need one slot per task"));
    }
    let num_classes = stream_classes(stream)?;
    arms.iter()
        .map(|&arm| run_arm(stream, arm, histories, num_classes, cfg))
        .collect()
}

/// History artifacts available when task `t` starts: trained on the
/// condensed versions of snapshots `0..t`.
pub fn build_histories(stream: &[GraphSnapshot], cfg: &ExperimentConfig) -> Result<Vec<Option<HistoryArtifacts>>> {
    check_inputs(stream, cfg)?;
    let num_classes = stream_classes(stream)?;
    let condensed: Vec<CondensedGraph> = stream[..stream.len() - 1]
        .iter()
        .map(|s| {
            let c = CondenseConfig {
                seed: cfg.condense.seed.wrapping_add(cfg.seed).wrapping_add(s.timestep() as u64),
                ..cfg.condense.clone()
            };
            condense_snapshot(s, &c).map_err(|e| CccError::AtTimestep {
                timestep: s.timestep(),
                source: alloc::boxed::Box::new(e),
            })
        })
        .collect::<Result<_>>()?;
    let mut out = vec![None];
    for t in 1..stream.len() {
        let hcfg = HistoryConfig {
            hidden_dim: cfg.model.history_dim,
            epochs: cfg.model.history_epochs,
            lr: cfg.model.history_lr,
            seed: mix(cfg.seed, 0x4157 + t as u64),
        };
        out.push(Some(train_history(&condensed[..t], num_classes, &hcfg)?));
    }
    Ok(out)
}

fn run_arm(
    stream: &[GraphSnapshot],
    arm: Arm,
    histories: &[Option<HistoryArtifacts>],
    num_classes: usize,
    cfg: &ExperimentConfig,
) -> Result<ArmOutcome> {
    let policy = arm.policy(&cfg.replay);
    let m = &cfg.model;
    let dims = ModelDims {
        input: stream[0].feature_dim(),
        hidden: m.hidden_dim,
        classes: num_classes,
        extra: m.history_dim,
        evolving: false,
    };
    let mut state = ModelState::init(dims, mix(cfg.seed, 0xC0DE));
    let mut contexts: Vec<TaskContext> = Vec::with_capacity(stream.len());
    let mut records = Vec::with_capacity(stream.len());
    let mut accuracy_after = Vec::with_capacity(stream.len());
    let mut final_train_loss = Vec::with_capacity(stream.len());
    let mut replayed_nodes = Vec::with_capacity(stream.len());
    let mut predictions = Vec::with_capacity(stream.len());
    let mut embeddings = Vec::new();

    for (t, curr) in stream.iter().enumerate() {
        let prev = t.checked_sub(1).map(|p| &stream[p]);
        let history = if policy == RegionPolicy::Nothing {
            None
        } else {
            histories[t].as_ref()
        };
        let plan = plan_replay(prev, curr, history, policy, cfg.replay.match_threshold, m.history_dim)?;
        let mut targets = Vec::with_capacity(curr.len());
        let mut eval = Vec::new();
        for (&id, &y) in curr.node_ids().iter().zip(curr.labels()) {
            let train = is_training_node(cfg.seed, id, m.train_fraction);
            targets.push(if train { y } else { None });
            if !train && y.is_some() {
                eval.push(id);
            }
        }
        let ctx = TaskContext {
            inputs: current::TaskInputs {
                adj: normalize_adjacency(curr),
                features: curr.features().clone(),
                block: plan.block.clone(),
            },
            targets,
            eval,
            plan_mask: plan.mask.clone(),
        };

        let mut last_loss = f64::NAN;
        for _ in 0..m.epochs_per_task {
            let (loss, grads) = current::loss_and_grads(&state, &ctx.inputs, &ctx.targets)?;
            last_loss = loss;
            state = sgd_step(&state, &grads, m.lr)?;
        }
        final_train_loss.push(last_loss);
        replayed_nodes.push(ctx.plan_mask.iter().filter(|&&b| b).count());
        contexts.push(ctx);

        let mut row = Vec::with_capacity(t + 1);
        for (i, past) in contexts.iter().enumerate() {
            let fwd = current::forward(&state, &past.inputs)?;
            let snap = &stream[i];
            let rec = evaluate_task(i, &fwd.logits, snap.node_ids(), snap.labels(), &past.eval)?;
            row.push(rec.accuracy);
            if i == t {
                predictions.push(held_out_predictions(t, snap, &past.eval, &fwd.logits));
                records.push(rec);
                if cfg.dump_embeddings {
                    embeddings.push(CombinedEmbeddings {
                        node_ids: snap.node_ids().to_vec(),
                        matrix: fwd.combined.clone(),
                        current_dim: m.hidden_dim,
                        history_dim: m.history_dim,
                        replay_mask: past.plan_mask.clone(),
                        match_map: plan.match_map.clone(),
                    });
                }
            }
        }
        accuracy_after.push(row);
    }
    let metrics = MetricsReport::from_records(&records)?;
    Ok(ArmOutcome {
        arm,
        records,
        metrics,
        accuracy_after,
        final_train_loss,
        replayed_nodes,
        predictions,
        embeddings,
    })
}

fn held_out_predictions(task: usize, snap: &GraphSnapshot, eval: &[NodeId], logits: &Matrix) -> TaskPredictions {
    let rows: Vec<usize> = eval.iter().map(|&id| snap.index_of(id).unwrap()).collect();
    TaskPredictions {
        task,
        node_ids: eval.to_vec(),
        labels: rows.iter().map(|&r| snap.labels()[r].unwrap()).collect(),
        logits: logits.select_rows(&rows),
    }
}

/// Recomputes task records from stored predictions.
pub fn records_from_predictions(preds: &[TaskPredictions]) -> Result<Vec<TaskRecord>> {
    preds
        .iter()
        .map(|p| {
            let labels: Vec<Option<usize>> = p.labels.iter().map(|&y| Some(y)).collect();
            evaluate_task(p.task, &p.logits, &p.node_ids, &labels, &p.node_ids)
        })
        .collect()
}

/// Parses a comma-separated arm list such as `ccc,finetune`.
pub fn parse_arms(list: &str) -> Result<Vec<Arm>> {
    let mut arms: Vec<Arm> = Vec::new();
    for part in list.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let arm: Arm = part.parse()?;
        if !arms.contains(&arm) {
            arms.push(arm);
        }
    }
    if arms.is_empty() {
        return Err(CccError::UnknownArm(String::from(list)));
    }
    Ok(arms)
}
