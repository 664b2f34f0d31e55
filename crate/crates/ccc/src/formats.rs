//! JSON file formats: snapshots, condensed graphs, checkpoints, history
//! artifacts, predictions and embedding dumps.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use ccc_core::bench::TaskPredictions;
use ccc_core::condense::{CondensedGraph, WeightedEdge};
use ccc_core::graph::{GraphSnapshot, NodeId, NodeRecord, SnapshotParts};
use ccc_core::history::HistoryArtifacts;
use ccc_core::nn::ModelState;
use ccc_core::replay::CombinedEmbeddings;
use ccc_core::{CccError, Matrix};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

pub const CHECKPOINT_VERSION: u32 = 1;
pub const MANIFEST: &str = "manifest.json";

pub fn snapshot_file_name(timestep: u32) -> String {
    format!("snapshot_{timestep:04}.json")
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::schema(path, e))
}

pub fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializable value");
    s.push('\n');
    s
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    fs::write(path, to_json(value)).map_err(|e| CliError::io(path, e))
}

fn matrix_rows(m: &Matrix) -> Vec<Vec<f64>> {
    (0..m.rows()).map(|r| m.row(r).to_vec()).collect()
}

fn rows_matrix(rows: &[Vec<f64>], cols: usize) -> Result<Matrix, CccError> {
    if rows.is_empty() {
        return Ok(Matrix::zeros(0, cols));
    }
    Matrix::from_rows(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SnapshotNode {
    pub id: NodeId,
    pub x: Vec<f64>,
    pub y: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SnapshotFile {
    pub timestep: u32,
    pub nodes: Vec<SnapshotNode>,
    pub edges: Vec<[NodeId; 2]>,
}

impl From<&GraphSnapshot> for SnapshotFile {
    fn from(g: &GraphSnapshot) -> Self {
        let parts = g.to_parts();
        SnapshotFile {
            timestep: parts.timestep,
            nodes: parts
                .nodes
                .into_iter()
                .map(|n| SnapshotNode {
                    id: n.id,
                    x: n.features,
                    y: n.label,
                })
                .collect(),
            edges: parts.edges.into_iter().map(|(a, b)| [a, b]).collect(),
        }
    }
}

impl SnapshotFile {
    pub fn into_snapshot(self) -> Result<GraphSnapshot, CccError> {
        GraphSnapshot::new(SnapshotParts {
            timestep: self.timestep,
            nodes: self
                .nodes
                .into_iter()
                .map(|n| NodeRecord {
                    id: n.id,
                    features: n.x,
                    label: n.y,
                })
                .collect(),
            edges: self.edges.into_iter().map(|[a, b]| (a, b)).collect(),
        })
    }
}

pub fn load_snapshot(path: &Path) -> Result<GraphSnapshot> {
    let file: SnapshotFile = read_json(path)?;
    file.into_snapshot().map_err(|e| CliError::schema(path, e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub snapshots: Vec<String>,
    pub bench: ccc_core::bench::BenchConfig,
}

/// Snapshot files of a stream directory: the manifest's list when present,
/// otherwise every `snapshot_*.json` in name order.
pub fn stream_files(dir: &Path) -> Result<Vec<PathBuf>> {
    if !dir.is_dir() {
        return Err(CliError::MissingInput(dir.to_path_buf()));
    }
    let manifest = dir.join(MANIFEST);
    let files: Vec<PathBuf> = if manifest.exists() {
        let m: Manifest = read_json(&manifest)?;
        m.snapshots.iter().map(|f| dir.join(f)).collect()
    } else {
        let mut found: Vec<PathBuf> = fs::read_dir(dir)
            .map_err(|e| CliError::io(dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| {
                p.file_name()
                    .and_then(|n| n.to_str())
                    .is_some_and(|n| n.starts_with("snapshot_") && n.ends_with(".json"))
            })
            .collect();
        found.sort();
        found
    };
    if files.is_empty() {
        return Err(CliError::MissingInput(dir.join("snapshot_0000.json")));
    }
    if let Some(missing) = files.iter().find(|f| !f.is_file()) {
        return Err(CliError::MissingInput(missing.clone()));
    }
    Ok(files)
}

/// Loads and validates a whole stream; timesteps must be consecutive.
pub fn load_stream(dir: &Path) -> Result<Vec<GraphSnapshot>> {
    let files = stream_files(dir)?;
    let mut out: Vec<GraphSnapshot> = Vec::with_capacity(files.len());
    for f in &files {
        let g = load_snapshot(f)?;
        if let Some(prev) = out.last() {
            if g.timestep() != prev.timestep() + 1 {
                let e = CccError::NonConsecutive {
                    prev: prev.timestep(),
                    curr: g.timestep(),
                };
                return Err(CliError::schema(f, e));
            }
        }
        out.push(g);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CondensedNode {
    pub id: usize,
    pub x: Vec<f64>,
    pub y: usize,
    pub provenance: Vec<NodeId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CondensedFile {
    pub budget: usize,
    pub theta: f64,
    /// Timestep of the source snapshot.
    pub timestep: u32,
    pub nodes: Vec<CondensedNode>,
    pub edges: Vec<(usize, usize, f64)>,
}

impl From<&CondensedGraph> for CondensedFile {
    fn from(c: &CondensedGraph) -> Self {
        CondensedFile {
            budget: c.budget(),
            theta: c.theta,
            timestep: c.timestep,
            nodes: (0..c.len())
                .map(|i| CondensedNode {
                    id: i,
                    x: c.node_features.row(i).to_vec(),
                    y: c.node_labels[i],
                    provenance: c.provenance[i].clone(),
                })
                .collect(),
            edges: c.edges.iter().map(|e| (e.i, e.j, e.sim)).collect(),
        }
    }
}

impl CondensedFile {
    pub fn into_condensed(self) -> Result<CondensedGraph, CccError> {
        let cols = self.nodes.first().map_or(0, |n| n.x.len());
        let rows: Vec<Vec<f64>> = self.nodes.iter().map(|n| n.x.clone()).collect();
        let node_features = rows_matrix(&rows, cols)?;
        let zero_norm_nodes = rows
            .iter()
            .enumerate()
            .filter(|(_, r)| r.iter().all(|&v| v == 0.0))
            .map(|(i, _)| i)
            .collect();
        Ok(CondensedGraph {
            timestep: self.timestep,
            theta: self.theta,
            node_features,
            node_labels: self.nodes.iter().map(|n| n.y).collect(),
            edges: self.edges.iter().map(|&(i, j, sim)| WeightedEdge { i, j, sim }).collect(),
            provenance: self.nodes.into_iter().map(|n| n.provenance).collect(),
            zero_norm_nodes,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub version: u32,
    pub shapes: BTreeMap<String, (usize, usize)>,
    pub values: BTreeMap<String, Vec<f64>>,
}

impl Checkpoint {
    pub fn from_state(state: &ModelState) -> Self {
        let mut shapes = BTreeMap::new();
        let mut values = BTreeMap::new();
        for (name, m) in state.named_params() {
            shapes.insert(name.clone(), m.shape());
            values.insert(name, m.as_slice().to_vec());
        }
        Checkpoint {
            version: CHECKPOINT_VERSION,
            shapes,
            values,
        }
    }

    /// Fills a state shaped like `template` with the stored values.
    pub fn to_state(&self, template: &ModelState) -> Result<ModelState, CccError> {
        if self.version != CHECKPOINT_VERSION {
            return Err(CccError::Config {
                field: "checkpoint.version",
                reason: format!("unsupported version {}", self.version),
            });
        }
        let mut bad = None;
        let state = ModelState::with_values(template, |name| {
            let (r, c) = *self.shapes.get(name)?;
            let v = self.values.get(name)?.clone();
            Matrix::from_vec(r, c, v).map_err(|e| bad = Some(e)).ok()
        });
        match bad {
            Some(e) => Err(e),
            None => state,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HistoryArtifactsFile {
    pub checkpoint: Checkpoint,
    pub initial_weights: Vec<Vec<Vec<f64>>>,
    pub historical_embeddings: Vec<Vec<f64>>,
    pub condensed_final: CondensedFile,
    pub epoch_losses: Vec<f64>,
}

impl From<&HistoryArtifacts> for HistoryArtifactsFile {
    fn from(a: &HistoryArtifacts) -> Self {
        HistoryArtifactsFile {
            checkpoint: Checkpoint::from_state(&a.final_state),
            initial_weights: a.initial_weights.iter().map(matrix_rows).collect(),
            historical_embeddings: matrix_rows(&a.historical_embeddings),
            condensed_final: (&a.condensed_final).into(),
            epoch_losses: a.epoch_losses.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskPredictionsFile {
    pub task: usize,
    pub node_ids: Vec<NodeId>,
    pub labels: Vec<usize>,
    pub logits: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictionsFile {
    pub arm: String,
    pub tasks: Vec<TaskPredictionsFile>,
}

impl PredictionsFile {
    pub fn new(arm: &str, preds: &[TaskPredictions]) -> Self {
        PredictionsFile {
            arm: arm.to_string(),
            tasks: preds
                .iter()
                .map(|p| TaskPredictionsFile {
                    task: p.task,
                    node_ids: p.node_ids.clone(),
                    labels: p.labels.clone(),
                    logits: matrix_rows(&p.logits),
                })
                .collect(),
        }
    }

    pub fn to_predictions(&self) -> Result<Vec<TaskPredictions>, CccError> {
        self.tasks
            .iter()
            .map(|t| {
                if t.node_ids.len() != t.labels.len() || t.node_ids.len() != t.logits.len() {
                    return Err(CccError::Config {
                        field: "predictions.tasks",
                        reason: format!("task {}: node_ids, labels and logits differ in length", t.task),
                    });
                }
                let cols = t.logits.first().map_or(0, Vec::len);
                Ok(TaskPredictions {
                    task: t.task,
                    node_ids: t.node_ids.clone(),
                    labels: t.labels.clone(),
                    logits: rows_matrix(&t.logits, cols)?,
                })
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingsFile {
    pub task: usize,
    pub node_ids: Vec<NodeId>,
    pub current_dim: usize,
    pub history_dim: usize,
    pub replay_mask: Vec<bool>,
    /// Matched condensed node per node id, `null` when unmatched.
    pub matches: BTreeMap<NodeId, Option<usize>>,
    pub combined: Vec<Vec<f64>>,
}

impl EmbeddingsFile {
    pub fn new(task: usize, e: &CombinedEmbeddings) -> Self {
        EmbeddingsFile {
            task,
            node_ids: e.node_ids.clone(),
            current_dim: e.current_dim,
            history_dim: e.history_dim,
            replay_mask: e.replay_mask.clone(),
            matches: e.match_map.clone(),
            combined: matrix_rows(&e.matrix),
        }
    }
}
