//! Selective historical replay: match current nodes to condensed nodes and
//! append their historical embeddings, but only inside the change region.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::condense::{cosine_similarity, CondensedGraph};
use crate::error::{CccError, Result};
use crate::graph::{compute_delta, khop_region, GraphSnapshot, NodeId};
use crate::history::HistoryArtifacts;
use crate::matrix::Matrix;
use crate::nn::{gcn_forward, normalize_adjacency, ModelState};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReplayConfig {
    pub k_hops: usize,
    pub match_threshold: f64,
    pub enabled: bool,
}

impl Default for ReplayConfig {
    fn default() -> Self {
        Self {
            k_hops: 2,
            match_threshold: 0.5,
            enabled: true,
        }
    }
}

impl ReplayConfig {
    pub fn validate(&self) -> Result<()> {
        if !(-1.0..=1.0).contains(&self.match_threshold) {
            return Err(CccError::config("replay.match_threshold", "must lie in [-1, 1]"));
        }
        Ok(())
    }
}

/// Current node id to matched condensed node index, for every current node.
pub type MatchMap = BTreeMap<NodeId, Option<usize>>;

/// `[H_current | H_historical or 0]` with bookkeeping.
#[derive(Debug, Clone, PartialEq)]
pub struct CombinedEmbeddings {
    pub node_ids: Vec<NodeId>,
    pub matrix: Matrix,
    pub current_dim: usize,
    pub history_dim: usize,
    /// In the region and matched.
    pub replay_mask: Vec<bool>,
    pub match_map: MatchMap,
}

impl CombinedEmbeddings {
    pub fn current_block(&self) -> Matrix {
        self.matrix.columns(0, self.current_dim)
    }

    pub fn historical_block(&self) -> Matrix {
        self.matrix
            .columns(self.current_dim, self.current_dim + self.history_dim)
    }

    pub fn replayed(&self) -> usize {
        self.replay_mask.iter().filter(|&&m| m).count()
    }
}

/// Matches each current node to the condensed node of highest raw-feature
/// cosine similarity if that similarity reaches `threshold`. Ties go to the
/// lowest condensed index.
pub fn match_nodes(current: &GraphSnapshot, condensed: &CondensedGraph, threshold: f64) -> Result<MatchMap> {
    let cf = &condensed.node_features;
    if !condensed.is_empty() && cf.cols() != current.feature_dim() {
        return Err(CccError::Shape {
            op: "match_nodes",
            expected: (condensed.len(), current.feature_dim()),
            found: cf.shape(),
        });
    }
    let x = current.features();
    Ok(current
        .node_ids()
        .iter()
        .enumerate()
        .map(|(v, &id)| {
            let mut best: Option<(usize, f64)> = None;
            for c in 0..cf.rows() {
                let s = cosine_similarity(x.row(v), cf.row(c));
                if best.is_none_or(|(_, b)| s > b) {
                    best = Some((c, s));
                }
            }
            let matched = best.filter(|&(_, s)| s >= threshold).map(|(c, _)| c);
            (id, matched)
        })
        .collect())
}

/// Historical half of the combined embeddings plus the replay mask.
pub fn historical_block(
    node_ids: &[NodeId],
    historical: &Matrix,
    region: &BTreeSet<NodeId>,
    match_map: &MatchMap,
) -> Result<(Matrix, Vec<bool>)> {
    for id in region {
        if !node_ids.contains(id) {
            return Err(CccError::UnknownNode(*id));
        }
    }
    let d_h = historical.cols();
    let mut block = Matrix::zeros(node_ids.len(), d_h);
    let mut mask = Vec::with_capacity(node_ids.len());
    for (r, id) in node_ids.iter().enumerate() {
        let matched = match_map.get(id).copied().flatten();
        match matched {
            Some(c) if region.contains(id) => {
                if c >= historical.rows() {
                    return Err(CccError::Shape {
                        op: "historical_block",
                        expected: (c + 1, d_h),
                        found: historical.shape(),
                    });
                }
                block.row_mut(r).copy_from_slice(historical.row(c));
                mask.push(true);
            }
            _ => mask.push(false),
        }
    }
    Ok((block, mask))
}

/// Concatenates `h_current` with matched historical rows for region nodes
/// and zeros elsewhere.
pub fn combine(
    node_ids: &[NodeId],
    h_current: &Matrix,
    historical: &Matrix,
    region: &BTreeSet<NodeId>,
    match_map: &MatchMap,
) -> Result<CombinedEmbeddings> {
    if h_current.rows() != node_ids.len() {
        return Err(CccError::Shape {
            op: "combine",
            expected: (node_ids.len(), h_current.cols()),
            found: h_current.shape(),
        });
    }
    let (block, replay_mask) = historical_block(node_ids, historical, region, match_map)?;
    Ok(CombinedEmbeddings {
        node_ids: node_ids.to_vec(),
        matrix: h_current.hconcat(&block)?,
        current_dim: h_current.cols(),
        history_dim: historical.cols(),
        replay_mask,
        match_map: match_map.clone(),
    })
}

/// Which current nodes are eligible for replay.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RegionPolicy {
    /// k-hop neighborhoods of the change seeds.
    Selective(usize),
    /// Every node (indiscriminate replay).
    All,
    /// No node (replay disabled).
    Nothing,
}

/// Everything replay decides for one snapshot, before any forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayPlan {
    pub region: BTreeSet<NodeId>,
    pub match_map: MatchMap,
    pub block: Matrix,
    pub mask: Vec<bool>,
}

/// Builds the replay plan for `curr`. Without history (first task) or
/// without a previous snapshot the region is empty.
pub fn plan_replay(
    prev: Option<&GraphSnapshot>,
    curr: &GraphSnapshot,
    history: Option<&HistoryArtifacts>,
    policy: RegionPolicy,
    match_threshold: f64,
    history_dim: usize,
) -> Result<ReplayPlan> {
    let region = match (policy, prev, history) {
        (RegionPolicy::Nothing, _, _) | (_, _, None) => BTreeSet::new(),
        (RegionPolicy::All, _, Some(_)) => curr.node_set(),
        (RegionPolicy::Selective(_), None, Some(_)) => BTreeSet::new(),
        (RegionPolicy::Selective(k), Some(p), Some(_)) => {
            let delta = compute_delta(p, curr)?;
            khop_region(curr, &delta.seed_set, k)?
        }
    };
    let (match_map, historical) = match history {
        Some(h) => (
            match_nodes(curr, &h.condensed_final, match_threshold)?,
            h.historical_embeddings.clone(),
        ),
        None => (
            curr.node_ids().iter().map(|&id| (id, None)).collect(),
            Matrix::zeros(0, history_dim),
        ),
    };
    let (block, mask) = historical_block(curr.node_ids(), &historical, &region, &match_map)?;
    Ok(ReplayPlan {
        region,
        match_map,
        block,
        mask,
    })
}

/// Full replay pipeline for one step: delta, region, current GCN pass,
/// matching and concatenation. Disabled replay zero-pads every row.
pub fn selective_replay_step(
    prev: &GraphSnapshot,
    curr: &GraphSnapshot,
    artifacts: &HistoryArtifacts,
    model: &ModelState,
    cfg: &ReplayConfig,
) -> Result<CombinedEmbeddings> {
    cfg.validate()?;
    let delta = compute_delta(prev, curr)?;
    let region = if cfg.enabled {
        khop_region(curr, &delta.seed_set, cfg.k_hops)?
    } else {
        BTreeSet::new()
    };
    let h_current = gcn_forward(&normalize_adjacency(curr), curr.features(), &model.gcn_weights)?;
    let match_map = match_nodes(curr, &artifacts.condensed_final, cfg.match_threshold)?;
    combine(
        curr.node_ids(),
        &h_current,
        &artifacts.historical_embeddings,
        &region,
        &match_map,
    )
}
