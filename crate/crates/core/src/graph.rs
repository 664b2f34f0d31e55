//! Snapshot representation, snapshot deltas and k-hop change regions.

use alloc::collections::{BTreeMap, BTreeSet, VecDeque};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::error::{CccError, Result};
use crate::matrix::Matrix;

/// Globally unique node identifier, stable across snapshots.
pub type NodeId = u64;

/// Undirected edge stored as `(low, high)`.
pub type Edge = (NodeId, NodeId);

#[inline]
pub fn canonical_edge(a: NodeId, b: NodeId) -> Edge {
    if a <= b {
        (a, b)
    } else {
        (b, a)
    }
}

/// One node as it appears in raw input.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeRecord {
    pub id: NodeId,
    pub features: Vec<f64>,
    pub label: Option<usize>,
}

/// Unchecked snapshot contents, e.g. straight from a file.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SnapshotParts {
    pub timestep: u32,
    pub nodes: Vec<NodeRecord>,
    pub edges: Vec<Edge>,
}

/// A broken snapshot invariant.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    DuplicateNode(NodeId),
    RaggedFeatures {
        node: NodeId,
        expected: usize,
        found: usize,
    },
    NonFiniteFeature(NodeId),
    SelfLoop(NodeId),
    DuplicateEdge(NodeId, NodeId),
    UnorderedEdge(NodeId, NodeId),
    DanglingEndpoint { edge: Edge, missing: NodeId },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::DuplicateNode(id) => write!(f, "duplicate node {id}"),
            Violation::RaggedFeatures {
                node,
                expected,
                found,
            } => write!(
                f,
                "ragged features: node {node} has width {found}, expected {expected}"
            ),
            Violation::NonFiniteFeature(id) => write!(f, "non-finite feature on node {id}"),
            Violation::SelfLoop(id) => write!(f, "self-loop on node {id}"),
            Violation::DuplicateEdge(a, b) => write!(f, "duplicate edge ({a},{b})"),
            Violation::UnorderedEdge(a, b) => {
                write!(f, "unordered edge ({a},{b}): endpoints must be low < high")
            }
            Violation::DanglingEndpoint { edge, missing } => write!(
                f,
                "dangling endpoint {missing} in edge ({},{})",
                edge.0, edge.1
            ),
        }
    }
}

/// Checks every snapshot invariant and reports all violations found.
/// An empty report means the parts build a valid [`GraphSnapshot`].
pub fn validate_snapshot(parts: &SnapshotParts) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut ids = BTreeSet::new();
    let width = parts.nodes.first().map(|n| n.features.len());
    for node in &parts.nodes {
        if !ids.insert(node.id) {
            out.push(Violation::DuplicateNode(node.id));
        }
        if let Some(w) = width {
            if node.features.len() != w {
                out.push(Violation::RaggedFeatures {
                    node: node.id,
                    expected: w,
                    found: node.features.len(),
                });
            }
        }
        if node.features.iter().any(|v| !v.is_finite()) {
            out.push(Violation::NonFiniteFeature(node.id));
        }
    }
    let mut seen = BTreeSet::new();
    for &(a, b) in &parts.edges {
        if a == b {
            out.push(Violation::SelfLoop(a));
            continue;
        }
        if a > b {
            out.push(Violation::UnorderedEdge(a, b));
        }
        let e = canonical_edge(a, b);
        if !seen.insert(e) {
            out.push(Violation::DuplicateEdge(e.0, e.1));
        }
        for end in [e.0, e.1] {
            if !ids.contains(&end) {
                out.push(Violation::DanglingEndpoint { edge: e, missing: end });
            }
        }
    }
    out
}

/// One timestep of a dynamic graph. Immutable once built; undirected and
/// unweighted.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphSnapshot {
    timestep: u32,
    node_ids: Vec<NodeId>,
    features: Matrix,
    labels: Vec<Option<usize>>,
    edges: BTreeSet<Edge>,
    index: BTreeMap<NodeId, usize>,
    adjacency: Vec<Vec<usize>>,
}

impl GraphSnapshot {
    /// Validates and builds a snapshot. Node order is preserved.
    pub fn new(parts: SnapshotParts) -> Result<Self> {
        let violations = validate_snapshot(&parts);
        if !violations.is_empty() {
            return Err(CccError::InvalidSnapshot(violations));
        }
        let n = parts.nodes.len();
        let d = parts.nodes.first().map_or(0, |r| r.features.len());
        let mut data = Vec::with_capacity(n * d);
        let mut node_ids = Vec::with_capacity(n);
        let mut labels = Vec::with_capacity(n);
        for rec in parts.nodes {
            node_ids.push(rec.id);
            labels.push(rec.label);
            data.extend(rec.features);
        }
        let features = Matrix::from_vec(n, d, data)?;
        let index: BTreeMap<_, _> = node_ids.iter().enumerate().map(|(i, &id)| (id, i)).collect();
        let edges: BTreeSet<Edge> = parts.edges.into_iter().collect();
        let mut adjacency = vec![Vec::new(); n];
        for &(a, b) in &edges {
            let (ia, ib) = (index[&a], index[&b]);
            adjacency[ia].push(ib);
            adjacency[ib].push(ia);
        }
        for list in &mut adjacency {
            list.sort_unstable();
        }
        Ok(Self {
            timestep: parts.timestep,
            node_ids,
            features,
            labels,
            edges,
            index,
            adjacency,
        })
    }

    pub fn timestep(&self) -> u32 {
        self.timestep
    }

    pub fn node_ids(&self) -> &[NodeId] {
        &self.node_ids
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn labels(&self) -> &[Option<usize>] {
        &self.labels
    }

    pub fn edges(&self) -> &BTreeSet<Edge> {
        &self.edges
    }

    pub fn len(&self) -> usize {
        self.node_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.node_ids.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    pub fn index_of(&self, id: NodeId) -> Option<usize> {
        self.index.get(&id).copied()
    }

    pub fn contains(&self, id: NodeId) -> bool {
        self.index.contains_key(&id)
    }

    pub fn node_set(&self) -> BTreeSet<NodeId> {
        self.index.keys().copied().collect()
    }

    /// Sorted neighbor positions of the node at position `idx`.
    pub fn neighbor_indices(&self, idx: usize) -> &[usize] {
        &self.adjacency[idx]
    }

    pub fn neighbors(&self, id: NodeId) -> Result<BTreeSet<NodeId>> {
        let idx = self.index_of(id).ok_or(CccError::UnknownNode(id))?;
        Ok(self.adjacency[idx].iter().map(|&j| self.node_ids[j]).collect())
    }

    /// Number of distinct labeled classes present.
    pub fn label_counts(&self) -> BTreeMap<usize, usize> {
        let mut counts = BTreeMap::new();
        for y in self.labels.iter().flatten() {
            *counts.entry(*y).or_insert(0) += 1;
        }
        counts
    }

    pub fn to_parts(&self) -> SnapshotParts {
        SnapshotParts {
            timestep: self.timestep,
            nodes: self
                .node_ids
                .iter()
                .enumerate()
                .map(|(i, &id)| NodeRecord {
                    id,
                    features: self.features.row(i).to_vec(),
                    label: self.labels[i],
                })
                .collect(),
            edges: self.edges.iter().copied().collect(),
        }
    }
}

/// Structural difference between consecutive snapshots.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct GraphDelta {
    pub added_nodes: BTreeSet<NodeId>,
    pub removed_nodes: BTreeSet<NodeId>,
    pub added_edges: BTreeSet<Edge>,
    pub removed_edges: BTreeSet<Edge>,
    /// Nodes of the new snapshot adjacent to any modification.
    pub seed_set: BTreeSet<NodeId>,
}

impl GraphDelta {
    pub fn is_empty(&self) -> bool {
        self.added_nodes.is_empty()
            && self.removed_nodes.is_empty()
            && self.added_edges.is_empty()
            && self.removed_edges.is_empty()
    }

    /// Replays the delta onto a node and edge set.
    pub fn apply(
        &self,
        nodes: &BTreeSet<NodeId>,
        edges: &BTreeSet<Edge>,
    ) -> (BTreeSet<NodeId>, BTreeSet<Edge>) {
        let nodes = nodes
            .difference(&self.removed_nodes)
            .chain(&self.added_nodes)
            .copied()
            .collect();
        let edges = edges
            .difference(&self.removed_edges)
            .chain(&self.added_edges)
            .copied()
            .collect();
        (nodes, edges)
    }
}

/// Diffs two consecutive snapshots and derives the seed set of changed
/// neighborhoods in `curr`.
pub fn compute_delta(prev: &GraphSnapshot, curr: &GraphSnapshot) -> Result<GraphDelta> {
    if prev.timestep.checked_add(1) != Some(curr.timestep) {
        return Err(CccError::NonConsecutive {
            prev: prev.timestep,
            curr: curr.timestep,
        });
    }
    let prev_nodes = prev.node_set();
    let curr_nodes = curr.node_set();
    let added_nodes: BTreeSet<_> = curr_nodes.difference(&prev_nodes).copied().collect();
    let removed_nodes: BTreeSet<_> = prev_nodes.difference(&curr_nodes).copied().collect();
    let added_edges: BTreeSet<_> = curr.edges.difference(&prev.edges).copied().collect();
    let removed_edges: BTreeSet<_> = prev.edges.difference(&curr.edges).copied().collect();

    let mut seed_set: BTreeSet<NodeId> = added_nodes.clone();
    for &(a, b) in added_edges.iter().chain(&removed_edges) {
        for end in [a, b] {
            if curr.contains(end) {
                seed_set.insert(end);
            }
        }
    }
    for &gone in &removed_nodes {
        let idx = prev.index[&gone];
        for &j in &prev.adjacency[idx] {
            let nb = prev.node_ids[j];
            if curr.contains(nb) {
                seed_set.insert(nb);
            }
        }
    }
    Ok(GraphDelta {
        added_nodes,
        removed_nodes,
        added_edges,
        removed_edges,
        seed_set,
    })
}

/// All nodes within `k` hops of any seed, by multi-source breadth-first
/// search.
pub fn khop_region(g: &GraphSnapshot, seeds: &BTreeSet<NodeId>, k: usize) -> Result<BTreeSet<NodeId>> {
    let mut dist = vec![usize::MAX; g.len()];
    let mut queue = VecDeque::new();
    for &s in seeds {
        let idx = g.index_of(s).ok_or(CccError::UnknownSeed(s))?;
        if dist[idx] != 0 {
            dist[idx] = 0;
            queue.push_back(idx);
        }
    }
    while let Some(u) = queue.pop_front() {
        if dist[u] == k {
            continue;
        }
        for &v in &g.adjacency[u] {
            if dist[v] == usize::MAX {
                dist[v] = dist[u] + 1;
                queue.push_back(v);
            }
        }
    }
    Ok(dist
        .iter()
        .enumerate()
        .filter(|(_, &d)| d <= k)
        .map(|(i, _)| g.node_ids[i])
        .collect())
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use alloc::vec;

    pub(crate) fn snapshot(t: u32, ids: &[NodeId], edges: &[Edge]) -> GraphSnapshot {
        GraphSnapshot::new(SnapshotParts {
            timestep: t,
            nodes: ids
                .iter()
                .map(|&id| NodeRecord {
                    id,
                    features: vec![id as f64, 1.0],
                    label: Some((id % 2) as usize),
                })
                .collect(),
            edges: edges.to_vec(),
        })
        .unwrap()
    }

    fn set<T: Ord + Copy>(xs: &[T]) -> BTreeSet<T> {
        xs.iter().copied().collect()
    }

    #[test]
    fn empty_graph_is_valid() {
        assert!(validate_snapshot(&SnapshotParts::default()).is_empty());
        assert!(GraphSnapshot::new(SnapshotParts::default()).unwrap().is_empty());
    }

    #[test]
    fn dangling_and_duplicate_edges_reported() {
        let parts = SnapshotParts {
            timestep: 0,
            nodes: vec![NodeRecord {
                id: 1,
                features: vec![0.0],
                label: None,
            }],
            edges: vec![(1, 2)],
        };
        let v = validate_snapshot(&parts);
        assert_eq!(v, vec![Violation::DanglingEndpoint { edge: (1, 2), missing: 2 }]);
        assert!(alloc::format!("{}", v[0]).contains("dangling endpoint"));

        let mut parts = snapshot(0, &[1, 2], &[]).to_parts();
        parts.edges = vec![(1, 2), (1, 2)];
        let v = validate_snapshot(&parts);
        let dups = v.iter().filter(|x| matches!(x, Violation::DuplicateEdge(1, 2))).count();
        assert_eq!(dups, 1);
        assert!(GraphSnapshot::new(parts).is_err());
    }

    #[test]
    fn self_loops_and_ragged_rows_reported() {
        let parts = SnapshotParts {
            timestep: 0,
            nodes: vec![
                NodeRecord { id: 1, features: vec![0.0, 1.0], label: None },
                NodeRecord { id: 2, features: vec![0.0], label: None },
            ],
            edges: vec![(1, 1), (2, 1)],
        };
        let v = validate_snapshot(&parts);
        assert!(v.contains(&Violation::SelfLoop(1)));
        assert!(v.contains(&Violation::UnorderedEdge(2, 1)));
        assert!(v.iter().any(|x| matches!(x, Violation::RaggedFeatures { node: 2, .. })));
    }

    #[test]
    fn identical_snapshots_give_empty_delta() {
        let a = snapshot(0, &[1, 2, 3], &[(1, 2), (2, 3)]);
        let mut parts = a.to_parts();
        parts.timestep = 1;
        let b = GraphSnapshot::new(parts).unwrap();
        let d = compute_delta(&a, &b).unwrap();
        assert!(d.is_empty());
        assert!(d.seed_set.is_empty());
    }

    #[test]
    fn delta_node_and_edge_addition() {
        let prev = snapshot(0, &[1, 2, 3], &[(1, 2), (2, 3)]);
        let curr = snapshot(1, &[1, 2, 3, 4], &[(1, 2), (2, 3), (3, 4)]);
        let d = compute_delta(&prev, &curr).unwrap();
        assert_eq!(d.added_nodes, set(&[4]));
        assert_eq!(d.added_edges, set(&[(3, 4)]));
        assert!(d.removed_nodes.is_empty() && d.removed_edges.is_empty());
        assert_eq!(d.seed_set, set(&[3, 4]));
    }

    #[test]
    fn delta_node_removal_seeds_survivors() {
        let prev = snapshot(0, &[1, 2, 3], &[(1, 2), (2, 3)]);
        let curr = snapshot(1, &[1, 2], &[(1, 2)]);
        let d = compute_delta(&prev, &curr).unwrap();
        assert_eq!(d.removed_nodes, set(&[3]));
        assert_eq!(d.removed_edges, set(&[(2, 3)]));
        assert_eq!(d.seed_set, set(&[2]));
    }

    #[test]
    fn delta_rejects_non_consecutive() {
        let a = snapshot(0, &[1], &[]);
        let b = snapshot(2, &[1], &[]);
        assert_eq!(
            compute_delta(&a, &b).unwrap_err(),
            CccError::NonConsecutive { prev: 0, curr: 2 }
        );
    }

    #[test]
    fn khop_examples() {
        let path = snapshot(0, &[1, 2, 3, 4, 5], &[(1, 2), (2, 3), (3, 4), (4, 5)]);
        assert_eq!(khop_region(&path, &set(&[5]), 0).unwrap(), set(&[5]));
        assert_eq!(khop_region(&path, &set(&[3]), 1).unwrap(), set(&[2, 3, 4]));
        assert_eq!(khop_region(&path, &set(&[1]), 4).unwrap(), path.node_set());
        assert!(khop_region(&path, &BTreeSet::new(), 3).unwrap().is_empty());
        assert_eq!(
            khop_region(&path, &set(&[9]), 1).unwrap_err(),
            CccError::UnknownSeed(9)
        );
    }

    #[test]
    fn neighbor_examples() {
        let g = snapshot(0, &[1, 2, 3, 7], &[(1, 2), (2, 3)]);
        assert!(g.neighbors(7).unwrap().is_empty());
        assert_eq!(g.neighbors(2).unwrap(), set(&[1, 3]));
        for &u in g.node_ids() {
            for v in g.neighbors(u).unwrap() {
                assert!(g.neighbors(v).unwrap().contains(&u));
            }
        }
        assert_eq!(g.neighbors(42).unwrap_err(), CccError::UnknownNode(42));
    }
}
