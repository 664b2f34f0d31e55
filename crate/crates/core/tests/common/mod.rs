#![allow(dead_code)]

use std::collections::BTreeSet;

use ccc_core::graph::{GraphSnapshot, NodeId, NodeRecord, SnapshotParts};
use proptest::prelude::*;

/// Snapshot over `ids` (features `[id, 1]`, label `id % classes`) keeping
/// only edges whose endpoints are both present.
pub fn build(t: u32, ids: &BTreeSet<NodeId>, edges: &BTreeSet<(NodeId, NodeId)>, classes: usize) -> GraphSnapshot {
    let nodes = ids
        .iter()
        .map(|&id| NodeRecord {
            id,
            features: vec![id as f64, 1.0],
            label: Some(id as usize % classes),
        })
        .collect();
    let edges = edges
        .iter()
        .copied()
        .filter(|(a, b)| a < b && ids.contains(a) && ids.contains(b))
        .collect();
    GraphSnapshot::new(SnapshotParts { timestep: t, nodes, edges }).unwrap()
}

/// Random undirected graph on `1..=max_n` nodes with sparse-to-dense edges.
pub fn arb_graph(max_n: usize) -> impl Strategy<Value = GraphSnapshot> {
    (1..=max_n)
        .prop_flat_map(|n| (Just(n), proptest::collection::vec(any::<bool>(), n * (n - 1) / 2), 0u32..4))
    .prop_map(|(n, mask, sparsity)| {
        let ids: BTreeSet<NodeId> = (0..n as NodeId).map(|i| i * 3 + 1).collect();
        let v: Vec<NodeId> = ids.iter().copied().collect();
        let mut edges = BTreeSet::new();
        let mut k = 0;
        for i in 0..n {
            for j in i + 1..n {
                // thin the edge set so that long paths and components occur
                if mask[k] && (k as u32 % 4) >= sparsity {
                    edges.insert((v[i], v[j]));
                }
                k += 1;
            }
        }
        build(0, &ids, &edges, 3)
    })
}

/// All-pairs hop distances by Floyd–Warshall, `usize::MAX` when unreachable.
pub fn floyd_warshall(g: &GraphSnapshot) -> Vec<Vec<usize>> {
    let n = g.len();
    let inf = usize::MAX / 4;
    let mut d = vec![vec![inf; n]; n];
    for (i, row) in d.iter_mut().enumerate() {
        row[i] = 0;
    }
    for &(a, b) in g.edges() {
        let (i, j) = (g.index_of(a).unwrap(), g.index_of(b).unwrap());
        d[i][j] = 1;
        d[j][i] = 1;
    }
    for k in 0..n {
        for i in 0..n {
            for j in 0..n {
                let via = d[i][k] + d[k][j];
                if via < d[i][j] {
                    d[i][j] = via;
                }
            }
        }
    }
    for row in &mut d {
        for v in row.iter_mut() {
            if *v >= inf {
                *v = usize::MAX;
            }
        }
    }
    d
}
