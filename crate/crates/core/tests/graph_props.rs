mod common;

use std::collections::BTreeSet;

use ccc_core::graph::{canonical_edge, compute_delta, khop_region, NodeId};
use common::{arb_graph, build, floyd_warshall};
use proptest::prelude::*;

fn seed_oracle(
    prev: &ccc_core::GraphSnapshot,
    curr: &ccc_core::GraphSnapshot,
) -> BTreeSet<NodeId> {
    let pn = prev.node_set();
    let cn = curr.node_set();
    let mut s = BTreeSet::new();
    for e in prev.edges().symmetric_difference(curr.edges()) {
        for v in [e.0, e.1] {
            if cn.contains(&v) {
                s.insert(v);
            }
        }
    }
    s.extend(cn.difference(&pn));
    for &(a, b) in prev.edges() {
        if !cn.contains(&a) && cn.contains(&b) {
            s.insert(b);
        }
        if !cn.contains(&b) && cn.contains(&a) {
            s.insert(a);
        }
    }
    s
}

type Parts = (BTreeSet<NodeId>, BTreeSet<(NodeId, NodeId)>);

fn arb_pair() -> impl Strategy<Value = (Parts, Parts)> {
    let ids = || proptest::collection::btree_set(0u64..25, 0..20);
    let edges = || proptest::collection::btree_set((0u64..25, 0u64..25).prop_map(|(a, b)| canonical_edge(a, b)), 0..60);
    ((ids(), edges()), (ids(), edges()))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn khop_matches_all_pairs_shortest_paths(g in arb_graph(30), picks in proptest::collection::vec(any::<proptest::sample::Index>(), 0..4), k in 0usize..6) {
        let ids = g.node_ids().to_vec();
        let seeds: BTreeSet<NodeId> = picks.iter().map(|p| ids[p.index(ids.len())]).collect();
        let d = floyd_warshall(&g);
        let expected: BTreeSet<NodeId> = (0..g.len())
            .filter(|&u| seeds.iter().any(|s| d[g.index_of(*s).unwrap()][u] <= k))
            .map(|u| ids[u])
            .collect();
        prop_assert_eq!(khop_region(&g, &seeds, k).unwrap(), expected);
    }

    #[test]
    fn khop_is_monotone_in_k(g in arb_graph(20), pick in any::<proptest::sample::Index>(), k in 0usize..5) {
        let seeds: BTreeSet<NodeId> = [g.node_ids()[pick.index(g.len())]].into();
        let small = khop_region(&g, &seeds, k).unwrap();
        let big = khop_region(&g, &seeds, k + 1).unwrap();
        prop_assert!(small.is_subset(&big));
        prop_assert!(seeds.is_subset(&small));
    }

    #[test]
    fn delta_round_trips(((pi, pe), (ci, ce)) in arb_pair()) {
        let prev = build(4, &pi, &pe, 2);
        let curr = build(5, &ci, &ce, 2);
        let delta = compute_delta(&prev, &curr).unwrap();
        let (nodes, edges) = delta.apply(&prev.node_set(), prev.edges());
        prop_assert_eq!(&nodes, &curr.node_set());
        prop_assert_eq!(&edges, curr.edges());
        prop_assert!(delta.added_nodes.is_disjoint(&delta.removed_nodes));
        prop_assert!(delta.added_edges.is_disjoint(&delta.removed_edges));
        prop_assert!(delta.seed_set.is_subset(&curr.node_set()));
        prop_assert_eq!(&delta.seed_set, &seed_oracle(&prev, &curr));
    }

    #[test]
    fn self_delta_is_empty(g in arb_graph(15)) {
        let parts = g.to_parts();
        let next = ccc_core::GraphSnapshot::new(ccc_core::SnapshotParts { timestep: 1, ..parts }).unwrap();
        let d = compute_delta(&g, &next).unwrap();
        prop_assert!(d.is_empty());
        prop_assert!(d.seed_set.is_empty());
    }

    #[test]
    fn neighbors_are_symmetric(g in arb_graph(15)) {
        for &u in g.node_ids() {
            for v in g.neighbors(u).unwrap() {
                prop_assert!(g.neighbors(v).unwrap().contains(&u));
            }
        }
    }
}

#[test]
fn khop_saturates_on_connected_graph() {
    let ids: BTreeSet<NodeId> = (1..=6).collect();
    let edges: BTreeSet<_> = (1..6).map(|i| (i, i + 1)).collect();
    let g = build(0, &ids, &edges, 2);
    assert_eq!(khop_region(&g, &[1].into(), 5).unwrap(), ids);
    assert_eq!(khop_region(&g, &[3].into(), 1).unwrap(), [2, 3, 4].into());
}
