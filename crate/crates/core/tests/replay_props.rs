use std::collections::{BTreeMap, BTreeSet};

use ccc_core::condense::{condense_snapshot, CondenseConfig, CondensedGraph};
use ccc_core::graph::{compute_delta, khop_region, GraphSnapshot, NodeId, NodeRecord, SnapshotParts};
use ccc_core::history::{train_history, HistoryConfig};
use ccc_core::nn::{gcn_forward, normalize_adjacency, ModelDims, ModelState};
use ccc_core::replay::{match_nodes, selective_replay_step, ReplayConfig};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Two consecutive random snapshots sharing part of their node ids.
fn random_pair(seed: u64) -> (GraphSnapshot, GraphSnapshot) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let make = |t: u32, ids: Vec<NodeId>, rng: &mut ChaCha8Rng| {
        let nodes = ids
            .iter()
            .map(|&id| NodeRecord {
                id,
                features: (0..4).map(|_| rng.random_range(-1.0..1.0)).collect(),
                label: Some((id % 3) as usize),
            })
            .collect();
        let mut edges = BTreeSet::new();
        for (i, &a) in ids.iter().enumerate() {
            for &b in &ids[i + 1..] {
                if rng.random::<f64>() < 0.15 {
                    edges.insert((a.min(b), a.max(b)));
                }
            }
        }
        GraphSnapshot::new(SnapshotParts { timestep: t, nodes, edges: edges.into_iter().collect() }).unwrap()
    };
    let n = rng.random_range(8..25u64);
    let prev_ids: Vec<NodeId> = (0..n).collect();
    let keep_from = rng.random_range(0..4u64);
    let curr_ids: Vec<NodeId> = (keep_from..n + rng.random_range(0..4u64)).collect();
    let prev = make(0, prev_ids, &mut rng);
    let curr = make(1, curr_ids, &mut rng);
    (prev, curr)
}

fn pipeline(seed: u64, enabled: bool) -> (GraphSnapshot, GraphSnapshot, ccc_core::history::HistoryArtifacts, ModelState, ReplayConfig) {
    let (prev, curr) = random_pair(seed);
    let condensed = condense_snapshot(&prev, &CondenseConfig { seed, ..Default::default() }).unwrap();
    let art = train_history(&[condensed], 3, &HistoryConfig { hidden_dim: 5, epochs: 3, lr: 0.05, seed }).unwrap();
    let model = ModelState::init(
        ModelDims { input: 4, hidden: 6, classes: 3, extra: 5, evolving: false },
        seed ^ 0xABCD,
    );
    let cfg = ReplayConfig { k_hops: (seed % 3) as usize, match_threshold: 0.3, enabled };
    (prev, curr, art, model, cfg)
}

fn permute(c: &CondensedGraph, perm: &[usize]) -> CondensedGraph {
    // new row r holds old row perm[r]
    let mut inv = vec![0; perm.len()];
    for (r, &old) in perm.iter().enumerate() {
        inv[old] = r;
    }
    let mut out = c.clone();
    out.node_features = c.node_features.select_rows(perm);
    out.node_labels = perm.iter().map(|&o| c.node_labels[o]).collect();
    out.provenance = perm.iter().map(|&o| c.provenance[o].clone()).collect();
    for e in &mut out.edges {
        let (a, b) = (inv[e.i], inv[e.j]);
        e.i = a.min(b);
        e.j = a.max(b);
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn concatenation_keeps_current_block_and_zero_pads(seed in any::<u64>(), enabled in any::<bool>()) {
        let (prev, curr, art, model, cfg) = pipeline(seed, enabled);
        let out = selective_replay_step(&prev, &curr, &art, &model, &cfg).unwrap();
        let h_current = gcn_forward(&normalize_adjacency(&curr), curr.features(), &model.gcn_weights).unwrap();
        prop_assert_eq!(out.current_block(), h_current);

        let region = if enabled {
            khop_region(&curr, &compute_delta(&prev, &curr).unwrap().seed_set, cfg.k_hops).unwrap()
        } else {
            BTreeSet::new()
        };
        let hist = out.historical_block();
        for (r, id) in out.node_ids.iter().enumerate() {
            let matched = out.match_map[id];
            let eligible = region.contains(id) && matched.is_some();
            prop_assert_eq!(out.replay_mask[r], eligible);
            if eligible {
                prop_assert_eq!(hist.row(r), art.historical_embeddings.row(matched.unwrap()));
            } else {
                prop_assert!(hist.row(r).iter().all(|v| v.to_bits() == 0));
            }
        }
    }

    #[test]
    fn matching_follows_condensed_permutation(seed in any::<u64>(), rot in 0usize..16) {
        let (_, curr, art, _, _) = pipeline(seed, true);
        let c = &art.condensed_final;
        let n = c.len();
        let perm: Vec<usize> = (0..n).map(|r| (r * 7 + rot) % n).collect();
        prop_assume!(perm.iter().collect::<BTreeSet<_>>().len() == n);
        let base = match_nodes(&curr, c, 0.3).unwrap();
        let moved = match_nodes(&curr, &permute(c, &perm), 0.3).unwrap();
        let mut inv = BTreeMap::new();
        for (r, &old) in perm.iter().enumerate() {
            inv.insert(old, r);
        }
        for (id, m) in base {
            prop_assert_eq!(moved[&id], m.map(|o| inv[&o]));
        }
    }
}
