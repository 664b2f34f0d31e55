//! Training-free graph condensation.
//!
//! A snapshot is condensed by splitting a node budget across classes in
//! proportion to label frequency, clustering each class into that many
//! groups, and connecting the resulting centroids whenever their cosine
//! similarity reaches a threshold.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CccError, Result};
use crate::graph::{GraphSnapshot, NodeId};
use crate::matrix::Matrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CondenseConfig {
    /// Condensed node count. `None` picks `max(10, ceil(0.1 * N))`, capped
    /// at the number of labeled nodes.
    pub budget: Option<usize>,
    pub sim_threshold: f64,
    pub cluster_iters: usize,
    pub seed: u64,
}

impl Default for CondenseConfig {
    fn default() -> Self {
        Self {
            budget: None,
            sim_threshold: 0.5,
            cluster_iters: 20,
            seed: 0,
        }
    }
}

impl CondenseConfig {
    pub fn validate(&self) -> Result<()> {
        if !(-1.0..=1.0).contains(&self.sim_threshold) {
            return Err(CccError::config("condense.sim_threshold", "must lie in [-1, 1]"));
        }
        if self.cluster_iters == 0 {
            return Err(CccError::config("condense.cluster_iters", "must be positive"));
        }
        if self.budget == Some(0) {
            return Err(CccError::config("condense.budget", "must be positive"));
        }
        Ok(())
    }

    /// Budget actually used for a snapshot with `nodes` nodes of which
    /// `labeled` carry a label.
    pub fn resolve_budget(&self, nodes: usize, labeled: usize) -> usize {
        match self.budget {
            Some(b) => b,
            None => {
                let tenth = nodes.div_ceil(10);
                tenth.max(10).min(labeled)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightedEdge {
    pub i: usize,
    pub j: usize,
    pub sim: f64,
}

/// Output of condensation: class-cluster centroids joined by
/// similarity-gated weighted edges.
#[derive(Debug, Clone, PartialEq)]
pub struct CondensedGraph {
    pub timestep: u32,
    pub theta: f64,
    pub node_features: Matrix,
    pub node_labels: Vec<usize>,
    pub edges: Vec<WeightedEdge>,
    /// Original node ids folded into each condensed node.
    pub provenance: Vec<Vec<NodeId>>,
    /// Condensed nodes with an all-zero feature vector; their similarity to
    /// anything is defined as 0.
    pub zero_norm_nodes: Vec<usize>,
}

impl CondensedGraph {
    pub fn len(&self) -> usize {
        self.node_labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.node_labels.is_empty()
    }

    pub fn budget(&self) -> usize {
        self.len()
    }

    pub fn label_histogram(&self) -> BTreeMap<usize, usize> {
        let mut h = BTreeMap::new();
        for &y in &self.node_labels {
            *h.entry(y).or_insert(0) += 1;
        }
        h
    }

    /// Unweighted view of the edge list.
    pub fn edge_pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.edges.iter().map(|e| (e.i, e.j))
    }
}

/// Splits `budget` across classes proportionally to `label_counts` using
/// largest-remainder rounding, with at least one slot per non-empty class.
///
/// Remainders are compared exactly in integer arithmetic; ties go to the
/// lower class index. When the one-slot minimum overshoots the budget,
/// slots are taken back from the most over-allocated class.
pub fn allocate_budget(
    label_counts: &BTreeMap<usize, usize>,
    budget: usize,
) -> Result<BTreeMap<usize, usize>> {
    let present: Vec<(usize, u128)> = label_counts
        .iter()
        .filter(|(_, &n)| n > 0)
        .map(|(&c, &n)| (c, n as u128))
        .collect();
    if present.is_empty() {
        return Err(CccError::Empty("label counts"));
    }
    if budget < present.len() {
        return Err(CccError::BudgetTooSmall {
            budget,
            classes: present.len(),
        });
    }
    let total: u128 = present.iter().map(|(_, n)| n).sum();
    let b = budget as u128;
    // scaled quota of class c is b * n_c; comparisons happen in units of 1/total
    let mut alloc: Vec<(usize, u128, u128)> = present
        .iter()
        .map(|&(c, n)| (c, b * n, ((b * n) / total).max(1)))
        .collect();
    let mut sum: u128 = alloc.iter().map(|a| a.2).sum();

    if sum < b {
        let mut order: Vec<usize> = (0..alloc.len())
            .filter(|&i| alloc[i].2 * total <= alloc[i].1)
            .collect();
        order.sort_by(|&x, &y| {
            let rx = alloc[x].1 % total;
            let ry = alloc[y].1 % total;
            ry.cmp(&rx).then(alloc[x].0.cmp(&alloc[y].0))
        });
        for &i in order.iter().take((b - sum) as usize) {
            alloc[i].2 += 1;
        }
        sum = b;
    }
    while sum > b {
        // over-allocation a_c * total - quota_c, signed
        let pick = (0..alloc.len())
            .filter(|&i| alloc[i].2 > 1)
            .max_by(|&x, &y| {
                let ox = alloc[x].2 as i128 * total as i128 - alloc[x].1 as i128;
                let oy = alloc[y].2 as i128 * total as i128 - alloc[y].1 as i128;
                ox.cmp(&oy).then(alloc[y].0.cmp(&alloc[x].0))
            })
            .expect("budget >= class count leaves a reducible class");
        alloc[pick].2 -= 1;
        sum -= 1;
    }
    Ok(alloc.into_iter().map(|(c, _, a)| (c, a as usize)).collect())
}

/// Result of clustering one class.
#[derive(Debug, Clone, PartialEq)]
pub struct Clustering {
    pub centroids: Matrix,
    pub assignment: Vec<usize>,
    /// Sum of squared distances after every assignment step.
    pub objective_trace: Vec<f64>,
}

impl Clustering {
    pub fn objective(&self) -> f64 {
        *self.objective_trace.last().unwrap_or(&0.0)
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn assign(points: &Matrix, centroids: &Matrix, assignment: &mut [usize]) -> f64 {
    let mut obj = 0.0;
    for (r, slot) in assignment.iter_mut().enumerate() {
        let p = points.row(r);
        let mut best = (0, f64::INFINITY);
        for c in 0..centroids.rows() {
            let d = sq_dist(p, centroids.row(c));
            if d < best.1 {
                best = (c, d);
            }
        }
        *slot = best.0;
        obj += best.1;
    }
    obj
}

/// Seeded k-means++ initialization followed by Lloyd iterations.
///
/// Empty clusters are re-seeded with the point farthest from its current
/// centroid, so the objective never increases.
pub fn cluster_class(features: &Matrix, k: usize, iters: usize, seed: u64) -> Result<Clustering> {
    let rows = features.rows();
    if k == 0 || k > rows {
        return Err(CccError::ClusterCount { k, rows });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen: Vec<usize> = Vec::with_capacity(k);
    chosen.push(rng.random_range(0..rows));
    let mut nearest: Vec<f64> = (0..rows)
        .map(|r| sq_dist(features.row(r), features.row(chosen[0])))
        .collect();
    while chosen.len() < k {
        let total: f64 = nearest.iter().sum();
        let next = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = None;
            for (r, &d) in nearest.iter().enumerate() {
                acc += d;
                if d > 0.0 && acc > target {
                    pick = Some(r);
                    break;
                }
            }
            // rounding can leave target above the final partial sum
            pick.unwrap_or_else(|| nearest.iter().rposition(|&d| d > 0.0).unwrap())
        } else {
            (0..rows).find(|r| !chosen.contains(r)).unwrap()
        };
        chosen.push(next);
        for (r, slot) in nearest.iter_mut().enumerate() {
            *slot = slot.min(sq_dist(features.row(r), features.row(next)));
        }
    }
    let mut centroids = features.select_rows(&chosen);
    let mut assignment = vec![0; rows];
    let mut trace = vec![assign(features, &centroids, &mut assignment)];

    for _ in 0..iters {
        let d = features.cols();
        let mut sums = Matrix::zeros(k, d);
        let mut counts = vec![0usize; k];
        for (r, &c) in assignment.iter().enumerate() {
            counts[c] += 1;
            for (s, &v) in sums.row_mut(c).iter_mut().zip(features.row(r)) {
                *s += v;
            }
        }
        let mut taken = vec![false; rows];
        for (c, &cnt) in counts.iter().enumerate() {
            if cnt > 0 {
                let n = cnt as f64;
                for (dst, &s) in centroids.row_mut(c).iter_mut().zip(sums.row(c)) {
                    *dst = s / n;
                }
            }
        }
        for c in 0..k {
            if counts[c] == 0 {
                let far = (0..rows)
                    .filter(|&r| !taken[r] && counts[assignment[r]] > 1)
                    .max_by(|&x, &y| {
                        let dx = sq_dist(features.row(x), centroids.row(assignment[x]));
                        let dy = sq_dist(features.row(y), centroids.row(assignment[y]));
                        dx.total_cmp(&dy).then(y.cmp(&x))
                    });
                if let Some(r) = far {
                    taken[r] = true;
                    counts[assignment[r]] -= 1;
                    counts[c] = 1;
                    centroids.row_mut(c).copy_from_slice(features.row(r));
                }
            }
        }
        let before = assignment.clone();
        trace.push(assign(features, &centroids, &mut assignment));
        if before == assignment {
            break;
        }
    }
    Ok(Clustering {
        centroids,
        assignment,
        objective_trace: trace,
    })
}

/// Cosine similarity clamped to `[-1, 1]`; zero when either vector has zero
/// norm.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut dot = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for (&x, &y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (dot / libm::sqrt(na * nb)).clamp(-1.0, 1.0)
}

/// Every pair `i < j` whose cosine similarity is at least `theta`.
pub fn build_edges(nodes: &Matrix, theta: f64) -> Vec<WeightedEdge> {
    let mut out = Vec::new();
    for i in 0..nodes.rows() {
        for j in i + 1..nodes.rows() {
            let sim = cosine_similarity(nodes.row(i), nodes.row(j));
            if sim >= theta {
                out.push(WeightedEdge { i, j, sim });
            }
        }
    }
    out
}

/// Per-node clustering input: own features followed by the mean of the
/// 1-hop neighbors' features (own features again when isolated).
pub fn aggregate_features(s: &GraphSnapshot) -> Matrix {
    let x = s.features();
    let d = x.cols();
    let mut out = Matrix::zeros(s.len(), 2 * d);
    for v in 0..s.len() {
        let row = out.row_mut(v);
        row[..d].copy_from_slice(x.row(v));
        let nbrs = s.neighbor_indices(v);
        if nbrs.is_empty() {
            row[d..].copy_from_slice(x.row(v));
        } else {
            for &u in nbrs {
                for (dst, &val) in row[d..].iter_mut().zip(x.row(u)) {
                    *dst += val;
                }
            }
            let n = nbrs.len() as f64;
            for dst in &mut row[d..] {
                *dst /= n;
            }
        }
    }
    out
}

fn class_seed(seed: u64, class: usize) -> u64 {
    seed ^ (class as u64).wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Condenses one snapshot into `budget` labeled centroid nodes.
pub fn condense_snapshot(s: &GraphSnapshot, cfg: &CondenseConfig) -> Result<CondensedGraph> {
    cfg.validate()?;
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, y) in s.labels().iter().enumerate() {
        if let Some(y) = y {
            by_class.entry(*y).or_default().push(i);
        }
    }
    let labeled: usize = by_class.values().map(Vec::len).sum();
    if labeled == 0 {
        return Err(CccError::NothingToCondense);
    }
    let budget = cfg.resolve_budget(s.len(), labeled);
    if budget > labeled {
        return Err(CccError::BudgetTooLarge {
            budget,
            available: labeled,
        });
    }
    let counts = by_class.iter().map(|(&c, v)| (c, v.len())).collect();
    let alloc = allocate_budget(&counts, budget)?;

    let aggregated = aggregate_features(s);
    let raw = s.features();
    let d = raw.cols();
    let mut features = Vec::with_capacity(budget * d);
    let mut labels = Vec::with_capacity(budget);
    let mut provenance = Vec::with_capacity(budget);

    for (&class, members) in &by_class {
        let k = alloc[&class];
        let clustering = cluster_class(
            &aggregated.select_rows(members),
            k,
            cfg.cluster_iters,
            class_seed(cfg.seed, class),
        )?;
        let mut groups: Vec<Vec<usize>> = vec![Vec::new(); k];
        for (m, &c) in clustering.assignment.iter().enumerate() {
            groups[c].push(members[m]);
        }
        for group in groups {
            let mut centroid = vec![0.0; d];
            for &v in &group {
                for (dst, &val) in centroid.iter_mut().zip(raw.row(v)) {
                    *dst += val;
                }
            }
            if !group.is_empty() {
                let n = group.len() as f64;
                centroid.iter_mut().for_each(|c| *c /= n);
            }
            features.extend(centroid);
            labels.push(class);
            let mut ids: Vec<NodeId> = group.iter().map(|&v| s.node_ids()[v]).collect();
            ids.sort_unstable();
            provenance.push(ids);
        }
    }
    let node_features = Matrix::from_vec(budget, d, features)?;
    let zero_norm_nodes = (0..budget)
        .filter(|&i| node_features.row(i).iter().all(|&v| v == 0.0))
        .collect();
    let edges = build_edges(&node_features, cfg.sim_threshold);
    Ok(CondensedGraph {
        timestep: s.timestep(),
        theta: cfg.sim_threshold,
        node_features,
        node_labels: labels,
        edges,
        provenance,
        zero_norm_nodes,
    })
}

/// Condenses each snapshot with the same config, offsetting the seed by the
/// snapshot's timestep.
pub fn condense_sequence(snaps: &[GraphSnapshot], cfg: &CondenseConfig) -> Result<Vec<CondensedGraph>> {
    if snaps.is_empty() {
        return Err(CccError::Empty("snapshot sequence"));
    }
    snaps
        .iter()
        .map(|s| {
            let cfg = CondenseConfig {
                seed: cfg.seed.wrapping_add(s.timestep() as u64),
                ..cfg.clone()
            };
            condense_snapshot(s, &cfg).map_err(|e| CccError::AtTimestep {
                timestep: s.timestep(),
                source: alloc::boxed::Box::new(e),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{NodeRecord, SnapshotParts};
    use alloc::vec;

    fn counts(xs: &[(usize, usize)]) -> BTreeMap<usize, usize> {
        xs.iter().copied().collect()
    }

    // expected values from exact fractions: 6.0/4.0, 7.0, and 0.03/0.03/2.94
    #[test]
    fn allocate_examples() {
        assert_eq!(
            allocate_budget(&counts(&[(0, 60), (1, 40)]), 10).unwrap(),
            counts(&[(0, 6), (1, 4)])
        );
        assert_eq!(allocate_budget(&counts(&[(0, 100)]), 7).unwrap(), counts(&[(0, 7)]));
        assert_eq!(
            allocate_budget(&counts(&[(0, 1), (1, 1), (2, 98)]), 3).unwrap(),
            counts(&[(0, 1), (1, 1), (2, 1)])
        );
        // remainders .5/.5: tie goes to the lower class index
        assert_eq!(
            allocate_budget(&counts(&[(0, 1), (1, 1)]), 3).unwrap(),
            counts(&[(0, 2), (1, 1)])
        );
    }

    #[test]
    fn allocate_rejects_small_budget() {
        assert_eq!(
            allocate_budget(&counts(&[(0, 5), (1, 5), (2, 5)]), 2).unwrap_err(),
            CccError::BudgetTooSmall { budget: 2, classes: 3 }
        );
    }

    #[test]
    fn clustering_examples() {
        let pts = Matrix::from_rows(&[vec![0.0], vec![0.1], vec![10.0], vec![10.1]]).unwrap();
        let c = cluster_class(&pts, 2, 20, 3).unwrap();
        let mut cents: Vec<f64> = (0..2).map(|i| c.centroids[(i, 0)]).collect();
        cents.sort_by(f64::total_cmp);
        assert!((cents[0] - 0.05).abs() < 1e-12 && (cents[1] - 10.05).abs() < 1e-12);

        let all = cluster_class(&pts, 4, 5, 9).unwrap();
        assert_eq!(all.objective(), 0.0);

        let one = cluster_class(&pts, 1, 5, 1).unwrap();
        assert!((one.centroids[(0, 0)] - pts.column_mean()[0]).abs() < 1e-12);

        assert!(cluster_class(&pts, 5, 5, 1).is_err());
        assert!(cluster_class(&pts, 0, 5, 1).is_err());
    }

    #[test]
    fn duplicate_points_still_fill_every_cluster() {
        let pts = Matrix::from_rows(&[vec![1.0], vec![1.0], vec![1.0], vec![2.0]]).unwrap();
        let c = cluster_class(&pts, 3, 10, 0).unwrap();
        assert_eq!(c.objective(), 0.0);
    }

    #[test]
    fn cosine_examples() {
        assert!((cosine_similarity(&[0.3, -2.0], &[0.3, -2.0]) - 1.0).abs() < 1e-15);
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[0.0, 1.0]), 0.0);
        assert!((cosine_similarity(&[1.0, 0.0], &[1.0, 1.0]) - core::f64::consts::FRAC_1_SQRT_2).abs() < 1e-9);
        assert_eq!(cosine_similarity(&[0.0, 0.0], &[1.0, 1.0]), 0.0);
    }

    #[test]
    fn edge_examples() {
        let v = Matrix::from_rows(&[vec![1.0, 0.0], vec![1.0, 1.0], vec![0.0, 1.0]]).unwrap();
        let pairs: Vec<_> = build_edges(&v, 0.7).iter().map(|e| (e.i, e.j)).collect();
        assert_eq!(pairs, vec![(0, 1), (1, 2)]);
        assert_eq!(build_edges(&v, -1.0).len(), 3);
        let par = Matrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 4.0], vec![0.0, 1.0]]).unwrap();
        let pairs: Vec<_> = build_edges(&par, 1.0).iter().map(|e| (e.i, e.j)).collect();
        assert_eq!(pairs, vec![(0, 1)]);
    }

    fn two_class_snapshot(n: usize, first: usize, t: u32) -> GraphSnapshot {
        let nodes = (0..n)
            .map(|i| NodeRecord {
                id: i as NodeId,
                features: vec![(i % 7) as f64, (i % 3) as f64 + 0.5, if i < first { 1.0 } else { -1.0 }],
                label: Some(if i < first { 0 } else { 1 }),
            })
            .collect();
        let edges = (0..n as NodeId - 1).map(|i| (i, i + 1)).collect();
        GraphSnapshot::new(SnapshotParts { timestep: t, nodes, edges }).unwrap()
    }

    #[test]
    fn condense_histogram_follows_allocation() {
        let s = two_class_snapshot(100, 60, 0);
        let cfg = CondenseConfig { budget: Some(10), ..Default::default() };
        let g = condense_snapshot(&s, &cfg).unwrap();
        assert_eq!(g.len(), 10);
        assert_eq!(g.label_histogram(), counts(&[(0, 6), (1, 4)]));
        for e in &g.edges {
            assert!(e.sim >= cfg.sim_threshold && e.i < e.j);
        }
        let members: usize = g.provenance.iter().map(Vec::len).sum();
        assert_eq!(members, 100);
        assert_eq!(condense_snapshot(&s, &cfg).unwrap(), g);
    }

    #[test]
    fn full_budget_reproduces_original_features() {
        let s = two_class_snapshot(12, 5, 0);
        let cfg = CondenseConfig { budget: Some(12), sim_threshold: -1.0, ..Default::default() };
        let g = condense_snapshot(&s, &cfg).unwrap();
        assert_eq!(g.edges.len(), 12 * 11 / 2);
        for (i, prov) in g.provenance.iter().enumerate() {
            assert_eq!(prov.len(), 1);
            let v = s.index_of(prov[0]).unwrap();
            assert_eq!(g.node_features.row(i), s.features().row(v));
        }
    }

    #[test]
    fn condense_errors() {
        let parts = SnapshotParts {
            timestep: 0,
            nodes: vec![NodeRecord { id: 0, features: vec![1.0], label: None }],
            edges: vec![],
        };
        let s = GraphSnapshot::new(parts).unwrap();
        assert_eq!(
            condense_snapshot(&s, &CondenseConfig::default()).unwrap_err(),
            CccError::NothingToCondense
        );
        let s = two_class_snapshot(5, 2, 0);
        let cfg = CondenseConfig { budget: Some(6), ..Default::default() };
        assert!(matches!(condense_snapshot(&s, &cfg), Err(CccError::BudgetTooLarge { .. })));
        let cfg = CondenseConfig { sim_threshold: 1.5, ..Default::default() };
        assert!(matches!(condense_snapshot(&s, &cfg), Err(CccError::Config { .. })));
    }

    #[test]
    fn sequence_tags_errors_and_keeps_budget() {
        let cfg = CondenseConfig { budget: Some(8), ..Default::default() };
        let seq: Vec<_> = (0..3).map(|t| two_class_snapshot(40, 20, t)).collect();
        let out = condense_sequence(&seq, &cfg).unwrap();
        assert_eq!(out.len(), 3);
        assert!(out.iter().all(|g| g.len() == 8));
        assert_eq!(condense_sequence(&seq[..1], &cfg).unwrap().len(), 1);

        let cfg = CondenseConfig { budget: Some(50), ..Default::default() };
        let err = condense_sequence(&seq, &cfg).unwrap_err();
        assert!(matches!(err, CccError::AtTimestep { timestep: 0, .. }));
        assert!(condense_sequence(&[], &cfg).is_err());
    }

    #[test]
    fn default_budget_rule() {
        let cfg = CondenseConfig::default();
        assert_eq!(cfg.resolve_budget(120, 120), 12);
        assert_eq!(cfg.resolve_budget(50, 50), 10);
        assert_eq!(cfg.resolve_budget(6, 4), 4);
    }
}
