//! Task bookkeeping, Performance Mean and the node-level Forgetting Measure.

use alloc::collections::BTreeSet;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{CccError, Result};
use crate::graph::NodeId;
use crate::matrix::Matrix;

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Outcome of evaluating one task.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskRecord {
    pub task_index: usize,
    pub correct: BTreeSet<NodeId>,
    pub errors: BTreeSet<NodeId>,
    pub accuracy: f64,
}

impl TaskRecord {
    pub fn from_sets(task_index: usize, correct: BTreeSet<NodeId>, errors: BTreeSet<NodeId>) -> Self {
        let total = correct.len() + errors.len();
        let accuracy = if total == 0 {
            0.0
        } else {
            correct.len() as f64 / total as f64
        };
        Self {
            task_index,
            correct,
            errors,
            accuracy,
        }
    }

    pub fn evaluated(&self) -> BTreeSet<NodeId> {
        self.correct.union(&self.errors).copied().collect()
    }
}

/// Scores `eval` nodes by argmax over `logits`, whose rows align with
/// `node_ids` and `labels`.
pub fn evaluate_task(
    task_index: usize,
    logits: &Matrix,
    node_ids: &[NodeId],
    labels: &[Option<usize>],
    eval: &[NodeId],
) -> Result<TaskRecord> {
    if eval.is_empty() {
        return Err(CccError::Empty("evaluation set"));
    }
    let mut correct = BTreeSet::new();
    let mut errors = BTreeSet::new();
    for &id in eval {
        let row = node_ids
            .iter()
            .position(|&n| n == id)
            .ok_or(CccError::UnknownNode(id))?;
        let label = labels[row].ok_or(CccError::Empty("label on evaluated node"))?;
        if argmax(logits.row(row)) == label {
            correct.insert(id);
        } else {
            errors.insert(id);
        }
    }
    Ok(TaskRecord::from_sets(task_index, correct, errors))
}

/// Mean accuracy over tasks.
pub fn performance_mean(records: &[TaskRecord]) -> Result<f64> {
    if records.is_empty() {
        return Err(CccError::Empty("task records"));
    }
    Ok(records.iter().map(|r| r.accuracy).sum::<f64>() / records.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FmOutcome {
    pub value: f64,
    /// No node of the earlier correct set was re-evaluated; `value` is 0.
    pub degenerate: bool,
}

/// `|C_i ∩ E_{i+1}| / |C_i|`, where nodes of `C_i` that `next` no longer
/// evaluates (deleted in between) are dropped from both sides.
pub fn forgetting_measure(prev: &TaskRecord, next: &TaskRecord) -> FmOutcome {
    let surviving = prev
        .correct
        .iter()
        .filter(|id| next.correct.contains(id) || next.errors.contains(id))
        .count();
    if surviving == 0 {
        return FmOutcome {
            value: 0.0,
            degenerate: true,
        };
    }
    let forgotten = prev.correct.intersection(&next.errors).count();
    FmOutcome {
        value: forgotten as f64 / surviving as f64,
        degenerate: false,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FmSummary {
    pub pairwise: Vec<FmOutcome>,
    pub mean: f64,
}

/// Forgetting over each consecutive pair of tasks and its mean.
pub fn aggregate_fm(records: &[TaskRecord]) -> Result<FmSummary> {
    if records.len() < 2 {
        return Err(CccError::Empty("fewer than two task records"));
    }
    let pairwise: Vec<_> = records.windows(2).map(|w| forgetting_measure(&w[0], &w[1])).collect();
    let mean = pairwise.iter().map(|f| f.value).sum::<f64>() / pairwise.len() as f64;
    Ok(FmSummary { pairwise, mean })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSummary {
    pub i: usize,
    pub a_i: f64,
    #[serde(rename = "|C|")]
    pub correct: usize,
    #[serde(rename = "|E|")]
    pub errors: usize,
}

/// Serializable metrics for one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub per_task: Vec<TaskSummary>,
    pub pairwise_fm: Vec<f64>,
    pub pm: f64,
    pub fm_mean: f64,
    pub flags: Vec<String>,
}

impl MetricsReport {
    pub fn from_records(records: &[TaskRecord]) -> Result<Self> {
        let pm = performance_mean(records)?;
        let mut flags = Vec::new();
        let (pairwise_fm, fm_mean) = if records.len() >= 2 {
            let fm = aggregate_fm(records)?;
            for (k, f) in fm.pairwise.iter().enumerate() {
                if f.degenerate {
                    flags.push(alloc::format!(
                        "degenerate FM between tasks {} and {}",
                        records[k].task_index,
                        records[k + 1].task_index
                    ));
                }
            }
            (fm.pairwise.iter().map(|f| f.value).collect(), fm.mean)
        } else {
            flags.push(String::from("single task: FM undefined"));
            (Vec::new(), 0.0)
        };
        Ok(Self {
            per_task: records
                .iter()
                .map(|r| TaskSummary {
                    i: r.task_index,
                    a_i: r.accuracy,
                    correct: r.correct.len(),
                    errors: r.errors.len(),
                })
                .collect(),
            pairwise_fm,
            pm,
            fm_mean,
            flags,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn set(xs: &[NodeId]) -> BTreeSet<NodeId> {
        xs.iter().copied().collect()
    }

    fn rec(i: usize, c: &[NodeId], e: &[NodeId]) -> TaskRecord {
        TaskRecord::from_sets(i, set(c), set(e))
    }

    #[test]
    fn evaluate_examples() {
        let logits = Matrix::from_rows(&[
            vec![1.0, 0.0],
            vec![0.0, 1.0],
            vec![2.0, 1.0],
            vec![0.5, 0.5],
        ])
        .unwrap();
        let ids = [10, 11, 12, 13];
        let labels = [Some(0), Some(1), Some(0), Some(1)];
        let r = evaluate_task(0, &logits, &ids, &labels, &ids).unwrap();
        // row 13 ties and resolves to class 0, which is wrong
        assert_eq!(r.accuracy, 0.75);
        assert_eq!(r.correct.len(), 3);
        assert_eq!(r.errors, set(&[13]));

        let all = evaluate_task(0, &logits, &ids, &labels, &ids[..3]).unwrap();
        assert!(all.errors.is_empty() && all.accuracy == 1.0);
        let wrong = [Some(1), Some(0), Some(1), Some(1)];
        let none = evaluate_task(0, &logits, &ids, &wrong, &ids[..3]).unwrap();
        assert!(none.correct.is_empty() && none.accuracy == 0.0);

        assert!(evaluate_task(0, &logits, &ids, &labels, &[]).is_err());
        assert!(evaluate_task(0, &logits, &ids, &labels, &[99]).is_err());
    }

    #[test]
    fn pm_examples() {
        assert_eq!(performance_mean(&[rec(0, &[1], &[])]).unwrap(), 1.0);
        let r = [rec(0, &[1, 2, 3, 4], &[5]), rec(1, &[1, 2, 3], &[4, 5])];
        assert!((performance_mean(&r).unwrap() - 0.7).abs() < 1e-15);
        assert!(performance_mean(&[]).is_err());
    }

    #[test]
    fn fm_examples() {
        let prev = rec(0, &[1, 2, 3, 4], &[]);
        assert_eq!(forgetting_measure(&prev, &rec(1, &[1, 2, 3, 4], &[])).value, 0.0);
        let f = forgetting_measure(&prev, &rec(1, &[1, 2, 4], &[3, 5]));
        assert_eq!(f.value, 0.25);
        assert!(!f.degenerate);
        assert_eq!(forgetting_measure(&prev, &rec(1, &[], &[1, 2, 3, 4, 9])).value, 1.0);
    }

    #[test]
    fn fm_excludes_deleted_nodes() {
        let prev = rec(0, &[1, 2, 3, 4], &[7]);
        // 1 and 2 deleted, 3 forgotten, 4 kept
        let f = forgetting_measure(&prev, &rec(1, &[4], &[3]));
        assert_eq!(f.value, 0.5);
        let gone = forgetting_measure(&prev, &rec(1, &[8], &[9]));
        assert!(gone.degenerate && gone.value == 0.0);
        let empty = forgetting_measure(&rec(0, &[], &[1]), &rec(1, &[], &[1]));
        assert!(empty.degenerate);
    }

    #[test]
    fn aggregate_examples() {
        let a = rec(0, &[1, 2, 3, 4, 5], &[]);
        let b = rec(1, &[1, 2, 3, 4], &[5]);
        let c = rec(2, &[1, 2], &[3, 4, 5]);
        let two = aggregate_fm(&[a.clone(), b.clone()]).unwrap();
        assert_eq!(two.mean, forgetting_measure(&a, &b).value);
        // pairwise 1/5 and 2/4
        let three = aggregate_fm(&[a.clone(), b, c]).unwrap();
        assert!((three.mean - 0.35).abs() < 1e-15);
        let same = aggregate_fm(&[a.clone(), a.clone(), a.clone()]).unwrap();
        assert_eq!(same.mean, 0.0);
        assert!(aggregate_fm(&[a]).is_err());
    }

    #[test]
    fn fm_mean_of_point_two_and_point_four() {
        let a = rec(0, &[1, 2, 3, 4, 5], &[]);
        let b = rec(1, &[2, 3, 4, 5, 6], &[1]);
        let c = rec(2, &[4, 5, 6], &[2, 3]);
        let s = aggregate_fm(&[a, b, c]).unwrap();
        assert_eq!(s.pairwise[0].value, 0.2);
        assert_eq!(s.pairwise[1].value, 0.4);
        assert!((s.mean - 0.3).abs() < 1e-15);
    }

    #[test]
    fn report_flags_degenerate_pairs() {
        let r = MetricsReport::from_records(&[rec(0, &[1], &[]), rec(1, &[2], &[])]).unwrap();
        assert_eq!(r.flags.len(), 1);
        assert_eq!(r.per_task[0].correct, 1);
        let single = MetricsReport::from_records(&[rec(0, &[1], &[])]).unwrap();
        assert!(single.pairwise_fm.is_empty());
    }
}
