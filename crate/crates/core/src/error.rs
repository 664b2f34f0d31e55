use alloc::string::String;
use alloc::vec::Vec;

use crate::graph::{NodeId, Violation};

pub type Result<T, E = CccError> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CccError {
    #[error("invalid snapshot: {} violation(s), first: {}", .0.len(), .0.first().map(|v| alloc::format!("{v}")).unwrap_or_default())]
    InvalidSnapshot(Vec<Violation>),
    #[error("non-consecutive snapshots: {prev} then {curr}")]
    NonConsecutive { prev: u32, curr: u32 },
    #[error("unknown seed node {0}")]
    UnknownSeed(NodeId),
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("budget too small: {budget} < {classes} non-empty classes")]
    BudgetTooSmall { budget: usize, classes: usize },
    #[error("budget {budget} exceeds {available} labeled nodes")]
    BudgetTooLarge { budget: usize, available: usize },
    #[error("cluster count {k} invalid for {rows} rows")]
    ClusterCount { k: usize, rows: usize },
    #[error("nothing to condense: snapshot has no labeled nodes")]
    NothingToCondense,
    #[error("condensing snapshot at timestep {timestep}: {source}")]
    AtTimestep {
        timestep: u32,
        #[source]
        source: alloc::boxed::Box<CccError>,
    },
    #[error("shape mismatch in {op}: expected {expected:?}, found {found:?}")]
    Shape {
        op: &'static str,
        expected: (usize, usize),
        found: (usize, usize),
    },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("no supervised nodes")]
    NoSupervisedNodes,
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("invalid label {label} for {classes} classes")]
    InvalidLabel { label: usize, classes: usize },
    #[error("invalid config field `{field}`: {reason}")]
    Config { field: &'static str, reason: String },
    #[error("unknown arm `{0}`")]
    UnknownArm(String),
}

impl CccError {
    pub(crate) fn config(field: &'static str, reason: impl Into<String>) -> Self {
        CccError::Config {
            field,
            reason: reason.into(),
        }
    }

    /// True for errors caused by NaN/Inf detection.
    pub fn is_numeric(&self) -> bool {
        match self {
            CccError::NonFinite(_) => true,
            CccError::AtTimestep { source, .. } => source.is_numeric(),
            _ => false,
        }
    }
}
