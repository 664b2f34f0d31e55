//! Continual learning on dynamic graphs by condensing past snapshots into
//! small class-balanced graphs, learning a weight-evolving history model on
//! them, and replaying its embeddings only where the graph changed.
//!
//! The crate is `no_std` and needs only `alloc`.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod bench;
pub mod condense;
pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod history;
pub mod matrix;
pub mod metrics;
pub mod nn;
pub mod replay;

pub use error::{CccError, Result};
pub use graph::{GraphDelta, GraphSnapshot, NodeId, NodeRecord, SnapshotParts};
pub use matrix::{CsrMatrix, Matrix};
