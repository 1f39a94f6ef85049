//! Lifelong learning in a single fixed-capacity network.
//!
//! Each task trains on the capacity earlier tasks left free, is pruned to a
//! small disjoint slice of the network by ADMM, and may reuse earlier
//! tasks' weights through a learned binary mask. Earlier slices are never
//! modified, so earlier tasks cannot be forgotten.

pub mod admm;
pub mod cli;
pub mod error;
pub mod metrics;
pub mod netcore;
pub mod partition;
pub mod projection;
pub mod seed;
pub mod tasks;
pub mod trainer;

pub use error::{Error, Result};
