//! Planning and cost simulation for distributed attention over
//! variable-length sequence batches.

pub mod attention;
pub mod baselines;
pub mod error;
pub mod partitioner;
pub mod remap;
pub mod routing;
pub mod simulator;
pub mod topology;
pub mod workload;

pub use error::{Error, Result};
