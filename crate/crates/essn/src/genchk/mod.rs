//! Workload generation, high-water-mark checking and the experiment grid.

pub mod checker;
pub mod experiment;
pub mod generator;
pub mod random;

pub use checker::{run_checker, CheckedTxn, CheckerError};
pub use generator::{generate_mixed, key_name, GenError, WorkloadParams};
