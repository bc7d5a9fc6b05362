//! Library surface of the experiment harness: configuration parsing and the
//! suite runners. The `surfmc` binary is a thin CLI wrapper over this.

pub mod config;
pub mod suites;

pub use config::ExperimentConfig;
pub use suites::{Harness, print_suite};
