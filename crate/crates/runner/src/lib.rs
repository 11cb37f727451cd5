//! Experiment orchestration for fidelity decay studies.
//!
//! Each subcommand of the `fidelity` binary is a function in
//! [`experiments`] taking a [`RunConfig`] and returning a typed report;
//! reports know how to write themselves through an [`output::Sink`], which
//! adds a metadata sidecar to every file and a manifest to every run.

pub mod config;
pub mod error;
pub mod experiments;
pub mod output;

pub use config::RunConfig;
pub use error::{RunError, RunResult};
