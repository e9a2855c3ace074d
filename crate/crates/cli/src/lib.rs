//! Operator surface for the membership-inference pipeline: a TOML run
//! config, a hash-keyed artifact workspace, and one function per stage.

pub mod config;
pub mod error;
pub mod pipeline;
pub mod workspace;

pub use config::RunConfig;
pub use error::{CliError, CliResult};
pub use pipeline::{AblationReport, BenchReport, EvalReport, Hashes, Pipeline, StageOutcome, Subset};
