//! Experiment driver for RTO sampling studies.
//!
//! Every command takes an [`ExperimentConfig`], runs its samplers, and
//! writes CSV / JSON into `config.out` together with a `config-echo.json`
//! that is enough to rerun it.

pub mod config;
pub mod error;
pub mod experiment;
pub mod output;
pub mod studies;

pub use config::{ExperimentConfig, ModelKind, SamplerKind};
pub use error::{CliError, CliResult};
pub use experiment::{build_problem, run_sampler, Problem, Run};
pub use studies::{cmd_compare_pcn, cmd_dim_study, cmd_noise_study, cmd_sample, cmd_truncation_study};
