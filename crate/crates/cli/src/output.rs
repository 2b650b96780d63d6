//! Files written by the commands. All writes happen after sampling.

use crate::config::ExperimentConfig;
use crate::error::CliResult;
use crate::experiment::{ImportanceSummary, ProblemData, Run};
use rto_core::diagnostics::ChainStats;
use rto_core::samplers::PcnTuning;
use serde::Serialize;
use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

pub const VERSION: &str = concat!(env!("CARGO_PKG_NAME"), " ", env!("CARGO_PKG_VERSION"));

#[derive(Debug, Serialize)]
pub struct ConfigEcho<'a> {
    pub version: &'static str,
    pub command: &'a str,
    pub config: &'a ExperimentConfig,
    /// Problem data per run, keyed by a run label.
    pub problems: BTreeMap<String, &'a ProblemData>,
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    Ok(())
}

pub fn write_config_echo(
    dir: &Path,
    command: &str,
    cfg: &ExperimentConfig,
    problems: BTreeMap<String, &ProblemData>,
) -> CliResult<()> {
    fs::create_dir_all(dir)?;
    write_json(
        &dir.join("config-echo.json"),
        &ConfigEcho {
            version: VERSION,
            command,
            config: cfg,
            problems,
        },
    )
}

/// `step,accepted,log_weight,v0,v1,…` with `coordinates` state columns.
pub fn write_chain_csv(path: &Path, run: &Run, coordinates: usize) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["step".to_string(), "accepted".into(), "log_weight".into()];
    header.extend((0..coordinates).map(|j| format!("v{j}")));
    w.write_record(&header)?;
    let c = &run.chain;
    for k in 0..c.len() {
        let mut row = vec![k.to_string(), u8::from(c.accepted[k]).to_string(), c.log_weights[k].to_string()];
        row.extend((0..coordinates).map(|j| c.states[k][j].to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Contents of stats.json.
#[derive(Debug, Serialize)]
pub struct RunReport<'a> {
    pub sampler: &'static str,
    pub dim: usize,
    pub seed: u64,
    pub stats: &'a ChainStats,
    pub importance: Option<&'a ImportanceSummary>,
    pub rank: Option<usize>,
    pub beta: Option<f64>,
    pub tuning: Option<&'a PcnTuning>,
    pub setup_seconds: f64,
    pub tuning_seconds: f64,
    pub total_seconds: f64,
    pub cpu_per_proposal: f64,
    pub cpu_per_ess: f64,
    pub warnings: &'a [String],
}

impl<'a> RunReport<'a> {
    pub fn new(run: &'a Run) -> Self {
        Self {
            sampler: run.sampler.name(),
            dim: run.chain.dim(),
            seed: run.chain.seed,
            stats: &run.stats,
            importance: run.importance.as_ref(),
            rank: run.rank,
            beta: run.beta,
            tuning: run.tuning.as_ref(),
            setup_seconds: run.setup_seconds,
            tuning_seconds: run.tuning_seconds,
            total_seconds: run.total_seconds(),
            cpu_per_proposal: run.cpu_per_proposal(),
            cpu_per_ess: run.cpu_per_ess(),
            warnings: &run.warnings,
        }
    }
}

pub fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}
