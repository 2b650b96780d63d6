//! The five commands. Each returns its rows so tests can inspect them, and
//! writes its files into `cfg.out`.

use crate::config::{ExperimentConfig, SamplerKind};
use crate::error::{CliError, CliResult};
use crate::experiment::{build_problem, run_sampler, Problem, Run};
use crate::output::{write_chain_csv, write_config_echo, write_json, write_rows, RunReport};
use rto_core::rto::{build_svd_basis, find_reference, reference_options, RtoMap};
use rto_core::Vector;
use serde::Serialize;
use std::collections::BTreeMap;

/// ESS below which (or acceptance below 1%) a chain is reported as not
/// converged.
pub const MIN_CONVERGED_ESS: f64 = 10.0;
pub const MIN_CONVERGED_ACCEPTANCE: f64 = 0.01;

/// Writes chain.csv, stats.json and config-echo.json.
pub fn cmd_sample(cfg: &ExperimentConfig) -> CliResult<Run> {
    cfg.validate()?;
    let problem = build_problem(&cfg.model)?;
    let run = run_sampler(cfg, &problem)?;
    let dir = &cfg.out;
    write_config_echo(dir, "sample", cfg, BTreeMap::from([("sample".to_string(), &problem.data)]))?;
    let coords = cfg.sampler.record_coordinates.unwrap_or(usize::MAX).min(run.chain.dim());
    write_chain_csv(&dir.join("chain.csv"), &run, coords)?;
    write_json(&dir.join("stats.json"), &RunReport::new(&run))?;
    Ok(run)
}

/// One row of cpu_vs_dim.csv / cpu_vs_obs.csv.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StudyRow {
    pub sampler: &'static str,
    pub n: usize,
    pub sigma: f64,
    pub rank: Option<usize>,
    pub acceptance: f64,
    pub median_ess: f64,
    pub ess_fraction: f64,
    pub mean_iterations: f64,
    pub forward_evals_per_proposal: f64,
    pub jvp_evals_per_proposal: f64,
    pub vjp_evals_per_proposal: f64,
    pub cpu_per_proposal: f64,
    pub cpu_per_ess: f64,
    pub total_seconds: f64,
}

impl StudyRow {
    pub fn new(cfg: &ExperimentConfig, run: &Run) -> Self {
        let per = |x: usize| x as f64 / run.proposals as f64;
        Self {
            sampler: run.sampler.name(),
            n: run.chain.dim(),
            sigma: cfg.model.sigma,
            rank: run.rank,
            acceptance: run.stats.acceptance,
            median_ess: run.stats.median_ess,
            ess_fraction: run.stats.ess_fraction,
            mean_iterations: run.mean_iterations(),
            forward_evals_per_proposal: per(run.stats.cost.forward_evals),
            jvp_evals_per_proposal: per(run.stats.cost.jvp_evals),
            vjp_evals_per_proposal: per(run.stats.cost.vjp_evals),
            cpu_per_proposal: run.cpu_per_proposal(),
            cpu_per_ess: run.cpu_per_ess(),
            total_seconds: run.total_seconds(),
        }
    }
}

fn run_labelled(cfg: &ExperimentConfig, problems: &mut Vec<(String, Problem)>, label: String) -> CliResult<Run> {
    let problem = build_problem(&cfg.model)?;
    let run = run_sampler(cfg, &problem)?;
    problems.push((label, problem));
    Ok(run)
}

fn echo(cfg: &ExperimentConfig, command: &str, problems: &[(String, Problem)]) -> CliResult<()> {
    let map = problems.iter().map(|(k, p)| (k.clone(), &p.data)).collect();
    write_config_echo(&cfg.out, command, cfg, map)
}

/// Samplers compared in the dimension study.
fn dim_samplers(cfg: &ExperimentConfig) -> Vec<SamplerKind> {
    let mut out = vec![cfg.sampler.kind];
    if cfg.study.include_standard && cfg.sampler.kind != SamplerKind::RtoStandard {
        out.push(SamplerKind::RtoStandard);
    }
    out
}

/// One row per `(sampler, n)`; writes cpu_vs_dim.csv.
pub fn cmd_dim_study(cfg: &ExperimentConfig) -> CliResult<Vec<StudyRow>> {
    cfg.validate_dims()?;
    let mut rows = Vec::new();
    let mut problems = Vec::new();
    for kind in dim_samplers(cfg) {
        for &n in &cfg.study.dims {
            let mut c = cfg.clone();
            c.model.n = n;
            c.sampler.kind = kind;
            let run = run_labelled(&c, &mut problems, format!("{}-n{n}", kind.name()))?;
            rows.push(StudyRow::new(&c, &run));
        }
    }
    std::fs::create_dir_all(&cfg.out)?;
    echo(cfg, "dim-study", &problems)?;
    write_rows(&cfg.out.join("cpu_vs_dim.csv"), &rows)?;
    Ok(rows)
}

/// One row per σ; writes cpu_vs_obs.csv.
pub fn cmd_noise_study(cfg: &ExperimentConfig) -> CliResult<Vec<StudyRow>> {
    cfg.validate_sigmas()?;
    let mut rows = Vec::new();
    let mut problems = Vec::new();
    for &sigma in &cfg.study.sigmas {
        let mut c = cfg.clone();
        c.model.sigma = sigma;
        let run = run_labelled(&c, &mut problems, format!("sigma{sigma:e}"))?;
        rows.push(StudyRow::new(&c, &run));
    }
    std::fs::create_dir_all(&cfg.out)?;
    echo(cfg, "noise-study", &problems)?;
    write_rows(&cfg.out.join("cpu_vs_obs.csv"), &rows)?;
    Ok(rows)
}

/// One row of pcn_comparison.csv.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonRow {
    pub sigma: f64,
    pub sampler: &'static str,
    pub beta: Option<f64>,
    pub steps: usize,
    pub acceptance: f64,
    pub median_ess: f64,
    pub total_seconds: f64,
    pub cpu_per_ess: f64,
    /// False marks an estimate from a chain that did not mix.
    pub converged: bool,
}

impl ComparisonRow {
    fn new(sigma: f64, run: &Run) -> Self {
        Self {
            sigma,
            sampler: run.sampler.name(),
            beta: run.beta,
            steps: run.proposals,
            acceptance: run.stats.acceptance,
            median_ess: run.stats.median_ess,
            total_seconds: run.total_seconds(),
            cpu_per_ess: run.cpu_per_ess(),
            converged: run.stats.acceptance >= MIN_CONVERGED_ACCEPTANCE && run.stats.median_ess >= MIN_CONVERGED_ESS,
        }
    }
}

/// RTO (the configured variant, scalable unless an RTO sampler is chosen)
/// against tuned pCN at every σ; writes pcn_comparison.csv.
pub fn cmd_compare_pcn(cfg: &ExperimentConfig) -> CliResult<Vec<ComparisonRow>> {
    cfg.validate_sigmas()?;
    if cfg.study.pcn_steps < 20 {
        return Err(CliError::Config("pcn_steps must be at least 20".into()));
    }
    let rto_kind = match cfg.sampler.kind {
        k @ (SamplerKind::RtoStandard | SamplerKind::RtoScalable) => k,
        _ => SamplerKind::RtoScalable,
    };
    let mut rows = Vec::new();
    let mut problems = Vec::new();
    for &sigma in &cfg.study.sigmas {
        let mut c = cfg.clone();
        c.model.sigma = sigma;
        c.sampler.kind = rto_kind;
        let problem = build_problem(&c.model)?;
        let run = run_sampler(&c, &problem)?;
        rows.push(ComparisonRow::new(sigma, &run));
        c.sampler.kind = SamplerKind::Pcn;
        c.sampler.chain_length = cfg.study.pcn_steps;
        let run = run_sampler(&c, &problem)?;
        rows.push(ComparisonRow::new(sigma, &run));
        problems.push((format!("sigma{sigma:e}"), problem));
    }
    std::fs::create_dir_all(&cfg.out)?;
    echo(cfg, "compare-pcn", &problems)?;
    write_rows(&cfg.out.join("pcn_comparison.csv"), &rows)?;
    Ok(rows)
}

/// One row of truncation.csv. The last row is the standard-RTO run on the
/// same instance, with no threshold.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TruncationRow {
    pub sampler: &'static str,
    pub tau: Option<f64>,
    pub rank: Option<usize>,
    pub acceptance: f64,
    pub median_ess: f64,
    pub ess_fraction: f64,
}

/// One point of density_grid.csv: prior, normalized target and proposal
/// densities in whitened coordinates.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridRow {
    pub tau: f64,
    pub rank: usize,
    pub x1: f64,
    pub x2: f64,
    pub prior: f64,
    pub target: f64,
    pub proposal: f64,
}

pub struct TruncationOutcome {
    pub rows: Vec<TruncationRow>,
    /// Empty unless the parameter is two-dimensional.
    pub grid: Vec<GridRow>,
}

/// Trapezoid weights of a uniform 1D grid.
pub fn trapezoid_weights(points: usize, h: f64) -> Vec<f64> {
    (0..points)
        .map(|i| if i == 0 || i + 1 == points { 0.5 * h } else { h })
        .collect()
}

pub fn grid_axis(points: usize, half_width: f64) -> (Vec<f64>, f64) {
    let h = 2.0 * half_width / (points - 1) as f64;
    ((0..points).map(|i| -half_width + i as f64 * h).collect(), h)
}

/// Scalable RTO at every threshold plus one standard-RTO run; writes
/// truncation.csv and, in two dimensions, density_grid.csv.
pub fn cmd_truncation_study(cfg: &ExperimentConfig) -> CliResult<TruncationOutcome> {
    cfg.validate_thresholds()?;
    let problem = build_problem(&cfg.model)?;
    let mut rows = Vec::new();
    for &tau in &cfg.study.thresholds {
        let mut c = cfg.clone();
        c.sampler.kind = SamplerKind::RtoScalable;
        c.sampler.tau = tau;
        let run = run_sampler(&c, &problem)?;
        rows.push(TruncationRow {
            sampler: run.sampler.name(),
            tau: Some(tau),
            rank: run.rank,
            acceptance: run.stats.acceptance,
            median_ess: run.stats.median_ess,
            ess_fraction: run.stats.ess_fraction,
        });
    }
    let mut c = cfg.clone();
    c.sampler.kind = SamplerKind::RtoStandard;
    let run = run_sampler(&c, &problem)?;
    rows.push(TruncationRow {
        sampler: run.sampler.name(),
        tau: None,
        rank: None,
        acceptance: run.stats.acceptance,
        median_ess: run.stats.median_ess,
        ess_fraction: run.stats.ess_fraction,
    });
    let grid = if problem.wp.n() == 2 {
        density_grid(cfg, &problem)?
    } else {
        Vec::new()
    };
    std::fs::create_dir_all(&cfg.out)?;
    echo(cfg, "truncation-study", &[("truncation".into(), problem)])?;
    write_rows(&cfg.out.join("truncation.csv"), &rows)?;
    if !grid.is_empty() {
        write_rows(&cfg.out.join("density_grid.csv"), &grid)?;
    }
    Ok(TruncationOutcome { rows, grid })
}

fn density_grid(cfg: &ExperimentConfig, problem: &Problem) -> CliResult<Vec<GridRow>> {
    let wp = &problem.wp;
    let (axis, h) = grid_axis(cfg.study.grid_points, cfg.study.grid_half_width);
    let w = trapezoid_weights(axis.len(), h);
    let points: Vec<Vector> = axis
        .iter()
        .flat_map(|&a| axis.iter().map(move |&b| Vector::from_vec(vec![a, b])))
        .collect();
    let log_target: Vec<f64> = points.iter().map(|v| wp.log_target(v)).collect::<Result<_, _>>()?;
    let max = log_target.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    for (k, lt) in log_target.iter().enumerate() {
        z += w[k / axis.len()] * w[k % axis.len()] * (lt - max).exp();
    }
    let log_z = max + z.ln();
    let reference = find_reference(wp, &reference_options())?;
    let full = build_svd_basis(wp, &reference.v, 0.0, cfg.sampler.svd)?;
    let mut out = Vec::with_capacity(points.len() * cfg.study.thresholds.len());
    for &tau in &cfg.study.thresholds {
        let basis = full.truncate(tau);
        for (v, lt) in points.iter().zip(&log_target) {
            out.push(GridRow {
                tau,
                rank: basis.rank(),
                x1: v[0],
                x2: v[1],
                prior: (-0.5 * v.norm_squared()).exp() / (2.0 * std::f64::consts::PI),
                target: (lt - log_z).exp(),
                proposal: basis.log_proposal_density(wp, v)?.exp(),
            });
        }
    }
    Ok(out)
}
