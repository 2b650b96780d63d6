//! Problem construction and sampler dispatch for a single run.

use crate::config::{ExperimentConfig, ModelConfig, ModelKind, SamplerKind};
use crate::error::CliResult;
use rto_core::diagnostics::{chain_stats, ChainStats};
use rto_core::linalg::ScaledIdentity;
use rto_core::models::{elliptic_generate_data, elliptic_problem, toy1d_problem, toy2d_problem, EllipticData, LinearModel};
use rto_core::optimizer::SolveOptions;
use rto_core::problem::whiten;
use rto_core::rng::{standard_normal, stream_rng};
use rto_core::rto::{
    build_qr_basis, build_svd_basis, find_reference, generate_proposals, par_indexed, proposal_options,
    reference_options, RtoMap,
};
use rto_core::samplers::{
    metropolize, pcn_chain, rml_metropolize, tune_pcn_beta, whitened_hessian, Chain, ImplicitSampler, PcnTuning,
    RmlSampler, WeightedSamples,
};
use rto_core::{BayesProblem, Matrix, Vector, WhitenedProblem};
use serde::Serialize;
use std::sync::Arc;
use std::time::Instant;

/// What was generated to define the problem, echoed with every run.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ProblemData {
    Linear { matrix: Vec<Vec<f64>>, truth: Vec<f64>, observations: Vec<f64> },
    Toy2d { observations: [f64; 2] },
    Toy1d { cubic: f64, observation: f64 },
    Elliptic(EllipticData),
}

pub struct Problem {
    pub wp: WhitenedProblem,
    pub data: ProblemData,
}

/// Random linear-Gaussian instance: `A` with `N(0, 1/n)` entries, truth
/// from the prior, identity prior and noise `σ I`.
pub fn linear_instance(n: usize, m: usize, sigma: f64, seed: u64) -> CliResult<(BayesProblem, ProblemData)> {
    let entries = standard_normal(&mut stream_rng(seed, 0), m * n);
    let a = Matrix::from_row_slice(m, n, entries.as_slice()) / (n as f64).sqrt();
    let truth = standard_normal(&mut stream_rng(seed, 1), n);
    let y = &a * &truth + standard_normal(&mut stream_rng(seed, 2), m) * sigma;
    let data = ProblemData::Linear {
        matrix: a.row_iter().map(|r| r.iter().copied().collect()).collect(),
        truth: truth.as_slice().to_vec(),
        observations: y.as_slice().to_vec(),
    };
    let problem = BayesProblem::new(
        Arc::new(LinearModel::new(a)),
        y,
        Vector::zeros(n),
        Arc::new(ScaledIdentity::identity(n)),
        Arc::new(ScaledIdentity::new(m, sigma)?),
    )?;
    Ok((problem, data))
}

pub fn build_problem(m: &ModelConfig) -> CliResult<Problem> {
    let (problem, data) = match m.kind {
        ModelKind::Linear => linear_instance(m.n, m.m, m.sigma, m.data_seed)?,
        ModelKind::Toy2d => (toy2d_problem(m.toy_data, m.sigma)?, ProblemData::Toy2d { observations: m.toy_data }),
        ModelKind::Toy1d => (
            toy1d_problem(m.cubic, m.toy1d_data, m.sigma)?,
            ProblemData::Toy1d {
                cubic: m.cubic,
                observation: m.toy1d_data,
            },
        ),
        ModelKind::Elliptic => {
            let data = elliptic_generate_data(m.sigma, m.data_seed)?;
            (elliptic_problem(m.n, &data)?, ProblemData::Elliptic(data))
        }
    };
    Ok(Problem {
        wp: whiten(problem)?,
        data,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ImportanceSummary {
    pub proposals: usize,
    pub valid_fraction: f64,
    /// Kish effective sample size of the normalized weights.
    pub kish_ess: f64,
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
}

/// Everything a run produces. For importance sampling `chain` holds the raw
/// proposals (`accepted` marks validity) and `stats` describes them
/// unweighted; `importance` carries the weighted estimates.
pub struct Run {
    pub sampler: SamplerKind,
    pub chain: Chain,
    pub stats: ChainStats,
    pub importance: Option<ImportanceSummary>,
    /// Retained rank of the scalable basis.
    pub rank: Option<usize>,
    /// pCN step size actually used.
    pub beta: Option<f64>,
    pub tuning: Option<PcnTuning>,
    /// Seconds spent before proposals (reference point, basis, Hessian).
    pub setup_seconds: f64,
    /// pCN step-size search; not counted as sampling cost.
    pub tuning_seconds: f64,
    /// Proposals generated, including pCN burn-in.
    pub proposals: usize,
    pub warnings: Vec<String>,
}

impl Run {
    /// Setup plus all proposal and acceptance work. For pCN only the
    /// production chain counts, burn-in included.
    pub fn total_seconds(&self) -> f64 {
        self.setup_seconds + self.chain.timings.values().sum::<f64>()
    }

    pub fn cpu_per_proposal(&self) -> f64 {
        self.chain.proposal_cpu_seconds / self.proposals as f64
    }

    pub fn cpu_per_ess(&self) -> f64 {
        let ess = match &self.importance {
            Some(i) => i.kish_ess,
            None => self.stats.median_ess,
        };
        self.total_seconds() / ess
    }

    pub fn mean_iterations(&self) -> f64 {
        self.stats.mean_iterations
    }
}

pub fn solve_options(cfg: &ExperimentConfig) -> SolveOptions {
    SolveOptions {
        ftol: cfg.sampler.ftol,
        initial_damping: cfg.sampler.initial_damping,
        ..proposal_options()
    }
}

/// Runs the configured sampler on `problem`.
pub fn run_sampler(cfg: &ExperimentConfig, problem: &Problem) -> CliResult<Run> {
    cfg.validate()?;
    let wp = &problem.wp;
    let s = &cfg.sampler;
    let mut run = match s.kind {
        SamplerKind::RtoStandard | SamplerKind::RtoScalable | SamplerKind::Importance => run_rto(cfg, wp)?,
        SamplerKind::Pcn => run_pcn(cfg, wp)?,
        SamplerKind::Implicit => run_implicit(cfg, wp)?,
        SamplerKind::Rml => run_rml(cfg, wp)?,
    };
    let invalid = run.chain.invalid.iter().filter(|&&b| b).count() as f64 / run.chain.len() as f64;
    if invalid > 0.5 && s.kind != SamplerKind::Pcn {
        run.warnings
            .push(format!("{:.1}% of proposals were invalid (solver failure)", 100.0 * invalid));
    }
    Ok(run)
}

fn run_rto(cfg: &ExperimentConfig, wp: &WhitenedProblem) -> CliResult<Run> {
    let s = &cfg.sampler;
    let start = Instant::now();
    let reference = find_reference(wp, &reference_options())?;
    let opts = solve_options(cfg);
    let (proposals, w0, rank, setup) = if s.kind == SamplerKind::RtoStandard {
        let basis = build_qr_basis(wp, &reference.v)?;
        let setup = start.elapsed().as_secs_f64();
        let (p, w0) = proposals_for(cfg, wp, &basis, &reference.v, &opts)?;
        (p, w0, None, setup)
    } else {
        let basis = build_svd_basis(wp, &reference.v, s.tau, s.svd)?;
        let setup = start.elapsed().as_secs_f64();
        let (p, w0) = proposals_for(cfg, wp, &basis, &reference.v, &opts)?;
        (p, w0, Some(basis.rank()), setup)
    };
    let (chain, importance) = if s.kind == SamplerKind::Importance {
        let ws = WeightedSamples::from_proposals(&proposals)?;
        let n = wp.n();
        let mut mean = vec![0.0; n];
        let mut second = vec![0.0; n];
        for (v, &w) in ws.samples.iter().zip(&ws.weights) {
            if w > 0.0 {
                for j in 0..n {
                    mean[j] += w * v[j];
                    second[j] += w * v[j] * v[j];
                }
            }
        }
        let valid = proposals.iter().filter(|p| p.is_valid()).count();
        let summary = ImportanceSummary {
            proposals: proposals.len(),
            valid_fraction: valid as f64 / proposals.len() as f64,
            kish_ess: ws.effective_size(),
            variance: (0..n).map(|j| second[j] - mean[j] * mean[j]).collect(),
            mean,
        };
        (raw_proposal_chain(&proposals, &reference.v, cfg.seed), Some(summary))
    } else {
        (metropolize(&proposals, &reference.v, w0, cfg.seed)?, None)
    };
    let mut chain = chain;
    chain.timings.insert("proposals".into(), proposals_wall(&proposals));
    finish(cfg, chain, importance, rank, None, None, setup)
}

fn proposals_for<M: RtoMap>(
    cfg: &ExperimentConfig,
    wp: &WhitenedProblem,
    map: &M,
    v_ref: &Vector,
    opts: &SolveOptions,
) -> CliResult<(Vec<rto_core::rto::Proposal>, f64)> {
    let proposals = generate_proposals(wp, map, cfg.sampler.chain_length, cfg.seed, opts, cfg.workers)?;
    let w0 = map.weight(wp, v_ref)?.log_weight;
    Ok((proposals, w0))
}

/// Summed per-proposal seconds; with one worker this is the wall time.
fn proposals_wall(proposals: &[rto_core::rto::Proposal]) -> f64 {
    proposals.iter().map(|p| p.cpu_seconds).sum()
}

fn raw_proposal_chain(proposals: &[rto_core::rto::Proposal], v0: &Vector, seed: u64) -> Chain {
    Chain {
        initial: v0.clone(),
        states: proposals.iter().map(|p| p.v.clone()).collect(),
        accepted: proposals.iter().map(|p| p.is_valid()).collect(),
        log_weights: proposals.iter().map(|p| p.log_weight).collect(),
        invalid: proposals.iter().map(|p| !p.is_valid()).collect(),
        seed,
        timings: Default::default(),
        cost: proposals.iter().map(|p| p.cost).sum(),
        proposal_cpu_seconds: proposals_wall(proposals),
    }
}

fn finish(
    cfg: &ExperimentConfig,
    chain: Chain,
    importance: Option<ImportanceSummary>,
    rank: Option<usize>,
    beta: Option<f64>,
    tuning: Option<PcnTuning>,
    setup_seconds: f64,
) -> CliResult<Run> {
    let stats = chain_stats(&chain)?;
    Ok(Run {
        proposals: cfg.sampler.chain_length,
        tuning_seconds: 0.0,
        sampler: cfg.sampler.kind,
        chain,
        stats,
        importance,
        rank,
        beta,
        tuning,
        setup_seconds,
        warnings: Vec::new(),
    })
}

/// pCN from the prior mean. The step size is tuned on pilot chains of a
/// fifth of the production length unless given. Statistics use the second
/// half of the production chain.
fn run_pcn(cfg: &ExperimentConfig, wp: &WhitenedProblem) -> CliResult<Run> {
    let v0 = Vector::zeros(wp.n());
    let start = Instant::now();
    let (beta, tuning) = match cfg.sampler.beta {
        Some(b) => (b, None),
        None => {
            let pilot = (cfg.sampler.chain_length / 5).max(100);
            let t = tune_pcn_beta(wp, &cfg.study.betas, pilot, &v0, cfg.seed ^ 0x9e37_79b9)?;
            (t.beta, Some(t))
        }
    };
    let tuning_seconds = start.elapsed().as_secs_f64();
    let chain = pcn_chain(wp, beta, cfg.sampler.chain_length, &v0, cfg.seed)?.burn_in(0.5);
    let mut run = finish(cfg, chain, None, None, Some(beta), tuning, 0.0)?;
    run.tuning_seconds = tuning_seconds;
    Ok(run)
}

/// Implicit sampling around the MAP point with `L = H^{-1/2}`.
fn run_implicit(cfg: &ExperimentConfig, wp: &WhitenedProblem) -> CliResult<Run> {
    let start = Instant::now();
    let map = find_reference(wp, &reference_options())?;
    let hessian = whitened_hessian(wp, &map.v)?;
    let sampler = ImplicitSampler::from_hessian(wp, &map.v, &hessian)?;
    let setup = start.elapsed().as_secs_f64();
    let n = wp.n();
    let proposals = par_indexed(cfg.sampler.chain_length, cfg.workers, |i| {
        let t = Instant::now();
        let xi = standard_normal(&mut stream_rng(cfg.seed, i as u64), n);
        let mut p = sampler.propose(wp, &xi)?;
        p.index = i;
        p.cpu_seconds = t.elapsed().as_secs_f64();
        Ok(p)
    })?;
    let w0 = sampler.propose(wp, &Vector::zeros(n))?.log_weight;
    let mut chain = metropolize(&proposals, &map.v, w0, cfg.seed)?;
    chain.timings.insert("proposals".into(), proposals_wall(&proposals));
    finish(cfg, chain, None, None, None, None, setup)
}

/// RML on the augmented `(v, d)` space; the reported chain is its
/// `v`-marginal. Starts at the MAP point with `d = (1 − γ) G(v_map)`.
fn run_rml(cfg: &ExperimentConfig, wp: &WhitenedProblem) -> CliResult<Run> {
    let s = &cfg.sampler;
    let start = Instant::now();
    let map = find_reference(wp, &reference_options())?;
    let sampler = RmlSampler::new(s.rho)?;
    let setup = start.elapsed().as_secs_f64();
    let (n, m) = (wp.n(), wp.m());
    let proposals = par_indexed(s.chain_length, cfg.workers, |i| {
        let noise = standard_normal(&mut stream_rng(cfg.seed, i as u64), n + m);
        let xi_v = noise.rows(0, n).into_owned();
        let xi_d = noise.rows(n, m).into_owned();
        let t = Instant::now();
        let p = sampler.propose(wp, &xi_v, &xi_d)?;
        Ok((p, t.elapsed().as_secs_f64()))
    })?;
    let seconds: f64 = proposals.iter().map(|p| p.1).sum();
    let proposals: Vec<_> = proposals.into_iter().map(|p| p.0).collect();
    let d0 = wp.g(&map.v)? * (1.0 - s.gamma);
    let mut chain = rml_metropolize(wp, &sampler, s.gamma, &proposals, &map.v, &d0, cfg.seed)?.leading_coordinates(n);
    chain.proposal_cpu_seconds = seconds;
    chain.timings.insert("proposals".into(), seconds);
    finish(cfg, chain, None, None, None, None, setup)
}
