use clap::{Args, Parser, Subcommand};
use rto_cli::config::{ModelKind, SamplerKind};
use rto_cli::{cmd_compare_pcn, cmd_dim_study, cmd_noise_study, cmd_sample, cmd_truncation_study};
use rto_cli::{CliResult, ExperimentConfig};
use std::path::PathBuf;
use std::process::ExitCode;

/// Randomize-then-optimize sampling studies.
///
/// Options come from `--config` (JSON) when given; flags override them.
#[derive(Debug, Parser)]
#[command(name = "rto", version)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// linear | toy2d | toy1d | elliptic
    #[arg(long, global = true)]
    model: Option<String>,
    /// rto-standard | rto-scalable | pcn | implicit | rml | importance
    #[arg(long, global = true)]
    sampler: Option<String>,
    #[arg(long, global = true)]
    n: Option<usize>,
    #[arg(long, global = true)]
    m: Option<usize>,
    #[arg(long, global = true)]
    sigma: Option<f64>,
    #[arg(long, global = true)]
    data_seed: Option<u64>,
    #[arg(long, global = true)]
    chain_length: Option<usize>,
    #[arg(long, global = true)]
    tau: Option<f64>,
    #[arg(long, global = true)]
    beta: Option<f64>,
    #[arg(long, global = true)]
    rho: Option<f64>,
    #[arg(long, global = true)]
    gamma: Option<f64>,
    #[arg(long, global = true)]
    ftol: Option<f64>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// One chain: chain.csv, stats.json.
    Sample,
    /// Cost and mixing against parameter dimension: cpu_vs_dim.csv.
    DimStudy {
        #[arg(long, value_delimiter = ',')]
        dims: Option<Vec<usize>>,
        /// Also run standard RTO.
        #[arg(long)]
        include_standard: bool,
    },
    /// Cost and mixing against noise level: cpu_vs_obs.csv.
    NoiseStudy {
        #[arg(long, value_delimiter = ',')]
        sigmas: Option<Vec<f64>>,
    },
    /// RTO against tuned pCN: pcn_comparison.csv.
    ComparePcn {
        #[arg(long, value_delimiter = ',')]
        sigmas: Option<Vec<f64>>,
        #[arg(long, value_delimiter = ',')]
        betas: Option<Vec<f64>>,
        #[arg(long)]
        pcn_steps: Option<usize>,
    },
    /// SVD truncation sweep: truncation.csv, density_grid.csv.
    TruncationStudy {
        #[arg(long, value_delimiter = ',')]
        thresholds: Option<Vec<f64>>,
    },
}

fn configure(cli: &Cli) -> CliResult<ExperimentConfig> {
    let c = &cli.common;
    let mut cfg = match &c.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    macro_rules! set {
        ($src:expr => $dst:expr) => {
            if let Some(v) = $src.clone() {
                $dst = v;
            }
        };
    }
    set!(c.seed => cfg.seed);
    set!(c.workers => cfg.workers);
    set!(c.out => cfg.out);
    set!(c.n => cfg.model.n);
    set!(c.m => cfg.model.m);
    set!(c.sigma => cfg.model.sigma);
    set!(c.data_seed => cfg.model.data_seed);
    set!(c.chain_length => cfg.sampler.chain_length);
    set!(c.tau => cfg.sampler.tau);
    set!(c.rho => cfg.sampler.rho);
    set!(c.gamma => cfg.sampler.gamma);
    set!(c.ftol => cfg.sampler.ftol);
    if let Some(b) = c.beta {
        cfg.sampler.beta = Some(b);
    }
    if let Some(m) = &c.model {
        cfg.model.kind = ModelKind::parse(m)?;
    }
    if let Some(s) = &c.sampler {
        cfg.sampler.kind = SamplerKind::parse(s)?;
    }
    match &cli.command {
        Command::Sample => {}
        Command::DimStudy { dims, include_standard } => {
            set!(dims => cfg.study.dims);
            cfg.study.include_standard |= include_standard;
        }
        Command::NoiseStudy { sigmas } => set!(sigmas => cfg.study.sigmas),
        Command::ComparePcn {
            sigmas,
            betas,
            pcn_steps,
        } => {
            set!(sigmas => cfg.study.sigmas);
            set!(betas => cfg.study.betas);
            set!(pcn_steps => cfg.study.pcn_steps);
        }
        Command::TruncationStudy { thresholds } => set!(thresholds => cfg.study.thresholds),
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: &Cli) -> CliResult<()> {
    let cfg = configure(cli)?;
    match cli.command {
        Command::Sample => {
            let run = cmd_sample(&cfg)?;
            for w in &run.warnings {
                eprintln!("warning: {w}");
            }
            println!(
                "{}: acceptance {:.3}, median ESS {:.1} of {}",
                run.sampler.name(),
                run.stats.acceptance,
                run.stats.median_ess,
                run.stats.steps
            );
        }
        Command::DimStudy { .. } => {
            for r in cmd_dim_study(&cfg)? {
                println!(
                    "{} n={}: acceptance {:.3}, ESS/N {:.3}, {:.2e} s/proposal",
                    r.sampler, r.n, r.acceptance, r.ess_fraction, r.cpu_per_proposal
                );
            }
        }
        Command::NoiseStudy { .. } => {
            for r in cmd_noise_study(&cfg)? {
                println!(
                    "sigma={:e}: acceptance {:.3}, ESS/N {:.3}, {:.2} iterations",
                    r.sigma, r.acceptance, r.ess_fraction, r.mean_iterations
                );
            }
        }
        Command::ComparePcn { .. } => {
            for r in cmd_compare_pcn(&cfg)? {
                let flag = if r.converged { "" } else { " (not converged)" };
                println!("sigma={:e} {}: {:.3e} s/ESS{flag}", r.sigma, r.sampler, r.cpu_per_ess);
            }
        }
        Command::TruncationStudy { .. } => {
            for r in cmd_truncation_study(&cfg)?.rows {
                println!(
                    "{} tau={:?}: rank {:?}, acceptance {:.3}, ESS/N {:.3}",
                    r.sampler, r.tau, r.rank, r.acceptance, r.ess_fraction
                );
            }
        }
    }
    println!("outputs in {}", cfg.out.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
