//! Chain diagnostics: effective sample size, acceptance, moments,
//! quantiles and credible bands.

use crate::error::{Error, Result};
use crate::rto::Cost;
use crate::samplers::Chain;
use crate::Vector;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Effective sample size of one series.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ess {
    pub value: f64,
    /// The series has zero variance; `value` is then the series length.
    pub degenerate: bool,
}

/// Normalized autocorrelation `ρ_0..ρ_{N-1}` via a zero-padded FFT.
pub fn autocorrelation(series: &[f64]) -> Vec<f64> {
    let n = series.len();
    if n == 0 {
        return Vec::new();
    }
    let mean = series.iter().sum::<f64>() / n as f64;
    let len = (2 * n).next_power_of_two();
    let mut buf: Vec<Complex<f64>> = series
        .iter()
        .map(|&x| Complex::new(x - mean, 0.0))
        .chain(std::iter::repeat(Complex::new(0.0, 0.0)))
        .take(len)
        .collect();
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(len).process(&mut buf);
    for c in buf.iter_mut() {
        *c = Complex::new(c.norm_sqr(), 0.0);
    }
    planner.plan_fft_inverse(len).process(&mut buf);
    let c0 = buf[0].re;
    if c0 <= 0.0 {
        return vec![0.0; n];
    }
    buf[..n].iter().map(|c| c.re / c0).collect()
}

/// Geyer's initial monotone sequence estimator: `N / τ` with
/// `τ = −1 + 2 Σ Γ_j`, `Γ_j = ρ_{2j} + ρ_{2j+1}` summed while positive and
/// forced non-increasing. Clipped to `[1, N]`.
pub fn ess(series: &[f64]) -> Result<Ess> {
    let n = series.len();
    if n < 10 {
        return Err(Error::InvalidArgument(format!(
            "ESS needs at least 10 samples, got {n}"
        )));
    }
    if series.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("ESS series"));
    }
    let first = series[0];
    if series.iter().all(|&x| x == first) {
        return Ok(Ess {
            value: n as f64,
            degenerate: true,
        });
    }
    let rho = autocorrelation(series);
    let mut tau = -1.0;
    let mut prev = f64::INFINITY;
    let mut j = 0;
    while 2 * j + 1 < n {
        let mut gamma = rho[2 * j] + rho[2 * j + 1];
        if gamma <= 0.0 {
            break;
        }
        gamma = gamma.min(prev);
        tau += 2.0 * gamma;
        prev = gamma;
        j += 1;
    }
    let value = if tau > 0.0 { n as f64 / tau } else { n as f64 };
    Ok(Ess {
        value: value.clamp(1.0, n as f64),
        degenerate: false,
    })
}

/// Per-coordinate ESS of a chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EssSummary {
    pub per_coordinate: Vec<f64>,
    pub median: f64,
    pub min: f64,
    /// Some coordinate never moved.
    pub degenerate: bool,
}

pub fn chain_ess(chain: &Chain) -> Result<EssSummary> {
    if chain.is_empty() {
        return Err(Error::EmptyChain);
    }
    let mut per_coordinate = Vec::with_capacity(chain.dim());
    let mut degenerate = false;
    for j in 0..chain.dim() {
        let e = ess(&chain.coordinate(j))?;
        degenerate |= e.degenerate;
        per_coordinate.push(e.value);
    }
    let mut sorted = per_coordinate.clone();
    sorted.sort_by(f64::total_cmp);
    Ok(EssSummary {
        median: median_sorted(&sorted),
        min: sorted.first().copied().unwrap_or(0.0),
        per_coordinate,
        degenerate,
    })
}

fn median_sorted(sorted: &[f64]) -> f64 {
    quantile_sorted(sorted, 0.5)
}

/// Linear-interpolation quantile (type 7) of sorted data.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 0 {
        return f64::NAN;
    }
    let h = (n - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Quantile of unsorted data.
pub fn quantile(data: &[f64], p: f64) -> f64 {
    let mut s = data.to_vec();
    s.sort_by(f64::total_cmp);
    quantile_sorted(&s, p)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainStats {
    pub steps: usize,
    pub acceptance: f64,
    /// Fraction of proposals that were invalid (auto-rejected).
    pub invalid_fraction: f64,
    pub ess: Vec<f64>,
    pub median_ess: f64,
    /// `median_ess / steps`
    pub ess_fraction: f64,
    pub degenerate: bool,
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
    pub q05: Vec<f64>,
    pub q95: Vec<f64>,
    pub cost: Cost,
    /// Optimizer step attempts per proposal.
    pub mean_iterations: f64,
    pub proposal_cpu_seconds: f64,
    pub timings: BTreeMap<String, f64>,
}

/// Aggregates a chain. ESS is computed on the chain's own coordinates.
pub fn chain_stats(chain: &Chain) -> Result<ChainStats> {
    let e = chain_ess(chain)?;
    let steps = chain.len();
    let dim = chain.dim();
    let mut mean = vec![0.0; dim];
    let mut variance = vec![0.0; dim];
    let mut q05 = vec![0.0; dim];
    let mut q95 = vec![0.0; dim];
    for j in 0..dim {
        let mut x = chain.coordinate(j);
        let m = x.iter().sum::<f64>() / steps as f64;
        mean[j] = m;
        variance[j] = if steps > 1 {
            x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (steps - 1) as f64
        } else {
            0.0
        };
        x.sort_by(f64::total_cmp);
        q05[j] = quantile_sorted(&x, 0.05);
        q95[j] = quantile_sorted(&x, 0.95);
    }
    let invalid = chain.invalid.iter().filter(|&&b| b).count();
    Ok(ChainStats {
        steps,
        acceptance: chain.acceptance_rate(),
        invalid_fraction: invalid as f64 / steps as f64,
        ess_fraction: e.median / steps as f64,
        median_ess: e.median,
        ess: e.per_coordinate,
        degenerate: e.degenerate,
        mean,
        variance,
        q05,
        q95,
        cost: chain.cost,
        mean_iterations: chain.cost.iterations as f64 / steps as f64,
        proposal_cpu_seconds: chain.proposal_cpu_seconds,
        timings: chain.timings.clone(),
    })
}

/// Per-coordinate central band of a transformed chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Band {
    pub level: f64,
    pub lower: Vec<f64>,
    pub median: Vec<f64>,
    pub upper: Vec<f64>,
}

/// Empirical `level` band of `transform(state)` over the chain, e.g. with
/// a transform that unwhitens and maps to diffusivity.
pub fn credible_band<F>(chain: &Chain, level: f64, transform: F) -> Result<Band>
where
    F: Fn(&Vector) -> Vector,
{
    if !(level > 0.0 && level <= 1.0) {
        return Err(Error::InvalidArgument(format!("band level must lie in (0, 1], got {level}")));
    }
    if chain.is_empty() {
        return Err(Error::EmptyChain);
    }
    let mapped: Vec<Vector> = chain.states.iter().map(transform).collect();
    let dim = mapped[0].len();
    let tail = 0.5 * (1.0 - level);
    let mut band = Band {
        level,
        lower: Vec::with_capacity(dim),
        median: Vec::with_capacity(dim),
        upper: Vec::with_capacity(dim),
    };
    for j in 0..dim {
        let mut x: Vec<f64> = mapped.iter().map(|s| s[j]).collect();
        x.sort_by(f64::total_cmp);
        band.lower.push(quantile_sorted(&x, tail));
        band.median.push(quantile_sorted(&x, 0.5));
        band.upper.push(quantile_sorted(&x, 1.0 - tail));
    }
    Ok(band)
}
