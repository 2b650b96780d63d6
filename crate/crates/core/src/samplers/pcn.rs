//! Preconditioned Crank–Nicolson baseline.
//!
//! In whitened coordinates the prior is `N(0, I)`, so the autoregressive
//! proposal `v' = √(1−β²) v + β ξ` is prior-reversible and the acceptance
//! probability only involves the data misfit:
//! `min(1, exp(−½‖G(v')‖² + ½‖G(v)‖²))`.

use super::Chain;
use crate::diagnostics::chain_ess;
use crate::error::{check_dim, Error, Result};
use crate::problem::WhitenedProblem;
use crate::rng::{standard_normal, stream_rng, CHAIN_STREAM};
use crate::rto::Cost;
use crate::Vector;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::time::Instant;

/// Runs `steps` pCN steps from `v0`. Points where the model fails are
/// rejected.
pub fn pcn_chain(wp: &WhitenedProblem, beta: f64, steps: usize, v0: &Vector, seed: u64) -> Result<Chain> {
    if !(beta > 0.0 && beta <= 1.0) {
        return Err(Error::InvalidArgument(format!("pCN step size must lie in (0, 1], got {beta}")));
    }
    check_dim("pcn_chain: start", wp.n(), v0.len())?;
    if steps == 0 {
        return Err(Error::EmptyChain);
    }
    let start = Instant::now();
    let mut rng = stream_rng(seed, CHAIN_STREAM);
    let shrink = (1.0 - beta * beta).sqrt();
    let misfit = |v: &Vector| wp.g(v).map(|g| -0.5 * g.norm_squared());
    let mut current = v0.clone();
    let mut current_ll = misfit(&current)?;
    let mut states = Vec::with_capacity(steps);
    let mut accepted = Vec::with_capacity(steps);
    let mut log_weights = Vec::with_capacity(steps);
    let mut invalid = Vec::with_capacity(steps);
    for _ in 0..steps {
        let xi = standard_normal(&mut rng, wp.n());
        let t: f64 = rng.random();
        let prop = &current * shrink + xi * beta;
        let (take, bad) = match misfit(&prop) {
            Ok(ll) if ll.is_finite() => {
                let take = t.ln() < ll - current_ll;
                if take {
                    current = prop;
                    current_ll = ll;
                }
                (take, false)
            }
            _ => (false, true),
        };
        states.push(current.clone());
        accepted.push(take);
        log_weights.push(current_ll);
        invalid.push(bad);
    }
    let elapsed = start.elapsed().as_secs_f64();
    let mut timings = BTreeMap::new();
    timings.insert("pcn".to_string(), elapsed);
    Ok(Chain {
        initial: v0.clone(),
        states,
        accepted,
        log_weights,
        invalid,
        seed,
        timings,
        cost: Cost {
            forward_evals: steps + 1,
            ..Default::default()
        },
        proposal_cpu_seconds: elapsed,
    })
}

/// Outcome of a step-size grid search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcnTuning {
    pub beta: f64,
    /// `(β, acceptance, median ESS / kept steps)` per candidate.
    pub candidates: Vec<(f64, f64, f64)>,
}

/// Picks the step size with the largest median ESS per step on pilot
/// chains of `pilot_steps` (first half discarded as burn-in).
pub fn tune_pcn_beta(
    wp: &WhitenedProblem,
    betas: &[f64],
    pilot_steps: usize,
    v0: &Vector,
    seed: u64,
) -> Result<PcnTuning> {
    if betas.is_empty() {
        return Err(Error::InvalidArgument("no pCN step sizes to try".into()));
    }
    let mut candidates = Vec::with_capacity(betas.len());
    for &beta in betas {
        let chain = pcn_chain(wp, beta, pilot_steps, v0, seed)?.burn_in(0.5);
        let ess = chain_ess(&chain)?;
        candidates.push((beta, chain.acceptance_rate(), ess.median / chain.len() as f64));
    }
    let best = candidates
        .iter()
        .copied()
        .max_by(|a, b| a.2.total_cmp(&b.2))
        .map(|c| c.0)
        .unwrap_or(betas[0]);
    Ok(PcnTuning { beta: best, candidates })
}
