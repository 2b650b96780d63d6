//! Turning proposals into posterior samples.
//!
//! [`metropolize`] runs the Metropolis independence sampler over a stored
//! proposal sequence; [`normalize_weights`] and [`is_estimate`] give the
//! self-normalized importance-sampling alternative. Baselines live in the
//! submodules: [`pcn`], [`implicit`] and [`rml`].

pub mod implicit;
pub mod pcn;
pub mod rml;

pub use implicit::{implicit_propose, whitened_hessian, ImplicitSampler, NegLogDensity};
pub use pcn::{pcn_chain, tune_pcn_beta, PcnTuning};
pub use rml::{
    augmented_log_target, rml_metropolize, rml_propose, rml_weighted, RmlProposal, RmlSampler,
};

use crate::error::{check_dim, Error, Result};
use crate::rng::acceptance_uniforms;
use crate::rto::{Cost, Proposal};
use crate::Vector;
use std::collections::BTreeMap;
use std::time::Instant;

/// A Markov chain: the state after every step.
#[derive(Debug, Clone, PartialEq)]
pub struct Chain {
    /// State the chain started from (not part of `states`).
    pub initial: Vector,
    /// `states[k]` is the state after step `k`.
    pub states: Vec<Vector>,
    pub accepted: Vec<bool>,
    /// Log-weight (or log-likelihood for pCN) of `states[k]`.
    pub log_weights: Vec<f64>,
    /// Proposals that were invalid and therefore rejected.
    pub invalid: Vec<bool>,
    pub seed: u64,
    /// Wall-clock seconds per phase, e.g. `"proposals"`, `"metropolis"`.
    pub timings: BTreeMap<String, f64>,
    /// Summed model-evaluation cost of the proposals.
    pub cost: Cost,
    /// Summed per-proposal CPU seconds.
    pub proposal_cpu_seconds: f64,
}

impl Chain {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.initial.len()
    }

    pub fn acceptance_rate(&self) -> f64 {
        if self.accepted.is_empty() {
            return 0.0;
        }
        self.accepted.iter().filter(|&&a| a).count() as f64 / self.accepted.len() as f64
    }

    /// Series of coordinate `j` over the chain.
    pub fn coordinate(&self, j: usize) -> Vec<f64> {
        self.states.iter().map(|s| s[j]).collect()
    }

    /// Drops the first `fraction` of the steps.
    pub fn burn_in(&self, fraction: f64) -> Chain {
        let skip = ((self.len() as f64) * fraction.clamp(0.0, 1.0)).floor() as usize;
        let initial = if skip == 0 {
            self.initial.clone()
        } else {
            self.states[skip - 1].clone()
        };
        Chain {
            initial,
            states: self.states[skip..].to_vec(),
            accepted: self.accepted[skip..].to_vec(),
            log_weights: self.log_weights[skip..].to_vec(),
            invalid: self.invalid[skip..].to_vec(),
            seed: self.seed,
            timings: self.timings.clone(),
            cost: self.cost,
            proposal_cpu_seconds: self.proposal_cpu_seconds,
        }
    }

    /// Keeps the first `count` coordinates of every state, e.g. `v` out of
    /// an augmented `(v, d)` chain.
    pub fn leading_coordinates(&self, count: usize) -> Chain {
        let head = |x: &Vector| x.rows(0, count).into_owned();
        Chain {
            initial: head(&self.initial),
            states: self.states.iter().map(head).collect(),
            ..self.clone()
        }
    }
}

/// Metropolis independence sampler over `proposals` in index order.
///
/// Step `k` accepts proposal `k` iff it is valid and
/// `log t_k < log w(v') − log w(v)`, with `t_k` the `k`-th uniform of the
/// acceptance stream of `seed`. The chain starts at `v0` with log-weight
/// `logw0`.
pub fn metropolize(proposals: &[Proposal], v0: &Vector, logw0: f64, seed: u64) -> Result<Chain> {
    if proposals.is_empty() {
        return Err(Error::EmptyChain);
    }
    let start = Instant::now();
    let n = v0.len();
    let uniforms = acceptance_uniforms(seed, proposals.len());
    let mut states = Vec::with_capacity(proposals.len());
    let mut accepted = Vec::with_capacity(proposals.len());
    let mut log_weights = Vec::with_capacity(proposals.len());
    let mut invalid = Vec::with_capacity(proposals.len());
    let mut current = v0.clone();
    let mut current_lw = logw0;
    for (p, &t) in proposals.iter().zip(&uniforms) {
        check_dim("metropolize: proposal", n, p.v.len())?;
        let take = p.is_valid() && t.ln() < p.log_weight - current_lw;
        if take {
            current = p.v.clone();
            current_lw = p.log_weight;
        }
        states.push(current.clone());
        accepted.push(take);
        log_weights.push(current_lw);
        invalid.push(!p.is_valid());
    }
    let mut timings = BTreeMap::new();
    timings.insert("metropolis".to_string(), start.elapsed().as_secs_f64());
    Ok(Chain {
        initial: v0.clone(),
        states,
        accepted,
        log_weights,
        invalid,
        seed,
        timings,
        cost: proposals.iter().map(|p| p.cost).sum(),
        proposal_cpu_seconds: proposals.iter().map(|p| p.cpu_seconds).sum(),
    })
}

/// Samples with self-normalized importance weights.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedSamples {
    pub samples: Vec<Vector>,
    /// Non-negative, summing to one.
    pub weights: Vec<f64>,
}

impl WeightedSamples {
    /// Invalid proposals keep their place with weight zero.
    pub fn from_proposals(proposals: &[Proposal]) -> Result<Self> {
        let lw: Vec<f64> = proposals
            .iter()
            .map(|p| if p.is_valid() { p.log_weight } else { f64::NEG_INFINITY })
            .collect();
        Ok(Self {
            samples: proposals.iter().map(|p| p.v.clone()).collect(),
            weights: normalize_weights(&lw)?,
        })
    }

    /// Kish effective sample size `1 / Σ w̃ᵢ²`.
    pub fn effective_size(&self) -> f64 {
        1.0 / self.weights.iter().map(|w| w * w).sum::<f64>()
    }
}

/// `w̃ᵢ = exp(lwᵢ − max) / Σⱼ exp(lwⱼ − max)`. Entries equal to `−∞` get
/// weight zero; NaN is treated the same way.
pub fn normalize_weights(log_weights: &[f64]) -> Result<Vec<f64>> {
    let max = log_weights
        .iter()
        .copied()
        .filter(|x| !x.is_nan())
        .fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(Error::AllWeightsZero);
    }
    if max == f64::INFINITY {
        return Err(Error::NonFinite("importance log-weight"));
    }
    let raw: Vec<f64> = log_weights
        .iter()
        .map(|&x| if x.is_nan() { 0.0 } else { (x - max).exp() })
        .collect();
    let total: f64 = raw.iter().sum();
    Ok(raw.into_iter().map(|w| w / total).collect())
}

/// `Σ w̃ᵢ g(vᵢ)`
pub fn is_estimate<F: Fn(&Vector) -> f64>(ws: &WeightedSamples, g: F) -> f64 {
    ws.samples
        .iter()
        .zip(&ws.weights)
        .filter(|(_, &w)| w > 0.0)
        .map(|(v, &w)| w * g(v))
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optimizer::{SolveReport, TerminationReason};
    use crate::rto::InvalidReason;

    fn proposal(v: f64, lw: f64, valid: bool) -> Proposal {
        Proposal {
            index: 0,
            v: Vector::from_element(1, v),
            log_weight: if valid { lw } else { f64::NEG_INFINITY },
            invalid: (!valid).then_some(InvalidReason::SingularJacobian),
            report: SolveReport {
                x: vec![],
                objective: 0.0,
                initial_objective: 0.0,
                iterations: 1,
                residual_evals: 2,
                jvp_evals: 3,
                vjp_evals: 4,
                rejected_nonfinite: 0,
                converged: true,
                reason: TerminationReason::ObjectiveBelowTolerance,
            },
            noise: Vector::zeros(1),
            cost: Cost {
                forward_evals: 2,
                jvp_evals: 3,
                vjp_evals: 4,
                iterations: 1,
            },
            cpu_seconds: 0.5,
        }
    }

    #[test]
    fn equal_weights_accept_everything_valid() {
        let props: Vec<_> = (0..50).map(|i| proposal(i as f64, 0.3, i % 7 != 3)).collect();
        let c = metropolize(&props, &Vector::zeros(1), 0.3, 11).unwrap();
        for (k, p) in props.iter().enumerate() {
            assert_eq!(c.accepted[k], p.is_valid());
            if !c.accepted[k] {
                assert_eq!(c.states[k], c.states[k - 1]);
            }
        }
        assert_eq!(c.cost.iterations, 50);
        assert_eq!(c.proposal_cpu_seconds, 25.0);
    }

    #[test]
    fn chain_is_deterministic_per_seed() {
        let props: Vec<_> = (0..200).map(|i| proposal(i as f64, (i as f64 * 0.37).sin(), true)).collect();
        let a = metropolize(&props, &Vector::zeros(1), 0.0, 5).unwrap();
        let b = metropolize(&props, &Vector::zeros(1), 0.0, 5).unwrap();
        assert_eq!(a.states, b.states);
        assert_eq!(a.accepted, b.accepted);
        let c = metropolize(&props, &Vector::zeros(1), 0.0, 6).unwrap();
        assert_ne!(a.accepted, c.accepted);
    }

    #[test]
    fn empty_proposals_error() {
        assert_eq!(metropolize(&[], &Vector::zeros(1), 0.0, 0), Err(Error::EmptyChain));
    }

    #[test]
    fn normalization_closed_forms() {
        assert_eq!(normalize_weights(&[1.0; 4]).unwrap(), vec![0.25; 4]);
        let w = normalize_weights(&[0.0, -(2f64.ln())]).unwrap();
        assert!((w[0] - 2.0 / 3.0).abs() < 1e-15 && (w[1] - 1.0 / 3.0).abs() < 1e-15);
        let w = normalize_weights(&[0.0, f64::NEG_INFINITY, 0.0]).unwrap();
        assert_eq!(w, vec![0.5, 0.0, 0.5]);
        assert_eq!(
            normalize_weights(&[f64::NEG_INFINITY; 3]),
            Err(Error::AllWeightsZero)
        );
    }

    #[test]
    fn constant_estimate_is_one() {
        let props: Vec<_> = (0..10).map(|i| proposal(i as f64, -(i as f64), i != 4)).collect();
        let ws = WeightedSamples::from_proposals(&props).unwrap();
        assert!((is_estimate(&ws, |_| 1.0) - 1.0).abs() < 1e-12);
        assert_eq!(ws.weights[4], 0.0);
        assert!(ws.effective_size() >= 1.0);
    }

    #[test]
    fn burn_in_keeps_tail() {
        let props: Vec<_> = (0..10).map(|i| proposal(i as f64, 0.0, true)).collect();
        let c = metropolize(&props, &Vector::zeros(1), 0.0, 1).unwrap();
        let b = c.burn_in(0.5);
        assert_eq!(b.len(), 5);
        assert_eq!(b.states[0], c.states[5]);
        assert_eq!(b.initial, c.states[4]);
    }
}
