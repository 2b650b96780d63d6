//! Metropolized randomized maximum likelihood.
//!
//! The target is lifted to `(v, d) ∈ Rⁿ⁺ᵐ` with
//! `π(v, d) ∝ exp(−½‖v‖² − ‖G(v) − d‖²/2γ − ‖d‖²/2(1−γ))`, whose
//! `v`-marginal is the whitened posterior. A proposal minimizes
//! `½‖v − ξ_v‖² + ‖G(v) − d‖²/2ρ + ‖d − ξ_d‖²/2(1−ρ)`, and its density
//! follows from the optimality map
//!
//! ```text
//! T(v, d) = ( v + ∇G(v)ᵀ(G(v) − d)/ρ ,  d/ρ − (1−ρ)/ρ · G(v) ) = (ξ_v, ξ_d)
//! ```
//!
//! whose Jacobian needs second derivatives of the model.

use super::{metropolize, Chain};
use crate::error::{check_dim, Error, Result};
use crate::linalg::log_abs_det;
use crate::optimizer::{solve_nlls, LinearizedResidual, ResidualProblem, SolveOptions, SolveReport};
use crate::problem::{stack, ForwardModel, Linearization, WhitenedProblem};
use crate::rto::{Cost, InvalidReason, Proposal, LOG_2PI};
use crate::{Matrix, Vector};

/// Optimality residual tolerance for a valid proposal.
const OPTIMALITY_TOL: f64 = 1e-8;
const NEWTON_STEPS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RmlSampler {
    /// Perturbation weight `ρ ∈ (0, 1)`.
    pub rho: f64,
    pub opts: SolveOptions,
}

impl RmlSampler {
    pub fn new(rho: f64) -> Result<Self> {
        if !(rho > 0.0 && rho < 1.0) {
            return Err(Error::InvalidArgument(format!("RML ρ must lie in (0, 1), got {rho}")));
        }
        Ok(Self {
            rho,
            opts: SolveOptions {
                zero_residual: false,
                ftol: 0.0,
                gtol: 1e-12,
                xtol: 1e-16,
                max_iters: 500,
                ..Default::default()
            },
        })
    }
}

impl Default for RmlSampler {
    fn default() -> Self {
        Self::new(0.95).expect("default ρ is valid")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RmlProposal {
    pub v: Vector,
    pub d: Vector,
    /// `G(v)`
    pub g: Vector,
    /// Normalized log density of `(v, d)` under the proposal.
    pub log_density: f64,
    /// `(‖first optimality equation‖, ‖second‖)` at the returned point.
    pub residuals: (f64, f64),
    pub invalid: Option<InvalidReason>,
    pub report: SolveReport,
    /// `(ξ_v, ξ_d)` stacked.
    pub noise: Vector,
    pub cost: Cost,
}

impl RmlProposal {
    pub fn is_valid(&self) -> bool {
        self.invalid.is_none()
    }
}

struct RmlResidual<'a> {
    wp: &'a WhitenedProblem,
    xi_v: &'a Vector,
    xi_d: &'a Vector,
    rho: f64,
}

struct RmlLinearization<'a> {
    inner: Box<dyn Linearization + 'a>,
    value: Vector,
    n: usize,
    m: usize,
    rho: f64,
}

impl LinearizedResidual for RmlLinearization<'_> {
    fn residual(&self) -> &Vector {
        &self.value
    }

    fn jvp(&self, dx: &Vector) -> Result<Vector> {
        let (n, m) = (self.n, self.m);
        let dv = dx.rows(0, n).into_owned();
        let dd = dx.rows(n, m).into_owned();
        let a = 1.0 / self.rho.sqrt();
        let b = 1.0 / (1.0 - self.rho).sqrt();
        let mid = (self.inner.jvp(&dv)? - &dd) * a;
        Ok(stack(&stack(&dv, &mid), &(dd * b)))
    }

    fn vjp(&self, dr: &Vector) -> Result<Vector> {
        let (n, m) = (self.n, self.m);
        let a = 1.0 / self.rho.sqrt();
        let b = 1.0 / (1.0 - self.rho).sqrt();
        let top = dr.rows(0, n).into_owned();
        let mid = dr.rows(n, m).into_owned();
        let bot = dr.rows(n + m, m).into_owned();
        let dv = top + self.inner.vjp(&mid)? * a;
        let dd = mid * (-a) + bot * b;
        Ok(stack(&dv, &dd))
    }
}

impl ResidualProblem for RmlResidual<'_> {
    fn dims(&self) -> (usize, usize) {
        let (n, m) = (self.wp.n(), self.wp.m());
        (n + m, n + 2 * m)
    }

    fn linearize<'a>(&'a self, x: &Vector) -> Result<Box<dyn LinearizedResidual + 'a>> {
        let (n, m) = (self.wp.n(), self.wp.m());
        let v = x.rows(0, n).into_owned();
        let d = x.rows(n, m).into_owned();
        let inner = self.wp.linearize(&v)?;
        let top = &v - self.xi_v;
        let mid = (inner.value() - &d) / self.rho.sqrt();
        let bot = (&d - self.xi_d) / (1.0 - self.rho).sqrt();
        let value = stack(&stack(&top, &mid), &bot);
        Ok(Box::new(RmlLinearization {
            inner,
            value,
            n,
            m,
            rho: self.rho,
        }))
    }
}

/// `T(v, d)`, its dense Jacobian and `G(v)`.
fn optimality_map(wp: &WhitenedProblem, rho: f64, v: &Vector, d: &Vector) -> Result<(Vector, Matrix, Vector, Cost)> {
    let (n, m) = (wp.n(), wp.m());
    let lin = wp.linearize(v)?;
    let g = lin.value().clone();
    let misfit = &g - d;
    let t1 = v + lin.vjp(&misfit)? / rho;
    let t2 = d / rho - &g * ((1.0 - rho) / rho);
    let mut jac = Matrix::zeros(n + m, n + m);
    let mut e = Vector::zeros(n);
    for j in 0..n {
        e[j] = 1.0;
        let jg = lin.jvp(&e)?;
        let top = &e + (lin.vjp(&jg)? + wp.hvp(v, &misfit, &e)?) / rho;
        jac.view_mut((0, j), (n, 1)).copy_from(&top);
        jac.view_mut((n, j), (m, 1)).copy_from(&(jg * (-(1.0 - rho) / rho)));
        e[j] = 0.0;
    }
    let mut f = Vector::zeros(m);
    for k in 0..m {
        f[k] = 1.0;
        jac.view_mut((0, n + k), (n, 1)).copy_from(&(lin.vjp(&f)? * (-1.0 / rho)));
        jac[(n + k, n + k)] = 1.0 / rho;
        f[k] = 0.0;
    }
    let cost = Cost {
        forward_evals: 1,
        jvp_evals: n,
        vjp_evals: n + m + 1,
        iterations: 0,
    };
    Ok((stack(&t1, &t2), jac, g, cost))
}

impl RmlSampler {
    /// Solves the perturbed problem for one `(ξ_v, ξ_d)`, polishes the
    /// optimality system with a few Newton steps, and evaluates the
    /// proposal density.
    pub fn propose(&self, wp: &WhitenedProblem, xi_v: &Vector, xi_d: &Vector) -> Result<RmlProposal> {
        let (n, m) = (wp.n(), wp.m());
        check_dim("rml_propose: ξ_v", n, xi_v.len())?;
        check_dim("rml_propose: ξ_d", m, xi_d.len())?;
        let rho = self.rho;
        let noise = stack(xi_v, xi_d);
        let g0 = wp.g(xi_v)?;
        let start = stack(xi_v, &(xi_d * rho + g0 * (1.0 - rho)));
        let prob = RmlResidual { wp, xi_v, xi_d, rho };
        let report = solve_nlls(&prob, &start, &self.opts)?;
        let mut cost = Cost::from_report(&report);
        cost.forward_evals += 1;
        let mut x = report.solution();
        let mut last = None;
        for _ in 0..NEWTON_STEPS {
            let v = x.rows(0, n).into_owned();
            let d = x.rows(n, m).into_owned();
            let eval = optimality_map(wp, rho, &v, &d);
            let Ok((t, jac, g, c)) = eval else {
                last = None;
                break;
            };
            cost += c;
            let res = &t - &noise;
            let done = res.amax() <= 1e-14 * (1.0 + noise.amax());
            last = Some((v, d, t, jac.clone(), g));
            if done {
                break;
            }
            match jac.lu().solve(&res) {
                Some(step) if step.iter().all(|s| s.is_finite()) => x -= step,
                _ => break,
            }
        }
        let Some((v, d, t, jac, g)) = last else {
            return Ok(RmlProposal {
                v: x.rows(0, n).into_owned(),
                d: x.rows(n, m).into_owned(),
                g: Vector::zeros(m),
                log_density: f64::NEG_INFINITY,
                residuals: (f64::INFINITY, f64::INFINITY),
                invalid: Some(InvalidReason::ModelFailure),
                report,
                noise,
                cost,
            });
        };
        let res = &t - &noise;
        let residuals = (res.rows(0, n).norm(), res.rows(n, m).norm());
        let (ld, sign) = log_abs_det(&jac);
        let log_density = -0.5 * (n + m) as f64 * LOG_2PI - 0.5 * t.norm_squared() + ld;
        let invalid = if residuals.0.max(residuals.1) > OPTIMALITY_TOL {
            Some(InvalidReason::Solver(report.reason))
        } else if sign == 0.0 {
            Some(InvalidReason::SingularJacobian)
        } else if !log_density.is_finite() {
            Some(InvalidReason::NonFiniteWeight)
        } else {
            None
        };
        Ok(RmlProposal {
            v,
            d,
            g,
            log_density,
            residuals,
            invalid,
            report,
            noise,
            cost,
        })
    }

    /// Normalized proposal log density at `(v, d)`.
    pub fn log_proposal_density(&self, wp: &WhitenedProblem, v: &Vector, d: &Vector) -> Result<f64> {
        let (t, jac, _, _) = optimality_map(wp, self.rho, v, d)?;
        let (ld, _) = log_abs_det(&jac);
        Ok(-0.5 * (wp.n() + wp.m()) as f64 * LOG_2PI - 0.5 * t.norm_squared() + ld)
    }
}

/// One RML proposal.
pub fn rml_propose(wp: &WhitenedProblem, rho: f64, xi_v: &Vector, xi_d: &Vector) -> Result<RmlProposal> {
    RmlSampler::new(rho)?.propose(wp, xi_v, xi_d)
}

/// `−½‖v‖² − ‖G − d‖²/2γ − ‖d‖²/2(1−γ)`
pub fn augmented_log_target(v: &Vector, g: &Vector, d: &Vector, gamma: f64) -> f64 {
    -0.5 * v.norm_squared() - 0.5 * (g - d).norm_squared() / gamma - 0.5 * d.norm_squared() / (1.0 - gamma)
}

/// RML proposals as importance-weighted [`Proposal`]s on the stacked
/// `(v, d)` space, weighted against the augmented target with `γ`.
pub fn rml_weighted(proposals: &[RmlProposal], gamma: f64) -> Result<Vec<Proposal>> {
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::InvalidArgument(format!("RML γ must lie in (0, 1), got {gamma}")));
    }
    Ok(proposals
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let lw = if p.is_valid() {
                augmented_log_target(&p.v, &p.g, &p.d, gamma) - p.log_density
            } else {
                f64::NEG_INFINITY
            };
            let invalid = p.invalid.or((!lw.is_finite()).then_some(InvalidReason::NonFiniteWeight));
            Proposal {
                index: i,
                v: stack(&p.v, &p.d),
                log_weight: if invalid.is_none() { lw } else { f64::NEG_INFINITY },
                invalid,
                report: p.report.clone(),
                noise: p.noise.clone(),
                cost: p.cost,
                cpu_seconds: 0.0,
            }
        })
        .collect())
}

/// Metropolis chain over `(v, d)` started at `(v0, d0)`.
pub fn rml_metropolize(
    wp: &WhitenedProblem,
    sampler: &RmlSampler,
    gamma: f64,
    proposals: &[RmlProposal],
    v0: &Vector,
    d0: &Vector,
    seed: u64,
) -> Result<Chain> {
    let weighted = rml_weighted(proposals, gamma)?;
    let g0 = wp.g(v0)?;
    let lw0 = augmented_log_target(v0, &g0, d0, gamma) - sampler.log_proposal_density(wp, v0, d0)?;
    metropolize(&weighted, &stack(v0, d0), lw0, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::ScaledIdentity;
    use crate::models::{toy1d_problem, LinearModel};
    use crate::problem::{whiten, BayesProblem};
    use crate::rng::{standard_normal, stream_rng};
    use std::sync::Arc;

    fn linear(a: Matrix, y: Vector) -> WhitenedProblem {
        let (m, n) = a.shape();
        whiten(
            BayesProblem::new(
                Arc::new(LinearModel::new(a)),
                y,
                Vector::zeros(n),
                Arc::new(ScaledIdentity::identity(n)),
                Arc::new(ScaledIdentity::identity(m)),
            )
            .unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn constant_model_hand_solution() {
        // G(v) = 0·v − y = c
        let c = Vector::from_vec(vec![0.7, -1.1]);
        let wp = linear(Matrix::zeros(2, 3), -&c);
        let xi_v = Vector::from_vec(vec![0.2, -0.5, 1.0]);
        let xi_d = Vector::from_vec(vec![1.5, 0.3]);
        let rho = 0.8;
        let p = rml_propose(&wp, rho, &xi_v, &xi_d).unwrap();
        assert!(p.is_valid());
        assert!((&p.v - &xi_v).amax() < 1e-12);
        assert!((&p.d - (&xi_d * rho + &c * (1.0 - rho))).amax() < 1e-12);
    }

    #[test]
    fn linear_residuals_vanish() {
        let a = Matrix::from_row_slice(2, 2, &[1.0, 0.4, -0.3, 2.0]);
        let wp = linear(a, Vector::from_vec(vec![0.5, -0.2]));
        let s = RmlSampler::new(0.9).unwrap();
        let mut rng = stream_rng(3, 0);
        let p = s.propose(&wp, &standard_normal(&mut rng, 2), &standard_normal(&mut rng, 2)).unwrap();
        assert!(p.residuals.0 < 1e-12 && p.residuals.1 < 1e-12);
    }

    #[test]
    fn linear_v_marginal_is_exact_posterior() {
        // G(v) = a v: v = (ξ_v + a ξ_d)/(1 + a²) exactly, whatever ρ
        let a = 1.7;
        let wp = linear(Matrix::from_element(1, 1, a), Vector::zeros(1));
        let s = RmlSampler::new(0.6).unwrap();
        let xi_v = Vector::from_element(1, 0.9);
        let xi_d = Vector::from_element(1, -0.4);
        let p = s.propose(&wp, &xi_v, &xi_d).unwrap();
        assert!((p.v[0] - (0.9 - 0.4 * a) / (1.0 + a * a)).abs() < 1e-12);
    }

    #[test]
    fn density_matches_change_of_variables_on_nonlinear_1d() {
        // numerical d(ξ)/d(v, d) determinant vs the analytic Jacobian
        let wp = whiten(toy1d_problem(0.3, 1.0, 0.5).unwrap()).unwrap();
        let s = RmlSampler::new(0.9).unwrap();
        let p = s.propose(&wp, &Vector::from_element(1, 0.3), &Vector::from_element(1, -0.2)).unwrap();
        assert!(p.is_valid());
        let h = 1e-6;
        let t = |v: f64, d: f64| {
            optimality_map(&wp, 0.9, &Vector::from_element(1, v), &Vector::from_element(1, d))
                .unwrap()
                .0
        };
        let (v, d) = (p.v[0], p.d[0]);
        let dv = (t(v + h, d) - t(v - h, d)) / (2.0 * h);
        let dd = (t(v, d + h) - t(v, d - h)) / (2.0 * h);
        let det = dv[0] * dd[1] - dv[1] * dd[0];
        let (_, jac, _, _) = optimality_map(&wp, 0.9, &p.v, &p.d).unwrap();
        assert!((jac.determinant() - det).abs() < 1e-6 * det.abs());
    }
}
