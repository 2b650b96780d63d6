//! Random-map implicit sampling.
//!
//! For a target `exp(−ℓ(v))` with star-shaped level sets around the mode,
//! a draw `ξ ~ N(0, I)` is mapped to the point `v` on the ray
//! `v_map + α L ξ/‖ξ‖, α ≥ 0` where `ℓ(v) − ℓ(v_map) = ½‖ξ‖²`.
//! The scalar `α` is found by doubling until the level is bracketed and
//! then bisecting.

use crate::error::{check_dim, Error, Result};
use crate::optimizer::{SolveReport, TerminationReason};
use crate::problem::{ForwardModel, WhitenedProblem};
use crate::rto::{Cost, InvalidReason, Proposal, LOG_2PI};
use crate::{Matrix, Vector};
use nalgebra::SymmetricEigen;

/// A negative log density `ℓ` with its gradient.
pub trait NegLogDensity: Sync {
    fn dim(&self) -> usize;
    fn value(&self, v: &Vector) -> Result<f64>;
    fn gradient(&self, v: &Vector) -> Result<Vector>;
}

/// `ℓ(v) = ½‖v‖² + ½‖G(v)‖²`
impl NegLogDensity for WhitenedProblem {
    fn dim(&self) -> usize {
        self.n()
    }

    fn value(&self, v: &Vector) -> Result<f64> {
        self.log_target(v).map(|x| -x)
    }

    fn gradient(&self, v: &Vector) -> Result<Vector> {
        let lin = self.linearize(v)?;
        Ok(v + lin.vjp(lin.value())?)
    }
}

/// Exact Hessian `I + ∇Gᵀ∇G + Σₖ Gₖ ∇²Gₖ` of the whitened negative log
/// target, assembled column by column and symmetrized.
pub fn whitened_hessian(wp: &WhitenedProblem, v: &Vector) -> Result<Matrix> {
    let n = wp.n();
    let lin = wp.linearize(v)?;
    let g = lin.value().clone();
    let mut h = Matrix::identity(n, n);
    let mut e = Vector::zeros(n);
    for j in 0..n {
        e[j] = 1.0;
        let col = lin.vjp(&lin.jvp(&e)?)? + wp.hvp(v, &g, &e)?;
        for i in 0..n {
            h[(i, j)] += col[i];
        }
        e[j] = 0.0;
    }
    Ok((&h + h.transpose()) * 0.5)
}

/// Mode, scaling factor and cached quantities of an implicit sampler.
#[derive(Debug, Clone)]
pub struct ImplicitSampler {
    pub v_map: Vector,
    pub l: Matrix,
    l_inv: Matrix,
    log_abs_det_l: f64,
    ell_map: f64,
    /// Doubling budget when bracketing the level.
    pub max_doublings: usize,
}

impl ImplicitSampler {
    pub fn new<E: NegLogDensity + ?Sized>(ell: &E, v_map: &Vector, l: Matrix) -> Result<Self> {
        let n = ell.dim();
        check_dim("ImplicitSampler: mode", n, v_map.len())?;
        check_dim("ImplicitSampler: factor", n, l.nrows())?;
        let l_inv = l
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::Factorization("implicit-sampling factor is singular".into()))?;
        let (log_abs_det_l, _) = crate::linalg::log_abs_det(&l);
        Ok(Self {
            v_map: v_map.clone(),
            l,
            l_inv,
            log_abs_det_l,
            ell_map: ell.value(v_map)?,
            max_doublings: 64,
        })
    }

    /// Uses the symmetric inverse square root of `hessian`, which satisfies
    /// both `LᵀL = LLᵀ = hessian⁻¹`.
    pub fn from_hessian<E: NegLogDensity + ?Sized>(ell: &E, v_map: &Vector, hessian: &Matrix) -> Result<Self> {
        let eig = SymmetricEigen::new(hessian.clone());
        if eig.eigenvalues.iter().any(|&l| !(l > 0.0)) {
            return Err(Error::Factorization("Hessian at the mode is not positive definite".into()));
        }
        let scale = eig.eigenvalues.map(|l| 1.0 / l.sqrt());
        let l = &eig.eigenvectors * Matrix::from_diagonal(&scale) * eig.eigenvectors.transpose();
        Self::new(ell, v_map, l)
    }

    /// `L⁻¹ (v − v_map)`
    pub fn whitened_offset(&self, v: &Vector) -> Vector {
        &self.l_inv * (v - &self.v_map)
    }

    /// Solves the level equation along the ray selected by `ξ`.
    pub fn propose<E: NegLogDensity + ?Sized>(&self, ell: &E, xi: &Vector) -> Result<Proposal> {
        let n = self.v_map.len();
        check_dim("implicit_propose: noise", n, xi.len())?;
        let rho = xi.norm();
        let mut evals = 0usize;
        let mut report = SolveReport {
            x: vec![0.0],
            objective: 0.0,
            initial_objective: 0.125 * rho.powi(4),
            iterations: 0,
            residual_evals: 0,
            jvp_evals: 0,
            vjp_evals: 0,
            rejected_nonfinite: 0,
            converged: true,
            reason: TerminationReason::ObjectiveBelowTolerance,
        };
        if rho == 0.0 {
            let mut p = self.finish(ell, self.v_map.clone(), xi, report, &mut evals);
            p.cost.forward_evals = evals;
            return Ok(p);
        }
        let dir = &self.l * xi / rho;
        let level = 0.5 * rho * rho;
        let f = |alpha: f64, evals: &mut usize| -> f64 {
            *evals += 1;
            match ell.value(&(&self.v_map + &dir * alpha)) {
                Ok(x) if x.is_nan() => f64::NAN,
                Ok(x) => x - self.ell_map - level,
                // outside the model's domain: beyond the level set
                Err(_) => f64::INFINITY,
            }
        };
        let mut lo = 0.0;
        let mut hi = rho;
        let mut f_hi = f(hi, &mut evals);
        let mut doublings = 0;
        while f_hi < 0.0 {
            if doublings == self.max_doublings {
                return Ok(self.invalid(xi, report, evals, InvalidReason::Solver(TerminationReason::MaxIterations)));
            }
            lo = hi;
            hi *= 2.0;
            f_hi = f(hi, &mut evals);
            doublings += 1;
        }
        if f_hi.is_nan() {
            return Ok(self.invalid(xi, report, evals, InvalidReason::ModelFailure));
        }
        let mut f_lo = if lo == 0.0 { -level } else { f(lo, &mut evals) };
        let mut iters = doublings;
        while hi - lo > 4.0 * f64::EPSILON * hi && iters < 400 {
            let mid = 0.5 * (lo + hi);
            let fm = f(mid, &mut evals);
            iters += 1;
            if fm.is_nan() {
                return Ok(self.invalid(xi, report, evals, InvalidReason::ModelFailure));
            }
            if fm < 0.0 {
                lo = mid;
                f_lo = fm;
            } else {
                hi = mid;
                f_hi = fm;
            }
        }
        let (alpha, resid) = if f_lo.abs() <= f_hi.abs() { (lo, f_lo) } else { (hi, f_hi) };
        report.x = vec![alpha];
        report.objective = 0.5 * resid * resid;
        report.iterations = iters;
        if !(resid.abs() <= 1e-10 * level.max(1.0)) {
            report.converged = false;
            report.reason = TerminationReason::Stagnated;
        }
        let v = &self.v_map + &dir * alpha;
        let mut p = self.finish(ell, v, xi, report, &mut evals);
        p.cost.forward_evals = evals;
        p.cost.iterations = iters;
        Ok(p)
    }

    fn invalid(&self, xi: &Vector, mut report: SolveReport, evals: usize, why: InvalidReason) -> Proposal {
        report.converged = false;
        report.residual_evals = evals;
        Proposal {
            index: 0,
            v: self.v_map.clone(),
            log_weight: f64::NEG_INFINITY,
            invalid: Some(why),
            report,
            noise: xi.clone(),
            cost: Cost {
                forward_evals: evals,
                ..Default::default()
            },
            cpu_seconds: 0.0,
        }
    }

    fn finish<E: NegLogDensity + ?Sized>(
        &self,
        ell: &E,
        v: Vector,
        xi: &Vector,
        mut report: SolveReport,
        evals: &mut usize,
    ) -> Proposal {
        *evals += 2;
        report.residual_evals = *evals;
        let converged = report.converged;
        let density = self.log_proposal_density(ell, &v);
        let target = ell.value(&v);
        let (log_weight, invalid) = match (density, target) {
            _ if !converged => (f64::NEG_INFINITY, Some(InvalidReason::Solver(report.reason))),
            (Ok(q), Ok(l)) if (-l - q).is_finite() => (-l - q, None),
            (Ok(_), Ok(_)) => (f64::NEG_INFINITY, Some(InvalidReason::SingularJacobian)),
            _ => (f64::NEG_INFINITY, Some(InvalidReason::ModelFailure)),
        };
        Proposal {
            index: 0,
            v,
            log_weight,
            invalid,
            report,
            noise: xi.clone(),
            cost: Cost::default(),
            cpu_seconds: 0.0,
        }
    }

    /// Log density of the implicit-sampling proposal at `v`.
    ///
    /// With `z = L⁻¹(v − v_map)`, `r = ‖z‖` and `ρ = √(2(ℓ(v) − ℓ_map))`:
    /// `−(n/2)log 2π − ½ρ² + (n−1)log(ρ/r) + log(ẑᵀLᵀ∇ℓ(v)/ρ) − log|det L|`.
    pub fn log_proposal_density<E: NegLogDensity + ?Sized>(&self, ell: &E, v: &Vector) -> Result<f64> {
        let n = self.v_map.len();
        let base = -0.5 * n as f64 * LOG_2PI - self.log_abs_det_l;
        let z = self.whitened_offset(v);
        let r = z.norm();
        if r == 0.0 {
            return Ok(base);
        }
        let gap = ell.value(v)? - self.ell_map;
        if !(gap > 0.0) {
            return Ok(f64::NEG_INFINITY);
        }
        let rho = (2.0 * gap).sqrt();
        let slope = (&self.l * &z).dot(&ell.gradient(v)?) / r / rho;
        if !(slope > 0.0) {
            return Ok(f64::NEG_INFINITY);
        }
        Ok(base - gap + (n as f64 - 1.0) * (rho / r).ln() + slope.ln())
    }
}

/// One implicit-sampling proposal.
pub fn implicit_propose<E: NegLogDensity + ?Sized>(
    ell: &E,
    v_map: &Vector,
    l: &Matrix,
    xi: &Vector,
) -> Result<Proposal> {
    ImplicitSampler::new(ell, v_map, l.clone())?.propose(ell, xi)
}
