//! Matrix-free nonlinear least squares.
//!
//! Minimizes `½‖r(x)‖²` by Levenberg–Marquardt. Each damped Gauss–Newton
//! system `(JᵀJ + μI) s = −Jᵀr` is solved by CGLS, so the Jacobian is only
//! touched through `J dx` and `Jᵀ dr` actions and never formed. The damping
//! follows Nielsen's gain-ratio update.

use crate::error::{check_dim, Error, Result};
use crate::Vector;
use serde::{Deserialize, Serialize};

/// Residual and derivative actions frozen at one point.
pub trait LinearizedResidual {
    fn residual(&self) -> &Vector;
    /// `J dx`
    fn jvp(&self, dx: &Vector) -> Result<Vector>;
    /// `Jᵀ dr`
    fn vjp(&self, dr: &Vector) -> Result<Vector>;
}

/// A residual `r: Rᵈ → Rᵖ`.
pub trait ResidualProblem {
    /// `(d, p)`: number of unknowns and residual entries.
    fn dims(&self) -> (usize, usize);
    /// Evaluates the residual at `x` and keeps what derivative actions need.
    fn linearize<'a>(&'a self, x: &Vector) -> Result<Box<dyn LinearizedResidual + 'a>>;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolveOptions {
    /// Objective tolerance. In zero-residual mode the solve converges once
    /// `½‖r‖² ≤ ftol`; otherwise once an accepted step lowers the objective
    /// by less than `ftol · (1 + f)`.
    pub ftol: f64,
    /// Gradient tolerance `‖Jᵀr‖ ≤ gtol` (ignored in zero-residual mode).
    pub gtol: f64,
    /// Relative step tolerance.
    pub xtol: f64,
    /// Maximum number of step attempts.
    pub max_iters: usize,
    /// Relative residual tolerance of the inner CGLS solve.
    pub cg_tol: f64,
    /// Inner iteration cap; `None` means `2 d + 10`.
    pub cg_max_iters: Option<usize>,
    /// Initial damping relative to `(‖Jᵀr‖ / ‖r‖)²`.
    pub initial_damping: f64,
    /// The minimum is known to be zero (RTO proposal systems).
    pub zero_residual: bool,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            ftol: 1e-6,
            gtol: 1e-10,
            xtol: 1e-15,
            max_iters: 500,
            cg_tol: 1e-10,
            cg_max_iters: None,
            initial_damping: 1e-10,
            zero_residual: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TerminationReason {
    ObjectiveBelowTolerance,
    SmallObjectiveChange,
    SmallGradient,
    SmallStep,
    MaxIterations,
    /// Non-finite residual at the start point.
    NonFinite,
    /// The damping grew without bound: no descent step could be found.
    Stagnated,
}

impl TerminationReason {
    pub fn is_success(self) -> bool {
        matches!(
            self,
            Self::ObjectiveBelowTolerance | Self::SmallObjectiveChange | Self::SmallGradient | Self::SmallStep
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub x: Vec<f64>,
    /// `½‖r(x)‖²` at the returned point.
    pub objective: f64,
    pub initial_objective: f64,
    /// Step attempts, accepted or not.
    pub iterations: usize,
    /// Residual evaluations (one per linearization).
    pub residual_evals: usize,
    pub jvp_evals: usize,
    pub vjp_evals: usize,
    /// Trial points where the residual was non-finite, the model failed, or
    /// the objective blew past `1e12` times its initial value.
    pub rejected_nonfinite: usize,
    pub converged: bool,
    pub reason: TerminationReason,
}

impl SolveReport {
    pub fn solution(&self) -> Vector {
        Vector::from_column_slice(&self.x)
    }
}

const DIVERGENCE_FACTOR: f64 = 1e12;
const MAX_DAMPING: f64 = 1e30;

/// Levenberg–Marquardt from `x0`.
///
/// Fails only when the residual cannot be evaluated at `x0`; every other
/// outcome, including non-convergence, is described by the report.
pub fn solve_nlls<P: ResidualProblem + ?Sized>(
    prob: &P,
    x0: &Vector,
    opts: &SolveOptions,
) -> Result<SolveReport> {
    let (d, p) = prob.dims();
    check_dim("solve_nlls: start point", d, x0.len())?;
    if x0.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("solve_nlls start point"));
    }
    let mut counts = Counts::default();
    let mut x = x0.clone();
    counts.residual += 1;
    let mut lin = prob.linearize(&x)?;
    check_dim("solve_nlls: residual", p, lin.residual().len())?;
    let mut f = 0.5 * lin.residual().norm_squared();
    let f0 = f;
    let report = |x: &Vector, f: f64, counts: &Counts, reason: TerminationReason| SolveReport {
        x: x.as_slice().to_vec(),
        objective: f,
        initial_objective: f0,
        iterations: counts.iterations,
        residual_evals: counts.residual,
        jvp_evals: counts.jvp,
        vjp_evals: counts.vjp,
        rejected_nonfinite: counts.rejected,
        converged: reason.is_success(),
        reason,
    };
    if !f.is_finite() {
        return Ok(report(&x, f, &counts, TerminationReason::NonFinite));
    }
    if opts.zero_residual && f <= opts.ftol {
        return Ok(report(&x, f, &counts, TerminationReason::ObjectiveBelowTolerance));
    }
    counts.vjp += 1;
    let mut g = lin.vjp(lin.residual())?;
    let cg_cap = opts.cg_max_iters.unwrap_or(2 * d + 10);
    let scale = if f > 0.0 { g.norm_squared() / (2.0 * f) } else { 1.0 };
    let mut mu = opts.initial_damping * if scale > 0.0 { scale } else { 1.0 };
    let mut nu = 2.0;

    while counts.iterations < opts.max_iters {
        if !opts.zero_residual && g.norm() <= opts.gtol {
            return Ok(report(&x, f, &counts, TerminationReason::SmallGradient));
        }
        let step = damped_cgls(lin.as_ref(), &g, mu, opts.cg_tol, cg_cap, &mut counts)?;
        if step.norm() <= opts.xtol * (x.norm() + opts.xtol) {
            let reason = if opts.zero_residual {
                TerminationReason::Stagnated
            } else {
                TerminationReason::SmallStep
            };
            return Ok(report(&x, f, &counts, reason));
        }
        counts.iterations += 1;
        let x_new = &x + &step;
        counts.residual += 1;
        let trial = prob
            .linearize(&x_new)
            .ok()
            .map(|l| {
                let f_new = 0.5 * l.residual().norm_squared();
                (l, f_new)
            })
            .filter(|(_, f_new)| f_new.is_finite() && *f_new <= DIVERGENCE_FACTOR * f0.max(1e-300));
        // predicted decrease of the damped quadratic model
        let predicted = 0.5 * step.dot(&(&step * mu - &g));
        let accepted = match trial {
            Some((l, f_new)) if f_new < f => {
                let rho = if predicted > 0.0 { (f - f_new) / predicted } else { 1.0 };
                mu *= (1.0 - (2.0 * rho - 1.0).powi(3)).max(1.0 / 3.0);
                nu = 2.0;
                let decrease = f - f_new;
                x = x_new;
                lin = l;
                f = f_new;
                counts.vjp += 1;
                g = lin.vjp(lin.residual())?;
                Some(decrease)
            }
            Some(_) => None,
            None => {
                counts.rejected += 1;
                None
            }
        };
        match accepted {
            Some(decrease) => {
                if opts.zero_residual {
                    if f <= opts.ftol {
                        return Ok(report(&x, f, &counts, TerminationReason::ObjectiveBelowTolerance));
                    }
                } else if decrease <= opts.ftol * (1.0 + f) {
                    return Ok(report(&x, f, &counts, TerminationReason::SmallObjectiveChange));
                }
            }
            None => {
                mu *= nu;
                nu *= 2.0;
                if !(mu < MAX_DAMPING) {
                    return Ok(report(&x, f, &counts, TerminationReason::Stagnated));
                }
            }
        }
    }
    let reason = if opts.zero_residual && f <= opts.ftol {
        TerminationReason::ObjectiveBelowTolerance
    } else {
        TerminationReason::MaxIterations
    };
    Ok(report(&x, f, &counts, reason))
}

#[derive(Debug, Default)]
struct Counts {
    iterations: usize,
    residual: usize,
    jvp: usize,
    vjp: usize,
    rejected: usize,
}

/// CGLS on `min ‖J s + r‖² + μ‖s‖²`, where `g = Jᵀ r`.
fn damped_cgls(
    lin: &dyn LinearizedResidual,
    g: &Vector,
    mu: f64,
    tol: f64,
    max_iters: usize,
    counts: &mut Counts,
) -> Result<Vector> {
    let mut s = Vector::zeros(g.len());
    let mut q_res = -lin.residual().clone();
    let mut normal_res = -g.clone();
    let mut dir = normal_res.clone();
    let mut gamma = normal_res.norm_squared();
    let gamma0 = gamma;
    if gamma0 == 0.0 {
        return Ok(s);
    }
    for _ in 0..max_iters {
        counts.jvp += 1;
        let q = lin.jvp(&dir)?;
        let delta = q.norm_squared() + mu * dir.norm_squared();
        if !(delta > 0.0) {
            break;
        }
        let alpha = gamma / delta;
        s.axpy(alpha, &dir, 1.0);
        q_res.axpy(-alpha, &q, 1.0);
        counts.vjp += 1;
        normal_res = lin.vjp(&q_res)? - &s * mu;
        let gamma_new = normal_res.norm_squared();
        if gamma_new <= tol * tol * gamma0 {
            break;
        }
        dir = &normal_res + &dir * (gamma_new / gamma);
        gamma = gamma_new;
    }
    if s.iter().all(|v| v.is_finite()) {
        Ok(s)
    } else {
        Err(Error::NonFinite("CGLS step"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Matrix;
    use std::cell::Cell;

    /// Residual given by closures for value and dense Jacobian.
    struct Dense<F, J> {
        d: usize,
        p: usize,
        r: F,
        jac: J,
        evals: Cell<usize>,
        jvps: std::rc::Rc<Cell<usize>>,
    }

    struct DenseLin {
        r: Vector,
        j: Matrix,
        jvps: std::rc::Rc<Cell<usize>>,
    }

    impl LinearizedResidual for DenseLin {
        fn residual(&self) -> &Vector {
            &self.r
        }
        fn jvp(&self, dx: &Vector) -> Result<Vector> {
            self.jvps.set(self.jvps.get() + 1);
            Ok(&self.j * dx)
        }
        fn vjp(&self, dr: &Vector) -> Result<Vector> {
            Ok(self.j.tr_mul(dr))
        }
    }

    impl<F, J> ResidualProblem for Dense<F, J>
    where
        F: Fn(&Vector) -> Vector,
        J: Fn(&Vector) -> Matrix,
    {
        fn dims(&self) -> (usize, usize) {
            (self.d, self.p)
        }
        fn linearize<'a>(&'a self, x: &Vector) -> Result<Box<dyn LinearizedResidual + 'a>> {
            self.evals.set(self.evals.get() + 1);
            Ok(Box::new(DenseLin {
                r: (self.r)(x),
                j: (self.jac)(x),
                jvps: self.jvps.clone(),
            }))
        }
    }

    fn dense<F, J>(d: usize, p: usize, r: F, jac: J) -> Dense<F, J> {
        Dense {
            d,
            p,
            r,
            jac,
            evals: Cell::new(0),
            jvps: Default::default(),
        }
    }

    fn v(x: &[f64]) -> Vector {
        Vector::from_column_slice(x)
    }

    #[test]
    fn linear_residual_solves_in_one_step() {
        let c = v(&[1.5, -2.0, 0.25]);
        let cc = c.clone();
        let prob = dense(3, 3, move |x: &Vector| x - &cc, |_: &Vector| Matrix::identity(3, 3));
        let opts = SolveOptions {
            ftol: 1e-20,
            ..Default::default()
        };
        let rep = solve_nlls(&prob, &Vector::zeros(3), &opts).unwrap();
        assert!(rep.converged);
        assert!(rep.iterations <= 2);
        assert!(rep.objective <= 1e-20);
        assert!((rep.solution() - c).amax() < 1e-10);
    }

    #[test]
    fn zero_residual_square_term() {
        let prob = dense(
            2,
            2,
            |x: &Vector| v(&[x[0] * x[0], x[1] - 1.0]),
            |x: &Vector| Matrix::from_row_slice(2, 2, &[2.0 * x[0], 0.0, 0.0, 1.0]),
        );
        let opts = SolveOptions::default();
        let rep = solve_nlls(&prob, &v(&[1.0, 2.0]), &opts).unwrap();
        assert!(rep.converged, "{:?}", rep.reason);
        assert!(rep.objective < opts.ftol);
        let x = rep.solution();
        assert!(x[0].abs() < 0.05 && (x[1] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn rosenbrock_reaches_global_minimizer() {
        let prob = dense(
            2,
            2,
            |x: &Vector| v(&[10.0 * (x[1] - x[0] * x[0]), 1.0 - x[0]]),
            |x: &Vector| Matrix::from_row_slice(2, 2, &[-20.0 * x[0], 10.0, -1.0, 0.0]),
        );
        let opts = SolveOptions {
            ftol: 1e-24,
            ..Default::default()
        };
        let rep = solve_nlls(&prob, &v(&[-1.2, 1.0]), &opts).unwrap();
        assert!(rep.converged, "{:?}", rep.reason);
        assert!((rep.solution() - v(&[1.0, 1.0])).amax() < 1e-6);
    }

    #[test]
    fn nonzero_residual_mode_stops_at_stationary_point() {
        // r = (x - 1, x + 1): minimum at 0 with objective 1
        let prob = dense(
            1,
            2,
            |x: &Vector| v(&[x[0] - 1.0, x[0] + 1.0]),
            |_: &Vector| Matrix::from_row_slice(2, 1, &[1.0, 1.0]),
        );
        let opts = SolveOptions {
            zero_residual: false,
            ftol: 1e-14,
            gtol: 1e-12,
            ..Default::default()
        };
        let rep = solve_nlls(&prob, &v(&[3.0]), &opts).unwrap();
        assert!(rep.converged);
        assert!(rep.x[0].abs() < 1e-8);
        assert!((rep.objective - 1.0).abs() < 1e-12);

        let zero = solve_nlls(&prob, &v(&[3.0]), &SolveOptions::default()).unwrap();
        assert!(!zero.converged);
    }

    #[test]
    fn counters_match_instrumented_calls() {
        let prob = dense(
            2,
            2,
            |x: &Vector| v(&[10.0 * (x[1] - x[0] * x[0]), 1.0 - x[0]]),
            |x: &Vector| Matrix::from_row_slice(2, 2, &[-20.0 * x[0], 10.0, -1.0, 0.0]),
        );
        let rep = solve_nlls(&prob, &v(&[-1.2, 1.0]), &SolveOptions::default()).unwrap();
        assert_eq!(rep.residual_evals, prob.evals.get());
        assert_eq!(rep.jvp_evals, prob.jvps.get());
        assert!(rep.residual_evals >= rep.iterations);
        assert!(rep.objective <= rep.initial_objective);
    }

    #[test]
    fn max_iterations_reported() {
        let prob = dense(
            2,
            2,
            |x: &Vector| v(&[10.0 * (x[1] - x[0] * x[0]), 1.0 - x[0]]),
            |x: &Vector| Matrix::from_row_slice(2, 2, &[-20.0 * x[0], 10.0, -1.0, 0.0]),
        );
        let opts = SolveOptions {
            max_iters: 1,
            ftol: 1e-30,
            ..Default::default()
        };
        let rep = solve_nlls(&prob, &v(&[-1.2, 1.0]), &opts).unwrap();
        assert!(!rep.converged);
        assert_eq!(rep.reason, TerminationReason::MaxIterations);
        assert_eq!(rep.iterations, 1);
    }

    #[test]
    fn nonfinite_trial_points_are_rejected_not_fatal() {
        // residual blows up for x > 2; start far to the left
        let prob = dense(
            1,
            1,
            |x: &Vector| {
                if x[0] > 2.0 {
                    v(&[f64::NAN])
                } else {
                    v(&[x[0] - 1.0])
                }
            },
            |_: &Vector| Matrix::from_element(1, 1, 0.01),
        );
        let opts = SolveOptions {
            ftol: 1e-20,
            max_iters: 200,
            ..Default::default()
        };
        let rep = solve_nlls(&prob, &v(&[-5.0]), &opts).unwrap();
        assert!(rep.rejected_nonfinite >= 1);
        assert!(rep.converged, "{:?}", rep.reason);
        assert!((rep.x[0] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn nonfinite_start_is_an_error_or_reason() {
        let prob = dense(1, 1, |_: &Vector| v(&[f64::INFINITY]), |_: &Vector| Matrix::identity(1, 1));
        let rep = solve_nlls(&prob, &v(&[0.0]), &SolveOptions::default()).unwrap();
        assert_eq!(rep.reason, TerminationReason::NonFinite);
        assert!(solve_nlls(&prob, &v(&[f64::NAN]), &SolveOptions::default()).is_err());
    }
}
