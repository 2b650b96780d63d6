//! Randomize-then-optimize proposals.
//!
//! A proposal draws Gaussian noise and solves a nonlinear least-squares
//! system built from a basis of `range(∇H(v_ref))`. Two bases are provided:
//!
//! - [`QrBasis`]: thin QR of the dense stacked Jacobian. Every proposal
//!   solves an `n`-dimensional system and a dense `n × n` determinant.
//! - [`SvdBasis`]: the polar factor of `∇H(v_ref)` written through the SVD
//!   `∇G(v_ref) = Ψ Λ Φᵀ`. Only an `r`-dimensional system is solved, with
//!   `r` the number of retained singular values.
//!
//! Both give the log importance weight `log π_tar(v) − log π_RTO(v)` up to a
//! constant. Proposals that fail to solve, or whose Jacobian determinant is
//! zero or changes sign relative to the reference point, are marked
//! invalid: Metropolis rejects them and importance sampling gives them
//! zero weight.

mod scalable;
mod standard;

pub use scalable::{build_svd_basis, propose_scalable, weight_scalable, SvdBasis, SvdMethod};
pub use standard::{build_qr_basis, propose_standard, weight_standard, QrBasis};

use crate::error::{Error, Result};
use crate::linalg::{assemble_columns, assemble_rows};
use crate::optimizer::{
    solve_nlls, LinearizedResidual, ResidualProblem, SolveOptions, SolveReport, TerminationReason,
};
use crate::problem::{stack, ForwardModel, Linearization, WhitenedProblem};
use crate::rng::{standard_normal, stream_rng};
use crate::{Matrix, Vector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::ops::{Add, AddAssign};
use std::time::Instant;

/// Model-evaluation counts attributable to one piece of work.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cost {
    pub forward_evals: usize,
    pub jvp_evals: usize,
    pub vjp_evals: usize,
    /// Optimizer step attempts.
    pub iterations: usize,
}

impl Cost {
    pub fn from_report(report: &SolveReport) -> Self {
        Self {
            forward_evals: report.residual_evals,
            jvp_evals: report.jvp_evals,
            vjp_evals: report.vjp_evals,
            iterations: report.iterations,
        }
    }
}

impl Add for Cost {
    type Output = Cost;
    fn add(self, o: Cost) -> Cost {
        Cost {
            forward_evals: self.forward_evals + o.forward_evals,
            jvp_evals: self.jvp_evals + o.jvp_evals,
            vjp_evals: self.vjp_evals + o.vjp_evals,
            iterations: self.iterations + o.iterations,
        }
    }
}

impl AddAssign for Cost {
    fn add_assign(&mut self, o: Cost) {
        *self = *self + o;
    }
}

impl std::iter::Sum for Cost {
    fn sum<I: Iterator<Item = Cost>>(iter: I) -> Cost {
        iter.fold(Cost::default(), Add::add)
    }
}

/// Why a proposal was discarded.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum InvalidReason {
    Solver(TerminationReason),
    ModelFailure,
    SingularJacobian,
    /// `det` changed sign relative to the reference point.
    OrientationFlip,
    NonFiniteWeight,
}

/// Log-weight of a point together with the Jacobian determinant it used.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightEval {
    pub log_weight: f64,
    pub log_abs_det: f64,
    pub det_sign: f64,
    pub cost: Cost,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Proposal {
    /// Position in the proposal sequence; also the RNG stream index.
    pub index: usize,
    pub v: Vector,
    /// `−∞` for invalid proposals.
    pub log_weight: f64,
    pub invalid: Option<InvalidReason>,
    pub report: SolveReport,
    /// The Gaussian draw that produced this proposal (`η` or `ξ`).
    pub noise: Vector,
    /// Solve plus weight evaluation.
    pub cost: Cost,
    pub cpu_seconds: f64,
}

impl Proposal {
    pub fn is_valid(&self) -> bool {
        self.invalid.is_none()
    }

    /// Builds a proposal from a finished solve and a weight evaluation,
    /// applying the validity rules.
    pub(crate) fn assemble(
        v: Vector,
        noise: Vector,
        report: SolveReport,
        weight: Result<WeightEval>,
        reference_sign: f64,
    ) -> Proposal {
        let mut cost = Cost::from_report(&report);
        let mut invalid = (!report.converged).then_some(InvalidReason::Solver(report.reason));
        let mut log_weight = f64::NEG_INFINITY;
        match weight {
            Ok(w) => {
                cost += w.cost;
                if invalid.is_none() {
                    invalid = if w.det_sign == 0.0 {
                        Some(InvalidReason::SingularJacobian)
                    } else if w.det_sign != reference_sign {
                        Some(InvalidReason::OrientationFlip)
                    } else if !w.log_weight.is_finite() {
                        Some(InvalidReason::NonFiniteWeight)
                    } else {
                        log_weight = w.log_weight;
                        None
                    };
                }
            }
            Err(_) => {
                invalid.get_or_insert(InvalidReason::ModelFailure);
            }
        }
        Proposal {
            index: 0,
            v,
            log_weight,
            invalid,
            report,
            noise,
            cost,
            cpu_seconds: 0.0,
        }
    }
}

/// Common interface of the two RTO maps.
pub trait RtoMap: Sync {
    /// Length of the Gaussian draw consumed by one proposal.
    fn noise_dim(&self, wp: &WhitenedProblem) -> usize;
    fn reference(&self) -> &Vector;
    /// Solves the proposal system for one noise draw.
    fn propose(&self, wp: &WhitenedProblem, noise: &Vector, opts: &SolveOptions) -> Result<Proposal>;
    /// `log π_tar(v) − log π_RTO(v)` up to a `v`-independent constant.
    fn weight(&self, wp: &WhitenedProblem, v: &Vector) -> Result<WeightEval>;
    /// Normalized log density of the proposal distribution.
    fn log_proposal_density(&self, wp: &WhitenedProblem, v: &Vector) -> Result<f64>;
}

/// Residual `H(v)` for the reference-point solve.
struct StackedResidual<'a> {
    wp: &'a WhitenedProblem,
}

struct StackedLinearization<'a> {
    n: usize,
    m: usize,
    inner: Box<dyn Linearization + 'a>,
    value: Vector,
}

impl LinearizedResidual for StackedLinearization<'_> {
    fn residual(&self) -> &Vector {
        &self.value
    }

    fn jvp(&self, dv: &Vector) -> Result<Vector> {
        Ok(stack(dv, &self.inner.jvp(dv)?))
    }

    fn vjp(&self, dr: &Vector) -> Result<Vector> {
        let top = dr.rows(0, self.n).into_owned();
        let bottom = dr.rows(self.n, self.m).into_owned();
        Ok(top + self.inner.vjp(&bottom)?)
    }
}

impl ResidualProblem for StackedResidual<'_> {
    fn dims(&self) -> (usize, usize) {
        (self.wp.n(), self.wp.n() + self.wp.m())
    }

    fn linearize<'a>(&'a self, v: &Vector) -> Result<Box<dyn LinearizedResidual + 'a>> {
        let inner = self.wp.linearize(v)?;
        let value = stack(v, inner.value());
        Ok(Box::new(StackedLinearization {
            n: self.wp.n(),
            m: self.wp.m(),
            inner,
            value,
        }))
    }
}

/// Default options for the reference solve: a tight, non-zero-residual
/// least-squares problem. `ftol = 0` leaves convergence to the gradient
/// test, so the reference is stationary to `gtol`.
pub fn reference_options() -> SolveOptions {
    SolveOptions {
        ftol: 0.0,
        gtol: 1e-9,
        xtol: 1e-14,
        max_iters: 2000,
        zero_residual: false,
        ..Default::default()
    }
}

/// Default options for proposal solves: `ftol = 1e-6` and Marquardt's
/// conservative initial damping of `1e-3` times the curvature scale.
pub fn proposal_options() -> SolveOptions {
    SolveOptions {
        initial_damping: 1e-3,
        ..Default::default()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReferencePoint {
    pub v: Vector,
    pub report: SolveReport,
}

/// Posterior mode `argmin ½‖H(v)‖²`, started from the prior mean.
///
/// A damping blow-up at a point where no further decrease is possible is
/// accepted as a numerical minimum; running out of iterations is an error.
pub fn find_reference(wp: &WhitenedProblem, opts: &SolveOptions) -> Result<ReferencePoint> {
    let prob = StackedResidual { wp };
    let report = solve_nlls(&prob, &Vector::zeros(wp.n()), opts)?;
    let ok = report.converged || (!opts.zero_residual && report.reason == TerminationReason::Stagnated);
    if !ok {
        return Err(Error::Solver(format!(
            "reference point: {:?} after {} iterations (objective {:.3e})",
            report.reason, report.iterations, report.objective
        )));
    }
    Ok(ReferencePoint {
        v: report.solution(),
        report,
    })
}

/// Dense `∇G(v)` from a linearization, using whichever of `m` adjoint or
/// `n` tangent actions is fewer.
pub(crate) fn dense_jacobian(lin: &dyn Linearization, n: usize, m: usize) -> Result<(Matrix, Cost)> {
    if m < n {
        let j = assemble_rows(m, n, |e| lin.vjp(e))?;
        Ok((j, Cost { vjp_evals: m, ..Default::default() }))
    } else {
        let j = assemble_columns(m, n, |e| lin.jvp(e))?;
        Ok((j, Cost { jvp_evals: n, ..Default::default() }))
    }
}

/// Runs `f(0..count)` on a pool of `workers` threads and returns the
/// results in index order.
pub fn par_indexed<T, F>(count: usize, workers: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync + Send,
{
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    pool.install(|| (0..count).into_par_iter().map(&f).collect())
}

/// Proposals `0..count` generated on a pool of `workers` threads.
///
/// Proposal `i` draws its noise from stream `i` of `seed`, so the output is
/// identical for every worker count.
pub fn generate_proposals<M: RtoMap + ?Sized>(
    wp: &WhitenedProblem,
    map: &M,
    count: usize,
    seed: u64,
    opts: &SolveOptions,
    workers: usize,
) -> Result<Vec<Proposal>> {
    let dim = map.noise_dim(wp);
    par_indexed(count, workers, |i| {
        let start = thread_cpu_seconds();
        let noise = standard_normal(&mut stream_rng(seed, i as u64), dim);
        let mut p = map.propose(wp, &noise, opts)?;
        p.index = i;
        p.cpu_seconds = thread_cpu_seconds() - start;
        Ok(p)
    })
}

/// CPU time consumed by the calling thread. Unlike wall-clock time it
/// excludes intervals where the thread was descheduled.
#[cfg(unix)]
pub fn thread_cpu_seconds() -> f64 {
    let mut ts = libc::timespec { tv_sec: 0, tv_nsec: 0 };
    // SAFETY: `ts` is a valid, writable timespec.
    let rc = unsafe { libc::clock_gettime(libc::CLOCK_THREAD_CPUTIME_ID, &mut ts) };
    if rc != 0 {
        return wall_seconds();
    }
    ts.tv_sec as f64 + ts.tv_nsec as f64 * 1e-9
}

#[cfg(not(unix))]
pub fn thread_cpu_seconds() -> f64 {
    wall_seconds()
}

fn wall_seconds() -> f64 {
    static EPOCH: std::sync::OnceLock<Instant> = std::sync::OnceLock::new();
    EPOCH.get_or_init(Instant::now).elapsed().as_secs_f64()
}

pub(crate) const LOG_2PI: f64 = 1.837_877_066_409_345_5;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::ScaledIdentity;
    use crate::models::{toy2d_problem, LinearModel};
    use crate::problem::{whiten, BayesProblem};
    use std::sync::Arc;

    fn scalar_problem(a: f64, y: f64) -> WhitenedProblem {
        whiten(
            BayesProblem::new(
                Arc::new(LinearModel::new(Matrix::from_element(1, 1, a))),
                Vector::from_element(1, y),
                Vector::zeros(1),
                Arc::new(ScaledIdentity::identity(1)),
                Arc::new(ScaledIdentity::identity(1)),
            )
            .unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn reference_of_shifted_identity() {
        // G(v) = v - 2 -> argmin ½(v² + (v-2)²) = 1
        let wp = scalar_problem(1.0, 2.0);
        let r = find_reference(&wp, &reference_options()).unwrap();
        assert!((r.v[0] - 1.0).abs() < 1e-10);
    }

    #[test]
    fn reference_of_zero_data_is_origin() {
        let wp = scalar_problem(1.0, 0.0);
        let r = find_reference(&wp, &reference_options()).unwrap();
        assert_eq!(r.v[0], 0.0);
    }

    #[test]
    fn reference_gradient_vanishes_on_toy() {
        let wp = whiten(toy2d_problem([1.2, 0.8], 0.4).unwrap()).unwrap();
        let r = find_reference(&wp, &reference_options()).unwrap();
        let g = wp.g(&r.v).unwrap();
        let grad = &r.v + wp.vjp(&r.v, &g).unwrap();
        assert!(grad.norm() < 1e-8, "{} {:?}", grad.norm(), r.report);
    }

    #[test]
    fn cost_addition() {
        let a = Cost {
            forward_evals: 1,
            jvp_evals: 2,
            vjp_evals: 3,
            iterations: 4,
        };
        let s: Cost = [a, a].into_iter().sum();
        assert_eq!(s.jvp_evals, 4);
        assert_eq!(s.iterations, 8);
    }
}
