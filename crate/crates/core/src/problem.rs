//! Bayesian inverse problems and the whitening change of variables.
//!
//! A [`BayesProblem`] couples a forward model `F` with data `y`, a Gaussian
//! prior `N(m_pr, S_pr S_prᵀ)` and Gaussian noise `N(0, S_obs S_obsᵀ)`.
//! [`whiten`] turns it into a [`WhitenedProblem`] with parameter
//! `v = S_pr⁻¹(u − m_pr)` and model `G(v) = S_obs⁻¹(F(S_pr v + m_pr) − y)`,
//! so that the posterior on `v` is `exp(-½‖H(v)‖²)` with `H(v) = (v, G(v))`.

use crate::error::{check_dim, check_finite, Error, Result};
use crate::linalg::SquareFactor;
use crate::Vector;
use std::fmt::Debug;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

/// Derivative actions of a model frozen at one input point.
///
/// Implementations may cache whatever the forward evaluation produced
/// (state, factorizations) so repeated actions are cheap.
pub trait Linearization {
    /// Model output at the linearization point.
    fn value(&self) -> &Vector;
    /// `∇F(x) dx`
    fn jvp(&self, dx: &Vector) -> Result<Vector>;
    /// `∇F(x)ᵀ dy`
    fn vjp(&self, dy: &Vector) -> Result<Vector>;
}

/// A differentiable map `F: Rⁿ → Rᵐ`.
pub trait ForwardModel: Send + Sync + Debug {
    fn input_dim(&self) -> usize;
    fn output_dim(&self) -> usize;

    fn dims(&self) -> (usize, usize) {
        (self.input_dim(), self.output_dim())
    }

    fn eval(&self, x: &Vector) -> Result<Vector>;

    /// Evaluates the model at `x` and keeps what is needed for derivative
    /// actions at the same point.
    fn linearize<'a>(&'a self, x: &Vector) -> Result<Box<dyn Linearization + 'a>>;

    fn jvp(&self, x: &Vector, dx: &Vector) -> Result<Vector> {
        self.linearize(x)?.jvp(dx)
    }

    fn vjp(&self, x: &Vector, dy: &Vector) -> Result<Vector> {
        self.linearize(x)?.vjp(dy)
    }

    /// Second-order action `∇(∇F(x)ᵀ w) dx`.
    ///
    /// The default differentiates `vjp` by central differences; models with
    /// cheap exact second derivatives override it.
    fn hvp(&self, x: &Vector, w: &Vector, dx: &Vector) -> Result<Vector> {
        let norm = dx.norm();
        if norm == 0.0 {
            return Ok(Vector::zeros(self.input_dim()));
        }
        let h = 1e-5 * (1.0 + x.norm()) / norm;
        let plus = self.vjp(&(x + dx * h), w)?;
        let minus = self.vjp(&(x - dx * h), w)?;
        Ok((plus - minus) / (2.0 * h))
    }
}

/// Linearization that only remembers the point and defers to the model.
pub struct PointLinearization<'a, M: ForwardModel + ?Sized> {
    model: &'a M,
    x: Vector,
    value: Vector,
}

impl<'a, M: ForwardModel + ?Sized> PointLinearization<'a, M> {
    pub fn new(model: &'a M, x: &Vector, value: Vector) -> Self {
        Self {
            model,
            x: x.clone(),
            value,
        }
    }
}

/// A Bayesian inverse problem with Gaussian prior and additive Gaussian
/// noise.
#[derive(Debug, Clone)]
pub struct BayesProblem {
    pub forward: Arc<dyn ForwardModel>,
    pub data: Vector,
    pub prior_mean: Vector,
    pub prior_factor: Arc<dyn SquareFactor>,
    pub obs_factor: Arc<dyn SquareFactor>,
}

impl BayesProblem {
    pub fn new(
        forward: Arc<dyn ForwardModel>,
        data: Vector,
        prior_mean: Vector,
        prior_factor: Arc<dyn SquareFactor>,
        obs_factor: Arc<dyn SquareFactor>,
    ) -> Result<Self> {
        let (n, m) = forward.dims();
        if m == 0 {
            return Err(Error::InvalidArgument("data dimension must be at least one".into()));
        }
        check_dim("BayesProblem: data", m, data.len())?;
        check_dim("BayesProblem: prior mean", n, prior_mean.len())?;
        check_dim("BayesProblem: prior factor", n, prior_factor.dim())?;
        check_dim("BayesProblem: noise factor", m, obs_factor.dim())?;
        check_finite("BayesProblem: data", &data)?;
        check_finite("BayesProblem: prior mean", &prior_mean)?;
        Ok(Self {
            forward,
            data,
            prior_mean,
            prior_factor,
            obs_factor,
        })
    }
}

/// The whitened problem. `G` is itself a [`ForwardModel`] so the optimizer
/// and samplers consume it like any other model.
#[derive(Debug, Clone)]
pub struct WhitenedProblem {
    problem: BayesProblem,
}

/// Whitens a Bayesian problem.
///
/// Fails with [`Error::Factorization`] when either factor cannot be solved
/// against.
pub fn whiten(problem: BayesProblem) -> Result<WhitenedProblem> {
    let (n, m) = problem.forward.dims();
    // probe both solves once; a singular factor surfaces here
    let probe_n = Vector::from_element(n, 1.0);
    let probe_m = Vector::from_element(m, 1.0);
    for r in [
        problem.prior_factor.solve(&probe_n),
        problem.prior_factor.solve_transpose(&probe_n),
    ] {
        check_finite("prior factor solve", &r.map_err(factor_err)?).map_err(factor_err)?;
    }
    for r in [
        problem.obs_factor.solve(&probe_m),
        problem.obs_factor.solve_transpose(&probe_m),
    ] {
        check_finite("noise factor solve", &r.map_err(factor_err)?).map_err(factor_err)?;
    }
    Ok(WhitenedProblem { problem })
}

fn factor_err(e: Error) -> Error {
    match e {
        Error::Factorization(_) => e,
        other => Error::Factorization(other.to_string()),
    }
}

impl WhitenedProblem {
    pub fn problem(&self) -> &BayesProblem {
        &self.problem
    }

    /// Parameter dimension `n`.
    pub fn n(&self) -> usize {
        self.problem.forward.input_dim()
    }

    /// Data dimension `m`.
    pub fn m(&self) -> usize {
        self.problem.forward.output_dim()
    }

    /// `u = S_pr v + m_pr`
    pub fn unwhiten(&self, v: &Vector) -> Vector {
        self.problem.prior_factor.apply(v) + &self.problem.prior_mean
    }

    /// `v = S_pr⁻¹(u − m_pr)`
    pub fn whiten_point(&self, u: &Vector) -> Result<Vector> {
        self.problem
            .prior_factor
            .solve(&(u - &self.problem.prior_mean))
    }

    /// Whitened forward model `G(v)`.
    pub fn g(&self, v: &Vector) -> Result<Vector> {
        check_dim("G: input", self.n(), v.len())?;
        let f = self.problem.forward.eval(&self.unwhiten(v))?;
        let g = self.problem.obs_factor.solve(&(f - &self.problem.data))?;
        check_finite("whitened forward model", &g)?;
        Ok(g)
    }

    /// Stacked map `H(v) = (v, G(v))`.
    pub fn eval_h(&self, v: &Vector) -> Result<Vector> {
        let g = self.g(v)?;
        Ok(stack(v, &g))
    }

    /// Unnormalized log target `−½‖H(v)‖²`.
    pub fn log_target(&self, v: &Vector) -> Result<f64> {
        let g = self.g(v)?;
        let lt = -0.5 * (v.norm_squared() + g.norm_squared());
        if lt.is_finite() {
            Ok(lt)
        } else {
            Err(Error::NonFinite("log target"))
        }
    }

    /// `∇H(v) dv = (dv, ∇G(v) dv)`
    pub fn jvp_h(&self, v: &Vector, dv: &Vector) -> Result<Vector> {
        let gd = self.jvp(v, dv)?;
        Ok(stack(dv, &gd))
    }

    /// `∇H(v)ᵀ dy = dy_top + ∇G(v)ᵀ dy_bottom`
    pub fn vjp_h(&self, v: &Vector, dy: &Vector) -> Result<Vector> {
        let n = self.n();
        check_dim("vjp_H: cotangent", n + self.m(), dy.len())?;
        let top = dy.rows(0, n).into_owned();
        let bottom = dy.rows(n, self.m()).into_owned();
        Ok(top + self.vjp(v, &bottom)?)
    }
}

/// Concatenates two vectors.
pub fn stack(a: &Vector, b: &Vector) -> Vector {
    let mut out = Vector::zeros(a.len() + b.len());
    out.rows_mut(0, a.len()).copy_from(a);
    out.rows_mut(a.len(), b.len()).copy_from(b);
    out
}

struct WhitenedLinearization<'a> {
    wp: &'a WhitenedProblem,
    inner: Box<dyn Linearization + 'a>,
    value: Vector,
}

impl Linearization for WhitenedLinearization<'_> {
    fn value(&self) -> &Vector {
        &self.value
    }

    fn jvp(&self, dv: &Vector) -> Result<Vector> {
        check_dim("G jvp", self.wp.n(), dv.len())?;
        let p = &self.wp.problem;
        let df = self.inner.jvp(&p.prior_factor.apply(dv))?;
        p.obs_factor.solve(&df)
    }

    fn vjp(&self, dy: &Vector) -> Result<Vector> {
        check_dim("G vjp", self.wp.m(), dy.len())?;
        let p = &self.wp.problem;
        let w = p.obs_factor.solve_transpose(dy)?;
        Ok(p.prior_factor.apply_transpose(&self.inner.vjp(&w)?))
    }
}

impl ForwardModel for WhitenedProblem {
    fn input_dim(&self) -> usize {
        self.n()
    }

    fn output_dim(&self) -> usize {
        self.m()
    }

    fn eval(&self, v: &Vector) -> Result<Vector> {
        self.g(v)
    }

    fn linearize<'a>(&'a self, v: &Vector) -> Result<Box<dyn Linearization + 'a>> {
        check_dim("G: input", self.n(), v.len())?;
        let p = &self.problem;
        let inner = p.forward.linearize(&self.unwhiten(v))?;
        let value = p.obs_factor.solve(&(inner.value() - &p.data))?;
        check_finite("whitened forward model", &value)?;
        Ok(Box::new(WhitenedLinearization {
            wp: self,
            inner,
            value,
        }))
    }

    fn hvp(&self, v: &Vector, w: &Vector, dv: &Vector) -> Result<Vector> {
        let p = &self.problem;
        let ww = p.obs_factor.solve_transpose(w)?;
        let inner = p
            .forward
            .hvp(&self.unwhiten(v), &ww, &p.prior_factor.apply(dv))?;
        Ok(p.prior_factor.apply_transpose(&inner))
    }
}

impl<M: ForwardModel + ?Sized> Linearization for PointLinearization<'_, M> {
    fn value(&self) -> &Vector {
        &self.value
    }

    fn jvp(&self, dx: &Vector) -> Result<Vector> {
        self.model.jvp(&self.x, dx)
    }

    fn vjp(&self, dy: &Vector) -> Result<Vector> {
        self.model.vjp(&self.x, dy)
    }
}

/// Call counters shared by a [`CountingModel`].
#[derive(Debug, Default)]
pub struct CallCounts {
    pub evals: AtomicUsize,
    pub jvps: AtomicUsize,
    pub vjps: AtomicUsize,
}

impl CallCounts {
    pub fn snapshot(&self) -> (usize, usize, usize) {
        (
            self.evals.load(Ordering::Relaxed),
            self.jvps.load(Ordering::Relaxed),
            self.vjps.load(Ordering::Relaxed),
        )
    }
}

/// Wraps a model and counts forward evaluations (including
/// linearizations) and derivative actions.
#[derive(Debug, Clone)]
pub struct CountingModel<M> {
    inner: M,
    counts: Arc<CallCounts>,
}

impl<M: ForwardModel> CountingModel<M> {
    pub fn new(inner: M) -> Self {
        Self {
            inner,
            counts: Arc::new(CallCounts::default()),
        }
    }

    pub fn counts(&self) -> Arc<CallCounts> {
        Arc::clone(&self.counts)
    }
}

struct CountingLinearization<'a> {
    inner: Box<dyn Linearization + 'a>,
    counts: &'a CallCounts,
}

impl Linearization for CountingLinearization<'_> {
    fn value(&self) -> &Vector {
        self.inner.value()
    }

    fn jvp(&self, dx: &Vector) -> Result<Vector> {
        self.counts.jvps.fetch_add(1, Ordering::Relaxed);
        self.inner.jvp(dx)
    }

    fn vjp(&self, dy: &Vector) -> Result<Vector> {
        self.counts.vjps.fetch_add(1, Ordering::Relaxed);
        self.inner.vjp(dy)
    }
}

impl<M: ForwardModel> ForwardModel for CountingModel<M> {
    fn input_dim(&self) -> usize {
        self.inner.input_dim()
    }

    fn output_dim(&self) -> usize {
        self.inner.output_dim()
    }

    fn eval(&self, x: &Vector) -> Result<Vector> {
        self.counts.evals.fetch_add(1, Ordering::Relaxed);
        self.inner.eval(x)
    }

    fn linearize<'a>(&'a self, x: &Vector) -> Result<Box<dyn Linearization + 'a>> {
        self.counts.evals.fetch_add(1, Ordering::Relaxed);
        Ok(Box::new(CountingLinearization {
            inner: self.inner.linearize(x)?,
            counts: &self.counts,
        }))
    }

    fn hvp(&self, x: &Vector, w: &Vector, dx: &Vector) -> Result<Vector> {
        self.inner.hvp(x, w, dx)
    }
}

/// Result of a derivative self-check at one point.
#[derive(Debug, Clone, Copy)]
pub struct DerivativeCheck {
    /// `|⟨J a, b⟩ − ⟨a, Jᵀ b⟩| / (1 + |⟨J a, b⟩|)`
    pub adjoint_error: f64,
    /// `‖J a − (F(x + h a) − F(x − h a)) / 2h‖ / max(‖J a‖, tiny)`
    pub fd_relative_error: f64,
}

/// Adjoint pairing and central finite-difference check of a model's
/// derivative actions at `x` along `a` (tangent) and `b` (cotangent).
pub fn check_derivatives<M: ForwardModel + ?Sized>(
    model: &M,
    x: &Vector,
    a: &Vector,
    b: &Vector,
    h: f64,
) -> Result<DerivativeCheck> {
    let lin = model.linearize(x)?;
    let ja = lin.jvp(a)?;
    let jtb = lin.vjp(b)?;
    let lhs = ja.dot(b);
    let rhs = a.dot(&jtb);
    let adjoint_error = (lhs - rhs).abs() / (1.0 + lhs.abs());
    let fd = (model.eval(&(x + a * h))? - model.eval(&(x - a * h))?) / (2.0 * h);
    let fd_relative_error = (&ja - &fd).norm() / ja.norm().max(1e-300);
    Ok(DerivativeCheck {
        adjoint_error,
        fd_relative_error,
    })
}
