use super::{dense_jacobian, Cost, Proposal, RtoMap, WeightEval, LOG_2PI};
use crate::error::{check_dim, Error, Result};
use crate::linalg::log_abs_det;
use crate::optimizer::{solve_nlls, LinearizedResidual, ResidualProblem, SolveOptions};
use crate::problem::{ForwardModel, Linearization, WhitenedProblem};
use crate::{Matrix, Vector};

/// Orthonormal basis `Q` of `range(∇H(v_ref))` from a thin QR factorization.
#[derive(Debug, Clone)]
pub struct QrBasis {
    /// `(n + m) × n`
    pub q: Matrix,
    pub v_ref: Vector,
    /// Sign of `det(Qᵀ ∇H(v_ref)) = det R`.
    pub reference_sign: f64,
}

/// Assembles `∇H(v_ref) = [I; ∇G(v_ref)]` densely and factors it.
pub fn build_qr_basis(wp: &WhitenedProblem, v_ref: &Vector) -> Result<QrBasis> {
    let (n, m) = (wp.n(), wp.m());
    check_dim("build_qr_basis: reference", n, v_ref.len())?;
    let lin = wp.linearize(v_ref)?;
    let (jg, _) = dense_jacobian(lin.as_ref(), n, m)?;
    let mut jh = Matrix::zeros(n + m, n);
    jh.view_mut((0, 0), (n, n)).fill_with_identity();
    jh.view_mut((n, 0), (m, n)).copy_from(&jg);
    let qr = jh.qr();
    let r = qr.r();
    let diag_max = r.diagonal().amax();
    let mut sign = 1.0;
    for &d in r.diagonal().iter() {
        if !(d.abs() > 1e-12 * diag_max) {
            return Err(Error::Factorization("stacked Jacobian is rank deficient".into()));
        }
        sign *= d.signum();
    }
    Ok(QrBasis {
        q: qr.q(),
        v_ref: v_ref.clone(),
        reference_sign: sign,
    })
}

impl QrBasis {
    fn top(&self, n: usize) -> nalgebra::DMatrixView<'_, f64> {
        self.q.view((0, 0), (n, n))
    }

    fn bottom(&self, n: usize, m: usize) -> nalgebra::DMatrixView<'_, f64> {
        self.q.view((n, 0), (m, n))
    }

    /// `Qᵀ H(v)` from `v` and `G(v)`.
    fn project(&self, v: &Vector, g: &Vector) -> Vector {
        let n = v.len();
        self.top(n).tr_mul(v) + self.bottom(n, g.len()).tr_mul(g)
    }

    /// Dense `Qᵀ ∇H(v)` from a linearization at `v`.
    fn projected_jacobian(&self, lin: &dyn Linearization, n: usize, m: usize) -> Result<(Matrix, Cost)> {
        let (jg, cost) = dense_jacobian(lin, n, m)?;
        Ok((self.top(n).transpose() + self.bottom(n, m).tr_mul(&jg), cost))
    }

    fn evaluate(&self, wp: &WhitenedProblem, v: &Vector) -> Result<(Vector, Matrix, Cost)> {
        check_dim("QrBasis: point", wp.n(), v.len())?;
        let lin = wp.linearize(v)?;
        let (jac, mut cost) = self.projected_jacobian(lin.as_ref(), wp.n(), wp.m())?;
        cost.forward_evals += 1;
        Ok((lin.value().clone(), jac, cost))
    }
}

/// `Qᵀ (H(v) − η)`.
struct StandardResidual<'a> {
    wp: &'a WhitenedProblem,
    basis: &'a QrBasis,
    target: Vector,
}

struct StandardLinearization<'a> {
    basis: &'a QrBasis,
    inner: Box<dyn Linearization + 'a>,
    value: Vector,
    n: usize,
    m: usize,
}

impl LinearizedResidual for StandardLinearization<'_> {
    fn residual(&self) -> &Vector {
        &self.value
    }

    fn jvp(&self, dv: &Vector) -> Result<Vector> {
        let dg = self.inner.jvp(dv)?;
        Ok(self.basis.project(dv, &dg))
    }

    fn vjp(&self, dr: &Vector) -> Result<Vector> {
        let top = self.basis.top(self.n) * dr;
        let bottom = self.basis.bottom(self.n, self.m) * dr;
        Ok(top + self.inner.vjp(&bottom)?)
    }
}

impl ResidualProblem for StandardResidual<'_> {
    fn dims(&self) -> (usize, usize) {
        (self.wp.n(), self.wp.n())
    }

    fn linearize<'a>(&'a self, v: &Vector) -> Result<Box<dyn LinearizedResidual + 'a>> {
        let inner = self.wp.linearize(v)?;
        let value = self.basis.project(v, inner.value()) - &self.target;
        Ok(Box::new(StandardLinearization {
            basis: self.basis,
            inner,
            value,
            n: self.wp.n(),
            m: self.wp.m(),
        }))
    }
}

impl RtoMap for QrBasis {
    fn noise_dim(&self, wp: &WhitenedProblem) -> usize {
        wp.n() + wp.m()
    }

    fn reference(&self) -> &Vector {
        &self.v_ref
    }

    /// Solves `Qᵀ H(v) = Qᵀ η` from `v_ref`.
    fn propose(&self, wp: &WhitenedProblem, eta: &Vector, opts: &SolveOptions) -> Result<Proposal> {
        check_dim("propose_standard: noise", wp.n() + wp.m(), eta.len())?;
        let prob = StandardResidual {
            wp,
            basis: self,
            target: self.q.tr_mul(eta),
        };
        let report = solve_nlls(&prob, &self.v_ref, opts)?;
        let v = report.solution();
        let weight = self.weight(wp, &v);
        Ok(Proposal::assemble(v, eta.clone(), report, weight, self.reference_sign))
    }

    /// `−log|det(Qᵀ∇H(v))| − ½‖H(v)‖² + ½‖Qᵀ H(v)‖²`
    fn weight(&self, wp: &WhitenedProblem, v: &Vector) -> Result<WeightEval> {
        let (g, jac, cost) = self.evaluate(wp, v)?;
        let (log_abs_det, det_sign) = log_abs_det(&jac);
        let qh = self.project(v, &g);
        let log_weight =
            -log_abs_det - 0.5 * (v.norm_squared() + g.norm_squared()) + 0.5 * qh.norm_squared();
        Ok(WeightEval {
            log_weight,
            log_abs_det,
            det_sign,
            cost,
        })
    }

    /// `−(n/2) log 2π + log|det(Qᵀ∇H(v))| − ½‖Qᵀ H(v)‖²`, and `−∞` where the
    /// orientation differs from the reference point (never proposed).
    fn log_proposal_density(&self, wp: &WhitenedProblem, v: &Vector) -> Result<f64> {
        let (g, jac, _) = self.evaluate(wp, v)?;
        let (log_abs_det, sign) = log_abs_det(&jac);
        if sign != self.reference_sign {
            return Ok(f64::NEG_INFINITY);
        }
        let qh = self.project(v, &g);
        Ok(-0.5 * wp.n() as f64 * LOG_2PI + log_abs_det - 0.5 * qh.norm_squared())
    }
}

/// Standard RTO proposal for one draw `η ∈ Rⁿ⁺ᵐ`.
pub fn propose_standard(
    wp: &WhitenedProblem,
    basis: &QrBasis,
    eta: &Vector,
    opts: &SolveOptions,
) -> Result<Proposal> {
    basis.propose(wp, eta, opts)
}

/// Log-weight of the standard RTO proposal at `v`.
pub fn weight_standard(wp: &WhitenedProblem, basis: &QrBasis, v: &Vector) -> Result<WeightEval> {
    basis.weight(wp, v)
}
