use super::{Cost, Proposal, RtoMap, WeightEval, LOG_2PI};
use crate::error::{check_dim, Result};
use crate::linalg::{assemble_columns, assemble_rows, golub_kahan_svd, log_abs_det, thin_svd, ThinSvd};
use crate::optimizer::{
    solve_nlls, LinearizedResidual, ResidualProblem, SolveOptions, SolveReport, TerminationReason,
};
use crate::problem::{ForwardModel, Linearization, WhitenedProblem};
use crate::{Matrix, Vector};
use serde::{Deserialize, Serialize};

/// How `∇G(v_ref)` is decomposed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum SvdMethod {
    /// Dense assembly when `n ≤ 2048`, Golub–Kahan otherwise.
    #[default]
    Auto,
    /// Assemble the `m × n` Jacobian with `min(m, n)` actions, then a dense SVD.
    Dense,
    /// Golub–Kahan bidiagonalization with full reorthogonalization, using
    /// `min(m, n)` steps of `jvp` / `vjp` pairs.
    GolubKahan,
}

const DENSE_LIMIT: usize = 2048;

/// Truncated SVD `∇G(v_ref) ≈ Ψ Λ Φᵀ`.
#[derive(Debug, Clone)]
pub struct SvdBasis {
    /// `m × r`
    pub psi: Matrix,
    /// `r` singular values, descending.
    pub lambda: Vector,
    /// `n × r`
    pub phi: Matrix,
    pub tau: f64,
    pub v_ref: Vector,
    /// Every singular value found before truncation.
    pub spectrum: Vec<f64>,
    full: ThinSvd,
    /// Cost of building the basis.
    pub cost: Cost,
}

/// Decomposes `∇G(v_ref)` and keeps the singular triplets with `λ > τ`.
///
/// With `τ = 0` every numerically non-zero singular value is kept.
pub fn build_svd_basis(
    wp: &WhitenedProblem,
    v_ref: &Vector,
    tau: f64,
    method: SvdMethod,
) -> Result<SvdBasis> {
    let (n, m) = (wp.n(), wp.m());
    check_dim("build_svd_basis: reference", n, v_ref.len())?;
    let lin = wp.linearize(v_ref)?;
    let dense = match method {
        SvdMethod::Auto => n <= DENSE_LIMIT,
        SvdMethod::Dense => true,
        SvdMethod::GolubKahan => false,
    };
    let k = m.min(n);
    let (svd, mut cost) = if dense {
        if m < n {
            let j = assemble_rows(m, n, |e| lin.vjp(e))?;
            (thin_svd(&j)?, Cost { vjp_evals: m, ..Default::default() })
        } else {
            let j = assemble_columns(m, n, |e| lin.jvp(e))?;
            (thin_svd(&j)?, Cost { jvp_evals: n, ..Default::default() })
        }
    } else {
        let svd = golub_kahan_svd(m, n, k, |x| lin.jvp(x), |y| lin.vjp(y))?;
        (svd, Cost { jvp_evals: k, vjp_evals: k, ..Default::default() })
    };
    cost.forward_evals += 1;
    let spectrum = svd.s.iter().copied().collect();
    let mut basis = SvdBasis {
        psi: Matrix::zeros(m, 0),
        lambda: Vector::zeros(0),
        phi: Matrix::zeros(n, 0),
        tau,
        v_ref: v_ref.clone(),
        spectrum,
        full: svd,
        cost,
    };
    basis.retain(tau);
    Ok(basis)
}

impl SvdBasis {
    pub fn rank(&self) -> usize {
        self.lambda.len()
    }

    /// The same decomposition truncated at a different threshold.
    pub fn truncate(&self, tau: f64) -> SvdBasis {
        let mut out = self.clone();
        out.retain(tau);
        out
    }

    fn retain(&mut self, tau: f64) {
        let s = &self.full.s;
        let lmax = s.iter().copied().fold(0.0, f64::max);
        let dims = self.full.u.nrows().max(self.full.v.nrows()) as f64;
        let floor = lmax * dims * f64::EPSILON;
        let r = s.iter().take_while(|&&l| l > tau && l > floor).count();
        let lead = self.full.leading(r);
        self.psi = lead.u;
        self.lambda = lead.s;
        self.phi = lead.v;
        self.tau = tau;
    }

    /// `(Λ² + I)^{-1/2}` as a vector.
    fn damping(&self) -> Vector {
        self.lambda.map(|l| 1.0 / (1.0 + l * l).sqrt())
    }

    /// `½ Σ log(1 + λᵢ²) = −log det (Λ² + I)^{-1/2}`
    fn half_log_det(&self) -> f64 {
        self.lambda.iter().map(|l| 0.5 * (l * l).ln_1p()).sum()
    }

    /// `D (Φᵀv + Λ Ψᵀ G)`
    fn reduced_coordinates(&self, v: &Vector, g: &Vector) -> Vector {
        let pv = self.phi.tr_mul(v);
        let pg = self.psi.tr_mul(g);
        let d = self.damping();
        Vector::from_fn(self.rank(), |i, _| d[i] * (pv[i] + self.lambda[i] * pg[i]))
    }

    /// `I_r + Λ Ψᵀ ∇G(v) Φ`, assembled with `r` tangent actions.
    fn core_matrix(&self, lin: &dyn Linearization) -> Result<Matrix> {
        let r = self.rank();
        let mut out = Matrix::identity(r, r);
        for j in 0..r {
            let col = self.psi.tr_mul(&lin.jvp(&self.phi.column(j).into_owned())?);
            for i in 0..r {
                out[(i, j)] += self.lambda[i] * col[i];
            }
        }
        Ok(out)
    }

    /// `G(v)` and the `r × r` core matrix at `v`.
    fn evaluate(&self, wp: &WhitenedProblem, v: &Vector) -> Result<(Vector, Matrix, Cost)> {
        check_dim("SvdBasis: point", wp.n(), v.len())?;
        let lin = wp.linearize(v)?;
        let core = self.core_matrix(lin.as_ref())?;
        let cost = Cost {
            forward_evals: 1,
            jvp_evals: self.rank(),
            ..Default::default()
        };
        Ok((lin.value().clone(), core, cost))
    }

    /// `D (I + Λ Ψᵀ ∇G(v) Φ) dvr`
    pub fn reduced_jacobian_action(&self, wp: &WhitenedProblem, v: &Vector, dvr: &Vector) -> Result<Vector> {
        let lin = wp.linearize(v)?;
        reduced_jvp(self, lin.as_ref(), dvr)
    }

    /// `(I + Φᵀ ∇G(v)ᵀ Ψ Λ) D dr`
    pub fn reduced_jacobian_adjoint(&self, wp: &WhitenedProblem, v: &Vector, dr: &Vector) -> Result<Vector> {
        let lin = wp.linearize(v)?;
        reduced_vjp(self, lin.as_ref(), dr)
    }

    /// The `r`-dimensional residual minimized by a scalable proposal:
    /// `D (v_r + Λ Ψᵀ G(v_⊥ + Φ v_r)) − Φᵀ ξ`.
    pub fn reduced_residual(&self, wp: &WhitenedProblem, xi: &Vector, vr: &Vector) -> Result<Vector> {
        let v = self.complement(xi) + &self.phi * vr;
        let g = wp.g(&v)?;
        let d = self.damping();
        let pg = self.psi.tr_mul(&g);
        let target = self.phi.tr_mul(xi);
        Ok(Vector::from_fn(self.rank(), |i, _| {
            d[i] * (vr[i] + self.lambda[i] * pg[i]) - target[i]
        }))
    }

    /// `(I − ΦΦᵀ) x`
    pub fn complement(&self, x: &Vector) -> Vector {
        x - &self.phi * self.phi.tr_mul(x)
    }
}

fn reduced_jvp(b: &SvdBasis, lin: &dyn Linearization, dvr: &Vector) -> Result<Vector> {
    check_dim("reduced Jacobian", b.rank(), dvr.len())?;
    let pg = b.psi.tr_mul(&lin.jvp(&(&b.phi * dvr))?);
    let d = b.damping();
    Ok(Vector::from_fn(b.rank(), |i, _| d[i] * (dvr[i] + b.lambda[i] * pg[i])))
}

fn reduced_vjp(b: &SvdBasis, lin: &dyn Linearization, dr: &Vector) -> Result<Vector> {
    check_dim("reduced Jacobian adjoint", b.rank(), dr.len())?;
    let d = b.damping();
    let scaled = dr.component_mul(&d);
    let w = &b.psi * scaled.component_mul(&b.lambda);
    Ok(scaled + b.phi.tr_mul(&lin.vjp(&w)?))
}

struct ScalableResidual<'a> {
    wp: &'a WhitenedProblem,
    basis: &'a SvdBasis,
    v_perp: Vector,
    target: Vector,
}

struct ScalableLinearization<'a> {
    basis: &'a SvdBasis,
    inner: Box<dyn Linearization + 'a>,
    value: Vector,
}

impl LinearizedResidual for ScalableLinearization<'_> {
    fn residual(&self) -> &Vector {
        &self.value
    }

    fn jvp(&self, dvr: &Vector) -> Result<Vector> {
        reduced_jvp(self.basis, self.inner.as_ref(), dvr)
    }

    fn vjp(&self, dr: &Vector) -> Result<Vector> {
        reduced_vjp(self.basis, self.inner.as_ref(), dr)
    }
}

impl ResidualProblem for ScalableResidual<'_> {
    fn dims(&self) -> (usize, usize) {
        (self.basis.rank(), self.basis.rank())
    }

    fn linearize<'a>(&'a self, vr: &Vector) -> Result<Box<dyn LinearizedResidual + 'a>> {
        let v = &self.v_perp + &self.basis.phi * vr;
        let inner = self.wp.linearize(&v)?;
        let b = self.basis;
        let d = b.damping();
        let pg = b.psi.tr_mul(inner.value());
        let value = Vector::from_fn(b.rank(), |i, _| {
            d[i] * (vr[i] + b.lambda[i] * pg[i]) - self.target[i]
        });
        Ok(Box::new(ScalableLinearization {
            basis: b,
            inner,
            value,
        }))
    }
}

impl RtoMap for SvdBasis {
    fn noise_dim(&self, wp: &WhitenedProblem) -> usize {
        wp.n()
    }

    fn reference(&self) -> &Vector {
        &self.v_ref
    }

    /// `v = (I − ΦΦᵀ)ξ + Φ v_r`, with `v_r` solving the reduced system from
    /// `Φᵀ v_ref`. With `r = 0` the proposal is `ξ` itself.
    fn propose(&self, wp: &WhitenedProblem, xi: &Vector, opts: &SolveOptions) -> Result<Proposal> {
        check_dim("propose_scalable: noise", wp.n(), xi.len())?;
        let v_perp = self.complement(xi);
        let (v, report) = if self.rank() == 0 {
            let report = SolveReport {
                x: Vec::new(),
                objective: 0.0,
                initial_objective: 0.0,
                iterations: 0,
                residual_evals: 0,
                jvp_evals: 0,
                vjp_evals: 0,
                rejected_nonfinite: 0,
                converged: true,
                reason: TerminationReason::ObjectiveBelowTolerance,
            };
            (v_perp, report)
        } else {
            let prob = ScalableResidual {
                wp,
                basis: self,
                target: self.phi.tr_mul(xi),
                v_perp: v_perp.clone(),
            };
            let report = solve_nlls(&prob, &self.phi.tr_mul(&self.v_ref), opts)?;
            let v = v_perp + &self.phi * report.solution();
            (v, report)
        };
        let weight = self.weight(wp, &v);
        Ok(Proposal::assemble(v, xi.clone(), report, weight, 1.0))
    }

    /// `½Σlog(1+λ²) − log|det(I + ΛΨᵀ∇G(v)Φ)| − ½‖G(v)‖² − ½‖Φᵀv‖²
    ///  + ½‖D(Φᵀv + ΛΨᵀG(v))‖²`
    fn weight(&self, wp: &WhitenedProblem, v: &Vector) -> Result<WeightEval> {
        let (g, core, cost) = self.evaluate(wp, v)?;
        let (ld, det_sign) = log_abs_det(&core);
        let pv = self.phi.tr_mul(v);
        let red = self.reduced_coordinates(v, &g);
        let log_weight = self.half_log_det() - ld - 0.5 * g.norm_squared() - 0.5 * pv.norm_squared()
            + 0.5 * red.norm_squared();
        Ok(WeightEval {
            log_weight,
            log_abs_det: ld - self.half_log_det(),
            det_sign,
            cost,
        })
    }

    /// `−(n/2)log 2π − ½Σlog(1+λ²) + log|det(I + ΛΨᵀ∇GΦ)|
    ///  − ½‖(I − ΦΦᵀ)v‖² − ½‖D(Φᵀv + ΛΨᵀG)‖²`, and `−∞` where the core
    /// determinant is not positive.
    fn log_proposal_density(&self, wp: &WhitenedProblem, v: &Vector) -> Result<f64> {
        let base = -0.5 * wp.n() as f64 * LOG_2PI;
        if self.rank() == 0 {
            check_dim("SvdBasis: point", wp.n(), v.len())?;
            return Ok(base - 0.5 * v.norm_squared());
        }
        let (g, core, _) = self.evaluate(wp, v)?;
        let (ld, sign) = log_abs_det(&core);
        if sign <= 0.0 {
            return Ok(f64::NEG_INFINITY);
        }
        let perp = self.complement(v);
        let red = self.reduced_coordinates(v, &g);
        Ok(base - self.half_log_det() + ld - 0.5 * perp.norm_squared() - 0.5 * red.norm_squared())
    }
}

/// Scalable RTO proposal for one draw `ξ ∈ Rⁿ`.
pub fn propose_scalable(
    wp: &WhitenedProblem,
    basis: &SvdBasis,
    xi: &Vector,
    opts: &SolveOptions,
) -> Result<Proposal> {
    basis.propose(wp, xi, opts)
}

/// Log-weight of the scalable RTO proposal at `v`.
pub fn weight_scalable(wp: &WhitenedProblem, basis: &SvdBasis, v: &Vector) -> Result<WeightEval> {
    basis.weight(wp, v)
}
