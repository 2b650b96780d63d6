//! Linear-algebra building blocks: square factor operators, dense
//! determinant and SVD helpers, tridiagonal solves and Golub–Kahan
//! bidiagonalization.

mod bidiag;
mod tridiagonal;

pub use bidiag::{golub_kahan_svd, thin_svd, ThinSvd};
pub use tridiagonal::{Tridiagonal, TridiagonalLu};

use crate::error::{check_dim, Error, Result};
use crate::{Matrix, Vector};
use nalgebra::LU;
use std::fmt::Debug;

/// A square invertible operator `S` given through its actions.
///
/// Prior and noise covariances enter the library as factors with
/// `S Sᵀ = Γ`. Only the four actions below are ever needed, so structured
/// factors (banded, scaled identity, ...) never have to be densified.
pub trait SquareFactor: Send + Sync + Debug {
    fn dim(&self) -> usize;
    /// `S x`
    fn apply(&self, x: &Vector) -> Vector;
    /// `Sᵀ x`
    fn apply_transpose(&self, x: &Vector) -> Vector;
    /// `S⁻¹ b`
    fn solve(&self, b: &Vector) -> Result<Vector>;
    /// `S⁻ᵀ b`
    fn solve_transpose(&self, b: &Vector) -> Result<Vector>;
}

/// `S = scale · I`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScaledIdentity {
    dim: usize,
    scale: f64,
}

impl ScaledIdentity {
    pub fn new(dim: usize, scale: f64) -> Result<Self> {
        if scale == 0.0 || !scale.is_finite() {
            return Err(Error::Factorization(format!(
                "scaled identity with scale {scale} is not invertible"
            )));
        }
        Ok(Self { dim, scale })
    }

    pub fn identity(dim: usize) -> Self {
        Self { dim, scale: 1.0 }
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }
}

impl SquareFactor for ScaledIdentity {
    fn dim(&self) -> usize {
        self.dim
    }

    fn apply(&self, x: &Vector) -> Vector {
        x * self.scale
    }

    fn apply_transpose(&self, x: &Vector) -> Vector {
        x * self.scale
    }

    fn solve(&self, b: &Vector) -> Result<Vector> {
        check_dim("ScaledIdentity::solve", self.dim, b.len())?;
        Ok(b / self.scale)
    }

    fn solve_transpose(&self, b: &Vector) -> Result<Vector> {
        self.solve(b)
    }
}

/// Dense square factor with cached LU factorizations of `S` and `Sᵀ`.
#[derive(Debug, Clone)]
pub struct DenseFactor {
    s: Matrix,
    lu: LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
    lu_t: LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
}

impl DenseFactor {
    /// Wraps an explicit factor `S`. Fails when `S` is (numerically) singular.
    pub fn new(s: Matrix) -> Result<Self> {
        if !s.is_square() {
            return Err(Error::Factorization(format!(
                "factor must be square, got {}x{}",
                s.nrows(),
                s.ncols()
            )));
        }
        if s.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("dense factor"));
        }
        let lu = LU::new(s.clone());
        let u = lu.u();
        let max_pivot = u.diagonal().iter().fold(0.0_f64, |a, x| a.max(x.abs()));
        let min_pivot = u
            .diagonal()
            .iter()
            .fold(f64::INFINITY, |a, x| a.min(x.abs()));
        let n = s.nrows().max(1) as f64;
        if !(min_pivot > n * f64::EPSILON * max_pivot) {
            return Err(Error::Factorization("factor is singular".into()));
        }
        let lu_t = LU::new(s.transpose());
        Ok(Self { s, lu, lu_t })
    }

    /// Lower-triangular Cholesky factor of an SPD covariance.
    pub fn from_covariance(cov: &Matrix) -> Result<Self> {
        if !cov.is_square() {
            return Err(Error::Factorization("covariance must be square".into()));
        }
        let asym = (cov - cov.transpose()).amax();
        if asym > 1e-12 * cov.amax().max(1.0) {
            return Err(Error::Factorization("covariance is not symmetric".into()));
        }
        let chol = nalgebra::Cholesky::new(cov.clone())
            .ok_or_else(|| Error::Factorization("covariance is not positive definite".into()))?;
        Self::new(chol.l())
    }

    pub fn matrix(&self) -> &Matrix {
        &self.s
    }
}

impl SquareFactor for DenseFactor {
    fn dim(&self) -> usize {
        self.s.nrows()
    }

    fn apply(&self, x: &Vector) -> Vector {
        &self.s * x
    }

    fn apply_transpose(&self, x: &Vector) -> Vector {
        self.s.tr_mul(x)
    }

    fn solve(&self, b: &Vector) -> Result<Vector> {
        check_dim("DenseFactor::solve", self.dim(), b.len())?;
        self.lu
            .solve(b)
            .ok_or_else(|| Error::Factorization("singular factor".into()))
    }

    fn solve_transpose(&self, b: &Vector) -> Result<Vector> {
        check_dim("DenseFactor::solve_transpose", self.dim(), b.len())?;
        self.lu_t
            .solve(b)
            .ok_or_else(|| Error::Factorization("singular factor".into()))
    }
}

/// `(log|det A|, sign det A)` via LU with partial pivoting.
///
/// A zero pivot yields `(-inf, 0.0)`. The empty matrix has determinant one.
pub fn log_abs_det(a: &Matrix) -> (f64, f64) {
    assert!(a.is_square(), "determinant of a non-square matrix");
    if a.nrows() == 0 {
        return (0.0, 1.0);
    }
    let lu = LU::new(a.clone());
    let mut sign: f64 = lu.p().determinant();
    let mut log_abs = 0.0;
    for &d in lu.u().diagonal().iter() {
        if d == 0.0 || !d.is_finite() {
            return (f64::NEG_INFINITY, 0.0);
        }
        log_abs += d.abs().ln();
        sign *= d.signum();
    }
    (log_abs, sign)
}

/// Assembles the dense `rows × cols` matrix of a linear operator column by
/// column.
pub fn assemble_columns<F>(rows: usize, cols: usize, mut apply: F) -> Result<Matrix>
where
    F: FnMut(&Vector) -> Result<Vector>,
{
    let mut out = Matrix::zeros(rows, cols);
    let mut e = Vector::zeros(cols);
    for j in 0..cols {
        e[j] = 1.0;
        let col = apply(&e)?;
        check_dim("assemble_columns", rows, col.len())?;
        out.set_column(j, &col);
        e[j] = 0.0;
    }
    Ok(out)
}

/// Assembles a dense `rows × cols` matrix from its transpose action, one row
/// per call. Cheaper than [`assemble_columns`] when `rows < cols`.
pub fn assemble_rows<F>(rows: usize, cols: usize, mut apply_transpose: F) -> Result<Matrix>
where
    F: FnMut(&Vector) -> Result<Vector>,
{
    let mut out = Matrix::zeros(rows, cols);
    let mut e = Vector::zeros(rows);
    for i in 0..rows {
        e[i] = 1.0;
        let row = apply_transpose(&e)?;
        check_dim("assemble_rows", cols, row.len())?;
        out.set_row(i, &row.transpose());
        e[i] = 0.0;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scaled_identity_round_trip() {
        let s = ScaledIdentity::new(3, 2.0).unwrap();
        let x = Vector::from_vec(vec![1.0, -2.0, 0.5]);
        assert_eq!(s.solve(&s.apply(&x)).unwrap(), x);
        assert!(ScaledIdentity::new(3, 0.0).is_err());
    }

    #[test]
    fn dense_factor_rejects_singular() {
        let s = Matrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 4.0]);
        assert!(matches!(DenseFactor::new(s), Err(Error::Factorization(_))));
    }

    #[test]
    fn dense_factor_actions_are_consistent() {
        let s = Matrix::from_row_slice(3, 3, &[2.0, 0.0, 0.0, 1.0, 3.0, 0.0, -1.0, 0.5, 1.5]);
        let f = DenseFactor::new(s.clone()).unwrap();
        let b = Vector::from_vec(vec![0.3, -1.0, 2.0]);
        let x = f.solve(&b).unwrap();
        assert!((&s * &x - &b).norm() < 1e-12);
        let y = f.solve_transpose(&b).unwrap();
        assert!((s.transpose() * &y - &b).norm() < 1e-12);
    }

    #[test]
    fn covariance_factor_reproduces_covariance() {
        let cov = Matrix::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 2.0]);
        let f = DenseFactor::from_covariance(&cov).unwrap();
        let s = f.matrix();
        assert!((s * s.transpose() - &cov).amax() < 1e-12);
        let not_spd = Matrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(DenseFactor::from_covariance(&not_spd).is_err());
    }

    #[test]
    fn log_abs_det_matches_determinant() {
        let a = Matrix::from_row_slice(3, 3, &[0.0, 2.0, 1.0, 1.0, 1.0, 0.0, 3.0, -1.0, 2.0]);
        let det = a.determinant();
        let (l, s) = log_abs_det(&a);
        assert!((s * l.exp() - det).abs() < 1e-12);
        assert_eq!(log_abs_det(&Matrix::zeros(0, 0)), (0.0, 1.0));
        assert_eq!(log_abs_det(&Matrix::zeros(2, 2)).0, f64::NEG_INFINITY);
    }

    #[test]
    fn row_and_column_assembly_agree() {
        let a = Matrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, -4.0, 5.0, 0.5]);
        let by_cols = assemble_columns(2, 3, |x| Ok(&a * x)).unwrap();
        let by_rows = assemble_rows(2, 3, |y| Ok(a.tr_mul(y))).unwrap();
        assert_eq!(by_cols, a);
        assert_eq!(by_rows, a);
    }
}
