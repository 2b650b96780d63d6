use crate::error::{Error, Result};

/// Tridiagonal matrix stored by diagonals.
///
/// `lower[i]` is entry `(i + 1, i)`, `upper[i]` is entry `(i, i + 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tridiagonal {
    pub lower: Vec<f64>,
    pub diag: Vec<f64>,
    pub upper: Vec<f64>,
}

/// LU factors of a tridiagonal matrix without pivoting (Thomas algorithm).
#[derive(Debug, Clone)]
pub struct TridiagonalLu {
    /// Unit-lower multipliers, `mult[i]` belongs to row `i + 1`.
    mult: Vec<f64>,
    /// Pivots of `U`.
    pivots: Vec<f64>,
    upper: Vec<f64>,
}

impl Tridiagonal {
    pub fn new(lower: Vec<f64>, diag: Vec<f64>, upper: Vec<f64>) -> Self {
        assert!(!diag.is_empty());
        assert_eq!(lower.len() + 1, diag.len());
        assert_eq!(upper.len() + 1, diag.len());
        Self { lower, diag, upper }
    }

    pub fn dim(&self) -> usize {
        self.diag.len()
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let n = self.dim();
        let mut y: Vec<f64> = (0..n).map(|i| self.diag[i] * x[i]).collect();
        for i in 0..n - 1 {
            y[i] += self.upper[i] * x[i + 1];
            y[i + 1] += self.lower[i] * x[i];
        }
        y
    }

    pub fn matvec_transpose(&self, x: &[f64]) -> Vec<f64> {
        let n = self.dim();
        let mut y: Vec<f64> = (0..n).map(|i| self.diag[i] * x[i]).collect();
        for i in 0..n - 1 {
            y[i] += self.lower[i] * x[i + 1];
            y[i + 1] += self.upper[i] * x[i];
        }
        y
    }

    pub fn factor(&self) -> Result<TridiagonalLu> {
        let n = self.dim();
        let mut mult = Vec::with_capacity(n - 1);
        let mut pivots = Vec::with_capacity(n);
        pivots.push(self.diag[0]);
        for i in 1..n {
            let prev = pivots[i - 1];
            if prev == 0.0 || !prev.is_finite() {
                return Err(Error::Factorization(format!(
                    "zero pivot at row {} of tridiagonal system",
                    i - 1
                )));
            }
            let l = self.lower[i - 1] / prev;
            mult.push(l);
            pivots.push(self.diag[i] - l * self.upper[i - 1]);
        }
        let last = pivots[n - 1];
        if last == 0.0 || !last.is_finite() {
            return Err(Error::Factorization(format!(
                "zero pivot at row {} of tridiagonal system",
                n - 1
            )));
        }
        Ok(TridiagonalLu {
            mult,
            pivots,
            upper: self.upper.clone(),
        })
    }
}

impl TridiagonalLu {
    pub fn dim(&self) -> usize {
        self.pivots.len()
    }

    /// Solves `A x = b`.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.dim();
        assert_eq!(b.len(), n);
        let mut x = b.to_vec();
        for i in 1..n {
            x[i] -= self.mult[i - 1] * x[i - 1];
        }
        x[n - 1] /= self.pivots[n - 1];
        for i in (0..n - 1).rev() {
            x[i] = (x[i] - self.upper[i] * x[i + 1]) / self.pivots[i];
        }
        x
    }

    /// Solves `Aᵀ x = b`.
    pub fn solve_transpose(&self, b: &[f64]) -> Vec<f64> {
        let n = self.dim();
        assert_eq!(b.len(), n);
        let mut x = b.to_vec();
        // Uᵀ z = b
        x[0] /= self.pivots[0];
        for i in 1..n {
            x[i] = (x[i] - self.upper[i - 1] * x[i - 1]) / self.pivots[i];
        }
        // Lᵀ x = z
        for i in (0..n - 1).rev() {
            x[i] -= self.mult[i] * x[i + 1];
        }
        x
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Matrix;

    fn sample() -> Tridiagonal {
        Tridiagonal::new(
            vec![-1.0, 0.5, -2.0, 1.0],
            vec![4.0, 3.0, 5.0, 6.0, 2.5],
            vec![1.0, -1.5, 0.25, 1.0],
        )
    }

    fn dense(t: &Tridiagonal) -> Matrix {
        let n = t.dim();
        let mut a = Matrix::zeros(n, n);
        for i in 0..n {
            a[(i, i)] = t.diag[i];
            if i + 1 < n {
                a[(i, i + 1)] = t.upper[i];
                a[(i + 1, i)] = t.lower[i];
            }
        }
        a
    }

    #[test]
    fn solves_match_dense() {
        let t = sample();
        let a = dense(&t);
        let b = vec![1.0, -2.0, 0.5, 3.0, -1.0];
        let lu = t.factor().unwrap();
        let x = crate::Vector::from_vec(lu.solve(&b));
        let xt = crate::Vector::from_vec(lu.solve_transpose(&b));
        let bv = crate::Vector::from_vec(b);
        assert!((&a * &x - &bv).amax() < 1e-12);
        assert!((a.transpose() * &xt - &bv).amax() < 1e-12);
    }

    #[test]
    fn matvecs_match_dense() {
        let t = sample();
        let a = dense(&t);
        let x = vec![0.1, 0.2, -0.3, 0.4, 1.0];
        let xv = crate::Vector::from_vec(x.clone());
        let y = crate::Vector::from_vec(t.matvec(&x));
        let yt = crate::Vector::from_vec(t.matvec_transpose(&x));
        assert!((&a * &xv - y).amax() < 1e-14);
        assert!((a.transpose() * &xv - yt).amax() < 1e-14);
    }

    #[test]
    fn zero_pivot_is_an_error() {
        let t = Tridiagonal::new(vec![1.0], vec![0.0, 1.0], vec![1.0]);
        assert!(t.factor().is_err());
    }

    #[test]
    fn one_by_one() {
        let t = Tridiagonal::new(vec![], vec![2.0], vec![]);
        let lu = t.factor().unwrap();
        assert_eq!(lu.solve(&[4.0]), vec![2.0]);
        assert_eq!(lu.solve_transpose(&[4.0]), vec![2.0]);
    }
}
