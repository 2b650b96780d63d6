use crate::error::{check_dim, Result};
use crate::problem::{ForwardModel, Linearization};
use crate::{Matrix, Vector};

/// `F(x) = A x`.
#[derive(Debug, Clone)]
pub struct LinearModel {
    a: Matrix,
}

impl LinearModel {
    pub fn new(a: Matrix) -> Self {
        assert!(a.iter().all(|x| x.is_finite()), "linear model must be finite");
        Self { a }
    }

    pub fn matrix(&self) -> &Matrix {
        &self.a
    }
}

struct LinearLinearization<'a> {
    a: &'a Matrix,
    value: Vector,
}

impl Linearization for LinearLinearization<'_> {
    fn value(&self) -> &Vector {
        &self.value
    }

    fn jvp(&self, dx: &Vector) -> Result<Vector> {
        check_dim("LinearModel jvp", self.a.ncols(), dx.len())?;
        Ok(self.a * dx)
    }

    fn vjp(&self, dy: &Vector) -> Result<Vector> {
        check_dim("LinearModel vjp", self.a.nrows(), dy.len())?;
        Ok(self.a.tr_mul(dy))
    }
}

impl ForwardModel for LinearModel {
    fn input_dim(&self) -> usize {
        self.a.ncols()
    }

    fn output_dim(&self) -> usize {
        self.a.nrows()
    }

    fn eval(&self, x: &Vector) -> Result<Vector> {
        check_dim("LinearModel eval", self.a.ncols(), x.len())?;
        Ok(&self.a * x)
    }

    fn linearize<'a>(&'a self, x: &Vector) -> Result<Box<dyn Linearization + 'a>> {
        Ok(Box::new(LinearLinearization {
            a: &self.a,
            value: self.eval(x)?,
        }))
    }

    fn hvp(&self, _x: &Vector, _w: &Vector, _dx: &Vector) -> Result<Vector> {
        Ok(Vector::zeros(self.a.ncols()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_matrix_evaluates_to_zero() {
        let m = LinearModel::new(Matrix::zeros(2, 3));
        let y = m.eval(&Vector::from_vec(vec![1.0, -2.0, 3.0])).unwrap();
        assert_eq!(y, Vector::zeros(2));
    }

    #[test]
    fn derivative_actions_are_a_and_a_transpose() {
        let a = Matrix::from_row_slice(2, 3, &[1.0, 2.0, 0.0, -1.0, 0.5, 3.0]);
        let m = LinearModel::new(a.clone());
        let x = Vector::from_vec(vec![9.0, 9.0, 9.0]);
        let dx = Vector::from_vec(vec![1.0, 0.0, -1.0]);
        let dy = Vector::from_vec(vec![2.0, 1.0]);
        assert_eq!(m.jvp(&x, &dx).unwrap(), &a * &dx);
        assert_eq!(m.vjp(&x, &dy).unwrap(), a.tr_mul(&dy));
        assert!(m.eval(&Vector::zeros(2)).is_err());
    }
}
