use crate::error::{check_dim, Result};
use crate::linalg::ScaledIdentity;
use crate::problem::{BayesProblem, ForwardModel, Linearization, PointLinearization};
use crate::Vector;
use std::sync::Arc;

/// Smooth, weakly nonlinear map `R² → R²`:
/// `F(v) = 0.8 (v₁ + 0.4 v₂², v₂ + 0.4 v₁²)`.
#[derive(Debug, Clone, Copy, Default)]
pub struct Toy2dModel;

const TOY_SCALE: f64 = 0.8;
const TOY_CURVATURE: f64 = 0.4;

impl ForwardModel for Toy2dModel {
    fn input_dim(&self) -> usize {
        2
    }

    fn output_dim(&self) -> usize {
        2
    }

    fn eval(&self, v: &Vector) -> Result<Vector> {
        check_dim("Toy2dModel eval", 2, v.len())?;
        Ok(Vector::from_vec(vec![
            TOY_SCALE * (v[0] + TOY_CURVATURE * v[1] * v[1]),
            TOY_SCALE * (v[1] + TOY_CURVATURE * v[0] * v[0]),
        ]))
    }

    fn linearize<'a>(&'a self, v: &Vector) -> Result<Box<dyn Linearization + 'a>> {
        let value = self.eval(v)?;
        Ok(Box::new(PointLinearization::new(self, v, value)))
    }

    fn jvp(&self, v: &Vector, dv: &Vector) -> Result<Vector> {
        check_dim("Toy2dModel jvp", 2, dv.len())?;
        let c = 2.0 * TOY_CURVATURE;
        Ok(Vector::from_vec(vec![
            TOY_SCALE * (dv[0] + c * v[1] * dv[1]),
            TOY_SCALE * (c * v[0] * dv[0] + dv[1]),
        ]))
    }

    fn vjp(&self, v: &Vector, dy: &Vector) -> Result<Vector> {
        check_dim("Toy2dModel vjp", 2, dy.len())?;
        let c = 2.0 * TOY_CURVATURE;
        Ok(Vector::from_vec(vec![
            TOY_SCALE * (dy[0] + c * v[0] * dy[1]),
            TOY_SCALE * (c * v[1] * dy[0] + dy[1]),
        ]))
    }

    fn hvp(&self, _v: &Vector, w: &Vector, dv: &Vector) -> Result<Vector> {
        let c = TOY_SCALE * 2.0 * TOY_CURVATURE;
        Ok(Vector::from_vec(vec![c * w[1] * dv[0], c * w[0] * dv[1]]))
    }
}

/// Scalar cubic `F(u) = u + c u³`.
#[derive(Debug, Clone, Copy)]
pub struct Toy1dModel {
    pub cubic: f64,
}

impl ForwardModel for Toy1dModel {
    fn input_dim(&self) -> usize {
        1
    }

    fn output_dim(&self) -> usize {
        1
    }

    fn eval(&self, u: &Vector) -> Result<Vector> {
        check_dim("Toy1dModel eval", 1, u.len())?;
        Ok(Vector::from_element(1, u[0] + self.cubic * u[0].powi(3)))
    }

    fn linearize<'a>(&'a self, u: &Vector) -> Result<Box<dyn Linearization + 'a>> {
        let value = self.eval(u)?;
        Ok(Box::new(PointLinearization::new(self, u, value)))
    }

    fn jvp(&self, u: &Vector, du: &Vector) -> Result<Vector> {
        Ok(du * (1.0 + 3.0 * self.cubic * u[0] * u[0]))
    }

    fn vjp(&self, u: &Vector, dy: &Vector) -> Result<Vector> {
        Ok(dy * (1.0 + 3.0 * self.cubic * u[0] * u[0]))
    }

    fn hvp(&self, u: &Vector, w: &Vector, du: &Vector) -> Result<Vector> {
        Ok(du * (6.0 * self.cubic * u[0] * w[0]))
    }
}

/// 2D toy problem: standard normal prior, [`Toy2dModel`], data `y` and
/// noise standard deviation `sigma`.
pub fn toy2d_problem(data: [f64; 2], sigma: f64) -> Result<BayesProblem> {
    BayesProblem::new(
        Arc::new(Toy2dModel),
        Vector::from_vec(data.to_vec()),
        Vector::zeros(2),
        Arc::new(ScaledIdentity::identity(2)),
        Arc::new(ScaledIdentity::new(2, sigma)?),
    )
}

/// 1D toy problem: standard normal prior and the cubic [`Toy1dModel`].
pub fn toy1d_problem(cubic: f64, data: f64, sigma: f64) -> Result<BayesProblem> {
    BayesProblem::new(
        Arc::new(Toy1dModel { cubic }),
        Vector::from_element(1, data),
        Vector::zeros(1),
        Arc::new(ScaledIdentity::identity(1)),
        Arc::new(ScaledIdentity::new(1, sigma)?),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{assemble_columns, thin_svd};

    #[test]
    fn toy_hand_values() {
        let m = Toy2dModel;
        assert_eq!(m.eval(&Vector::zeros(2)).unwrap(), Vector::zeros(2));
        let y = m.eval(&Vector::from_vec(vec![1.0, 1.0])).unwrap();
        assert!((y[0] - 1.12).abs() < 1e-15 && (y[1] - 1.12).abs() < 1e-15);
    }

    #[test]
    fn toy_jacobian_at_origin() {
        let m = Toy2dModel;
        let j = assemble_columns(2, 2, |d| m.jvp(&Vector::zeros(2), d)).unwrap();
        let svd = thin_svd(&j).unwrap();
        assert!((svd.s[0] - 0.8).abs() < 1e-15);
        assert!((svd.s[1] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn toy_hvp_matches_finite_difference_of_vjp() {
        let m = Toy2dModel;
        let v = Vector::from_vec(vec![0.3, -1.2]);
        let w = Vector::from_vec(vec![0.7, 2.0]);
        let dv = Vector::from_vec(vec![-0.4, 1.1]);
        let h = 1e-6;
        let fd = (m.vjp(&(&v + &dv * h), &w).unwrap() - m.vjp(&(&v - &dv * h), &w).unwrap())
            / (2.0 * h);
        assert!((m.hvp(&v, &w, &dv).unwrap() - fd).amax() < 1e-8);
    }
}
