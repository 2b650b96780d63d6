#![allow(dead_code)]

use rto_core::linalg::ScaledIdentity;
use rto_core::models::LinearModel;
use rto_core::problem::whiten;
use rto_core::rng::{standard_normal, stream_rng};
use rto_core::{BayesProblem, Matrix, Vector, WhitenedProblem};
use std::sync::Arc;

/// Random `m × n` linear problem with identity prior and noise `σ I`.
pub fn linear_problem(n: usize, m: usize, sigma: f64, seed: u64) -> (WhitenedProblem, Matrix, Vector) {
    let a = Matrix::from_row_slice(m, n, standard_normal(&mut stream_rng(seed, 0), m * n).as_slice())
        / (n as f64).sqrt();
    let y = standard_normal(&mut stream_rng(seed, 1), m);
    let wp = whiten(
        BayesProblem::new(
            Arc::new(LinearModel::new(a.clone())),
            y.clone(),
            Vector::zeros(n),
            Arc::new(ScaledIdentity::identity(n)),
            Arc::new(ScaledIdentity::new(m, sigma).unwrap()),
        )
        .unwrap(),
    )
    .unwrap();
    (wp, a, y)
}

/// Posterior mean and covariance of `y = A u + σ e`, `u ~ N(0, I)`.
pub fn linear_posterior(a: &Matrix, y: &Vector, sigma: f64) -> (Vector, Matrix) {
    let n = a.ncols();
    let precision = Matrix::identity(n, n) + a.tr_mul(a) / (sigma * sigma);
    let cov = precision.try_inverse().unwrap();
    let mean = &cov * a.tr_mul(y) / (sigma * sigma);
    (mean, cov)
}

pub fn sample_moments(xs: &[Vector]) -> (Vector, Matrix) {
    let n = xs[0].len();
    let k = xs.len() as f64;
    let mean = xs.iter().fold(Vector::zeros(n), |acc, x| acc + x) / k;
    let mut cov = Matrix::zeros(n, n);
    for x in xs {
        let d = x - &mean;
        cov += &d * d.transpose();
    }
    (mean, cov / (k - 1.0))
}
