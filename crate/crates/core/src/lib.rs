//! Randomize-then-optimize (RTO) sampling for Bayesian inverse problems.
//!
//! The crate is organised bottom-up:
//!
//! - [`linalg`]: factor operators, tridiagonal solves, dense helpers and a
//!   matrix-free Golub–Kahan bidiagonalization.
//! - [`problem`]: forward-model interface, whitening, and the stacked map
//!   `H(v) = (v, G(v))` whose squared norm is the negative log target.
//! - [`optimizer`]: a matrix-free Levenberg–Marquardt solver whose inner
//!   linear systems are solved by damped CGLS using only Jacobian actions.
//! - [`rto`]: reference point, QR and SVD proposal bases, proposal solves
//!   and log-weights for both the standard and the subspace-accelerated map.
//! - [`samplers`]: Metropolis independence chains, self-normalized
//!   importance sampling, and the pCN / implicit sampling / RML baselines.
//! - [`models`]: linear, 2D toy, 1D toy and 1D elliptic PDE forward models.
//! - [`diagnostics`]: ESS, acceptance, moments and credible bands.
//!
//! Everything works in whitened coordinates: prior `N(0, I)` on `v` and
//! data shifted to the origin, so the target is
//! `π(v) ∝ exp(-½‖v‖² - ½‖G(v)‖²)`.

pub mod diagnostics;
pub mod error;
pub mod linalg;
pub mod models;
pub mod optimizer;
pub mod problem;
pub mod rng;
pub mod rto;
pub mod samplers;

pub use error::{Error, Result};
pub use problem::{BayesProblem, ForwardModel, Linearization, WhitenedProblem};

/// Dense column vector used throughout the crate.
pub type Vector = nalgebra::DVector<f64>;
/// Dense matrix used throughout the crate.
pub type Matrix = nalgebra::DMatrix<f64>;
