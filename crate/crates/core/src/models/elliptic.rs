//! 1D stationary diffusion inverse problem.
//!
//! `-(κ p')' = f` on `(0, 1)` with `κ(0) p'(0) = -1` and `p(1) = 1`,
//! discretized on a uniform grid of `n` nodes with a three-point
//! finite-volume stencil (arithmetic-mean face coefficients, half cell at the
//! flux boundary). The parameter is the nodal log-diffusivity `u`, mapped
//! through `κ = 1.5 exp(u) + 0.1`; the output is the potential at nine
//! equally spaced interior points. Every solve, tangent and adjoint is a
//! single tridiagonal solve, so all model actions cost O(n).

use crate::error::{check_dim, check_finite, Error, Result};
use crate::linalg::{ScaledIdentity, SquareFactor, Tridiagonal, TridiagonalLu};
use crate::problem::{BayesProblem, ForwardModel, Linearization};
use crate::Vector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use std::sync::Arc;

/// Grid used to synthesize data. Never used for inversion.
pub const DATA_MESH_SIZE: usize = 151;

pub const OBSERVATION_POINTS: [f64; 9] = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9];

const KAPPA_SCALE: f64 = 1.5;
const KAPPA_FLOOR: f64 = 0.1;

/// Diffusivity used to generate synthetic data: a smooth bump profile with
/// values in `[1, 3]` and `κ(0) ≈ κ(1) ≈ 1.6`.
pub fn true_diffusivity(x: f64) -> f64 {
    1.6 + 1.3 * (-((x - 0.35) / 0.12).powi(2)).exp() - 0.55 * (-((x - 0.75) / 0.1).powi(2)).exp()
}

/// Source term: a positive and a negative Gaussian bump.
pub fn default_source(x: f64) -> f64 {
    let bump = |c: f64| (-(x - c).powi(2) / (2.0 * 0.05 * 0.05)).exp();
    8.0 * (bump(0.3) - bump(0.7))
}

/// The forward map `u ↦ p(x_obs)`.
#[derive(Debug, Clone)]
pub struct Elliptic1dModel {
    n: usize,
    h: f64,
    /// `h²`-scaled right-hand side of rows `0..n-1` without the Dirichlet
    /// contribution.
    rhs: Vec<f64>,
    /// `(left node, weight of right node)` per observation.
    obs: Vec<(usize, f64)>,
}

impl Elliptic1dModel {
    pub fn new(n: usize) -> Self {
        Self::with_source(n, default_source)
    }

    pub fn with_source(n: usize, source: impl Fn(f64) -> f64) -> Self {
        assert!(n >= 3, "elliptic model needs at least 3 nodes");
        let h = 1.0 / (n - 1) as f64;
        let mut rhs: Vec<f64> = (0..n - 1).map(|i| h * h * source(i as f64 * h)).collect();
        // half cell at x = 0: flux of 1 plus the source integrated over [0, h/2]
        rhs[0] = 2.0 * h + h * h * source(0.25 * h);
        let obs = OBSERVATION_POINTS
            .iter()
            .map(|&x| {
                let s = x / h;
                let mut idx = s.floor() as usize;
                let mut t = s - idx as f64;
                if t > 1.0 - 1e-9 {
                    idx += 1;
                    t = 0.0;
                } else if t < 1e-9 {
                    t = 0.0;
                }
                if idx >= n - 1 {
                    (n - 2, 1.0)
                } else {
                    (idx, t)
                }
            })
            .collect();
        Self { n, h, rhs, obs }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.n).map(|i| i as f64 * self.h).collect()
    }

    /// `κ = 1.5 exp(u) + 0.1`
    pub fn diffusivity(u: &Vector) -> Vector {
        u.map(|x| KAPPA_SCALE * x.exp() + KAPPA_FLOOR)
    }

    /// Log-diffusivity `u` that reproduces a given `κ > 0.1`.
    pub fn log_diffusivity(kappa: f64) -> f64 {
        ((kappa - KAPPA_FLOOR) / KAPPA_SCALE).ln()
    }

    /// Full nodal potential, including the Dirichlet node `p(1) = 1`.
    pub fn solve_potential(&self, u: &Vector) -> Result<Vec<f64>> {
        Ok(self.solve_state(u)?.p)
    }

    fn solve_state(&self, u: &Vector) -> Result<State> {
        check_dim("Elliptic1dModel: parameter", self.n, u.len())?;
        check_finite("elliptic log-diffusivity", u)?;
        let n = self.n;
        let kappa = Self::diffusivity(u);
        if kappa.iter().any(|k| !k.is_finite()) {
            return Err(Error::NonFinite("elliptic diffusivity"));
        }
        let face: Vec<f64> = (0..n - 1).map(|k| 0.5 * (kappa[k] + kappa[k + 1])).collect();
        let rows = n - 1;
        let mut diag = vec![0.0; rows];
        let mut lower = vec![0.0; rows - 1];
        let mut upper = vec![0.0; rows - 1];
        diag[0] = 2.0 * face[0];
        if rows > 1 {
            upper[0] = -2.0 * face[0];
        }
        for i in 1..rows {
            lower[i - 1] = -face[i - 1];
            diag[i] = face[i - 1] + face[i];
            if i + 1 < rows {
                upper[i] = -face[i];
            }
        }
        let mut b = self.rhs.clone();
        // Dirichlet node p(1) = 1 moved to the right-hand side
        if rows == 1 {
            b[0] += 2.0 * face[0];
        } else {
            b[rows - 1] += face[rows - 1];
        }
        let lu = Tridiagonal::new(lower, diag, upper).factor()?;
        let mut p = lu.solve(&b);
        p.push(1.0);
        if p.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("elliptic potential"));
        }
        Ok(State { u_exp: u.map(f64::exp), p, lu })
    }

    fn observe(&self, p: &[f64]) -> Vector {
        Vector::from_iterator(
            self.obs.len(),
            self.obs
                .iter()
                .map(|&(i, t)| (1.0 - t) * p[i] + t * p[i + 1]),
        )
    }

    /// Adjoint of [`Self::observe`] restricted to the unknown nodes.
    fn observe_transpose(&self, dy: &Vector) -> Vec<f64> {
        let mut w = vec![0.0; self.n];
        for (k, &(i, t)) in self.obs.iter().enumerate() {
            w[i] += (1.0 - t) * dy[k];
            w[i + 1] += t * dy[k];
        }
        w.truncate(self.n - 1);
        w
    }
}

/// Forward state reused by derivative actions.
#[derive(Debug, Clone)]
struct State {
    u_exp: Vector,
    p: Vec<f64>,
    lu: TridiagonalLu,
}

struct EllipticLinearization<'a> {
    model: &'a Elliptic1dModel,
    state: State,
    value: Vector,
}

impl EllipticLinearization<'_> {
    /// `(p_{k+1} − p_k) / 2`: sensitivity of face flux `k` to either
    /// adjacent nodal diffusivity.
    fn flux_sensitivity(&self, k: usize) -> f64 {
        0.5 * (self.state.p[k + 1] - self.state.p[k])
    }
}

impl Linearization for EllipticLinearization<'_> {
    fn value(&self) -> &Vector {
        &self.value
    }

    fn jvp(&self, du: &Vector) -> Result<Vector> {
        let n = self.model.n;
        check_dim("Elliptic1dModel jvp", n, du.len())?;
        let dkappa: Vec<f64> = (0..n)
            .map(|j| KAPPA_SCALE * self.state.u_exp[j] * du[j])
            .collect();
        let rows = n - 1;
        let dq: Vec<f64> = (0..rows)
            .map(|k| self.flux_sensitivity(k) * (dkappa[k] + dkappa[k + 1]))
            .collect();
        let mut dr = vec![0.0; rows];
        dr[0] = -2.0 * dq[0];
        for i in 1..rows {
            dr[i] = dq[i - 1] - dq[i];
        }
        let mut dp = self.state.lu.solve(&dr);
        dp.iter_mut().for_each(|x| *x = -*x);
        dp.push(0.0);
        Ok(self.model.observe(&dp))
    }

    fn vjp(&self, dy: &Vector) -> Result<Vector> {
        let n = self.model.n;
        check_dim("Elliptic1dModel vjp", self.model.obs.len(), dy.len())?;
        let w = self.model.observe_transpose(dy);
        let lambda = self.state.lu.solve_transpose(&w);
        let rows = n - 1;
        let mut du = Vector::zeros(n);
        for k in 0..rows {
            let own = if k == 0 { -2.0 * lambda[0] } else { -lambda[k] };
            let next = if k + 1 < rows { lambda[k + 1] } else { 0.0 };
            let g = (own + next) * self.flux_sensitivity(k);
            du[k] += g;
            du[k + 1] += g;
        }
        for j in 0..n {
            du[j] *= -KAPPA_SCALE * self.state.u_exp[j];
        }
        Ok(du)
    }
}

impl ForwardModel for Elliptic1dModel {
    fn input_dim(&self) -> usize {
        self.n
    }

    fn output_dim(&self) -> usize {
        self.obs.len()
    }

    fn eval(&self, u: &Vector) -> Result<Vector> {
        let state = self.solve_state(u)?;
        Ok(self.observe(&state.p))
    }

    fn linearize<'a>(&'a self, u: &Vector) -> Result<Box<dyn Linearization + 'a>> {
        let state = self.solve_state(u)?;
        let value = self.observe(&state.p);
        Ok(Box::new(EllipticLinearization {
            model: self,
            state,
            value,
        }))
    }
}

/// Prior factor whose inverse is the scaled first-difference operator
///
/// ```text
/// S⁻¹ = √n · [ √n  0  …  0  √n ]
///            [ -1  1           ]
///            [     ⋱  ⋱        ]
///            [          -1  1  ]
/// ```
///
/// All four actions are O(n) recurrences.
#[derive(Debug, Clone, Copy)]
pub struct EllipticPriorFactor {
    n: usize,
}

impl EllipticPriorFactor {
    pub fn new(n: usize) -> Self {
        assert!(n >= 2);
        Self { n }
    }

    fn corner(&self) -> f64 {
        (self.n as f64).sqrt()
    }
}

impl SquareFactor for EllipticPriorFactor {
    fn dim(&self) -> usize {
        self.n
    }

    fn apply(&self, x: &Vector) -> Vector {
        // solve M z = x, then scale by 1/√n
        let n = self.n;
        let s = self.corner();
        let mut c = vec![0.0; n];
        for i in 1..n {
            c[i] = c[i - 1] + x[i];
        }
        let z0 = 0.5 * (x[0] / s - c[n - 1]);
        Vector::from_iterator(n, c.iter().map(|ci| (z0 + ci) / s))
    }

    fn apply_transpose(&self, x: &Vector) -> Vector {
        // solve Mᵀ y = x, then scale by 1/√n
        let n = self.n;
        let s = self.corner();
        let mut y = vec![0.0; n];
        let interior: f64 = (1..n - 1).map(|k| x[k]).sum();
        let last = 0.5 * (x[n - 1] - x[0] - interior);
        y[n - 1] = last;
        for j in (1..n - 1).rev() {
            y[j] = y[j + 1] + x[j];
        }
        y[0] = (x[0] + y[1]) / s;
        Vector::from_iterator(n, y.into_iter().map(|v| v / s))
    }

    fn solve(&self, b: &Vector) -> Result<Vector> {
        check_dim("EllipticPriorFactor::solve", self.n, b.len())?;
        let n = self.n;
        let s = self.corner();
        let mut out = Vector::zeros(n);
        out[0] = s * (b[0] + b[n - 1]);
        for i in 1..n {
            out[i] = b[i] - b[i - 1];
        }
        Ok(out * s)
    }

    fn solve_transpose(&self, b: &Vector) -> Result<Vector> {
        check_dim("EllipticPriorFactor::solve_transpose", self.n, b.len())?;
        let n = self.n;
        let s = self.corner();
        let mut out = Vector::zeros(n);
        out[0] = s * b[0] - b[1];
        for j in 1..n - 1 {
            out[j] = b[j] - b[j + 1];
        }
        out[n - 1] = s * b[0] + b[n - 1];
        Ok(out * s)
    }
}

/// Synthetic observations generated on the [`DATA_MESH_SIZE`] grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EllipticData {
    pub sigma: f64,
    pub seed: u64,
    pub noiseless: Vec<f64>,
    pub observations: Vec<f64>,
}

/// Solves the forward problem for [`true_diffusivity`] on the data mesh and
/// adds `N(0, σ² I)` noise drawn from `seed`.
pub fn elliptic_generate_data(sigma: f64, seed: u64) -> Result<EllipticData> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "noise level must be positive, got {sigma}"
        )));
    }
    let model = Elliptic1dModel::new(DATA_MESH_SIZE);
    let u_true = Vector::from_iterator(
        DATA_MESH_SIZE,
        model
            .nodes()
            .into_iter()
            .map(|x| Elliptic1dModel::log_diffusivity(true_diffusivity(x))),
    );
    let noiseless = model.eval(&u_true)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let observations = noiseless.map(|y| {
        let e: f64 = StandardNormal.sample(&mut rng);
        y + sigma * e
    });
    Ok(EllipticData {
        sigma,
        seed,
        noiseless: noiseless.as_slice().to_vec(),
        observations: observations.as_slice().to_vec(),
    })
}

/// Inverse problem on an `n`-node grid: zero prior mean, the
/// [`EllipticPriorFactor`] and noise `σ I`.
pub fn elliptic_problem(n: usize, data: &EllipticData) -> Result<BayesProblem> {
    if n == DATA_MESH_SIZE {
        return Err(Error::InvalidArgument(format!(
            "grid size {n} is the data-generation mesh"
        )));
    }
    if n < 3 {
        return Err(Error::InvalidArgument("grid needs at least 3 nodes".into()));
    }
    BayesProblem::new(
        Arc::new(Elliptic1dModel::new(n)),
        Vector::from_vec(data.observations.clone()),
        Vector::zeros(n),
        Arc::new(EllipticPriorFactor::new(n)),
        Arc::new(ScaledIdentity::new(OBSERVATION_POINTS.len(), data.sigma)?),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::assemble_columns;
    use crate::Matrix;

    fn dense_inverse_factor(n: usize) -> Matrix {
        let s = (n as f64).sqrt();
        let mut m = Matrix::zeros(n, n);
        m[(0, 0)] = s;
        m[(0, n - 1)] = s;
        for i in 1..n {
            m[(i, i)] = 1.0;
            m[(i, i - 1)] = -1.0;
        }
        m * s
    }

    #[test]
    fn prior_factor_matches_dense_stencil() {
        let n = 7;
        let f = EllipticPriorFactor::new(n);
        let sinv = dense_inverse_factor(n);
        let s = sinv.clone().try_inverse().unwrap();
        let x = Vector::from_fn(n, |i, _| (i as f64 * 0.7).cos());
        assert!((f.solve(&x).unwrap() - &sinv * &x).amax() < 1e-12);
        assert!((f.solve_transpose(&x).unwrap() - sinv.tr_mul(&x)).amax() < 1e-12);
        assert!((f.apply(&x) - &s * &x).amax() < 1e-12);
        assert!((f.apply_transpose(&x) - s.tr_mul(&x)).amax() < 1e-12);
    }

    #[test]
    fn constant_diffusivity_matches_closed_form() {
        // κ ≡ c, f ≡ 0  =>  p(x) = 1 + (1 − x)/c, reproduced exactly by the stencil
        let c = 2.5;
        let n = 41;
        let model = Elliptic1dModel::with_source(n, |_| 0.0);
        let u = Vector::from_element(n, Elliptic1dModel::log_diffusivity(c));
        let y = model.eval(&u).unwrap();
        for (k, &x) in OBSERVATION_POINTS.iter().enumerate() {
            assert!((y[k] - (1.0 + (1.0 - x) / c)).abs() < 1e-12);
        }
        let p = model.solve_potential(&u).unwrap();
        assert_eq!(p[n - 1], 1.0);
    }

    #[test]
    fn dirichlet_and_flux_boundaries_hold() {
        let n = 321;
        let model = Elliptic1dModel::new(n);
        let u = Vector::from_fn(n, |i, _| 0.3 * (i as f64 * 0.05).sin());
        let p = model.solve_potential(&u).unwrap();
        assert_eq!(p[n - 1], 1.0);
        let kappa = Elliptic1dModel::diffusivity(&u);
        let h = 1.0 / (n - 1) as f64;
        let flux = 0.5 * (kappa[0] + kappa[1]) * (p[1] - p[0]) / h;
        // half-cell balance: flux at h/2 = -1 - ∫₀^{h/2} f ≈ -1
        assert!((flux + 1.0).abs() < 1e-2);
        assert!(p[0] > p[n - 1]);
    }

    #[test]
    fn observation_nodes_line_up_on_standard_grids() {
        for n in [41, 81, 151, 161, 321, 641] {
            let m = Elliptic1dModel::new(n);
            assert!(m.obs.iter().all(|&(_, t)| t == 0.0), "n = {n}");
        }
    }

    #[test]
    fn jacobian_actions_are_adjoint_and_match_dense_fd() {
        let n = 21;
        let model = Elliptic1dModel::new(n);
        let u = Vector::from_fn(n, |i, _| 0.2 * (i as f64).cos());
        let lin = model.linearize(&u).unwrap();
        let j = assemble_columns(9, n, |d| lin.jvp(d)).unwrap();
        let jt = assemble_columns(n, 9, |d| lin.vjp(d)).unwrap();
        assert!((&j - jt.transpose()).amax() < 1e-12);
        let h = 1e-6;
        for col in [0, 5, 20] {
            let mut e = Vector::zeros(n);
            e[col] = h;
            let fd = (model.eval(&(&u + &e)).unwrap() - model.eval(&(&u - &e)).unwrap())
                / (2.0 * h);
            assert!((fd - j.column(col)).amax() < 1e-7);
        }
    }

    #[test]
    fn data_generation_is_seeded_and_additive() {
        let a = elliptic_generate_data(1e-2, 1).unwrap();
        let b = elliptic_generate_data(1e-2, 2).unwrap();
        assert_eq!(a.noiseless, b.noiseless);
        assert_ne!(a.observations, b.observations);
        assert_eq!(a, elliptic_generate_data(1e-2, 1).unwrap());
        let tiny = elliptic_generate_data(1e-300, 1).unwrap();
        assert_eq!(tiny.observations, tiny.noiseless);
        assert!(elliptic_generate_data(0.0, 1).is_err());
    }

    #[test]
    fn data_mesh_is_not_a_solver_mesh() {
        let d = elliptic_generate_data(1e-2, 0).unwrap();
        assert!(elliptic_problem(DATA_MESH_SIZE, &d).is_err());
        assert!(elliptic_problem(41, &d).is_ok());
    }
}
