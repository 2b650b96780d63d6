use crate::error::{check_dim, Error, Result};
use crate::{Matrix, Vector};
use nalgebra::SVD;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Reduced SVD `A = U diag(s) Vᵀ` with singular values sorted descending.
#[derive(Debug, Clone)]
pub struct ThinSvd {
    /// `m × k`, orthonormal columns.
    pub u: Matrix,
    pub s: Vector,
    /// `n × k`, orthonormal columns.
    pub v: Matrix,
}

impl ThinSvd {
    pub fn rank(&self) -> usize {
        self.s.len()
    }

    /// Keeps the leading `k` triplets.
    pub fn leading(&self, k: usize) -> ThinSvd {
        let k = k.min(self.rank());
        ThinSvd {
            u: self.u.columns(0, k).into_owned(),
            s: self.s.rows(0, k).into_owned(),
            v: self.v.columns(0, k).into_owned(),
        }
    }

    pub fn reconstruct(&self) -> Matrix {
        let mut us = self.u.clone();
        for (j, mut col) in us.column_iter_mut().enumerate() {
            col *= self.s[j];
        }
        us * self.v.transpose()
    }

    fn sorted(u: Matrix, s: Vector, v: Matrix) -> ThinSvd {
        let k = s.len();
        let mut order: Vec<usize> = (0..k).collect();
        order.sort_by(|&a, &b| s[b].total_cmp(&s[a]));
        let mut su = Matrix::zeros(u.nrows(), k);
        let mut sv = Matrix::zeros(v.nrows(), k);
        let mut ss = Vector::zeros(k);
        for (dst, &src) in order.iter().enumerate() {
            su.set_column(dst, &u.column(src));
            sv.set_column(dst, &v.column(src));
            ss[dst] = s[src];
        }
        ThinSvd {
            u: su,
            s: ss,
            v: sv,
        }
    }
}

/// Dense reduced SVD of `a`, sorted by descending singular value.
pub fn thin_svd(a: &Matrix) -> Result<ThinSvd> {
    if a.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("thin_svd input"));
    }
    let (m, n) = a.shape();
    if m == 0 || n == 0 {
        return Ok(ThinSvd {
            u: Matrix::zeros(m, 0),
            s: Vector::zeros(0),
            v: Matrix::zeros(n, 0),
        });
    }
    let svd = SVD::try_new(a.clone(), true, true, f64::EPSILON, 10_000)
        .ok_or_else(|| Error::Factorization("SVD did not converge".into()))?;
    let u = svd.u.ok_or_else(|| Error::Factorization("missing U".into()))?;
    let v_t = svd
        .v_t
        .ok_or_else(|| Error::Factorization("missing Vᵀ".into()))?;
    Ok(ThinSvd::sorted(u, svd.singular_values, v_t.transpose()))
}

fn reorthogonalize(basis: &[Vector], x: &mut Vector) {
    // two passes of classical Gram–Schmidt
    for _ in 0..2 {
        for b in basis {
            let c = b.dot(x);
            x.axpy(-c, b, 1.0);
        }
    }
}

/// Matrix-free reduced SVD of an `m × n` operator by Golub–Kahan–Lanczos
/// bidiagonalization with full reorthogonalization.
///
/// Runs `min(m, n, max_steps)` steps. When the step count reaches `min(m, n)`
/// the Krylov spaces are exhausted and the result is exact up to rounding.
/// The start vector is drawn from a fixed-seed generator so the result is
/// deterministic.
pub fn golub_kahan_svd<A, At>(
    m: usize,
    n: usize,
    max_steps: usize,
    mut apply: A,
    mut apply_transpose: At,
) -> Result<ThinSvd>
where
    A: FnMut(&Vector) -> Result<Vector>,
    At: FnMut(&Vector) -> Result<Vector>,
{
    let steps = m.min(n).min(max_steps);
    if steps == 0 {
        return Ok(ThinSvd {
            u: Matrix::zeros(m, 0),
            s: Vector::zeros(0),
            v: Matrix::zeros(n, 0),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_b1d1a6);
    let mut u = Vector::from_fn(m, |_, _| StandardNormal.sample(&mut rng));
    u /= u.norm();

    let mut us: Vec<Vector> = vec![u];
    let mut vs: Vec<Vector> = Vec::with_capacity(steps);
    let mut alphas: Vec<f64> = Vec::with_capacity(steps);
    let mut betas: Vec<f64> = Vec::with_capacity(steps); // beta_{j+1}
    let mut scale = 0.0_f64;

    for j in 0..steps {
        let mut v = apply_transpose(&us[j])?;
        check_dim("golub_kahan_svd: transpose action", n, v.len())?;
        if j > 0 {
            v.axpy(-betas[j - 1], &vs[j - 1], 1.0);
        }
        reorthogonalize(&vs, &mut v);
        let alpha = v.norm();
        scale = scale.max(alpha);
        if !alpha.is_finite() {
            return Err(Error::NonFinite("golub_kahan_svd"));
        }
        if alpha <= 1e3 * f64::EPSILON * scale.max(f64::MIN_POSITIVE) {
            break;
        }
        v /= alpha;

        let mut w = apply(&v)?;
        check_dim("golub_kahan_svd: forward action", m, w.len())?;
        w.axpy(-alpha, &us[j], 1.0);
        reorthogonalize(&us, &mut w);
        let beta = w.norm();
        scale = scale.max(beta);
        vs.push(v);
        alphas.push(alpha);
        if !beta.is_finite() {
            return Err(Error::NonFinite("golub_kahan_svd"));
        }
        if beta <= 1e3 * f64::EPSILON * scale || us.len() == m {
            betas.push(0.0);
            us.push(Vector::zeros(m));
            break;
        }
        w /= beta;
        betas.push(beta);
        us.push(w);
    }

    let k = alphas.len();
    // lower bidiagonal (k + 1) × k
    let mut b = Matrix::zeros(k + 1, k);
    for j in 0..k {
        b[(j, j)] = alphas[j];
        b[(j + 1, j)] = betas[j];
    }
    let small = thin_svd(&b)?;
    let u_basis = Matrix::from_columns(&us[..k + 1]);
    let v_basis = if k > 0 {
        Matrix::from_columns(&vs)
    } else {
        Matrix::zeros(n, 0)
    };
    Ok(ThinSvd {
        u: u_basis * small.u,
        s: small.s,
        v: v_basis * small.v,
    })
}
