//! Adjoint and finite-difference checks of every forward model at random points.

use proptest::prelude::*;
use rto_core::models::{
    elliptic_generate_data, elliptic_problem, toy2d_problem, Elliptic1dModel, LinearModel, Toy1dModel, Toy2dModel,
};
use rto_core::problem::{check_derivatives, whiten};
use rto_core::{Matrix, Vector};

fn vec_strategy(n: usize, scale: f64) -> impl Strategy<Value = Vector> {
    prop::collection::vec(-scale..scale, n).prop_map(Vector::from_vec)
}

fn unit(v: Vector) -> Vector {
    let norm = v.norm();
    if norm < 1e-6 {
        Vector::from_element(v.len(), 1.0 / (v.len() as f64).sqrt())
    } else {
        v / norm
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn linear_model(entries in prop::collection::vec(-2.0..2.0f64, 12), x in vec_strategy(4, 3.0),
                    a in vec_strategy(4, 1.0), b in vec_strategy(3, 1.0)) {
        let m = LinearModel::new(Matrix::from_row_slice(3, 4, &entries));
        let c = check_derivatives(&m, &x, &unit(a), &b, 1e-4).unwrap();
        prop_assert!(c.adjoint_error < 1e-12);
        prop_assert!(c.fd_relative_error < 1e-8 || m.matrix().norm() < 1e-6);
    }

    #[test]
    fn toy2d_model(x in vec_strategy(2, 3.0), a in vec_strategy(2, 1.0), b in vec_strategy(2, 1.0)) {
        let c = check_derivatives(&Toy2dModel, &x, &unit(a), &b, 1e-5).unwrap();
        prop_assert!(c.adjoint_error < 1e-12);
        prop_assert!(c.fd_relative_error < 1e-6, "{:?}", c);
    }

    #[test]
    fn toy1d_model(x in -3.0..3.0f64, cubic in 0.0..1.0f64, b in -1.0..1.0f64) {
        let m = Toy1dModel { cubic };
        let c = check_derivatives(&m, &Vector::from_element(1, x), &Vector::from_element(1, 1.0),
                                  &Vector::from_element(1, b), 1e-5).unwrap();
        prop_assert!(c.adjoint_error < 1e-12);
        prop_assert!(c.fd_relative_error < 1e-7, "{:?}", c);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn elliptic_model(x in vec_strategy(41, 1.0), a in vec_strategy(41, 1.0), b in vec_strategy(9, 1.0)) {
        let m = Elliptic1dModel::new(41);
        let c = check_derivatives(&m, &x, &unit(a), &b, 1e-5).unwrap();
        prop_assert!(c.adjoint_error < 1e-10, "{:?}", c);
        prop_assert!(c.fd_relative_error < 1e-6, "{:?}", c);
    }

    #[test]
    fn whitened_elliptic_residual(v in vec_strategy(41, 1.0), a in vec_strategy(41, 1.0), b in vec_strategy(50, 1.0)) {
        let data = elliptic_generate_data(1e-2, 3).unwrap();
        let wp = whiten(elliptic_problem(41, &data).unwrap()).unwrap();
        let a = unit(a);
        let ja = wp.jvp_h(&v, &a).unwrap();
        let jtb = wp.vjp_h(&v, &b).unwrap();
        let lhs = ja.dot(&b);
        prop_assert!((lhs - a.dot(&jtb)).abs() < 1e-9 * (1.0 + lhs.abs()));
        let h = 1e-6;
        let fd = (wp.eval_h(&(&v + &a * h)).unwrap() - wp.eval_h(&(&v - &a * h)).unwrap()) / (2.0 * h);
        prop_assert!((&fd - &ja).norm() < 1e-5 * ja.norm());
    }

    #[test]
    fn whitened_toy_residual(v in vec_strategy(2, 3.0), a in vec_strategy(2, 1.0)) {
        let wp = whiten(toy2d_problem([1.2, 0.8], 0.3).unwrap()).unwrap();
        let a = unit(a);
        let ja = wp.jvp_h(&v, &a).unwrap();
        let h = 1e-6;
        let fd = (wp.eval_h(&(&v + &a * h)).unwrap() - wp.eval_h(&(&v - &a * h)).unwrap()) / (2.0 * h);
        prop_assert!((&fd - &ja).norm() < 1e-6 * ja.norm());
    }
}
