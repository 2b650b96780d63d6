//! Exactness of RTO on linear-Gaussian problems against dense conditioning.

mod common;

use common::{linear_posterior, linear_problem, sample_moments};
use rto_core::rto::{
    build_qr_basis, build_svd_basis, find_reference, generate_proposals, proposal_options, reference_options,
    RtoMap, SvdMethod,
};
use rto_core::samplers::{is_estimate, metropolize, WeightedSamples};
use rto_core::Vector;

fn within_se(mean: &Vector, cov: &rto_core::Matrix, est: &Vector, count: usize, k: f64) {
    for j in 0..mean.len() {
        let se = (cov[(j, j)] / count as f64).sqrt();
        assert!((est[j] - mean[j]).abs() < k * se, "coordinate {j}: {} vs {}", est[j], mean[j]);
    }
}

#[test]
fn reference_point_is_posterior_mean() {
    let (wp, a, y) = linear_problem(6, 4, 0.5, 3);
    let (mean, _) = linear_posterior(&a, &y, 0.5);
    let r = find_reference(&wp, &reference_options()).unwrap();
    assert!((r.v - mean).norm() < 1e-8);
}

#[test]
fn standard_rto_weights_are_constant_and_moments_exact() {
    let (wp, a, y) = linear_problem(5, 3, 0.3, 11);
    let (mean, cov) = linear_posterior(&a, &y, 0.3);
    let r = find_reference(&wp, &reference_options()).unwrap();
    let basis = build_qr_basis(&wp, &r.v).unwrap();
    let opts = proposal_options();
    let props = generate_proposals(&wp, &basis, 20_000, 5, &opts, 1).unwrap();
    assert!(props.iter().all(|p| p.is_valid()));
    let w0 = props[0].log_weight;
    assert!(props.iter().all(|p| (p.log_weight - w0).abs() < 1e-8));
    let xs: Vec<Vector> = props.iter().map(|p| p.v.clone()).collect();
    let (m, c) = sample_moments(&xs);
    within_se(&mean, &cov, &m, xs.len(), 4.0);
    // variance of a sample variance of a Gaussian: 2σ⁴/(k−1)
    for j in 0..5 {
        let se = cov[(j, j)] * (2.0 / xs.len() as f64).sqrt();
        assert!((c[(j, j)] - cov[(j, j)]).abs() < 4.0 * se);
    }
}

#[test]
fn metropolis_accepts_every_linear_proposal() {
    let (wp, _, _) = linear_problem(8, 4, 0.2, 2);
    let r = find_reference(&wp, &reference_options()).unwrap();
    let basis = build_svd_basis(&wp, &r.v, 0.0, SvdMethod::Dense).unwrap();
    let props = generate_proposals(&wp, &basis, 2000, 9, &proposal_options(), 1).unwrap();
    let w0 = basis.weight(&wp, &r.v).unwrap().log_weight;
    let chain = metropolize(&props, &r.v, w0, 9).unwrap();
    assert!(chain.acceptance_rate() >= 0.999);
}

#[test]
fn scalable_proposals_match_posterior_with_fewer_data_than_parameters() {
    let (wp, a, y) = linear_problem(10, 3, 0.1, 4);
    let (mean, cov) = linear_posterior(&a, &y, 0.1);
    let r = find_reference(&wp, &reference_options()).unwrap();
    let basis = build_svd_basis(&wp, &r.v, 0.0, SvdMethod::GolubKahan).unwrap();
    assert_eq!(basis.rank(), 3);
    let props = generate_proposals(&wp, &basis, 20_000, 1, &proposal_options(), 1).unwrap();
    let xs: Vec<Vector> = props.iter().map(|p| p.v.clone()).collect();
    let (m, _) = sample_moments(&xs);
    within_se(&mean, &cov, &m, xs.len(), 4.0);
}

#[test]
fn importance_estimate_matches_posterior_mean() {
    let (wp, a, y) = linear_problem(4, 4, 0.5, 8);
    let (mean, cov) = linear_posterior(&a, &y, 0.5);
    let r = find_reference(&wp, &reference_options()).unwrap();
    let basis = build_svd_basis(&wp, &r.v, 0.0, SvdMethod::Dense).unwrap();
    let props = generate_proposals(&wp, &basis, 10_000, 3, &proposal_options(), 1).unwrap();
    let ws = WeightedSamples::from_proposals(&props).unwrap();
    assert!((ws.effective_size() - 10_000.0).abs() < 1e-6);
    let est = Vector::from_fn(4, |j, _| is_estimate(&ws, |v| v[j]));
    within_se(&mean, &cov, &est, 10_000, 4.0);
}
