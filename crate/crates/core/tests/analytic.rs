mod support;

use approx::assert_abs_diff_eq;
use nalgebra::DMatrix;
use proptest::prelude::*;
use shapvar_core::analytic::{
    linear_gaussian_indices, sandwich_direction, shapley_interaction_3d, three_input_linear, two_input_linear,
};
use shapvar_core::{GaussianJoint, LinearGaussianProblem, SandwichOrder};
use support::oracle;

fn problem(beta: &[f64], sigma: &[f64], corr: &oracle::Matrix) -> LinearGaussianProblem {
    let cov = oracle::covariance(sigma, corr);
    let flat: Vec<f64> = cov.iter().flatten().copied().collect();
    let joint = GaussianJoint::from_row_major(vec![0.0; beta.len()], &flat).unwrap();
    LinearGaussianProblem::new(0.0, beta.to_vec(), joint).unwrap()
}

/// Random correlation matrix `D^-1/2 L L^T D^-1/2`, well away from singular.
fn correlation(d: usize) -> impl Strategy<Value = oracle::Matrix> {
    prop::collection::vec(-1.0f64..1.0, d * d).prop_map(move |raw| {
        let l = DMatrix::from_row_slice(d, d, &raw);
        let a = &l * l.transpose() + DMatrix::identity(d, d) * 0.5;
        (0..d).map(|i| (0..d).map(|j| a[(i, j)] / (a[(i, i)] * a[(j, j)]).sqrt()).collect()).collect()
    })
}

fn assert_close(a: &[f64], b: &[f64], tol: f64) {
    assert_eq!(a.len(), b.len());
    for (x, y) in a.iter().zip(b) {
        assert_abs_diff_eq!(x, y, epsilon = tol);
    }
}

#[test]
fn two_input_closed_form_matches_oracle_on_rho_grid() {
    for k in 0..=40 {
        let rho = -0.99 + 0.0495 * k as f64;
        for (beta, sigma) in [([1.0, 1.0], [1.0, 1.0]), ([1.0, 1.0], [1.0, 2.0]), ([2.0, -0.5], [0.3, 1.5])] {
            let r = oracle::linear_gaussian(&beta, &oracle::covariance(&sigma, &oracle::pair_correlation(2, 0, 1, rho)));
            let c = two_input_linear(beta, sigma, rho);
            assert_close(&c.shapley, &r.shapley, 1e-10);
            assert_close(&c.first_order, &r.first_order, 1e-10);
            assert_close(&c.total, &r.total, 1e-10);
        }
    }
}

#[test]
fn three_input_closed_form_matches_oracle() {
    for k in 0..=20 {
        let rho = -0.95 + 0.095 * k as f64;
        let beta = [1.0, 0.7, -1.3];
        let sigma = [1.0, 1.5, 0.6];
        let r = oracle::linear_gaussian(&beta, &oracle::covariance(&sigma, &oracle::pair_correlation(3, 1, 2, rho)));
        let c = three_input_linear(beta, sigma, rho);
        assert_close(&c.shapley, &r.shapley, 1e-10);
        assert_close(&c.first_order, &r.first_order, 1e-10);
        assert_close(&c.total, &r.total, 1e-10);
    }
}

#[test]
fn interaction_closed_form_matches_oracle() {
    for k in 0..=20 {
        let rho = -0.95 + 0.095 * k as f64;
        let sigma = [1.0, 1.2, 0.8];
        let r = oracle::interaction(sigma, rho);
        let c = shapley_interaction_3d(sigma[0], sigma[1], sigma[2], rho).unwrap();
        assert_close(&c.shapley, &r.shapley, 1e-10);
        assert_close(&c.first_order, &r.first_order, 1e-10);
        assert_close(&c.total, &r.total, 1e-10);
        assert_abs_diff_eq!(c.variance, r.variance, epsilon = 1e-10);
    }
}

#[test]
fn sandwich_order_matches_oracle() {
    for k in 0..=40 {
        let rho = -0.99 + 0.0495 * k as f64;
        for (beta, sigma) in [([1.0, 1.0], [1.0, 2.0]), ([1.0, -2.0], [1.0, 1.0]), ([0.5, 3.0], [2.0, 0.2])] {
            let r = oracle::linear_gaussian(&beta, &oracle::covariance(&sigma, &oracle::pair_correlation(2, 0, 1, rho)));
            let order = sandwich_direction(beta[0], beta[1], sigma[0], sigma[1], rho);
            for j in 0..2 {
                let (s, sh, st) = (r.first_order[j], r.shapley[j], r.total[j]);
                match order {
                    SandwichOrder::Forward => assert!(s <= sh + 1e-12 && sh <= st + 1e-12, "rho {rho}"),
                    SandwichOrder::Reversed => assert!(st <= sh + 1e-12 && sh <= s + 1e-12, "rho {rho}"),
                    SandwichOrder::Coincident => {
                        assert_abs_diff_eq!(s, sh, epsilon = 1e-12);
                        assert_abs_diff_eq!(sh, st, epsilon = 1e-12);
                    }
                }
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn general_form_matches_oracle(
        corr in correlation(4),
        beta in prop::collection::vec(-3.0f64..3.0, 4),
        sigma in prop::collection::vec(0.2f64..3.0, 4),
    ) {
        prop_assume!(beta.iter().any(|b| b.abs() > 0.1));
        let r = oracle::linear_gaussian(&beta, &oracle::covariance(&sigma, &corr));
        let c = linear_gaussian_indices(&problem(&beta, &sigma, &corr)).unwrap();
        assert_close(&c.shapley, &r.shapley, 1e-9);
        assert_close(&c.first_order, &r.first_order, 1e-9);
        assert_close(&c.total, &r.total, 1e-9);
        let sum: f64 = c.shapley.iter().sum();
        prop_assert!((sum - 1.0).abs() < 1e-10);
    }

    #[test]
    fn invariant_under_scale_and_translation(
        corr in correlation(3),
        beta in prop::collection::vec(0.2f64..3.0, 3),
        sigma in prop::collection::vec(0.2f64..3.0, 3),
        scale in 0.01f64..100.0,
        shift in -50.0f64..50.0,
    ) {
        let base = linear_gaussian_indices(&problem(&beta, &sigma, &corr)).unwrap();
        let scaled: Vec<f64> = beta.iter().map(|b| b * scale).collect();
        let cov = oracle::covariance(&sigma, &corr);
        let flat: Vec<f64> = cov.iter().flatten().copied().collect();
        let moved = GaussianJoint::from_row_major(vec![shift; 3], &flat).unwrap();
        let other = linear_gaussian_indices(&LinearGaussianProblem::new(shift, scaled, moved).unwrap()).unwrap();
        assert_close(&other.shapley, &base.shapley, 1e-9);
        assert_close(&other.first_order, &base.first_order, 1e-9);
        assert_close(&other.total, &base.total, 1e-9);
    }

    #[test]
    fn exchanging_inputs_permutes_indices(
        corr in correlation(3),
        beta in prop::collection::vec(0.2f64..3.0, 3),
        sigma in prop::collection::vec(0.2f64..3.0, 3),
    ) {
        let base = linear_gaussian_indices(&problem(&beta, &sigma, &corr)).unwrap();
        let perm = [2, 0, 1];
        let pb: Vec<f64> = perm.iter().map(|&i| beta[i]).collect();
        let ps: Vec<f64> = perm.iter().map(|&i| sigma[i]).collect();
        let pc: oracle::Matrix = perm.iter().map(|&i| perm.iter().map(|&j| corr[i][j]).collect()).collect();
        let other = linear_gaussian_indices(&problem(&pb, &ps, &pc)).unwrap();
        for (k, &i) in perm.iter().enumerate() {
            prop_assert!((other.shapley[k] - base.shapley[i]).abs() < 1e-10);
            prop_assert!((other.first_order[k] - base.first_order[i]).abs() < 1e-10);
            prop_assert!((other.total[k] - base.total[i]).abs() < 1e-10);
        }
    }
}

#[test]
fn two_input_forms_are_finite_at_perfect_correlation() {
    for rho in [-1.0, 1.0] {
        let c = two_input_linear([1.0, 1.0], [1.0, 2.0], rho);
        assert!(c.shapley.iter().chain(&c.first_order).chain(&c.total).all(|v| v.is_finite()));
        // Perfectly dependent inputs share the variance equally.
        assert_abs_diff_eq!(c.shapley[0], c.shapley[1], epsilon = 1e-12);
        assert_abs_diff_eq!(c.shapley[0] + c.shapley[1], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(c.total[0], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(c.first_order[1], 1.0, epsilon = 1e-12);
    }
}
