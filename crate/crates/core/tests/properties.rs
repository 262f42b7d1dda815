use chr2_core::detector::{posterior_from_likelihoods, MapOutcome};
use chr2_core::ensemble::build_combined_matrix;
use chr2_core::kinetics::{steady_state, steady_state_at, Discretization, RateParams, TransitionMatrix};
use chr2_core::photon_noise::{lambda_of_snr, snr_of_lambda, PhotonSupport};
use nalgebra::DMatrix;
use proptest::prelude::*;

fn stochastic_matrix() -> impl Strategy<Value = TransitionMatrix> {
    proptest::collection::vec(0.01f64..1.0, 9).prop_map(|v| {
        let mut m = DMatrix::from_row_slice(3, 3, &v);
        for i in 0..3 {
            let s: f64 = m.row(i).sum();
            for j in 0..3 {
                m[(i, j)] /= s;
            }
        }
        TransitionMatrix::new(m, 1e-3, Discretization::Exact).unwrap()
    })
}

proptest! {
    #[test]
    fn stationary_residual(p in stochastic_matrix()) {
        let pi = steady_state(&p).unwrap();
        let next = pi.propagate(&p);
        for i in 0..3 {
            prop_assert!((next[i] - pi[i]).abs() <= 1e-10);
        }
        prop_assert!((pi.as_slice().iter().sum::<f64>() - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn photocycle_stationary_residual(x in 0.0f64..50.0, dt in 1e-6f64..1e-2) {
        let params = RateParams::default();
        let pi = steady_state_at(&params, x, dt, Discretization::Exact).unwrap();
        let array = chr2_core::ensemble::ReceptorArray::new(params, dt, Discretization::Exact, 1).unwrap();
        let p = array.single_at(x).unwrap();
        let next = pi.propagate(&p);
        for i in 0..3 {
            prop_assert!((next[i] - pi[i]).abs() <= 1e-10);
        }
    }

    #[test]
    fn lumped_rows_sum_to_one(p in stochastic_matrix(), n in 1u32..=10) {
        let model = build_combined_matrix(&p, n).unwrap();
        for i in 0..model.len() {
            prop_assert!((model.lumped().row(i).sum() - 1.0).abs() <= 1e-12);
            prop_assert!(model.lumped().row(i).iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn posterior_ignores_likelihood_scale(
        l1 in 1e-200f64..1.0,
        l0 in 1e-200f64..1.0,
        scale in 1e-50f64..1e50,
        prior in 0.0f64..=1.0,
    ) {
        let a = posterior_from_likelihoods(l1, l0, prior);
        let b = posterior_from_likelihoods(l1 * scale, l0 * scale, prior);
        prop_assert!((a.p1 - b.p1).abs() <= 1e-12);
        prop_assert!((a.p0 + a.p1 - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn degenerate_priors_decide_deterministically(l1 in 1e-12f64..1.0, l0 in 1e-12f64..1.0) {
        prop_assert_eq!(posterior_from_likelihoods(l1, l0, 1.0).outcome, Some(MapOutcome::One));
        prop_assert_eq!(posterior_from_likelihoods(l1, l0, 0.0).outcome, Some(MapOutcome::Zero));
    }

    #[test]
    fn snr_lambda_round_trip(lambda in 0.0f64..1e8) {
        let back = lambda_of_snr(snr_of_lambda(lambda));
        prop_assert!((back - lambda).abs() <= 1e-12 * lambda.max(1.0));
    }

    #[test]
    fn photon_support_is_a_distribution(lambda in 0.0f64..5000.0) {
        let support = PhotonSupport::poisson(lambda);
        let total: f64 = support.iter().map(|(_, w)| w).sum();
        prop_assert!((total - 1.0).abs() <= 1e-12);
        let mean: f64 = support.iter().map(|(k, w)| k as f64 * w).sum();
        prop_assert!((mean - lambda).abs() <= 1e-9 * lambda.max(1.0));
    }
}
