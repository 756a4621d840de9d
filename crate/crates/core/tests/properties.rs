//! Property tests for the algebraic invariants that hold for every input.

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use vcgate_core::{
    bspline_design, restricted_log_lik, Family, Link, LmmDesign, RandomComponent, SplineBasisSpec,
};

proptest! {
    #[test]
    fn link_round_trip(mu in 1e-6f64..1.0 - 1e-6) {
        let eta = Link::Logit.apply(mu).unwrap();
        let back = Link::Logit.inverse(eta).unwrap();
        prop_assert!((back - mu).abs() < 1e-10);
    }

    #[test]
    fn log_link_round_trip(mu in 1e-6f64..1e6) {
        let eta = Link::Log.apply(mu).unwrap();
        let back = Link::Log.inverse(eta).unwrap();
        prop_assert!((back - mu).abs() < 1e-10 * mu.max(1.0));
    }

    #[test]
    fn variance_positive_on_open_domain(mu in 1e-9f64..1.0 - 1e-9) {
        let binom = Family::<f64>::Binomial { denominator: 7 };
        prop_assert!(Family::<f64>::Bernoulli.variance(mu).unwrap() > 0.0);
        prop_assert!(binom.variance(mu).unwrap() > 0.0);
        prop_assert!(Family::<f64>::Poisson.variance(mu + 1e-9).unwrap() > 0.0);
    }

    #[test]
    fn partition_of_unity_everywhere(raw in proptest::collection::vec(0.0f64..=1.0, 1..40),
                                     k in 6usize..16) {
        let spec = SplineBasisSpec::new(k, 0.0f64, 2.0).unwrap();
        let t: Vec<f64> = raw.iter().map(|v| 2.0 * v).collect();
        let b = bspline_design(&t, &spec).unwrap();
        for i in 0..t.len() {
            let s: f64 = b.row(i).iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-12);
            prop_assert!(b.row(i).iter().all(|v| *v >= 0.0));
        }
    }

    #[test]
    fn rel_invariant_to_fixed_effect_shift(shift in -50.0f64..50.0, lam in 0.0f64..5.0) {
        // adding an X-column-space vector to y must not move REL
        let n = 12;
        let x = DMatrix::<f64>::from_fn(n, 2, |i, j| if j == 0 { 1.0 } else { i as f64 / n as f64 });
        let mut z = DMatrix::<f64>::zeros(n, 3);
        for i in 0..n {
            z[(i, i % 3)] = 1.0;
        }
        let design = LmmDesign::new(x.clone(), vec![RandomComponent::iid(z)]).unwrap();
        let y = DVector::<f64>::from_fn(n, |i, _| ((i * i) as f64 * 0.31).sin() + 0.05 * i as f64);
        let shifted = &y + x.column(0) * shift + x.column(1) * (0.5 * shift);
        let a = restricted_log_lik(&design, &y, &[lam]).unwrap();
        let b = restricted_log_lik(&design, &shifted, &[lam]).unwrap();
        prop_assert!((a - b).abs() < 1e-7, "shift {} moved REL by {}", shift, (a - b).abs());
    }
}
