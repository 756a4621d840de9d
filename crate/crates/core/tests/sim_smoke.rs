//! Fast end-to-end runs of the simulation harness. The statistically heavy
//! reproduction gates live in the acceptance suite; these runs pin
//! determinism, bookkeeping, and the qualitative method ordering.

use vcgate_core::{run_power, run_scenario, run_type1, FamilyKind, Method, SimModel, SimScenario};

fn base(model: SimModel, family: FamilyKind, effect: f64, reps: usize) -> SimScenario {
    SimScenario {
        model,
        family,
        n: 10,
        m: 8,
        effect,
        nuisance: 1.0,
        fixed_effects: (0.0, 1.0),
        replicates: reps,
        alpha: 0.05,
        seed: 7,
        null_samples: 400,
        basis_dim: 10,
    }
}

#[test]
fn identical_scenarios_give_identical_tables() {
    let sc = base(SimModel::M1, FamilyKind::Bernoulli, 0.0, 40);
    let a = run_type1::<f64>(&[sc.clone()], &[Method::Arlrt, Method::AsArlrt]).unwrap();
    let b = run_type1::<f64>(&[sc], &[Method::Arlrt, Method::AsArlrt]).unwrap();
    for (ra, rb) in a.rows.iter().zip(&b.rows) {
        assert_eq!(ra.rejections, rb.rejections);
        assert_eq!(ra.failures, rb.failures);
        assert_eq!(ra.rate, rb.rate);
    }
}

#[test]
fn no_silent_replicate_loss() {
    let sc = base(SimModel::M4, FamilyKind::Poisson, 0.0, 25);
    let table = run_scenario::<f64>(&sc, &[Method::Arlrt]);
    for row in &table {
        assert_eq!(row.replicates, 25);
        assert!(row.failures + row.rejections <= row.replicates);
        let successes = row.replicates - row.failures;
        let recomputed = if successes > 0 {
            row.rejections as f64 / successes as f64
        } else {
            f64::NAN
        };
        assert_eq!(row.rate, recomputed);
    }
}

#[test]
fn mixture_never_rejects_more_than_finite_on_smooth_models() {
    // M3: the asymptotic null is conservative, so per-replicate the mixture
    // rejection implies the finite-sample rejection almost always; compare
    // rates with 2-SE slack
    let sc = base(SimModel::M3, FamilyKind::Normal, 0.0, 120);
    let table = run_type1::<f64>(&[sc], &[Method::Arlrt, Method::AsArlrt]).unwrap();
    let rate_fin = table.rows.iter().find(|r| r.method == "aRLRT").unwrap();
    let rate_mix = table.rows.iter().find(|r| r.method == "as-aRLRT").unwrap();
    let slack = 2.0 * (rate_fin.se.powi(2) + rate_mix.se.powi(2)).sqrt();
    assert!(
        rate_mix.rate <= rate_fin.rate + slack,
        "mixture {} vs finite {} (slack {slack})",
        rate_mix.rate,
        rate_fin.rate
    );
}

#[test]
fn power_curve_is_ordered_and_anchored() {
    let mk = |effect: f64| {
        let mut sc = base(SimModel::M1, FamilyKind::Bernoulli, effect, 60);
        sc.n = 10;
        sc.m = 20;
        sc
    };
    let table = run_power::<f64>(&[mk(1.0), mk(0.0), mk(0.25)], &[Method::Arlrt]).unwrap();
    let effects: Vec<f64> = table.rows.iter().map(|r| r.effect).collect();
    assert_eq!(effects, vec![0.0, 0.25, 1.0]);
    // power at a strong effect should clearly exceed the null anchor
    let p0 = table.rows[0].rate;
    let p2 = table.rows[2].rate;
    assert!(
        p2 > p0 + 0.2,
        "power {p2} at effect 1.0 vs {p0} at the anchor"
    );
}
