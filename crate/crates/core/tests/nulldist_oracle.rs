//! Oracles for the null-distribution module: statrs as an independent
//! chi-square CDF, and brute-force REML refits as an independent route to
//! the finite-sample null.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use statrs::distribution::{ChiSquared, ContinuousCDF};
use vcgate_core::{
    chi_square_survival, fit_reml, mixture_pvalue, projected_eigenvalues, simulate_finite_null,
    LmmDesign, RandomComponent, RemlOptions,
};

#[test]
fn chi_square_tail_matches_statrs() {
    let chi1 = ChiSquared::new(1.0).unwrap();
    for stat in [0.01, 0.5, 1.0, 2.7055, 3.8415, 6.6349, 10.83] {
        let got = chi_square_survival(stat, 1.0);
        let want = 1.0 - chi1.cdf(stat);
        assert!(
            (got - want).abs() < 1e-12,
            "sf({stat}) = {got}, statrs {want}"
        );
    }
    // a few other degrees of freedom exercised by the residual draw
    for df in [2.0, 5.0, 17.0] {
        let chid = ChiSquared::new(df).unwrap();
        for stat in [0.3, 4.2, 11.0] {
            let got = chi_square_survival(stat, df);
            let want = 1.0 - chid.cdf(stat);
            assert!((got - want).abs() < 1e-11, "df {df} sf({stat})");
        }
    }
    // the two reference p-values
    assert!((mixture_pvalue(2.7055f64).unwrap() - 0.05).abs() < 1e-4);
    assert!((mixture_pvalue(3.8415f64).unwrap() - 0.025).abs() < 1e-4);
}

fn one_way_design(groups: usize, per: usize) -> LmmDesign<f64> {
    let n = groups * per;
    let x = DMatrix::<f64>::from_element(n, 1, 1.0);
    let mut z = DMatrix::<f64>::zeros(n, groups);
    for i in 0..n {
        z[(i, i / per)] = 1.0;
    }
    LmmDesign::new(x, vec![RandomComponent::iid(z)]).unwrap()
}

fn ks_distance(a: &[f64], b: &[f64]) -> f64 {
    let mut sa = a.to_vec();
    let mut sb = b.to_vec();
    sa.sort_by(|x, y| x.partial_cmp(y).unwrap());
    sb.sort_by(|x, y| x.partial_cmp(y).unwrap());
    let mut points: Vec<f64> = sa.iter().chain(sb.iter()).copied().collect();
    points.sort_by(|x, y| x.partial_cmp(y).unwrap());
    points.dedup();
    let cdf = |s: &[f64], t: f64| {
        let idx = s.partition_point(|v| *v <= t);
        idx as f64 / s.len() as f64
    };
    points
        .iter()
        .map(|&t| (cdf(&sa, t) - cdf(&sb, t)).abs())
        .fold(0.0, f64::max)
}

/// Brute-force draw from the finite-sample null: simulate y ~ N(0, I) and
/// refit the one-component REML boundary problem, statistic
/// 2 (REL(lambda-hat) - REL(0)) truncated at zero.
fn brute_force_null(design: &LmmDesign<f64>, b: usize, seed: u64) -> Vec<f64> {
    let opts = RemlOptions::default();
    let n = design.n();
    (0..b)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let y = DVector::<f64>::from_fn(n, |_, _| StandardNormal.sample(&mut rng));
            let fit = fit_reml(design, &y, &[0], &[0.0], &opts).unwrap();
            if fit.ratios[0] == 0.0 {
                return 0.0;
            }
            let rel0 = vcgate_core::restricted_log_lik(design, &y, &[0.0]).unwrap();
            (2.0 * (fit.rel - rel0)).max(0.0)
        })
        .collect()
}

#[test]
fn spectral_null_matches_brute_force_refits() {
    // small one-way design so 2000 refits stay cheap; the full B = 10000
    // comparison runs in the acceptance suite
    let design = one_way_design(4, 3);
    let mus = projected_eigenvalues(&design.x, &design.randoms[0].z).unwrap();
    assert_eq!(mus.len(), 4);
    assert!((mus[0] - 3.0).abs() < 1e-10 && mus[3].abs() < 1e-10);

    let b = 2000;
    let spectral = simulate_finite_null(&mus, design.n(), design.p(), b, 11).unwrap();
    let brute = brute_force_null(&design, b, 12);
    let ks = ks_distance(&spectral, &brute);
    assert!(ks < 0.05, "KS distance {ks} too large at B = {b}");

    let zero_spec = spectral.iter().filter(|v| **v == 0.0).count() as f64 / b as f64;
    let zero_brute = brute.iter().filter(|v| **v == 0.0).count() as f64 / b as f64;
    assert!((zero_spec - zero_brute).abs() < 0.05);
}

#[test]
fn m1_zero_mass_in_documented_band() {
    // n = 10 groups, m = 20: point mass at zero strictly inside (0.3, 0.9)
    let n_groups = 10;
    let per = 20;
    let n = n_groups * per;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = DMatrix::<f64>::from_fn(n, 2, |_, j| {
        if j == 0 {
            1.0
        } else {
            rand::Rng::random::<f64>(&mut rng)
        }
    });
    let mut z = DMatrix::<f64>::zeros(n, n_groups);
    for i in 0..n {
        z[(i, i / per)] = 1.0;
    }
    let mus = projected_eigenvalues(&x, &z).unwrap();
    let s = simulate_finite_null(&mus, n, 2, 4000, 21).unwrap();
    let zero = s.iter().filter(|v| **v == 0.0).count() as f64 / s.len() as f64;
    assert!(zero > 0.3 && zero < 0.9, "zero mass {zero}");
}

#[test]
fn mixture_is_conservative_limit_of_finite_null() {
    // balanced many-group design: the finite-sample 95th percentile is a
    // little below the mixture's 2.7055, so the mixture p-value there is a
    // little above 0.05
    let n_groups = 100;
    let per = 20;
    let design = one_way_design(n_groups, per);
    let mus = projected_eigenvalues(&design.x, &design.randoms[0].z).unwrap();
    let s = simulate_finite_null(&mus, design.n(), design.p(), 6000, 5).unwrap();
    let mut sorted = s;
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let q95 = sorted[(0.95 * sorted.len() as f64) as usize];
    let p = mixture_pvalue(q95).unwrap();
    assert!(p > 0.05, "mixture p at finite q95 should exceed 0.05, got {p}");
    assert!(p < 0.10, "should approach 0.05 at n = 100, got {p}");
}
