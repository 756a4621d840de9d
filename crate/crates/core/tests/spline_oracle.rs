//! Oracles for the spline module: a textbook Cox-de Boor recursion
//! implemented independently, and the direct penalized-regression solution
//! the mixed-model form must reproduce.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use vcgate_core::{
    bspline_design, difference_penalty, fit_reml, mixed_model_reparam, restricted_log_lik,
    LmmDesign, RemlOptions, SplineBasisSpec,
};

/// Plain recursive Cox-de Boor evaluation of basis function j of the given
/// degree on the knot vector; O(2^degree) and written for clarity only.
fn cox_de_boor(knots: &[f64], j: usize, degree: usize, t: f64) -> f64 {
    if degree == 0 {
        return if knots[j] <= t && t < knots[j + 1] { 1.0 } else { 0.0 };
    }
    let left_den = knots[j + degree] - knots[j];
    let right_den = knots[j + degree + 1] - knots[j + 1];
    let left = if left_den > 0.0 {
        (t - knots[j]) / left_den * cox_de_boor(knots, j, degree - 1, t)
    } else {
        0.0
    };
    let right = if right_den > 0.0 {
        (knots[j + degree + 1] - t) / right_den * cox_de_boor(knots, j + 1, degree - 1, t)
    } else {
        0.0
    };
    left + right
}

#[test]
fn basis_matches_recursion_oracle() {
    let k = 10usize;
    let degree = 3usize;
    let (lo, hi) = (0.0f64, 2.0f64);
    let h = (hi - lo) / (k - degree) as f64;
    let knots: Vec<f64> = (0..=k + degree)
        .map(|i| lo + h * (i as f64 - degree as f64))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let t: Vec<f64> = (0..50).map(|_| 2.0 * rng.random::<f64>()).collect();
    let spec = SplineBasisSpec::new(k, lo, hi).unwrap();
    let b = bspline_design(&t, &spec).unwrap();
    for (i, &ti) in t.iter().enumerate() {
        for j in 0..k {
            let want = cox_de_boor(&knots, j, degree, ti);
            assert!(
                (b[(i, j)] - want).abs() < 1e-10,
                "B[{i},{j}] = {} vs oracle {want}",
                b[(i, j)]
            );
        }
    }
}

#[test]
fn mixed_model_form_equals_penalized_regression() {
    // ridge-form fitted values from (X_poly, Z_smooth) must equal the direct
    // penalized solution B (B'B + lam P)^{-1} B'y for any penalty weight
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for trial in 0..10 {
        let n = 40 + 4 * trial;
        let k = 10 + (trial % 3);
        let t: Vec<f64> = (0..n).map(|_| 2.0 * rng.random::<f64>()).collect();
        let spec = SplineBasisSpec::new(k, 0.0, 2.0).unwrap();
        let b = bspline_design(&t, &spec).unwrap();
        let sd = mixed_model_reparam(&b, &t).unwrap();
        let y = DVector::<f64>::from_fn(n, |i, _| {
            let e: f64 = StandardNormal.sample(&mut rng);
            (2.3 * t[i]).sin() + 0.3 * e
        });
        let lam = 10f64.powf(rng.random::<f64>() * 6.0 - 3.0);

        let (_, p) = difference_penalty::<f64>(k).unwrap();
        let coef = (b.tr_mul(&b) + &p * lam)
            .cholesky()
            .unwrap()
            .solve(&b.tr_mul(&y));
        let fit_pen = &b * coef;

        let c = {
            let mut c = DMatrix::<f64>::zeros(n, 2 + k - 2);
            c.view_mut((0, 0), (n, 2)).copy_from(&sd.x_poly);
            c.view_mut((0, 2), (n, k - 2)).copy_from(&sd.z_smooth);
            c
        };
        let mut ridge = c.tr_mul(&c);
        for i in 2..k {
            ridge[(i, i)] += lam;
        }
        let ab = ridge.cholesky().unwrap().solve(&c.tr_mul(&y));
        let fit_mm = &c * ab;
        let diff = (&fit_pen - &fit_mm).amax();
        assert!(
            diff < 1e-8,
            "trial {trial}: fitted-value gap {diff} at lambda = {lam}"
        );
    }
}

#[test]
fn linear_truth_lands_on_boundary_and_stays_linear() {
    // y exactly linear plus noise drawn once with a seed chosen so the
    // smooth ratio lands on the boundary; the smooth fit is then a line
    let n = 80;
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let t: Vec<f64> = (0..n).map(|_| 2.0 * rng.random::<f64>()).collect();
    let y = DVector::<f64>::from_fn(n, |i, _| {
        let e: f64 = StandardNormal.sample(&mut rng);
        0.5 - t[i] + e
    });
    let sd = vcgate_core::smooth_design_for(&t, 12, 0.0, 2.0).unwrap();
    let design = LmmDesign::new(sd.x_poly.clone(), vec![sd.component()]).unwrap();
    let fit = fit_reml(&design, &y, &[0], &[0.0], &RemlOptions::default()).unwrap();
    assert_eq!(fit.ratios[0], 0.0, "smooth variance should hit the boundary");
    // fitted values = X beta exactly (no smooth contribution), i.e. a line
    let fitted = &sd.x_poly * &fit.beta;
    let ols = {
        let chol = sd.x_poly.tr_mul(&sd.x_poly).cholesky().unwrap();
        &sd.x_poly * chol.solve(&sd.x_poly.tr_mul(&y))
    };
    assert!((&fitted - &ols).amax() < 1e-8);
}

#[test]
fn noiseless_linear_response_is_degenerate() {
    let n = 50;
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let t: Vec<f64> = (0..n).map(|_| 2.0 * rng.random::<f64>()).collect();
    let y = DVector::<f64>::from_fn(n, |i, _| 0.5 - t[i]);
    let sd = vcgate_core::smooth_design_for(&t, 10, 0.0, 2.0).unwrap();
    let design = LmmDesign::new(sd.x_poly.clone(), vec![sd.component()]).unwrap();
    assert!(restricted_log_lik(&design, &y, &[0.0]).is_err());
    assert!(fit_reml(&design, &y, &[0], &[0.0], &RemlOptions::default()).is_err());
}
