//! Null distributions for the boundary test: the simulated finite-sample
//! RLRT null (spectral form) and the asymptotic 0.5 chi2_0 : 0.5 chi2_1
//! mixture, plus p-value computation.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::NullDistError;
use crate::scalar::Scalar;

/// Default number of simulated null statistics.
pub const DEFAULT_NULL_SAMPLES: usize = 10_000;

/// Grid used for the per-draw supremum over lambda: {0} plus `GRID_POINTS`
/// log-spaced points spanning [GRID_LO, GRID_HI] / mu_max.
const GRID_POINTS: usize = 200;
const GRID_LO: f64 = 1e-5;
const GRID_HI: f64 = 1e5;

/// Which reference distribution a p-value came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NullKind {
    FiniteSample,
    ChisqMixture,
}

/// A realized null distribution for one test problem.
#[derive(Debug, Clone)]
pub enum NullDistribution<T: Scalar> {
    FiniteSample {
        /// Simulated RLRT values, nonnegative, in draw order.
        samples: Vec<T>,
        seed: u64,
        /// Projected eigenvalues that generated the samples.
        eigenvalues: Vec<T>,
    },
    ChisqMixture,
}

impl<T: Scalar> NullDistribution<T> {
    pub fn kind(&self) -> NullKind {
        match self {
            NullDistribution::FiniteSample { .. } => NullKind::FiniteSample,
            NullDistribution::ChisqMixture => NullKind::ChisqMixture,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            NullDistribution::FiniteSample { samples, .. } => samples.len(),
            NullDistribution::ChisqMixture => 0,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Fraction of simulated statistics equal to zero (boundary mass).
    pub fn zero_fraction(&self) -> Option<f64> {
        match self {
            NullDistribution::FiniteSample { samples, .. } => {
                let z = samples.iter().filter(|s| **s == T::zero()).count();
                Some(z as f64 / samples.len() as f64)
            }
            NullDistribution::ChisqMixture => None,
        }
    }

    pub fn p_value(&self, stat: T) -> Result<T, NullDistError> {
        match self {
            NullDistribution::FiniteSample { .. } => empirical_pvalue(stat, self),
            NullDistribution::ChisqMixture => mixture_pvalue(stat),
        }
    }
}

/// Eigenvalues of Z'(I - X(X'X)^{-1}X')Z, nonincreasing, clipped at zero.
/// Z is the effective random design (structure square root absorbed).
pub fn projected_eigenvalues<T: Scalar>(
    x: &DMatrix<T>,
    z: &DMatrix<T>,
) -> Result<Vec<T>, NullDistError> {
    if z.nrows() != x.nrows() {
        return Err(crate::error::LmmError::Dimension(format!(
            "Z has {} rows, X has {}",
            z.nrows(),
            x.nrows()
        ))
        .into());
    }
    let qr = x.clone().qr();
    let q1 = qr.q();
    let r = qr.r();
    let mut rmax = T::zero();
    for i in 0..x.ncols() {
        rmax = rmax.max(r[(i, i)].abs());
    }
    for i in 0..x.ncols() {
        if r[(i, i)].abs().to_f64() <= 1e-12 * rmax.to_f64() {
            return Err(crate::error::LmmError::RankDeficient(i).into());
        }
    }
    let q1tz = q1.tr_mul(z);
    let mut g = z.tr_mul(z);
    g.gemm(-T::one(), &q1tz.transpose(), &q1tz, T::one());
    let mut vals: Vec<T> = g.symmetric_eigen().eigenvalues.iter().copied().collect();
    for v in vals.iter_mut() {
        if *v < T::zero() {
            *v = T::zero();
        }
    }
    vals.sort_by(|a, b| b.partial_cmp(a).unwrap());
    Ok(vals)
}

/// Simulate B draws from the finite-sample null of the RLRT statistic for a
/// single tested variance component, given the projected eigenvalues.
///
/// Each draw evaluates
///   sup_l (N-p) log(1 + N_l / D_l) - sum_s log(1 + l mu_s)
/// over the lambda grid, with N_l = sum_s (l mu_s / (1 + l mu_s)) w_s^2,
/// D_l = sum_s w_s^2 / (1 + l mu_s) + R, w_s iid standard normal and
/// R ~ chi-square with N - p - K degrees of freedom drawn as one gamma
/// variate. Draw b uses its own deterministic RNG substream, so the output
/// is bit-identical for any parallel schedule.
pub fn simulate_finite_null<T: Scalar>(
    mus: &[T],
    n: usize,
    p: usize,
    b: usize,
    seed: u64,
) -> Result<Vec<T>, NullDistError> {
    if b == 0 {
        return Err(NullDistError::InvalidNull("requested zero samples".into()));
    }
    let k = mus.len();
    let df_res = n as i64 - p as i64 - k as i64;
    if df_res < 1 {
        return Err(NullDistError::InsufficientResidualDf(df_res));
    }
    let mus_f: Vec<f64> = mus.iter().map(|m| m.to_f64()).collect();
    let mu_max = mus_f.iter().cloned().fold(0.0, f64::max);
    if mu_max <= 0.0 {
        // the supremum is attained at lambda = 0 for every draw
        return Ok(vec![T::zero(); b]);
    }
    // per-grid-point coefficients: shift[g][s] = l mu_s / (1 + l mu_s),
    // scale[g][s] = 1 / (1 + l mu_s), logdet[g] = sum log(1 + l mu_s)
    let lo = GRID_LO / mu_max;
    let hi = GRID_HI / mu_max;
    let lambdas: Vec<f64> = (0..GRID_POINTS)
        .map(|i| lo * (hi / lo).powf(i as f64 / (GRID_POINTS - 1) as f64))
        .collect();
    let mut shift = vec![0.0f64; GRID_POINTS * k];
    let mut scale = vec![0.0f64; GRID_POINTS * k];
    let mut logdet = vec![0.0f64; GRID_POINTS];
    for (g, &l) in lambdas.iter().enumerate() {
        let mut ld = 0.0;
        for (s, &mu) in mus_f.iter().enumerate() {
            let d = 1.0 + l * mu;
            shift[g * k + s] = l * mu / d;
            scale[g * k + s] = 1.0 / d;
            ld += d.ln();
        }
        logdet[g] = ld;
    }
    let np = (n - p) as f64;
    let gamma = if df_res > 0 {
        Some(Gamma::new(df_res as f64 / 2.0, 2.0).expect("valid chi-square shape"))
    } else {
        None
    };
    let samples: Vec<T> = (0..b)
        .into_par_iter()
        .map(|draw| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(draw as u64);
            let mut w2 = vec![0.0f64; k];
            for w in w2.iter_mut() {
                let z: f64 = StandardNormal.sample(&mut rng);
                *w = z * z;
            }
            let r: f64 = gamma.as_ref().map(|g| g.sample(&mut rng)).unwrap_or(0.0);
            let mut best = 0.0f64; // lambda = 0 always contributes 0
            for g in 0..GRID_POINTS {
                let mut num = 0.0;
                let mut den = r;
                let row = g * k;
                for s in 0..k {
                    num += shift[row + s] * w2[s];
                    den += scale[row + s] * w2[s];
                }
                let f = np * (num / den).ln_1p() - logdet[g];
                if f > best {
                    best = f;
                }
            }
            T::of_f64(best)
        })
        .collect();
    Ok(samples)
}

/// Build a finite-sample null distribution.
pub fn finite_sample_null<T: Scalar>(
    mus: &[T],
    n: usize,
    p: usize,
    b: usize,
    seed: u64,
) -> Result<NullDistribution<T>, NullDistError> {
    let samples = simulate_finite_null(mus, n, p, b, seed)?;
    Ok(NullDistribution::FiniteSample {
        samples,
        seed,
        eigenvalues: mus.to_vec(),
    })
}

/// p-value under the 0.5 chi2_0 : 0.5 chi2_1 mixture: 1 at zero, otherwise
/// half the chi2_1 upper tail.
pub fn mixture_pvalue<T: Scalar>(stat: T) -> Result<T, NullDistError> {
    if stat < T::zero() {
        return Err(NullDistError::InvalidStatistic(stat.to_f64()));
    }
    if stat == T::zero() {
        return Ok(T::one());
    }
    Ok(T::half() * chi_square_survival(stat, T::one()))
}

/// Monte-Carlo p-value (1 + #{samples >= stat}) / (B + 1).
pub fn empirical_pvalue<T: Scalar>(
    stat: T,
    null: &NullDistribution<T>,
) -> Result<T, NullDistError> {
    if stat < T::zero() {
        return Err(NullDistError::InvalidStatistic(stat.to_f64()));
    }
    match null {
        NullDistribution::ChisqMixture => Err(NullDistError::InvalidNull(
            "empirical p-value requires a finite-sample null".into(),
        )),
        NullDistribution::FiniteSample { samples, .. } => {
            if samples.is_empty() {
                return Err(NullDistError::InvalidNull("empty sample vector".into()));
            }
            let count = samples.iter().filter(|s| **s >= stat).count();
            let b = samples.len();
            Ok(T::of_f64((1 + count) as f64 / (b + 1) as f64))
        }
    }
}

/// Upper tail P(chi2_df >= x) via the regularized incomplete gamma function.
pub fn chi_square_survival<T: Scalar>(x: T, df: T) -> T {
    if x <= T::zero() {
        return T::one();
    }
    gamma_q(df * T::half(), x * T::half())
}

/// Regularized upper incomplete gamma Q(a, x): series for x < a + 1,
/// continued fraction otherwise.
fn gamma_q<T: Scalar>(a: T, x: T) -> T {
    if x < a + T::one() {
        T::one() - gamma_p_series(a, x)
    } else {
        gamma_q_contfrac(a, x)
    }
}

fn gamma_p_series<T: Scalar>(a: T, x: T) -> T {
    let mut ap = a;
    let mut sum = T::one() / a;
    let mut del = sum;
    for _ in 0..500 {
        ap += T::one();
        del *= x / ap;
        sum += del;
        if del.abs().to_f64() < sum.abs().to_f64() * 1e-16 {
            break;
        }
    }
    sum * (-x + a * x.ln() - ln_gamma(a)).exp()
}

fn gamma_q_contfrac<T: Scalar>(a: T, x: T) -> T {
    let tiny = T::of_f64(1e-300);
    let mut b = x + T::one() - a;
    let mut c = T::one() / tiny;
    let mut d = T::one() / b;
    let mut h = d;
    for i in 1..500 {
        let an = -T::of_f64(i as f64) * (T::of_f64(i as f64) - a);
        b += T::of_f64(2.0);
        d = an * d + b;
        if d.abs() < tiny {
            d = tiny;
        }
        c = b + an / c;
        if c.abs() < tiny {
            c = tiny;
        }
        d = T::one() / d;
        let del = d * c;
        h *= del;
        if (del - T::one()).abs().to_f64() < 1e-16 {
            break;
        }
    }
    (-x + a * x.ln() - ln_gamma(a)).exp() * h
}

/// Lanczos log-gamma (g = 7, n = 9), accurate to ~1e-13 for positive reals.
fn ln_gamma<T: Scalar>(z: T) -> T {
    const COEF: [f64; 9] = [
        0.999_999_999_999_809_93,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_13,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    let zm1 = z - T::one();
    let mut acc = T::of_f64(COEF[0]);
    for (i, &c) in COEF.iter().enumerate().skip(1) {
        acc += T::of_f64(c) / (zm1 + T::of_f64(i as f64));
    }
    let g = T::of_f64(7.0);
    let t = zm1 + g + T::half();
    let half_ln_2pi = T::of_f64(0.918_938_533_204_672_7);
    half_ln_2pi + (zm1 + T::half()) * t.ln() - t + acc.ln()
}

/// Whiten a tested design against fitted nuisance components.
///
/// Given effective nuisance designs W_s (already weight-scaled) and their
/// ratios, V0 = I + sum_s lambda_s W_s W_s'. The symmetric inverse square
/// root acts as V0^{-1/2} = I + M S diag((1/sqrt(1+xi) - 1)/xi) S' M' with
/// M the stacked scaled designs and (xi, S) the eigenpairs of M'M, so the
/// N x N matrix is never formed.
pub struct NuisanceWhitener<T: Scalar> {
    m: DMatrix<T>,
    basis: DMatrix<T>,
    coef: DVector<T>,
}

impl<T: Scalar> NuisanceWhitener<T> {
    pub fn new(nuisance: &[(DMatrix<T>, T)]) -> Option<Self> {
        let total_q: usize = nuisance
            .iter()
            .filter(|(_, l)| *l > T::zero())
            .map(|(z, _)| z.ncols())
            .sum();
        if total_q == 0 {
            return None;
        }
        let n = nuisance[0].0.nrows();
        let mut m = DMatrix::<T>::zeros(n, total_q);
        let mut at = 0;
        for (z, lam) in nuisance {
            if *lam <= T::zero() {
                continue;
            }
            let root = lam.sqrt();
            let cols = z.ncols();
            m.view_mut((0, at), (n, cols)).copy_from(&(z * root));
            at += cols;
        }
        let g = m.tr_mul(&m);
        let eig = g.symmetric_eigen();
        let mut coef = DVector::<T>::zeros(total_q);
        for (i, &xi) in eig.eigenvalues.iter().enumerate() {
            coef[i] = if xi.to_f64() > 1e-10 {
                (T::one() / (T::one() + xi).sqrt() - T::one()) / xi
            } else {
                -T::half()
            };
        }
        Some(NuisanceWhitener { basis: eig.eigenvectors, m, coef })
    }

    /// Apply V0^{-1/2} to the columns of `a`.
    pub fn apply(&self, a: &DMatrix<T>) -> DMatrix<T> {
        let mta = self.m.tr_mul(a);
        let mut rot = self.basis.tr_mul(&mta);
        for i in 0..rot.nrows() {
            for j in 0..rot.ncols() {
                rot[(i, j)] *= self.coef[i];
            }
        }
        a + &self.m * (&self.basis * rot)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn eigenvalues_orthogonal_and_nested_cases() {
        // Z orthogonal to span(X) with Z'Z = I -> all eigenvalues 1
        let n = 8;
        let x = DMatrix::<f64>::from_fn(n, 1, |_, _| 1.0);
        let mut z = DMatrix::<f64>::zeros(n, 2);
        // columns orthogonal to the intercept, unit norm
        let c = 1.0 / (2.0f64).sqrt();
        z[(0, 0)] = c;
        z[(1, 0)] = -c;
        z[(2, 1)] = c;
        z[(3, 1)] = -c;
        let mus = projected_eigenvalues(&x, &z).unwrap();
        for m in &mus {
            assert_relative_eq!(*m, 1.0, epsilon = 1e-12);
        }

        // Z inside span(X) -> all eigenvalues 0
        let z_in = DMatrix::<f64>::from_fn(n, 2, |_, j| if j == 0 { 2.0 } else { -1.0 });
        let mus = projected_eigenvalues(&x, &z_in).unwrap();
        assert!(mus.iter().all(|m| *m < 1e-12));
    }

    #[test]
    fn all_zero_eigenvalues_give_zero_samples() {
        let mus = vec![0.0f64, 0.0];
        let s = simulate_finite_null(&mus, 20, 2, 64, 7).unwrap();
        assert!(s.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn determinism_and_zero_mass() {
        let mus = vec![3.0f64, 3.0, 3.0, 0.0];
        let a = simulate_finite_null(&mus, 12, 1, 512, 42).unwrap();
        let b = simulate_finite_null(&mus, 12, 1, 512, 42).unwrap();
        assert_eq!(a, b, "same seed must give bit-identical samples");
        let zero = a.iter().filter(|v| **v == 0.0).count() as f64 / a.len() as f64;
        assert!(zero > 0.0, "point mass at zero must be present");
        assert!(a.iter().all(|v| *v >= 0.0));
        let c = simulate_finite_null(&mus, 12, 1, 512, 43).unwrap();
        assert_ne!(a, c, "different seed should change draws");
    }

    #[test]
    fn residual_df_guard() {
        let mus = vec![1.0f64; 10];
        let err = simulate_finite_null(&mus, 11, 1, 8, 1).unwrap_err();
        assert!(matches!(err, NullDistError::InsufficientResidualDf(_)));
    }

    #[test]
    fn mixture_pvalues_reference() {
        assert_relative_eq!(mixture_pvalue(0.0f64).unwrap(), 1.0);
        assert_relative_eq!(mixture_pvalue(2.7055f64).unwrap(), 0.05, epsilon = 1e-4);
        assert_relative_eq!(mixture_pvalue(3.8415f64).unwrap(), 0.025, epsilon = 1e-4);
        assert!(mixture_pvalue(-0.1f64).is_err());
    }

    #[test]
    fn empirical_pvalue_conventions() {
        let null = NullDistribution::FiniteSample {
            samples: (0..9999).map(|i| i as f64 / 100.0).collect(),
            seed: 0,
            eigenvalues: vec![1.0],
        };
        // stat = 0: all samples >= 0
        assert_relative_eq!(empirical_pvalue(0.0f64, &null).unwrap(), 1.0);
        // stat above the maximum: add-one floor
        assert_relative_eq!(empirical_pvalue(1e6, &null).unwrap(), 1.0 / 10000.0);
        let med = empirical_pvalue(9998.0 / 200.0, &null).unwrap();
        assert!((med - 0.5).abs() < 1.0 / 1000.0);
    }

    #[test]
    fn empirical_pvalue_monotone() {
        let samples = simulate_finite_null(&[2.0f64, 1.0, 0.5], 30, 2, 800, 9).unwrap();
        let null = NullDistribution::FiniteSample { samples, seed: 9, eigenvalues: vec![2.0, 1.0, 0.5] };
        let mut last = 1.0f64;
        for i in 0..50 {
            let stat = i as f64 * 0.2;
            let p = empirical_pvalue(stat, &null).unwrap();
            assert!(p <= last + 1e-15);
            last = p;
        }
    }

    #[test]
    fn whitener_matches_dense_inverse_sqrt() {
        let n = 24;
        let mut z = DMatrix::<f64>::zeros(n, 4);
        for i in 0..n {
            z[(i, i % 4)] = 1.0;
        }
        let lam = 0.9;
        let w = NuisanceWhitener::new(&[(z.clone(), lam)]).unwrap();
        let v0 = DMatrix::<f64>::identity(n, n) + (&z * z.transpose()) * lam;
        let eig = v0.symmetric_eigen();
        let mut inv_sqrt_vals = eig.eigenvalues.clone();
        for v in inv_sqrt_vals.iter_mut() {
            *v = 1.0 / v.sqrt();
        }
        let dense =
            &eig.eigenvectors * DMatrix::from_diagonal(&inv_sqrt_vals) * eig.eigenvectors.transpose();
        let a = DMatrix::<f64>::from_fn(n, 3, |i, j| ((i * 3 + j) as f64 * 0.37).sin());
        let got = w.apply(&a);
        let want = &dense * &a;
        assert_relative_eq!(got, want, epsilon = 1e-12);
    }
}
