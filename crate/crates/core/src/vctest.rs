//! Test orchestration: from generalized response to p-value.
//!
//! The pipeline is fixed: fit PQL once under the alternative model, freeze
//! the working response, fit the working LMM by REML under the null
//! (tested ratio pinned at zero) and the alternative, form the statistic
//! 2 (REL_A - REL_0) truncated at zero, then compare against either the
//! simulated finite-sample null or the chi-square mixture. The working
//! response is never recomputed under the null; doing so would change the
//! definition of the statistic.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::TestError;
use crate::lmm::{fit_reml, RemlFit, RemlOptions};
use crate::nulldist::{
    finite_sample_null, mixture_pvalue, projected_eigenvalues, NuisanceWhitener, NullDistribution,
    NullKind, DEFAULT_NULL_SAMPLES,
};
use crate::pql::{build_working_lmm, fit_pql, GlmmSpec, PqlOptions, PqlSummary, WorkingLmm};
use crate::scalar::Scalar;

/// Which null the p-value used.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Arlrt,
    AsArlrt,
}

impl Method {
    pub fn label(self) -> &'static str {
        match self {
            Method::Arlrt => "aRLRT",
            Method::AsArlrt => "as-aRLRT",
        }
    }
}

/// One hypothesis test: which component of the spec is under H0 and how the
/// null distribution is built.
#[derive(Debug, Clone)]
pub struct TestProblem<T: Scalar> {
    pub spec: GlmmSpec<T>,
    pub y: DVector<T>,
    /// Index of the tested random component.
    pub tested_index: usize,
    pub null_kind: NullKind,
    /// Finite-sample null sample count.
    pub null_samples: usize,
    pub seed: u64,
    pub pql: PqlOptions,
}

impl<T: Scalar> TestProblem<T> {
    pub fn new(spec: GlmmSpec<T>, y: DVector<T>, tested_index: usize) -> Self {
        TestProblem {
            spec,
            y,
            tested_index,
            null_kind: NullKind::FiniteSample,
            null_samples: DEFAULT_NULL_SAMPLES,
            seed: 0,
            pql: PqlOptions::default(),
        }
    }

    pub fn with_null(mut self, kind: NullKind) -> Self {
        self.null_kind = kind;
        self
    }

    pub fn with_samples(mut self, b: usize) -> Self {
        self.null_samples = b;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }
}

/// Compact description of the null distribution used.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NullSummary {
    pub kind: NullKind,
    pub samples: usize,
    pub seed: u64,
    /// Fraction of simulated null statistics exactly zero, when simulated.
    pub zero_fraction: Option<f64>,
}

/// Full outcome of one test run.
#[derive(Debug, Clone)]
pub struct TestResult<T: Scalar> {
    pub statistic: T,
    pub p_value: T,
    pub method: Method,
    pub pql: PqlSummary,
    pub null_fit: RemlFit<T>,
    pub alt_fit: RemlFit<T>,
    pub null_distribution: NullSummary,
    pub warnings: Vec<String>,
}

/// The aRLRT statistic on a frozen working LMM: null pins the tested ratio
/// at zero, the alternative frees every component; both fits share the
/// response. Returns (statistic, null fit, alternative fit).
pub fn arlrt_statistic<T: Scalar>(
    wlmm: &WorkingLmm<T>,
    tested_index: usize,
    opts: &RemlOptions,
) -> Result<(T, RemlFit<T>, RemlFit<T>), TestError> {
    let n_comp = wlmm.design_tilde.n_components();
    if tested_index >= n_comp {
        return Err(TestError::BadTestedIndex { index: tested_index, count: n_comp });
    }
    let all: Vec<usize> = (0..n_comp).collect();
    let without: Vec<usize> = (0..n_comp).filter(|&i| i != tested_index).collect();
    let zeros = vec![T::zero(); n_comp];
    let alt = fit_reml(&wlmm.design_tilde, &wlmm.y_tilde, &all, &zeros, opts)?;
    let null = fit_reml(&wlmm.design_tilde, &wlmm.y_tilde, &without, &zeros, opts)?;
    let mut stat = T::of_f64(2.0) * (alt.rel - null.rel);
    if stat < T::zero() || alt.ratios[tested_index] == T::zero() {
        stat = T::zero();
    }
    Ok((stat, null, alt))
}

/// Run the configured test end to end.
pub fn run_test<T: Scalar>(problem: &TestProblem<T>) -> Result<TestResult<T>, TestError> {
    let n_comp = problem.spec.design.n_components();
    if problem.tested_index >= n_comp {
        return Err(TestError::BadTestedIndex { index: problem.tested_index, count: n_comp });
    }
    let mut warnings = Vec::new();
    let pql_fit = fit_pql(&problem.spec, &problem.y, &problem.pql)?;
    if !pql_fit.converged {
        warnings.push(format!(
            "PQL did not converge within {} iterations",
            pql_fit.iterations
        ));
    }
    if pql_fit.clamped > 0 {
        warnings.push(format!(
            "linear predictor clamped for {} observations",
            pql_fit.clamped
        ));
    }
    let wlmm = build_working_lmm(&pql_fit, &problem.spec, &problem.y)?;
    let (stat, null_fit, alt_fit) =
        arlrt_statistic(&wlmm, problem.tested_index, &problem.pql.reml)?;
    if !alt_fit.converged || !null_fit.converged {
        warnings.push("working-LMM REML optimizer hit its evaluation budget".into());
    }

    let (p_value, method, null_summary) = match problem.null_kind {
        NullKind::ChisqMixture => {
            let p = mixture_pvalue(stat)?;
            (
                p,
                Method::AsArlrt,
                NullSummary {
                    kind: NullKind::ChisqMixture,
                    samples: 0,
                    seed: problem.seed,
                    zero_fraction: None,
                },
            )
        }
        NullKind::FiniteSample => {
            let null = finite_null_for(&wlmm, &alt_fit, problem.tested_index, problem.null_samples, problem.seed)?;
            let p = null.p_value(stat)?;
            let summary = NullSummary {
                kind: NullKind::FiniteSample,
                samples: null.len(),
                seed: problem.seed,
                zero_fraction: null.zero_fraction(),
            };
            (p, Method::Arlrt, summary)
        }
    };

    Ok(TestResult {
        statistic: stat,
        p_value,
        method,
        pql: PqlSummary::from(&pql_fit),
        null_fit,
        alt_fit,
        null_distribution: null_summary,
        warnings,
    })
}

/// Same pipeline, p-value from the asymptotic chi-square mixture.
pub fn as_arlrt<T: Scalar>(problem: &TestProblem<T>) -> Result<TestResult<T>, TestError> {
    let p = TestProblem {
        null_kind: NullKind::ChisqMixture,
        ..(*problem).clone()
    };
    run_test(&p)
}

/// Finite-sample null for the tested component of a working LMM. Nuisance
/// components (fitted under the alternative) are removed by whitening both
/// the fixed design and the tested effective design with V0^{-1/2}.
pub fn finite_null_for<T: Scalar>(
    wlmm: &WorkingLmm<T>,
    alt_fit: &RemlFit<T>,
    tested_index: usize,
    b: usize,
    seed: u64,
) -> Result<NullDistribution<T>, TestError> {
    let design = &wlmm.design_tilde;
    let tested_eff = design.randoms[tested_index].effective().map_err(TestError::Lmm)?;
    let nuisance: Vec<_> = design
        .randoms
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != tested_index)
        .map(|(i, rc)| Ok((rc.effective()?, alt_fit.ratios[i])))
        .collect::<Result<Vec<_>, crate::error::LmmError>>()
        .map_err(TestError::Lmm)?;
    let (x_w, z_w) = match NuisanceWhitener::new(&nuisance) {
        Some(w) => (w.apply(&design.x), w.apply(&tested_eff)),
        None => (design.x.clone(), tested_eff),
    };
    let mus = projected_eigenvalues(&x_w, &z_w)?;
    let null = finite_sample_null(&mus, design.n(), design.p(), b, seed)?;
    Ok(null)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expfam::Family;
    use crate::lmm::{LmmDesign, RandomComponent};
    use approx::assert_relative_eq;
    use nalgebra::DMatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn m1_normal(groups: usize, per: usize, sigma0: f64, seed: u64) -> (GlmmSpec<f64>, DVector<f64>) {
        let n = groups * per;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut z = DMatrix::<f64>::zeros(n, groups);
        for i in 0..n {
            z[(i, i / per)] = 1.0;
        }
        let x = DMatrix::<f64>::from_fn(n, 2, |_, j| {
            if j == 0 {
                1.0
            } else {
                rng.random::<f64>()
            }
        });
        let u: Vec<f64> = (0..groups)
            .map(|_| {
                let v: f64 = StandardNormal.sample(&mut rng);
                v * sigma0
            })
            .collect();
        let y = DVector::<f64>::from_fn(n, |i, _| {
            let e: f64 = StandardNormal.sample(&mut rng);
            x[(i, 1)] + u[i / per] + e
        });
        let spec = GlmmSpec::new(
            Family::Normal { dispersion: 1.0 },
            LmmDesign::new(x, vec![RandomComponent::iid(z)]).unwrap(),
        );
        (spec, y)
    }

    #[test]
    fn statistic_zero_on_boundary_and_pvalue_one() {
        // hunt a replicate whose alternative fit is on the boundary
        for seed in 0..20 {
            let (spec, y) = m1_normal(6, 5, 0.0, seed);
            let problem = TestProblem::new(spec, y, 0).with_samples(500).with_seed(7);
            let res = run_test(&problem).unwrap();
            if res.alt_fit.ratios[0] == 0.0 {
                assert_eq!(res.statistic, 0.0);
                assert_relative_eq!(res.p_value, 1.0);
                return;
            }
        }
        panic!("no boundary replicate found in 20 seeds");
    }

    #[test]
    fn methods_share_the_statistic() {
        let (spec, y) = m1_normal(8, 6, 0.8, 3);
        let problem = TestProblem::new(spec, y, 0).with_samples(400).with_seed(5);
        let fin = run_test(&problem).unwrap();
        let asy = as_arlrt(&problem).unwrap();
        assert_relative_eq!(fin.statistic, asy.statistic, epsilon = 1e-12);
        assert_eq!(fin.method, Method::Arlrt);
        assert_eq!(asy.method, Method::AsArlrt);
    }

    #[test]
    fn reproducible_given_seed() {
        let (spec, y) = m1_normal(5, 8, 0.5, 11);
        let problem = TestProblem::new(spec, y, 0).with_samples(600).with_seed(99);
        let a = run_test(&problem).unwrap();
        let b = run_test(&problem).unwrap();
        assert_eq!(a.statistic, b.statistic);
        assert_eq!(a.p_value, b.p_value);
        assert_eq!(a.null_distribution.zero_fraction, b.null_distribution.zero_fraction);
    }

    #[test]
    fn statistic_invariant_under_common_rescale() {
        let (spec, y) = m1_normal(6, 6, 0.6, 17);
        let wl_problem = TestProblem::new(spec.clone(), y.clone(), 0);
        let fit = fit_pql(&spec, &y, &wl_problem.pql).unwrap();
        let wlmm = build_working_lmm(&fit, &spec, &y).unwrap();
        let (s1, _, _) = arlrt_statistic(&wlmm, 0, &wl_problem.pql.reml).unwrap();
        let scaled = WorkingLmm {
            y_tilde: &wlmm.y_tilde * 3.0,
            design_tilde: wlmm.design_tilde.clone(),
        };
        let (s2, _, _) = arlrt_statistic(&scaled, 0, &wl_problem.pql.reml).unwrap();
        assert_relative_eq!(s1, s2, epsilon = 1e-6);
    }

    #[test]
    fn bad_tested_index_is_reported() {
        let (spec, y) = m1_normal(4, 4, 0.5, 2);
        let problem = TestProblem::new(spec, y, 3);
        assert!(matches!(
            run_test(&problem),
            Err(TestError::BadTestedIndex { .. })
        ));
    }
}
