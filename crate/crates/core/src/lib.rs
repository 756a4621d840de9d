//! Variance-component hypothesis testing for generalized linear mixed
//! models.
//!
//! The pipeline: fit the GLMM by penalized quasi-likelihood, freeze the
//! standardized working responses at convergence, refit the induced working
//! linear mixed model by REML under the null and the alternative, and
//! compare the restricted likelihood ratio statistic against either a
//! simulated finite-sample null or the asymptotic 0.5 chi2_0 : 0.5 chi2_1
//! mixture. A Monte-Carlo harness reproduces the size/power experiments for
//! the M1-M4 study designs at desk scale.
//!
//! All numeric code is generic over [`Scalar`] (`f32` or `f64`); the `*64`
//! aliases below are the types most callers want.

pub mod error;
pub mod expfam;
pub mod lmm;
pub mod nulldist;
pub mod pql;
pub mod scalar;
pub mod simharness;
pub mod splines;
pub mod vctest;

pub use error::{ExpFamError, LmmError, NullDistError, PqlError, SplineError, TestError};
pub use expfam::{Family, Link};
pub use lmm::{
    build_marginal_cov, fit_reml, restricted_log_lik, CovStructure, LmmDesign, RandomComponent,
    RemlFit, RemlOptions,
};
pub use nulldist::{
    chi_square_survival, empirical_pvalue, finite_sample_null, mixture_pvalue,
    projected_eigenvalues, simulate_finite_null, NullDistribution, NullKind,
};
pub use pql::{
    build_working_lmm, compute_weights, fit_pql, working_response, GlmmSpec, PqlFit, PqlOptions,
    PqlSummary, WorkingLmm,
};
pub use scalar::Scalar;
pub use simharness::{
    generate_dataset, run_power, run_scenario, run_type1, FamilyKind, SimModel, SimRow,
    SimScenario, SimTable,
};
pub use splines::{
    bspline_design, difference_penalty, mixed_model_reparam, smooth_design_for, true_smooth,
    SmoothDesign, SplineBasisSpec,
};
pub use vctest::{arlrt_statistic, as_arlrt, run_test, Method, TestProblem, TestResult};

/// Concrete double-precision aliases.
pub type Family64 = Family<f64>;
pub type GlmmSpec64 = GlmmSpec<f64>;
pub type LmmDesign64 = LmmDesign<f64>;
pub type NullDistribution64 = NullDistribution<f64>;
pub type PqlFit64 = PqlFit<f64>;
pub type RemlFit64 = RemlFit<f64>;
pub type TestProblem64 = TestProblem<f64>;
pub type TestResult64 = TestResult<f64>;
pub type WorkingLmm64 = WorkingLmm<f64>;
