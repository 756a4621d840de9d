//! Data generators for the M1-M4 study designs across all four response
//! families, and experiment drivers that estimate empirical type-I error and
//! power at desk scale.
//!
//! Replicates are embarrassingly parallel. Every random draw flows from a
//! deterministic substream derived from (scenario, seed, replicate index),
//! so a table is reproducible for any thread count.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, Poisson, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::TestError;
use crate::expfam::Family;
use crate::lmm::{LmmDesign, RandomComponent};
use crate::nulldist::mixture_pvalue;
use crate::pql::{build_working_lmm, fit_pql, GlmmSpec, PqlOptions};
use crate::scalar::Scalar;
use crate::splines::{smooth_design_for, true_smooth, DEFAULT_BASIS_DIM};
use crate::vctest::{arlrt_statistic, finite_null_for, Method};

/// Generating model from the simulation study.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SimModel {
    /// Random intercept; the intercept is tested.
    M1,
    /// Random intercept (nuisance) plus random slope; the slope is tested.
    M2,
    /// Smooth curve; linearity of the smooth is tested.
    M3,
    /// Smooth curve plus nuisance random intercept; the smooth is tested.
    M4,
}

impl SimModel {
    pub fn label(self) -> &'static str {
        match self {
            SimModel::M1 => "M1",
            SimModel::M2 => "M2",
            SimModel::M3 => "M3",
            SimModel::M4 => "M4",
        }
    }
}

/// Serializable family selector for scenario manifests.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum FamilyKind {
    Normal,
    Bernoulli,
    Binomial { denominator: u32 },
    Poisson,
}

impl FamilyKind {
    pub fn to_family<T: Scalar>(self) -> Family<T> {
        match self {
            FamilyKind::Normal => Family::Normal { dispersion: T::one() },
            FamilyKind::Bernoulli => Family::Bernoulli,
            FamilyKind::Binomial { denominator } => Family::Binomial { denominator },
            FamilyKind::Poisson => Family::Poisson,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            FamilyKind::Normal => "normal",
            FamilyKind::Bernoulli => "bernoulli",
            FamilyKind::Binomial { .. } => "binomial",
            FamilyKind::Poisson => "poisson",
        }
    }
}

fn default_nuisance() -> f64 {
    1.0
}
fn default_alpha() -> f64 {
    0.05
}
fn default_beta() -> (f64, f64) {
    (0.0, 1.0)
}
fn default_b() -> usize {
    2000
}
fn default_basis_dim() -> usize {
    DEFAULT_BASIS_DIM
}

/// One cell of the factorial design.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimScenario {
    pub model: SimModel,
    pub family: FamilyKind,
    /// Number of groups or subjects.
    pub n: usize,
    /// Observations per group or subject.
    pub m: usize,
    /// sigma2_0 for M1, sigma2_1 for M2, delta for M3/M4; 0 is the null.
    pub effect: f64,
    /// Nuisance variance (M2/M4 random intercept).
    #[serde(default = "default_nuisance")]
    pub nuisance: f64,
    /// Fixed effects (beta0, beta1) for M1/M2.
    #[serde(default = "default_beta")]
    pub fixed_effects: (f64, f64),
    pub replicates: usize,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    pub seed: u64,
    /// Finite-sample null draws per replicate.
    #[serde(default = "default_b")]
    pub null_samples: usize,
    /// Spline basis dimension for M3/M4.
    #[serde(default = "default_basis_dim")]
    pub basis_dim: usize,
}

/// One table row: one (scenario, method) pair.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimRow {
    pub model: String,
    pub family: String,
    pub n: usize,
    pub m: usize,
    pub effect: f64,
    pub method: String,
    /// Replicates attempted (successes + failures).
    pub replicates: usize,
    pub rejections: usize,
    /// Rejections / successful replicates.
    pub rate: f64,
    /// sqrt(rate (1 - rate) / successes).
    pub se: f64,
    pub failures: usize,
    pub seconds: f64,
}

/// Collected rows plus run metadata; the CSV layout is fixed.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimTable {
    pub schema_version: u32,
    pub rows: Vec<SimRow>,
}

pub const SIM_CSV_HEADER: &str =
    "model,family,n,m,effect,method,replicates,rejections,rate,se,failures,seconds";

impl SimTable {
    pub fn new(rows: Vec<SimRow>) -> Self {
        SimTable { schema_version: 1, rows }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(SIM_CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{},{},{}\n",
                r.model,
                r.family,
                r.n,
                r.m,
                r.effect,
                r.method,
                r.replicates,
                r.rejections,
                r.rate,
                r.se,
                r.failures,
                r.seconds
            ));
        }
        out
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("table serializes")
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn scenario_fingerprint(sc: &SimScenario) -> u64 {
    let mut h = sc.seed;
    h = splitmix64(h ^ sc.model.label().len() as u64 ^ (sc.model as u64) << 8);
    h = splitmix64(h ^ (sc.n as u64) << 16 ^ sc.m as u64);
    h = splitmix64(h ^ sc.effect.to_bits());
    h = splitmix64(h ^ sc.nuisance.to_bits());
    h = splitmix64(h ^ sc.fixed_effects.0.to_bits() ^ sc.fixed_effects.1.to_bits().rotate_left(17));
    h = splitmix64(h ^ match sc.family {
        FamilyKind::Normal => 1,
        FamilyKind::Bernoulli => 2,
        FamilyKind::Binomial { denominator } => 0x100 | denominator as u64,
        FamilyKind::Poisson => 3,
    });
    h
}

fn replicate_rng(sc: &SimScenario, replicate_index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(scenario_fingerprint(sc));
    rng.set_stream(replicate_index as u64);
    rng
}

fn sample_response<T: Scalar>(
    family: FamilyKind,
    eta: &DVector<f64>,
    rng: &mut ChaCha8Rng,
) -> DVector<T> {
    DVector::from_fn(eta.len(), |i, _| {
        let e = eta[i];
        let v = match family {
            FamilyKind::Normal => {
                let z: f64 = StandardNormal.sample(rng);
                e + z
            }
            FamilyKind::Bernoulli => {
                let p = 1.0 / (1.0 + (-e).exp());
                if rng.random::<f64>() < p {
                    1.0
                } else {
                    0.0
                }
            }
            FamilyKind::Binomial { denominator } => {
                let p = 1.0 / (1.0 + (-e).exp());
                let d = Binomial::new(u64::from(denominator), p).expect("valid binomial");
                d.sample(rng) as f64 / f64::from(denominator)
            }
            FamilyKind::Poisson => {
                let lam = e.exp().max(1e-12);
                Poisson::new(lam).expect("valid Poisson mean").sample(rng)
            }
        };
        T::of_f64(v)
    })
}

fn group_indicator<T: Scalar>(n_groups: usize, per: usize) -> DMatrix<T> {
    let n = n_groups * per;
    let mut z = DMatrix::<T>::zeros(n, n_groups);
    for i in 0..n {
        z[(i, i / per)] = T::one();
    }
    z
}

/// Generate one replicate dataset. Deterministic given (scenario, replicate).
/// Returns the model spec, the response, and the tested component index.
pub fn generate_dataset<T: Scalar>(
    scenario: &SimScenario,
    replicate_index: usize,
) -> Result<(GlmmSpec<T>, DVector<T>, usize), TestError> {
    let mut rng = replicate_rng(scenario, replicate_index);
    let n_units = scenario.n;
    let per = scenario.m;
    let n = n_units * per;
    let (b0, b1) = scenario.fixed_effects;
    match scenario.model {
        SimModel::M1 | SimModel::M2 => {
            let x_cov: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
            let u0: Vec<f64> = (0..n_units)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    z * match scenario.model {
                        SimModel::M1 => scenario.effect.sqrt(),
                        _ => scenario.nuisance.sqrt(),
                    }
                })
                .collect();
            let u1: Vec<f64> = if scenario.model == SimModel::M2 {
                (0..n_units)
                    .map(|_| {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        z * scenario.effect.sqrt()
                    })
                    .collect()
            } else {
                Vec::new()
            };
            let eta = DVector::from_fn(n, |i, _| {
                let g = i / per;
                let mut e = b0 + b1 * x_cov[i] + u0[g];
                if scenario.model == SimModel::M2 {
                    e += u1[g] * x_cov[i];
                }
                e
            });
            let y = sample_response::<T>(scenario.family, &eta, &mut rng);
            let x = DMatrix::<T>::from_fn(n, 2, |i, j| {
                if j == 0 {
                    T::one()
                } else {
                    T::of_f64(x_cov[i])
                }
            });
            let z0 = group_indicator::<T>(n_units, per);
            let randoms = match scenario.model {
                SimModel::M1 => vec![RandomComponent::iid(z0)],
                _ => {
                    let mut z1 = z0.clone();
                    for i in 0..n {
                        let g = i / per;
                        z1[(i, g)] = T::of_f64(x_cov[i]);
                    }
                    vec![RandomComponent::iid(z0), RandomComponent::iid(z1)]
                }
            };
            let tested = match scenario.model {
                SimModel::M1 => 0,
                _ => 1,
            };
            let design = LmmDesign::new(x, randoms).map_err(TestError::Lmm)?;
            let spec = GlmmSpec::new(scenario.family.to_family::<T>(), design);
            Ok((spec, y, tested))
        }
        SimModel::M3 | SimModel::M4 => {
            let t: Vec<f64> = (0..n).map(|_| 2.0 * rng.random::<f64>()).collect();
            let u0: Vec<f64> = if scenario.model == SimModel::M4 {
                (0..n_units)
                    .map(|_| {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        z * scenario.nuisance.sqrt()
                    })
                    .collect()
            } else {
                Vec::new()
            };
            let eta = DVector::from_fn(n, |i, _| {
                let mut e = true_smooth(t[i], scenario.effect);
                if scenario.model == SimModel::M4 {
                    e += u0[i / per];
                }
                e
            });
            let y = sample_response::<T>(scenario.family, &eta, &mut rng);
            let t_typed: Vec<T> = t.iter().map(|&v| T::of_f64(v)).collect();
            let smooth = smooth_design_for(
                &t_typed,
                scenario.basis_dim,
                T::zero(),
                T::of_f64(2.0),
            )
            .map_err(|e| {
                TestError::Lmm(crate::error::LmmError::Design(format!("spline design: {e}")))
            })?;
            let mut randoms = vec![smooth.component()];
            if scenario.model == SimModel::M4 {
                randoms.push(RandomComponent::iid(group_indicator::<T>(n_units, per)));
            }
            let design = LmmDesign::new(smooth.x_poly.clone(), randoms).map_err(TestError::Lmm)?;
            let spec = GlmmSpec::new(scenario.family.to_family::<T>(), design);
            Ok((spec, y, 0))
        }
    }
}

struct ReplicateOutcome {
    rejected: Vec<bool>,
    failed: bool,
}

fn run_replicate<T: Scalar>(
    scenario: &SimScenario,
    replicate_index: usize,
    methods: &[Method],
) -> ReplicateOutcome {
    let failed = ReplicateOutcome { rejected: vec![false; methods.len()], failed: true };
    let Ok((spec, y, tested)) = generate_dataset::<T>(scenario, replicate_index) else {
        return failed;
    };
    let pql_opts = PqlOptions::default();
    let Ok(fit) = fit_pql(&spec, &y, &pql_opts) else {
        return failed;
    };
    let Ok(wlmm) = build_working_lmm(&fit, &spec, &y) else {
        return failed;
    };
    let Ok((stat, _null_fit, alt_fit)) = arlrt_statistic(&wlmm, tested, &pql_opts.reml) else {
        return failed;
    };
    let alpha = T::of_f64(scenario.alpha);
    let mut rejected = Vec::with_capacity(methods.len());
    for method in methods {
        let p = match method {
            Method::AsArlrt => match mixture_pvalue(stat) {
                Ok(p) => p,
                Err(_) => return failed,
            },
            Method::Arlrt => {
                let null_seed = splitmix64(
                    scenario_fingerprint(scenario) ^ (replicate_index as u64).rotate_left(32),
                );
                match finite_null_for(&wlmm, &alt_fit, tested, scenario.null_samples, null_seed) {
                    Ok(null) => match null.p_value(stat) {
                        Ok(p) => p,
                        Err(_) => return failed,
                    },
                    Err(_) => return failed,
                }
            }
        };
        rejected.push(p <= alpha);
    }
    ReplicateOutcome { rejected, failed: false }
}

/// Run one scenario for each method, sharing data and statistic across
/// methods within a replicate.
pub fn run_scenario<T: Scalar>(scenario: &SimScenario, methods: &[Method]) -> Vec<SimRow> {
    let start = Instant::now();
    let outcomes: Vec<ReplicateOutcome> = (0..scenario.replicates)
        .into_par_iter()
        .map(|rep| run_replicate::<T>(scenario, rep, methods))
        .collect();
    let seconds = start.elapsed().as_secs_f64();
    let failures = outcomes.iter().filter(|o| o.failed).count();
    let successes = scenario.replicates - failures;
    methods
        .iter()
        .enumerate()
        .map(|(mi, method)| {
            let rejections = outcomes
                .iter()
                .filter(|o| !o.failed && o.rejected[mi])
                .count();
            let rate = if successes > 0 {
                rejections as f64 / successes as f64
            } else {
                f64::NAN
            };
            let se = if successes > 0 {
                (rate * (1.0 - rate) / successes as f64).sqrt()
            } else {
                f64::NAN
            };
            SimRow {
                model: scenario.model.label().to_string(),
                family: scenario.family.label().to_string(),
                n: scenario.n,
                m: scenario.m,
                effect: scenario.effect,
                method: method.label().to_string(),
                replicates: scenario.replicates,
                rejections,
                rate,
                se,
                failures,
                seconds,
            }
        })
        .collect()
}

/// Type-I error table: every scenario must sit at the null (effect = 0).
pub fn run_type1<T: Scalar>(
    scenarios: &[SimScenario],
    methods: &[Method],
) -> Result<SimTable, TestError> {
    if let Some(bad) = scenarios.iter().find(|s| s.effect != 0.0) {
        return Err(TestError::Lmm(crate::error::LmmError::Design(format!(
            "type-I scenario for {} has nonzero effect {}",
            bad.model.label(),
            bad.effect
        ))));
    }
    let mut rows = Vec::new();
    for sc in scenarios {
        rows.extend(run_scenario::<T>(sc, methods));
    }
    Ok(SimTable::new(rows))
}

/// Power table: scenarios share (model, family, n, m) and vary the effect;
/// the effect = 0 anchor must be present. Rows are ordered by effect.
pub fn run_power<T: Scalar>(
    scenarios: &[SimScenario],
    methods: &[Method],
) -> Result<SimTable, TestError> {
    let invalid = |msg: String| TestError::Lmm(crate::error::LmmError::Design(msg));
    let Some(first) = scenarios.first() else {
        return Err(invalid("empty power scenario list".into()));
    };
    let key = |s: &SimScenario| (s.model, s.family, s.n, s.m);
    if scenarios.iter().any(|s| key(s) != key(first)) {
        return Err(invalid(
            "power scenarios must share model, family, n, and m".into(),
        ));
    }
    if !scenarios.iter().any(|s| s.effect == 0.0) {
        return Err(invalid("power curve needs the effect = 0 anchor".into()));
    }
    let mut ordered: Vec<&SimScenario> = scenarios.iter().collect();
    ordered.sort_by(|a, b| a.effect.partial_cmp(&b.effect).unwrap());
    let mut rows = Vec::new();
    for sc in ordered {
        rows.extend(run_scenario::<T>(sc, methods));
    }
    Ok(SimTable::new(rows))
}
