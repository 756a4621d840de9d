//! Penalized quasi-likelihood estimation: the iterative loop that produces
//! the converged standardized working response and the induced working LMM.
//!
//! Each iteration (a) linearizes the generalized response around the current
//! linear predictor, giving the standardized working variate
//! y~ = W^{1/2}[eta + g'(mu)(y - mu)] with w_i = 1/(g'(mu_i)^2 v(mu_i)),
//! and (b) refits the weighted design by REML. The loop starts from a plain
//! GLM fit with the random effects at zero. For the Normal family the
//! dispersion is refreshed each iteration from the working-LMM residual
//! variance, which keeps the working response standardized.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::PqlError;
use crate::expfam::{Family, Link};
use crate::lmm::{fit_reml, LmmDesign, RandomComponent, RemlOptions};
use crate::scalar::Scalar;

/// Linear predictor clamp bounds, applied before computing the mean so that
/// weights never collapse to zero. Only near-separated data is affected.
pub fn eta_bound(link: Link) -> Option<f64> {
    match link {
        Link::Identity => None,
        Link::Logit => Some(15.0),
        Link::Log => Some(30.0),
    }
}

/// Generalized linear mixed model: response family, canonical link, and the
/// fixed/random design.
#[derive(Debug, Clone)]
pub struct GlmmSpec<T: Scalar> {
    pub family: Family<T>,
    pub link: Link,
    pub design: LmmDesign<T>,
}

impl<T: Scalar> GlmmSpec<T> {
    /// Build with the family's canonical link.
    pub fn new(family: Family<T>, design: LmmDesign<T>) -> Self {
        GlmmSpec { link: family.canonical_link(), family, design }
    }
}

/// Loop controls. Convergence is relative movement of (beta, lambda) below
/// `tol`, at most `max_iter` working-LMM refits.
#[derive(Debug, Clone)]
pub struct PqlOptions {
    pub max_iter: usize,
    pub tol: f64,
    pub reml: RemlOptions,
}

impl Default for PqlOptions {
    fn default() -> Self {
        PqlOptions { max_iter: 50, tol: 1e-6, reml: RemlOptions::default() }
    }
}

/// Converged PQL state under the alternative model (all components active).
#[derive(Debug, Clone)]
pub struct PqlFit<T: Scalar> {
    /// Linear predictor at convergence (after clamping).
    pub eta_star: DVector<T>,
    /// Conditional mean, elementwise inverse link of eta_star.
    pub mu_star: DVector<T>,
    /// Diagonal working weights, all positive.
    pub w_star: DVector<T>,
    pub beta: DVector<T>,
    /// Working-LMM variance ratios at convergence.
    pub ratios: Vec<T>,
    /// Working-LMM residual variance at convergence.
    pub sigma2_e: T,
    /// Normal-family dispersion at convergence; 1 for other families.
    pub dispersion: T,
    pub iterations: usize,
    pub converged: bool,
    /// Count of observations whose linear predictor was clamped in the
    /// final iteration.
    pub clamped: usize,
}

impl<T: Scalar> PqlFit<T> {
    /// Variance components sigma2_s = lambda_s * sigma2_e on the response
    /// scale of the working model (the scale reported by PQL software).
    pub fn variance_components(&self) -> Vec<T> {
        self.ratios.iter().map(|&l| l * self.sigma2_e).collect()
    }
}

/// The working linear mixed model induced by a converged fit: standardized
/// response and row-scaled designs. The quantities (eta*, mu*, W*) behind it
/// are fixed; downstream REML fits never rerun PQL.
#[derive(Debug, Clone)]
pub struct WorkingLmm<T: Scalar> {
    pub y_tilde: DVector<T>,
    pub design_tilde: LmmDesign<T>,
}

/// Summary of a PQL fit carried into test reports.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PqlSummary {
    pub iterations: usize,
    pub converged: bool,
    pub clamped: usize,
    pub beta: Vec<f64>,
    pub variance_components: Vec<f64>,
    pub dispersion: f64,
}

impl<T: Scalar> From<&PqlFit<T>> for PqlSummary {
    fn from(fit: &PqlFit<T>) -> Self {
        PqlSummary {
            iterations: fit.iterations,
            converged: fit.converged,
            clamped: fit.clamped,
            beta: fit.beta.iter().map(|b| b.to_f64()).collect(),
            variance_components: fit
                .variance_components()
                .iter()
                .map(|v| v.to_f64())
                .collect(),
            dispersion: fit.dispersion.to_f64(),
        }
    }
}

fn clamp_eta<T: Scalar>(link: Link, eta: &mut DVector<T>) -> usize {
    let Some(bound) = eta_bound(link) else { return 0 };
    let hi = T::of_f64(bound);
    let lo = -hi;
    let mut clamped = 0;
    for e in eta.iter_mut() {
        if *e > hi {
            *e = hi;
            clamped += 1;
        } else if *e < lo {
            *e = lo;
            clamped += 1;
        }
    }
    clamped
}

/// IRLS weights w_i = 1 / (g'(mu_i)^2 v(mu_i)) at the means induced by eta.
pub fn compute_weights<T: Scalar>(
    eta: &DVector<T>,
    family: &Family<T>,
    link: Link,
) -> Result<DVector<T>, PqlError> {
    let mut w = DVector::<T>::zeros(eta.len());
    for i in 0..eta.len() {
        let mu = link.inverse(eta[i])?;
        let gp = link.derivative(mu)?;
        let v = family.variance(mu)?;
        w[i] = T::one() / (gp * gp * v);
    }
    Ok(w)
}

/// Standardized working response y~_i = sqrt(w_i) (eta_i + g'(mu_i)(y_i - mu_i)).
pub fn working_response<T: Scalar>(
    y: &DVector<T>,
    eta: &DVector<T>,
    family: &Family<T>,
    link: Link,
) -> Result<DVector<T>, PqlError> {
    let mut out = DVector::<T>::zeros(y.len());
    for i in 0..y.len() {
        let mu = link.inverse(eta[i])?;
        let gp = link.derivative(mu)?;
        let v = family.variance(mu)?;
        let w = T::one() / (gp * gp * v);
        out[i] = w.sqrt() * (eta[i] + gp * (y[i] - mu));
    }
    Ok(out)
}

/// Unpenalized GLM fit by IRLS, random effects at zero. Means start at the
/// usual shift (y + mean(y)) / 2.
fn glm_init<T: Scalar>(
    y: &DVector<T>,
    x: &DMatrix<T>,
    family: &Family<T>,
    link: Link,
) -> Result<DVector<T>, PqlError> {
    let n = y.len();
    let ybar = y.iter().fold(T::zero(), |a, &b| a + b) / T::of_f64(n as f64);
    let mut mu = DVector::<T>::from_fn(n, |i, _| (y[i] + ybar) * T::half());
    match family {
        Family::Bernoulli | Family::Binomial { .. } => {
            let eps = T::of_f64(1e-3);
            for m in mu.iter_mut() {
                *m = (*m).max(eps).min(T::one() - eps);
            }
        }
        Family::Poisson => {
            let eps = T::of_f64(1e-3);
            for m in mu.iter_mut() {
                *m = (*m).max(eps);
            }
        }
        Family::Normal { .. } => {}
    }
    let mut eta = DVector::<T>::from_fn(n, |i, _| link.apply(mu[i]).unwrap_or(T::zero()));
    clamp_eta(link, &mut eta);
    let mut beta = DVector::<T>::zeros(x.ncols());
    for _ in 0..30 {
        let mut z = DVector::<T>::zeros(n);
        let mut w = DVector::<T>::zeros(n);
        for i in 0..n {
            let m = link.inverse(eta[i])?;
            let gp = link.derivative(m)?;
            let v = family.variance(m)?;
            w[i] = T::one() / (gp * gp * v);
            z[i] = eta[i] + gp * (y[i] - m);
        }
        let mut xtwx = DMatrix::<T>::zeros(x.ncols(), x.ncols());
        let mut xtwz = DVector::<T>::zeros(x.ncols());
        for i in 0..n {
            let xi = x.row(i);
            for a in 0..x.ncols() {
                xtwz[a] += xi[a] * w[i] * z[i];
                for b in 0..x.ncols() {
                    xtwx[(a, b)] += xi[a] * w[i] * xi[b];
                }
            }
        }
        let beta_new = xtwx
            .cholesky()
            .map(|c| c.solve(&xtwz))
            .ok_or_else(|| crate::error::LmmError::Design("GLM normal equations singular".into()))?;
        let mut delta = 0.0f64;
        for a in 0..beta.len() {
            let d = (beta_new[a] - beta[a]).abs() / (beta[a].abs() + T::of_f64(1e-4));
            delta = delta.max(d.to_f64());
        }
        beta = beta_new;
        eta = x * &beta;
        clamp_eta(link, &mut eta);
        if delta < 1e-8 {
            break;
        }
    }
    Ok(beta)
}

/// Fit the GLMM by PQL under the alternative model (every component active).
pub fn fit_pql<T: Scalar>(
    spec: &GlmmSpec<T>,
    y: &DVector<T>,
    opts: &PqlOptions,
) -> Result<PqlFit<T>, PqlError> {
    let n = spec.design.n();
    if y.len() != n {
        return Err(crate::error::LmmError::Dimension(format!(
            "response has {} entries, design has {} rows",
            y.len(),
            n
        ))
        .into());
    }
    spec.family
        .validate_response(y.as_slice())
        .map_err(PqlError::ExpFam)?;
    let ymin = y.iter().fold(T::of_f64(f64::INFINITY), |a, &b| a.min(b));
    let ymax = y.iter().fold(T::of_f64(f64::NEG_INFINITY), |a, &b| a.max(b));
    if ymin == ymax {
        return Err(PqlError::DegenerateData);
    }

    let n_comp = spec.design.n_components();
    let active: Vec<usize> = (0..n_comp).collect();
    let zeros = vec![T::zero(); n_comp];

    let mut beta = glm_init(y, &spec.design.x, &spec.family, spec.link)?;
    let mut us: Vec<DVector<T>> = spec
        .design
        .randoms
        .iter()
        .map(|rc| DVector::<T>::zeros(rc.q()))
        .collect();
    let mut ratios = vec![T::zero(); n_comp];
    let mut dispersion = T::one();
    let mut sigma2_e = T::one();
    let mut converged = false;
    let mut iterations = 0;
    let mut clamped = 0;

    for iter in 0..opts.max_iter {
        iterations = iter + 1;
        let mut eta = &spec.design.x * &beta;
        for (rc, u) in spec.design.randoms.iter().zip(&us) {
            eta += &rc.z * u;
        }
        clamped = clamp_eta(spec.link, &mut eta);
        let family = spec.family.with_dispersion(dispersion);
        let w = compute_weights(&eta, &family, spec.link)?;
        let y_tilde = working_response(y, &eta, &family, spec.link)?;
        let sw = w.map(|v| v.sqrt());
        let design_t = scale_design(&spec.design, &sw)?;
        let fit = fit_reml(&design_t, &y_tilde, &active, &zeros, &opts.reml)?;

        let mut delta = 0.0f64;
        for a in 0..beta.len() {
            let d = (fit.beta[a] - beta[a]).abs() / (beta[a].abs() + T::of_f64(1e-4));
            delta = delta.max(d.to_f64());
        }
        for s in 0..n_comp {
            let d = (fit.ratios[s] - ratios[s]).abs() / (ratios[s].abs() + T::of_f64(1e-4));
            delta = delta.max(d.to_f64());
        }
        beta = fit.beta.clone();
        ratios = fit.ratios.clone();
        sigma2_e = fit.sigma2_e;
        us = fit.blups.clone();
        if matches!(spec.family, Family::Normal { .. }) {
            dispersion *= fit.sigma2_e;
        }
        if delta < opts.tol && iter > 0 {
            converged = true;
            break;
        }
    }

    let mut eta_star = &spec.design.x * &beta;
    for (rc, u) in spec.design.randoms.iter().zip(&us) {
        eta_star += &rc.z * u;
    }
    clamped = clamp_eta(spec.link, &mut eta_star).max(clamped);
    let mut mu_star = DVector::<T>::zeros(n);
    for i in 0..n {
        mu_star[i] = spec.link.inverse(eta_star[i])?;
    }
    let family = spec.family.with_dispersion(dispersion);
    let w_star = compute_weights(&eta_star, &family, spec.link)?;
    Ok(PqlFit {
        eta_star,
        mu_star,
        w_star,
        beta,
        ratios,
        sigma2_e,
        dispersion,
        iterations,
        converged,
        clamped,
    })
}

/// Freeze (eta*, mu*, W*) and build the working LMM: standardized response
/// plus row-scaled designs.
pub fn build_working_lmm<T: Scalar>(
    fit: &PqlFit<T>,
    spec: &GlmmSpec<T>,
    y: &DVector<T>,
) -> Result<WorkingLmm<T>, PqlError> {
    let family = spec.family.with_dispersion(fit.dispersion);
    let y_tilde = working_response(y, &fit.eta_star, &family, spec.link)?;
    let sw = fit.w_star.map(|v| v.sqrt());
    let design_tilde = scale_design(&spec.design, &sw)?;
    Ok(WorkingLmm { y_tilde, design_tilde })
}

fn scale_design<T: Scalar>(
    design: &LmmDesign<T>,
    sqrt_w: &DVector<T>,
) -> Result<LmmDesign<T>, PqlError> {
    let scale_rows = |m: &DMatrix<T>| -> DMatrix<T> {
        let mut out = m.clone();
        for i in 0..out.nrows() {
            for j in 0..out.ncols() {
                out[(i, j)] *= sqrt_w[i];
            }
        }
        out
    };
    let randoms = design
        .randoms
        .iter()
        .map(|rc| RandomComponent { z: scale_rows(&rc.z), d: rc.d.clone() })
        .collect();
    LmmDesign::new(scale_rows(&design.x), randoms).map_err(PqlError::Lmm)
}
