//! REML estimation of Gaussian linear mixed models with independent error
//! and one or more variance components with known structure matrices.
//!
//! Everything is parameterized by the variance ratios `lambda_s =
//! sigma2_s / sigma2_e`, with beta and sigma2_e profiled out analytically.
//! The profiled restricted log-likelihood is
//!
//! ```text
//! REL(lambda) = -1/2 [ log|V| + log|X' V^-1 X| + (N-p) log(y' P y) ]
//! V = I + sum_s lambda_s Z_s D_s Z_s',   P = V^-1 - V^-1 X (X'V^-1X)^-1 X'V^-1
//! ```
//!
//! Boundary optima (lambda = 0) are the central object of the tests built on
//! top of this module, so they are detected by explicit comparison and
//! reported exactly as zero.

use std::cell::OnceCell;

use nalgebra::{DMatrix, DVector};

use crate::error::LmmError;
use crate::scalar::Scalar;

/// Known covariance structure of one random-effect vector.
#[derive(Debug, Clone, PartialEq)]
pub enum CovStructure<T: Scalar> {
    /// D = identity (iid random effects); the common case.
    Identity,
    /// Arbitrary symmetric positive semi-definite D.
    Matrix(DMatrix<T>),
}

/// One random-effect term: design Z (N x q) and structure D (q x q).
#[derive(Debug, Clone)]
pub struct RandomComponent<T: Scalar> {
    pub z: DMatrix<T>,
    pub d: CovStructure<T>,
}

impl<T: Scalar> RandomComponent<T> {
    /// iid random effects: D = I.
    pub fn iid(z: DMatrix<T>) -> Self {
        RandomComponent { z, d: CovStructure::Identity }
    }

    pub fn with_structure(z: DMatrix<T>, d: DMatrix<T>) -> Result<Self, LmmError> {
        if d.nrows() != z.ncols() || d.ncols() != z.ncols() {
            return Err(LmmError::Dimension(format!(
                "structure matrix is {}x{} but Z has {} columns",
                d.nrows(),
                d.ncols(),
                z.ncols()
            )));
        }
        let sym_err = (&d - d.transpose()).abs().max();
        let scale = d.abs().max().max(T::one());
        if sym_err.to_f64() > 1e-10 * scale.to_f64() {
            return Err(LmmError::Design("structure matrix is not symmetric".into()));
        }
        Ok(RandomComponent { z, d: CovStructure::Matrix(d) })
    }

    pub fn q(&self) -> usize {
        self.z.ncols()
    }

    /// Effective design Z D^{1/2}; identity structure returns Z itself.
    pub fn effective(&self) -> Result<DMatrix<T>, LmmError> {
        match &self.d {
            CovStructure::Identity => Ok(self.z.clone()),
            CovStructure::Matrix(d) => {
                let eig = d.clone().symmetric_eigen();
                let scale = eig.eigenvalues.amax();
                let mut sqrt_vals = eig.eigenvalues.clone();
                for v in sqrt_vals.iter_mut() {
                    if v.to_f64() < -1e-10 * scale.to_f64().max(1.0) {
                        return Err(LmmError::Design(
                            "structure matrix is not positive semi-definite".into(),
                        ));
                    }
                    *v = if *v > T::zero() { v.sqrt() } else { T::zero() };
                }
                let d_half = &eig.eigenvectors
                    * DMatrix::from_diagonal(&sqrt_vals)
                    * eig.eigenvectors.transpose();
                Ok(&self.z * d_half)
            }
        }
    }
}

/// Fixed design plus an ordered list of random components.
#[derive(Debug, Clone)]
pub struct LmmDesign<T: Scalar> {
    pub x: DMatrix<T>,
    pub randoms: Vec<RandomComponent<T>>,
}

impl<T: Scalar> LmmDesign<T> {
    pub fn new(x: DMatrix<T>, randoms: Vec<RandomComponent<T>>) -> Result<Self, LmmError> {
        let n = x.nrows();
        if x.ncols() == 0 || n <= x.ncols() {
            return Err(LmmError::Design(format!(
                "need N > p >= 1, got N = {}, p = {}",
                n,
                x.ncols()
            )));
        }
        for (s, rc) in randoms.iter().enumerate() {
            if rc.z.nrows() != n {
                return Err(LmmError::Dimension(format!(
                    "random component {} has {} rows, design has {}",
                    s,
                    rc.z.nrows(),
                    n
                )));
            }
            if rc.z.ncols() == 0 {
                return Err(LmmError::Design(format!("random component {s} has no columns")));
            }
        }
        Ok(LmmDesign { x, randoms })
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn n_components(&self) -> usize {
        self.randoms.len()
    }
}

/// Converged REML fit.
#[derive(Debug, Clone)]
pub struct RemlFit<T: Scalar> {
    /// GLS fixed effects at the optimum.
    pub beta: DVector<T>,
    /// Error variance y'Py / (N - p).
    pub sigma2_e: T,
    /// Variance ratios per component; boundary optima are exactly 0.
    pub ratios: Vec<T>,
    /// Restricted log-likelihood at the optimum.
    pub rel: T,
    pub converged: bool,
    /// Predicted random effects per component.
    pub blups: Vec<DVector<T>>,
}

impl<T: Scalar> RemlFit<T> {
    /// Variance components sigma2_s = lambda_s * sigma2_e.
    pub fn variance_components(&self) -> Vec<T> {
        self.ratios.iter().map(|&l| l * self.sigma2_e).collect()
    }
}

/// Optimizer settings. Defaults: interior tolerance 1e-8 on REL, at most
/// 200 evaluations per line search.
#[derive(Debug, Clone)]
pub struct RemlOptions {
    pub rel_tol: f64,
    pub max_evals: usize,
    /// Coarse scan size for the global grid over log lambda.
    pub grid_points: usize,
    /// Grid bracket [lo, hi] / xi_max on the ratio scale.
    pub grid_lo: f64,
    pub grid_hi: f64,
}

impl Default for RemlOptions {
    fn default() -> Self {
        RemlOptions {
            rel_tol: 1e-8,
            max_evals: 200,
            grid_points: 61,
            grid_lo: 1e-8,
            grid_hi: 1e8,
        }
    }
}

/// V(lambda) = I + sum_s lambda_s Z_s D_s Z_s' (unit-error scaling).
pub fn build_marginal_cov<T: Scalar>(
    design: &LmmDesign<T>,
    ratios: &[T],
) -> Result<DMatrix<T>, LmmError> {
    check_ratios(design, ratios)?;
    let n = design.n();
    let mut v = DMatrix::<T>::identity(n, n);
    for (rc, &lam) in design.randoms.iter().zip(ratios) {
        if lam == T::zero() {
            continue;
        }
        let eff = rc.effective()?;
        // v += lam * eff * eff'
        v.gemm(lam, &eff, &eff.transpose(), T::one());
    }
    Ok(v)
}

/// Profiled restricted log-likelihood at the given ratios.
pub fn restricted_log_lik<T: Scalar>(
    design: &LmmDesign<T>,
    y: &DVector<T>,
    ratios: &[T],
) -> Result<T, LmmError> {
    check_ratios(design, ratios)?;
    let eng = Engine::new(design, y)?;
    eng.rel_checked(ratios)
}

/// Maximize REL over the active components on [0, inf)^{|active|}, holding
/// inactive components at `fixed_ratios`. Boundary optima are found by
/// explicit comparison over every zero-pinned subset of the active set.
pub fn fit_reml<T: Scalar>(
    design: &LmmDesign<T>,
    y: &DVector<T>,
    active: &[usize],
    fixed_ratios: &[T],
    opts: &RemlOptions,
) -> Result<RemlFit<T>, LmmError> {
    let n_comp = design.n_components();
    if fixed_ratios.len() != n_comp {
        return Err(LmmError::Dimension(format!(
            "fixed_ratios has {} entries for {} components",
            fixed_ratios.len(),
            n_comp
        )));
    }
    for &i in active {
        if i >= n_comp {
            return Err(LmmError::Dimension(format!("active component {i} out of range")));
        }
    }
    if fixed_ratios.iter().any(|r| *r < T::zero()) {
        return Err(LmmError::Design("fixed ratios must be nonnegative".into()));
    }
    let eng = Engine::new(design, y)?;

    let mut base: Vec<T> = fixed_ratios.to_vec();
    for &i in active {
        base[i] = T::zero();
    }
    // Reject responses that no ratio value can rescue.
    eng.rel_checked(&base)?;

    let mut best: Option<(Vec<T>, f64, bool)> = None;
    let n_active = active.len();
    debug_assert!(n_active <= 16);
    for mask in 0..(1usize << n_active) {
        let pinned: Vec<usize> = (0..n_active).filter(|i| mask >> i & 1 == 1).map(|i| active[i]).collect();
        let free: Vec<usize> = (0..n_active).filter(|i| mask >> i & 1 == 0).map(|i| active[i]).collect();
        let mut ratios = base.clone();
        for &i in &pinned {
            ratios[i] = T::zero();
        }
        let (cand_ratios, cand_rel, cand_conv) = match free.len() {
            0 => {
                let r = eng.rel_or_neg_inf(&ratios);
                (ratios, r, true)
            }
            1 => eng.optimize_line(ratios, free[0], opts),
            _ => eng.optimize_simplex(ratios, &free, opts),
        };
        let better = match &best {
            None => true,
            Some((_, rel, _)) => cand_rel > *rel,
        };
        if better {
            best = Some((cand_ratios, cand_rel, cand_conv));
        }
    }
    let (ratios, _, converged) = best.expect("at least the all-pinned candidate exists");
    eng.finish(ratios, converged)
}

fn check_ratios<T: Scalar>(design: &LmmDesign<T>, ratios: &[T]) -> Result<(), LmmError> {
    if ratios.len() != design.n_components() {
        return Err(LmmError::Dimension(format!(
            "got {} ratios for {} random components",
            ratios.len(),
            design.n_components()
        )));
    }
    if ratios.iter().any(|r| *r < T::zero()) {
        return Err(LmmError::Design("ratios must be nonnegative".into()));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Evaluation engine
// ---------------------------------------------------------------------------

/// Per-(design, y) precomputation for repeated REL evaluations.
///
/// Two equivalent routes share the constants log|X'X| and rss0 = y'(I-P_X)y:
///
/// * low-rank route, any number of nonzero components: with U the stacked
///   effective designs and C = I + L^{1/2} U'U L^{1/2} (q_tot x q_tot),
///   log|V| = log|C| and a'V^-1 b = a'b - (L^{1/2}U'a)' C^-1 (L^{1/2}U'b);
/// * spectral route, single nonzero component: with xi the eigenvalues of
///   Z*'(I - P_X)Z* and c the rotated projected cross products,
///   REL(l) = -1/2 [ sum log(1+l xi) + (N-p) log(rss0 - l sum c^2/(1+l xi))
///                   + log|X'X| ].
///
/// The spectral route costs O(q) per lambda, which is what keeps the
/// Monte-Carlo loops cheap.
struct Engine<'a, T: Scalar> {
    design: &'a LmmDesign<T>,
    y: &'a DVector<T>,
    n: usize,
    p: usize,
    q1: DMatrix<T>,
    q1ty: DVector<T>,
    logdet_xtx: T,
    rss0: T,
    yty: T,
    xty: DVector<T>,
    xtx: DMatrix<T>,
    effs: Vec<DMatrix<T>>,
    stacked: OnceCell<Stacked<T>>,
    spectral: Vec<OnceCell<SpectralData<T>>>,
}

struct Stacked<T: Scalar> {
    u: DMatrix<T>,
    g: DMatrix<T>,
    utx: DMatrix<T>,
    uty: DVector<T>,
    offsets: Vec<usize>,
}

struct SpectralData<T: Scalar> {
    xi: Vec<T>,
    c2: Vec<T>,
}

impl<'a, T: Scalar> Engine<'a, T> {
    fn new(design: &'a LmmDesign<T>, y: &'a DVector<T>) -> Result<Self, LmmError> {
        let n = design.n();
        let p = design.p();
        if y.len() != n {
            return Err(LmmError::Dimension(format!(
                "response has {} entries, design has {} rows",
                y.len(),
                n
            )));
        }
        let qr = design.x.clone().qr();
        let q1 = qr.q();
        let r = qr.r();
        let mut rmax = T::zero();
        for i in 0..p {
            rmax = rmax.max(r[(i, i)].abs());
        }
        let mut logdet_xtx = T::zero();
        for i in 0..p {
            let rii = r[(i, i)].abs();
            if rii.to_f64() <= 1e-12 * rmax.to_f64() {
                return Err(LmmError::RankDeficient(i));
            }
            logdet_xtx += T::of_f64(2.0) * rii.ln();
        }
        let q1ty = q1.tr_mul(y);
        let yty = y.dot(y);
        let rss0 = yty - q1ty.dot(&q1ty);
        let effs: Vec<DMatrix<T>> = design
            .randoms
            .iter()
            .map(|rc| rc.effective())
            .collect::<Result<_, _>>()?;
        Ok(Engine {
            design,
            y,
            n,
            p,
            q1,
            q1ty,
            logdet_xtx,
            rss0,
            yty,
            xty: design.x.tr_mul(y),
            xtx: design.x.tr_mul(&design.x),
            effs,
            stacked: OnceCell::new(),
            spectral: (0..design.n_components()).map(|_| OnceCell::new()).collect(),
        })
    }

    fn quad_floor(&self) -> T {
        T::of_f64(1e-13) * self.yty.max(T::of_f64(f64::MIN_POSITIVE))
    }

    fn stacked(&self) -> &Stacked<T> {
        self.stacked.get_or_init(|| {
            let q_tot: usize = self.effs.iter().map(|e| e.ncols()).sum();
            let mut u = DMatrix::<T>::zeros(self.n, q_tot);
            let mut offsets = Vec::with_capacity(self.effs.len() + 1);
            let mut at = 0;
            for eff in &self.effs {
                offsets.push(at);
                u.view_mut((0, at), (self.n, eff.ncols())).copy_from(eff);
                at += eff.ncols();
            }
            offsets.push(at);
            let g = u.tr_mul(&u);
            let utx = u.tr_mul(&self.design.x);
            let uty = u.tr_mul(self.y);
            Stacked { u, g, utx, uty, offsets }
        })
    }

    fn spectral(&self, comp: usize) -> &SpectralData<T> {
        self.spectral[comp].get_or_init(|| {
            let eff = &self.effs[comp];
            let q1tz = self.q1.tr_mul(eff);
            let mut g = eff.tr_mul(eff);
            g.gemm(-T::one(), &q1tz.transpose(), &q1tz, T::one());
            let eig = g.symmetric_eigen();
            let b = eff.tr_mul(self.y) - q1tz.tr_mul(&self.q1ty);
            let c = eig.eigenvectors.tr_mul(&b);
            let xi: Vec<T> = eig
                .eigenvalues
                .iter()
                .map(|&v| if v > T::zero() { v } else { T::zero() })
                .collect();
            let c2: Vec<T> = c.iter().map(|&v| v * v).collect();
            SpectralData { xi, c2 }
        })
    }

    /// REL via the spectral route; valid when `comp` is the only component
    /// with a nonzero ratio. Returns None when the residual quadratic form
    /// is not positive.
    fn rel_spectral(&self, comp: usize, lam: T) -> Option<T> {
        let sd = self.spectral(comp);
        let mut logdet = T::zero();
        let mut shrink = T::zero();
        for (&xi, &c2) in sd.xi.iter().zip(&sd.c2) {
            let denom = T::one() + lam * xi;
            logdet += denom.ln();
            shrink += c2 / denom;
        }
        let quad = self.rss0 - lam * shrink;
        if quad <= self.quad_floor() {
            return None;
        }
        let np = T::of_f64((self.n - self.p) as f64);
        Some(-T::half() * (logdet + np * quad.ln() + self.logdet_xtx))
    }

    /// REL via the low-rank route, plus the GLS beta and quadratic form.
    fn rel_general(&self, ratios: &[T]) -> Option<(T, DVector<T>, T)> {
        let nonzero = ratios.iter().any(|&l| l > T::zero());
        if !nonzero {
            // V = I: ordinary least squares
            let chol = self.xtx.clone().cholesky()?;
            let beta = chol.solve(&self.xty);
            let quad = self.rss0;
            if quad <= self.quad_floor() {
                return None;
            }
            let np = T::of_f64((self.n - self.p) as f64);
            let rel = -T::half() * (np * quad.ln() + self.logdet_xtx_gls(&chol));
            return Some((rel, beta, quad));
        }
        let st = self.stacked();
        let q_tot = st.g.nrows();
        let mut sq = DVector::<T>::zeros(q_tot);
        for (s, &lam) in ratios.iter().enumerate() {
            let (a, b) = (st.offsets[s], st.offsets[s + 1]);
            let root = lam.sqrt();
            for i in a..b {
                sq[i] = root;
            }
        }
        // C = I + diag(sq) G diag(sq)
        let mut c = DMatrix::<T>::zeros(q_tot, q_tot);
        for i in 0..q_tot {
            for j in 0..q_tot {
                c[(i, j)] = sq[i] * st.g[(i, j)] * sq[j];
            }
            c[(i, i)] += T::one();
        }
        let (logdet_v, solve): (T, Box<dyn Fn(&DMatrix<T>) -> DMatrix<T>>) =
            match c.clone().cholesky() {
                Some(chol) => {
                    let mut ld = T::zero();
                    for i in 0..q_tot {
                        ld += T::of_f64(2.0) * chol.l_dirty()[(i, i)].ln();
                    }
                    (ld, Box::new(move |m| chol.solve(m)))
                }
                None => {
                    // C is I + PSD, so Cholesky only fails on extreme
                    // conditioning; fall back to a symmetric eigensolve.
                    let eig = c.symmetric_eigen();
                    let mut ld = T::zero();
                    for &v in eig.eigenvalues.iter() {
                        if v <= T::zero() {
                            return None;
                        }
                        ld += v.ln();
                    }
                    let vecs = eig.eigenvectors.clone();
                    let vals = eig.eigenvalues.clone();
                    (
                        ld,
                        Box::new(move |m| {
                            let mut t = vecs.tr_mul(m);
                            for i in 0..t.nrows() {
                                for j in 0..t.ncols() {
                                    t[(i, j)] /= vals[i];
                                }
                            }
                            &vecs * t
                        }),
                    )
                }
            };
        // rhs = [U'X, U'y] scaled by sq
        let mut rhs = DMatrix::<T>::zeros(q_tot, self.p + 1);
        rhs.view_mut((0, 0), (q_tot, self.p)).copy_from(&st.utx);
        rhs.view_mut((0, self.p), (q_tot, 1)).copy_from(&st.uty);
        for i in 0..q_tot {
            for j in 0..=self.p {
                rhs[(i, j)] *= sq[i];
            }
        }
        let sol = solve(&rhs);
        // a'V^-1 b = a'b - w_a' C^-1 w_b with w = scaled U' side
        let w_x = rhs.view((0, 0), (q_tot, self.p)).clone_owned();
        let s_x = sol.view((0, 0), (q_tot, self.p)).clone_owned();
        let w_y = rhs.column(self.p).clone_owned();
        let s_y = sol.column(self.p).clone_owned();
        let xtvix = &self.xtx - w_x.tr_mul(&s_x);
        let xtviy = &self.xty - w_x.tr_mul(&s_y);
        let ytviy = self.yty - w_y.dot(&s_y);
        let chol_x = xtvix.clone().cholesky()?;
        let beta = chol_x.solve(&xtviy);
        let quad = ytviy - xtviy.dot(&beta);
        if quad <= self.quad_floor() {
            return None;
        }
        let mut logdet_x = T::zero();
        for i in 0..self.p {
            logdet_x += T::of_f64(2.0) * chol_x.l_dirty()[(i, i)].ln();
        }
        let np = T::of_f64((self.n - self.p) as f64);
        let rel = -T::half() * (logdet_v + logdet_x + np * quad.ln());
        Some((rel, beta, quad))
    }

    fn logdet_xtx_gls(&self, chol: &nalgebra::Cholesky<T, nalgebra::Dyn>) -> T {
        let mut ld = T::zero();
        for i in 0..self.p {
            ld += T::of_f64(2.0) * chol.l_dirty()[(i, i)].ln();
        }
        ld
    }

    /// Single REL evaluation dispatching to the cheapest valid route.
    fn rel_at(&self, ratios: &[T]) -> Option<T> {
        let nonzero: Vec<usize> = ratios
            .iter()
            .enumerate()
            .filter(|(_, &l)| l > T::zero())
            .map(|(i, _)| i)
            .collect();
        match nonzero.len() {
            0 => self.rel_spectral_zero(),
            1 => self.rel_spectral(nonzero[0], ratios[nonzero[0]]),
            _ => self.rel_general(ratios).map(|(r, _, _)| r),
        }
    }

    /// REL at the all-zero ratio point; shared by every route so that
    /// boundary comparisons are bit-identical across fits.
    fn rel_spectral_zero(&self) -> Option<T> {
        let quad = self.rss0;
        if quad <= self.quad_floor() {
            return None;
        }
        let np = T::of_f64((self.n - self.p) as f64);
        Some(-T::half() * (np * quad.ln() + self.logdet_xtx))
    }

    fn rel_or_neg_inf(&self, ratios: &[T]) -> f64 {
        self.rel_at(ratios).map(|r| r.to_f64()).unwrap_or(f64::NEG_INFINITY)
    }

    fn rel_checked(&self, ratios: &[T]) -> Result<T, LmmError> {
        self.rel_at(ratios).ok_or_else(|| {
            LmmError::DegenerateResponse(self.rss0.to_f64())
        })
    }

    /// 1-D maximization over `free`, all other ratios held at `ratios`.
    /// Global coarse scan on a log grid, golden-section polish of the best
    /// bracket, explicit comparison against the boundary lambda = 0.
    fn optimize_line(&self, mut ratios: Vec<T>, free: usize, opts: &RemlOptions) -> (Vec<T>, f64, bool) {
        let others_zero = ratios
            .iter()
            .enumerate()
            .all(|(i, &l)| i == free || l == T::zero());
        let scale = if others_zero {
            let sd = self.spectral(free);
            sd.xi.iter().fold(T::zero(), |a, &b| a.max(b)).to_f64()
        } else {
            let st = self.stacked();
            let (a, b) = (st.offsets[free], st.offsets[free + 1]);
            let mut m = 0.0f64;
            for i in a..b {
                m = m.max(st.g[(i, i)].to_f64());
            }
            m
        };
        let mut eval = |lam: f64| -> f64 {
            ratios[free] = T::of_f64(lam);
            let v = if others_zero && lam > 0.0 {
                self.rel_spectral(free, ratios[free]).map(|r| r.to_f64())
            } else if lam == 0.0 {
                self.rel_spectral_zero().map(|r| r.to_f64())
            } else {
                self.rel_general(&ratios).map(|(r, _, _)| r.to_f64())
            };
            v.unwrap_or(f64::NEG_INFINITY)
        };
        let f0 = eval(0.0);
        if scale <= 0.0 {
            // projected design is annihilated; REL is flat in this ratio
            ratios[free] = T::zero();
            return (ratios, f0, true);
        }
        let lo = opts.grid_lo / scale;
        let hi = opts.grid_hi / scale;
        let m = opts.grid_points.max(8);
        let lates: Vec<f64> = (0..m)
            .map(|i| lo * (hi / lo).powf(i as f64 / (m - 1) as f64))
            .collect();
        let vals: Vec<f64> = lates.iter().map(|&l| eval(l)).collect();
        let mut k = 0;
        for (i, &v) in vals.iter().enumerate() {
            if v > vals[k] {
                k = i;
            }
        }
        let budget = opts.max_evals.saturating_sub(m).max(32);
        let (bracket_lo, bracket_hi) = (lates[k.saturating_sub(1)], lates[(k + 1).min(m - 1)]);
        let (lam_star, f_star) = golden_max(&mut eval, bracket_lo, bracket_hi, budget, opts.rel_tol);
        // boundary comparison: keep lambda = 0 unless the interior wins decisively
        let tol = 1e-10 * (1.0 + f0.abs());
        if f_star <= f0 + tol {
            ratios[free] = T::zero();
            (ratios, f0, true)
        } else {
            ratios[free] = T::of_f64(lam_star);
            (ratios, f_star, true)
        }
    }

    /// Nelder-Mead over log-ratios of the free components.
    fn optimize_simplex(&self, ratios: Vec<T>, free: &[usize], opts: &RemlOptions) -> (Vec<T>, f64, bool) {
        let d = free.len();
        let mut work = ratios.clone();
        let mut eval = |logs: &[f64]| -> f64 {
            for (j, &i) in free.iter().enumerate() {
                work[i] = T::of_f64(logs[j].exp());
            }
            self.rel_general(&work)
                .map(|(r, _, _)| r.to_f64())
                .unwrap_or(f64::NEG_INFINITY)
        };
        let starts: Vec<Vec<f64>> = vec![vec![0.0; d], vec![-3.0; d], vec![3.0; d]];
        let mut best: Option<(Vec<f64>, f64, bool)> = None;
        for s0 in starts {
            let (x, f, conv) = nelder_mead_max(&mut eval, &s0, 1.0, opts);
            if best.as_ref().map_or(true, |(_, fb, _)| f > *fb) {
                best = Some((x, f, conv));
            }
        }
        let (logs, f, conv) = best.unwrap();
        let mut out = ratios;
        for (j, &i) in free.iter().enumerate() {
            out[i] = T::of_f64(logs[j].exp());
        }
        (out, f, conv)
    }

    /// Final assembly at the chosen ratios: beta, sigma2_e, REL, BLUPs.
    fn finish(&self, ratios: Vec<T>, converged: bool) -> Result<RemlFit<T>, LmmError> {
        let (rel, beta, quad) = self
            .rel_general(&ratios)
            .ok_or(LmmError::DegenerateResponse(self.rss0.to_f64()))?;
        let np = T::of_f64((self.n - self.p) as f64);
        let sigma2_e = quad / np;
        // BLUPs: u_s = lambda_s D_s^{1/2} (Z*_s' V^-1 r), r = y - X beta
        let r = self.y - &self.design.x * &beta;
        let vinv_r = self.apply_vinv(&ratios, &r);
        let mut blups = Vec::with_capacity(self.design.n_components());
        for (s, rc) in self.design.randoms.iter().enumerate() {
            let t = self.effs[s].tr_mul(&vinv_r) * ratios[s];
            let u = match &rc.d {
                CovStructure::Identity => t,
                CovStructure::Matrix(_) => {
                    // effective = Z D^{1/2}; BLUP = lambda D Z' V^-1 r = D^{1/2} t
                    // recover D^{1/2} action through the effective design:
                    // D^{1/2} t where t = lambda Z*' V^-1 r
                    let d_half = d_half_of(rc)?;
                    d_half * t
                }
            };
            blups.push(u);
        }
        Ok(RemlFit { beta, sigma2_e, ratios, rel, converged, blups })
    }

    fn apply_vinv(&self, ratios: &[T], r: &DVector<T>) -> DVector<T> {
        if ratios.iter().all(|&l| l == T::zero()) {
            return r.clone();
        }
        let st = self.stacked();
        let q_tot = st.g.nrows();
        let mut sq = DVector::<T>::zeros(q_tot);
        for (s, &lam) in ratios.iter().enumerate() {
            let root = lam.sqrt();
            for i in st.offsets[s]..st.offsets[s + 1] {
                sq[i] = root;
            }
        }
        let mut c = DMatrix::<T>::zeros(q_tot, q_tot);
        for i in 0..q_tot {
            for j in 0..q_tot {
                c[(i, j)] = sq[i] * st.g[(i, j)] * sq[j];
            }
            c[(i, i)] += T::one();
        }
        let utr = st.u.tr_mul(r);
        let mut w = utr;
        for i in 0..q_tot {
            w[i] *= sq[i];
        }
        let sol = match c.clone().cholesky() {
            Some(ch) => ch.solve(&w),
            None => c
                .symmetric_eigen()
                .recompose()
                .try_inverse()
                .map(|inv| &inv * &w)
                .unwrap_or_else(|| w.clone()),
        };
        let mut scaled = sol;
        for i in 0..q_tot {
            scaled[i] *= sq[i];
        }
        r - &st.u * scaled
    }
}

fn d_half_of<T: Scalar>(rc: &RandomComponent<T>) -> Result<DMatrix<T>, LmmError> {
    match &rc.d {
        CovStructure::Identity => Ok(DMatrix::identity(rc.q(), rc.q())),
        CovStructure::Matrix(d) => {
            let eig = d.clone().symmetric_eigen();
            let mut vals = eig.eigenvalues.clone();
            for v in vals.iter_mut() {
                *v = if *v > T::zero() { v.sqrt() } else { T::zero() };
            }
            Ok(&eig.eigenvectors * DMatrix::from_diagonal(&vals) * eig.eigenvectors.transpose())
        }
    }
}

/// Golden-section maximization of `f` over [lo, hi] in log space.
fn golden_max(
    f: &mut impl FnMut(f64) -> f64,
    lo: f64,
    hi: f64,
    max_evals: usize,
    _rel_tol: f64,
) -> (f64, f64) {
    const INVPHI: f64 = 0.618_033_988_749_894_8;
    let (mut a, mut b) = (lo.ln(), hi.ln());
    let mut c = b - INVPHI * (b - a);
    let mut d = a + INVPHI * (b - a);
    let mut fc = f(c.exp());
    let mut fd = f(d.exp());
    let mut evals = 2usize;
    while evals < max_evals && (b - a) > 1e-10 {
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INVPHI * (b - a);
            fc = f(c.exp());
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INVPHI * (b - a);
            fd = f(d.exp());
        }
        evals += 1;
    }
    if fc > fd {
        (c.exp(), fc)
    } else {
        (d.exp(), fd)
    }
}

/// Nelder-Mead maximization (internally minimizes -f).
fn nelder_mead_max(
    f: &mut impl FnMut(&[f64]) -> f64,
    x0: &[f64],
    step: f64,
    opts: &RemlOptions,
) -> (Vec<f64>, f64, bool) {
    let d = x0.len();
    let mut simplex: Vec<Vec<f64>> = vec![x0.to_vec()];
    for i in 0..d {
        let mut v = x0.to_vec();
        v[i] += step;
        simplex.push(v);
    }
    let mut values: Vec<f64> = simplex.iter().map(|x| -f(x)).collect();
    let max_iter = opts.max_evals.max(100) * 2;
    let mut converged = false;
    for _ in 0..max_iter {
        let mut order: Vec<usize> = (0..=d).collect();
        order.sort_by(|&i, &j| values[i].partial_cmp(&values[j]).unwrap());
        let simplex_sorted: Vec<Vec<f64>> = order.iter().map(|&i| simplex[i].clone()).collect();
        let values_sorted: Vec<f64> = order.iter().map(|&i| values[i]).collect();
        simplex = simplex_sorted;
        values = values_sorted;
        let spread = values[d] - values[0];
        let size: f64 = (0..d)
            .map(|j| {
                simplex
                    .iter()
                    .map(|x| x[j])
                    .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
            })
            .map(|(lo, hi)| hi - lo)
            .fold(0.0, f64::max);
        if spread.abs() < 1e-11 && size < 1e-8 {
            converged = true;
            break;
        }
        let centroid: Vec<f64> = (0..d)
            .map(|j| simplex[..d].iter().map(|x| x[j]).sum::<f64>() / d as f64)
            .collect();
        let reflect: Vec<f64> = (0..d).map(|j| 2.0 * centroid[j] - simplex[d][j]).collect();
        let fr = -f(&reflect);
        if fr < values[0] {
            let expand: Vec<f64> = (0..d).map(|j| 3.0 * centroid[j] - 2.0 * simplex[d][j]).collect();
            let fe = -f(&expand);
            if fe < fr {
                simplex[d] = expand;
                values[d] = fe;
            } else {
                simplex[d] = reflect;
                values[d] = fr;
            }
        } else if fr < values[d - 1] {
            simplex[d] = reflect;
            values[d] = fr;
        } else {
            let contract: Vec<f64> = (0..d)
                .map(|j| 0.5 * (centroid[j] + simplex[d][j]))
                .collect();
            let fcontr = -f(&contract);
            if fcontr < values[d] {
                simplex[d] = contract;
                values[d] = fcontr;
            } else {
                for i in 1..=d {
                    for j in 0..d {
                        simplex[i][j] = 0.5 * (simplex[i][j] + simplex[0][j]);
                    }
                    values[i] = -f(&simplex[i]);
                }
            }
        }
    }
    let mut kbest = 0;
    for i in 1..=d {
        if values[i] < values[kbest] {
            kbest = i;
        }
    }
    (simplex[kbest].clone(), -values[kbest], converged)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn m1_design(groups: usize, per: usize) -> LmmDesign<f64> {
        let n = groups * per;
        let mut z = DMatrix::<f64>::zeros(n, groups);
        for i in 0..n {
            z[(i, i / per)] = 1.0;
        }
        let x = DMatrix::<f64>::from_element(n, 1, 1.0);
        LmmDesign::new(x, vec![RandomComponent::iid(z)]).unwrap()
    }

    #[test]
    fn marginal_cov_trivial_cases() {
        let design = m1_design(2, 2);
        let v0 = build_marginal_cov(&design, &[0.0]).unwrap();
        assert_eq!(v0, DMatrix::identity(4, 4));

        // one component, Z = I, D = I, lambda = 2 -> 3 I
        let x = DMatrix::<f64>::from_element(4, 1, 1.0);
        let d = LmmDesign::new(x, vec![RandomComponent::iid(DMatrix::identity(4, 4))]).unwrap();
        let v = build_marginal_cov(&d, &[2.0]).unwrap();
        assert_relative_eq!(v, DMatrix::identity(4, 4) * 3.0, epsilon = 1e-14);

        // group indicator, 2 groups x 2 obs, lambda = 1 -> blocks [[2,1],[1,2]]
        let v = build_marginal_cov(&m1_design(2, 2), &[1.0]).unwrap();
        let expect = DMatrix::from_row_slice(
            4,
            4,
            &[2., 1., 0., 0., 1., 2., 0., 0., 0., 0., 2., 1., 0., 0., 1., 2.],
        );
        assert_relative_eq!(v, expect, epsilon = 1e-14);
    }

    #[test]
    fn degenerate_response_rejected() {
        let design = m1_design(2, 3);
        let y = design.x.column(0).clone_owned();
        let err = restricted_log_lik(&design, &y, &[0.5]).unwrap_err();
        assert!(matches!(err, LmmError::DegenerateResponse(_)));
    }

    #[test]
    fn scaling_shifts_rel_by_known_constant() {
        let design = m1_design(3, 4);
        let y = DVector::from_fn(12, |i, _| (i as f64 * 0.7).sin() + 0.1 * i as f64);
        let c = 3.7f64;
        let r1 = restricted_log_lik(&design, &(y.clone() * c), &[0.8]).unwrap();
        let r0 = restricted_log_lik(&design, &y, &[0.8]).unwrap();
        let n_p = 12.0 - 1.0;
        assert_relative_eq!(r1 - r0, -0.5 * n_p * (c * c).ln(), max_relative = 1e-10);
    }

    #[test]
    fn pinned_component_matches_smaller_model() {
        let design2 = {
            let base = m1_design(3, 4);
            let z2 = DMatrix::<f64>::from_fn(12, 2, |i, j| ((i + j) % 3) as f64);
            LmmDesign::new(
                base.x.clone(),
                vec![base.randoms[0].clone(), RandomComponent::iid(z2)],
            )
            .unwrap()
        };
        let design1 = m1_design(3, 4);
        let y = DVector::from_fn(12, |i, _| ((i * i) as f64 * 0.13).cos() + i as f64 * 0.2);
        let opts = RemlOptions::default();
        let f2 = fit_reml(&design2, &y, &[0], &[0.0, 0.0], &opts).unwrap();
        let f1 = fit_reml(&design1, &y, &[0], &[0.0], &opts).unwrap();
        assert_relative_eq!(f2.rel, f1.rel, max_relative = 1e-10);
        assert_relative_eq!(f2.ratios[0], f1.ratios[0], max_relative = 1e-6, epsilon = 1e-12);
        assert_eq!(f2.ratios[1], 0.0);
    }

    #[test]
    fn fit_reports_exact_zero_on_boundary() {
        // y with no group structure at all; lambda-hat should hit 0 in at
        // least some replicates
        let design = m1_design(5, 8);
        let mut zero_count = 0;
        for rep in 0..20 {
            let y = DVector::from_fn(40, |i, _| ((i * 37 + rep * 101) % 17) as f64 * 0.25);
            let fit = fit_reml(&design, &y, &[0], &[0.0], &RemlOptions::default()).unwrap();
            if fit.ratios[0] == 0.0 {
                zero_count += 1;
            }
        }
        assert!(zero_count > 0, "expected at least one boundary fit");
    }

    #[test]
    fn rel_field_consistent_with_public_evaluator() {
        let design = m1_design(4, 5);
        let y = DVector::from_fn(20, |i, _| ((i as f64) * 1.3).sin() * 2.0 + i as f64 * 0.05);
        let fit = fit_reml(&design, &y, &[0], &[0.0], &RemlOptions::default()).unwrap();
        let rel = restricted_log_lik(&design, &y, &fit.ratios).unwrap();
        assert_relative_eq!(fit.rel, rel, epsilon = 1e-8);
    }

    #[test]
    fn structure_matrix_validation() {
        let z = DMatrix::<f64>::identity(6, 3);
        let bad = DMatrix::from_row_slice(3, 3, &[1., 0.5, 0., 0., 1., 0., 0., 0., 1.]);
        assert!(RandomComponent::with_structure(z.clone(), bad).is_err());
        let good = DMatrix::from_row_slice(3, 3, &[2., 1., 0., 1., 2., 0., 0., 0., 1.]);
        assert!(RandomComponent::with_structure(z, good).is_ok());
    }
}
