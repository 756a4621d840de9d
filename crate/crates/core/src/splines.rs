//! B-spline basis construction, second-order difference penalty, and the
//! penalized-spline-to-mixed-model reparameterization that turns "is f
//! linear?" into a variance-component test.
//!
//! Knots are equidistant and extend `degree` steps beyond both ends of the
//! domain (the usual P-spline construction). With that knot layout the
//! Greville abscissae are equally spaced, so the null space of the plain
//! second-difference penalty maps exactly onto span{1, t}: penalized fits
//! and the induced mixed model produce identical fitted values, and the
//! fixed design can be taken as [1, t] literally.

use nalgebra::DMatrix;

use crate::error::SplineError;
use crate::lmm::{CovStructure, RandomComponent};
use crate::scalar::Scalar;

/// Basis settings: cubic by construction, second-order penalty.
#[derive(Debug, Clone, Copy)]
pub struct SplineBasisSpec<T: Scalar> {
    /// Basis dimension K (number of B-spline columns).
    pub basis_dim: usize,
    pub t_min: T,
    pub t_max: T,
}

pub const SPLINE_DEGREE: usize = 3;
pub const PENALTY_ORDER: usize = 2;
pub const DEFAULT_BASIS_DIM: usize = 30;

impl<T: Scalar> SplineBasisSpec<T> {
    pub fn new(basis_dim: usize, t_min: T, t_max: T) -> Result<Self, SplineError> {
        let min = SPLINE_DEGREE + 2;
        if basis_dim < min {
            return Err(SplineError::BasisTooSmall { k: basis_dim, min });
        }
        if t_min >= t_max {
            return Err(SplineError::DegenerateDomain(t_min.to_f64()));
        }
        Ok(SplineBasisSpec { basis_dim, t_min, t_max })
    }

    fn knots(&self) -> Vec<T> {
        let k = self.basis_dim;
        let h = (self.t_max - self.t_min) / T::of_f64((k - SPLINE_DEGREE) as f64);
        (0..=k + SPLINE_DEGREE)
            .map(|i| self.t_min + h * T::of_f64(i as f64 - SPLINE_DEGREE as f64))
            .collect()
    }
}

/// Mixed-model form of the penalized smooth.
#[derive(Debug, Clone)]
pub struct SmoothDesign<T: Scalar> {
    /// [1, t], the penalty null space evaluated at the data.
    pub x_poly: DMatrix<T>,
    /// N x (K-2) design for the penalized departures from linearity.
    pub z_smooth: DMatrix<T>,
}

impl<T: Scalar> SmoothDesign<T> {
    /// Random component carrying the smooth: iid coefficients, D = I.
    pub fn component(&self) -> RandomComponent<T> {
        RandomComponent { z: self.z_smooth.clone(), d: CovStructure::Identity }
    }
}

/// Evaluate the K B-spline basis functions at each t. Rows sum to one and
/// have at most degree + 1 nonzero entries; t outside the domain is an error.
pub fn bspline_design<T: Scalar>(
    t: &[T],
    spec: &SplineBasisSpec<T>,
) -> Result<DMatrix<T>, SplineError> {
    let knots = spec.knots();
    let k = spec.basis_dim;
    let mut out = DMatrix::<T>::zeros(t.len(), k);
    for (row, &ti) in t.iter().enumerate() {
        if ti < spec.t_min || ti > spec.t_max {
            return Err(SplineError::OutsideDomain {
                value: ti.to_f64(),
                lo: spec.t_min.to_f64(),
                hi: spec.t_max.to_f64(),
            });
        }
        // knot interval containing ti: knots[j] <= ti < knots[j+1]
        let mut j = SPLINE_DEGREE;
        while j + 1 < knots.len() - SPLINE_DEGREE - 1 && ti >= knots[j + 1] {
            j += 1;
        }
        // Cox-de Boor, local form: values of the degree+1 bases alive on
        // interval j (de Boor's BSPLVB)
        let mut vals = [T::zero(); SPLINE_DEGREE + 1];
        vals[0] = T::one();
        let mut delta_r = [T::zero(); SPLINE_DEGREE];
        let mut delta_l = [T::zero(); SPLINE_DEGREE];
        for d in 1..=SPLINE_DEGREE {
            delta_r[d - 1] = knots[j + d] - ti;
            delta_l[d - 1] = ti - knots[j + 1 - d];
            let mut saved = T::zero();
            for r in 0..d {
                let term = vals[r] / (delta_r[r] + delta_l[d - 1 - r]);
                vals[r] = saved + delta_r[r] * term;
                saved = delta_l[d - 1 - r] * term;
            }
            vals[d] = saved;
        }
        for (offset, &v) in vals.iter().enumerate() {
            out[(row, j - SPLINE_DEGREE + offset)] = v;
        }
    }
    Ok(out)
}

/// Second-difference matrix (K-2) x K and its penalty P = D2' D2.
/// P is symmetric PSD of rank K-2 with null space {constant, linear-in-index}.
pub fn difference_penalty<T: Scalar>(k: usize) -> Result<(DMatrix<T>, DMatrix<T>), SplineError> {
    if k < 4 {
        return Err(SplineError::BasisTooSmall { k, min: 4 });
    }
    let mut d2 = DMatrix::<T>::zeros(k - 2, k);
    for j in 0..k - 2 {
        d2[(j, j)] = T::one();
        d2[(j, j + 1)] = -T::of_f64(2.0);
        d2[(j, j + 2)] = T::one();
    }
    let p = d2.tr_mul(&d2);
    Ok((d2, p))
}

/// Reparameterize the penalized spline as a mixed model: fixed part [1, t],
/// random part Z = B D2' (D2 D2')^{-1} with iid coefficients.
pub fn mixed_model_reparam<T: Scalar>(
    basis: &DMatrix<T>,
    t: &[T],
) -> Result<SmoothDesign<T>, SplineError> {
    let k = basis.ncols();
    let n = basis.nrows();
    if t.len() != n {
        return Err(SplineError::RankDeficient);
    }
    let (d2, _) = difference_penalty::<T>(k)?;
    let dd = &d2 * d2.transpose();
    let chol = dd.cholesky().ok_or(SplineError::RankDeficient)?;
    // Z = B * D2' * (D2 D2')^{-1}  computed as solve on the right
    let bd = basis * d2.transpose();
    let z_smooth = chol.solve(&bd.transpose()).transpose();
    let mut x_poly = DMatrix::<T>::zeros(n, 2);
    for i in 0..n {
        x_poly[(i, 0)] = T::one();
        x_poly[(i, 1)] = t[i];
    }
    // each smooth column must carry something outside span{1, t}
    let qr = x_poly.clone().qr();
    let q = qr.q();
    for c in 0..z_smooth.ncols() {
        let col = z_smooth.column(c).clone_owned();
        let proj = &q * q.tr_mul(&col);
        let resid = (&col - proj).norm();
        if resid.to_f64() <= 1e-10 * col.norm().to_f64().max(1.0) {
            return Err(SplineError::RankDeficient);
        }
    }
    Ok(SmoothDesign { x_poly, z_smooth })
}

/// Smooth mean used by the linearity experiments on [0, 2]:
/// f(t) = 0.5 - t + (0.25 delta) t e^{2 - 2t}; delta = 0 is exactly linear.
pub fn true_smooth<T: Scalar>(t: T, delta: T) -> T {
    let quarter = T::of_f64(0.25);
    let two = T::of_f64(2.0);
    T::half() - t + quarter * delta * t * (two - two * t).exp()
}

/// Convenience: basis + reparameterization for observed covariate values.
pub fn smooth_design_for<T: Scalar>(
    t: &[T],
    basis_dim: usize,
    t_min: T,
    t_max: T,
) -> Result<SmoothDesign<T>, SplineError> {
    let spec = SplineBasisSpec::new(basis_dim, t_min, t_max)?;
    let basis = bspline_design(t, &spec)?;
    mixed_model_reparam(&basis, t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn grid(n: usize, lo: f64, hi: f64) -> Vec<f64> {
        (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
    }

    #[test]
    fn partition_of_unity_and_local_support() {
        let spec = SplineBasisSpec::new(10, 0.0f64, 2.0).unwrap();
        let t = grid(101, 0.0, 2.0);
        let b = bspline_design(&t, &spec).unwrap();
        for i in 0..t.len() {
            let row_sum: f64 = b.row(i).iter().sum();
            assert_relative_eq!(row_sum, 1.0, epsilon = 1e-12);
            let nonzeros = b.row(i).iter().filter(|v| **v != 0.0).count();
            assert!(nonzeros <= SPLINE_DEGREE + 1);
            assert!(b.row(i).iter().all(|v| *v >= 0.0));
        }
    }

    #[test]
    fn domain_is_enforced() {
        let spec = SplineBasisSpec::new(8, 0.0f64, 2.0).unwrap();
        assert!(bspline_design(&[2.0000001], &spec).is_err());
        assert!(bspline_design(&[-0.1], &spec).is_err());
        assert!(bspline_design(&[0.0, 2.0], &spec).is_ok());
    }

    #[test]
    fn difference_matrix_k4() {
        let (d2, p) = difference_penalty::<f64>(4).unwrap();
        let expect = DMatrix::from_row_slice(2, 4, &[1., -2., 1., 0., 0., 1., -2., 1.]);
        assert_eq!(d2, expect);
        assert_relative_eq!(p, d2.tr_mul(&d2), epsilon = 1e-14);
    }

    #[test]
    fn penalty_annihilates_linear_coefficients() {
        let k = 12;
        let (_, p) = difference_penalty::<f64>(k).unwrap();
        let linear = nalgebra::DVector::from_fn(k, |i, _| 3.0 - 0.7 * i as f64);
        assert!((&p * linear).amax() < 1e-12);
        let ones = nalgebra::DVector::from_element(k, 1.0);
        assert!((&p * ones).amax() < 1e-12);
        // symmetric, eigenvalues >= 0, rank K-2
        assert_relative_eq!(p.clone(), p.transpose(), epsilon = 1e-14);
        let eig = p.symmetric_eigen();
        let maxev = eig.eigenvalues.amax();
        let nonzero = eig.eigenvalues.iter().filter(|v| **v > 1e-10 * maxev).count();
        assert_eq!(nonzero, k - 2);
        assert!(eig.eigenvalues.iter().all(|v| *v > -1e-12));
    }

    #[test]
    fn true_smooth_reference_values() {
        assert_relative_eq!(true_smooth(0.4f64, 0.0), 0.1, epsilon = 1e-15);
        assert_relative_eq!(true_smooth(1.0f64, 4.0), 0.5, epsilon = 1e-15);
        // delta = 0 is a line
        for &t in &[0.0, 0.3, 1.1, 2.0] {
            assert_relative_eq!(true_smooth(t, 0.0), 0.5 - t, epsilon = 1e-15);
        }
    }

    #[test]
    fn smooth_columns_escape_linear_span() {
        let t = grid(50, 0.0, 2.0);
        let sd = smooth_design_for(&t, 10, 0.0, 2.0).unwrap();
        assert_eq!(sd.z_smooth.ncols(), 8);
        assert_eq!(sd.x_poly.ncols(), 2);
    }
}
