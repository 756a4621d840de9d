//! Exponential-family response distributions with canonical links.
//!
//! Binomial responses are stored as proportions (successes / denominator)
//! with the trial count carried on the family, so the working-response
//! formula is uniform across families and the denominator is absorbed in
//! the variance function.

use crate::error::ExpFamError;
use crate::scalar::Scalar;

/// Response distribution. Normal carries a free dispersion (the working-LMM
/// residual variance); the discrete families have dispersion fixed at 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Family<T: Scalar> {
    Normal { dispersion: T },
    Bernoulli,
    Binomial { denominator: u32 },
    Poisson,
}

/// Link function; each family uses its canonical link.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Link {
    Identity,
    Logit,
    Log,
}

impl Link {
    pub fn name(self) -> &'static str {
        match self {
            Link::Identity => "identity",
            Link::Logit => "logit",
            Link::Log => "log",
        }
    }

    /// g(mu). The mean must lie in the open domain of the link.
    pub fn apply<T: Scalar>(self, mu: T) -> Result<T, ExpFamError> {
        match self {
            Link::Identity => Ok(mu),
            Link::Logit => {
                if mu <= T::zero() || mu >= T::one() {
                    Err(invalid_mean(self, 0, mu))
                } else {
                    Ok((mu / (T::one() - mu)).ln())
                }
            }
            Link::Log => {
                if mu <= T::zero() {
                    Err(invalid_mean(self, 0, mu))
                } else {
                    Ok(mu.ln())
                }
            }
        }
    }

    /// g^{-1}(eta).
    pub fn inverse<T: Scalar>(self, eta: T) -> Result<T, ExpFamError> {
        if !eta.is_finite() {
            return Err(ExpFamError::NonFiniteEta { index: 0 });
        }
        Ok(match self {
            Link::Identity => eta,
            // 1 / (1 + e^{-eta}) is stable on both tails
            Link::Logit => T::one() / (T::one() + (-eta).exp()),
            Link::Log => eta.exp(),
        })
    }

    /// g'(mu); strictly positive on the open domain.
    pub fn derivative<T: Scalar>(self, mu: T) -> Result<T, ExpFamError> {
        match self {
            Link::Identity => Ok(T::one()),
            Link::Logit => {
                if mu <= T::zero() || mu >= T::one() {
                    Err(singular(0, mu))
                } else {
                    Ok(T::one() / (mu * (T::one() - mu)))
                }
            }
            Link::Log => {
                if mu <= T::zero() {
                    Err(singular(0, mu))
                } else {
                    Ok(T::one() / mu)
                }
            }
        }
    }

    /// Vectorized g(mu) with the offending index reported on error.
    pub fn apply_all<T: Scalar>(self, mu: &[T]) -> Result<Vec<T>, ExpFamError> {
        mu.iter()
            .enumerate()
            .map(|(i, &m)| self.apply(m).map_err(|e| at_index(e, i)))
            .collect()
    }
}

impl<T: Scalar> Family<T> {
    pub fn name(&self) -> &'static str {
        match self {
            Family::Normal { .. } => "normal",
            Family::Bernoulli => "bernoulli",
            Family::Binomial { .. } => "binomial",
            Family::Poisson => "poisson",
        }
    }

    pub fn canonical_link(&self) -> Link {
        match self {
            Family::Normal { .. } => Link::Identity,
            Family::Bernoulli | Family::Binomial { .. } => Link::Logit,
            Family::Poisson => Link::Log,
        }
    }

    /// Conditional variance of one observation at mean `mu`.
    pub fn variance(&self, mu: T) -> Result<T, ExpFamError> {
        match *self {
            Family::Normal { dispersion } => Ok(dispersion),
            Family::Bernoulli => {
                check_unit_interval(mu)?;
                Ok(mu * (T::one() - mu))
            }
            Family::Binomial { denominator } => {
                check_unit_interval(mu)?;
                Ok(mu * (T::one() - mu) / T::of_f64(f64::from(denominator)))
            }
            Family::Poisson => {
                if mu <= T::zero() {
                    Err(singular(0, mu))
                } else {
                    Ok(mu)
                }
            }
        }
    }

    /// Replace the Normal dispersion, leaving other families untouched.
    pub fn with_dispersion(&self, phi: T) -> Self {
        match self {
            Family::Normal { .. } => Family::Normal { dispersion: phi },
            other => *other,
        }
    }

    pub fn dispersion(&self) -> T {
        match *self {
            Family::Normal { dispersion } => dispersion,
            _ => T::one(),
        }
    }

    /// Check that a response vector is valid for this family
    /// (proportions in [0,1] for Bernoulli/Binomial, nonnegative counts for
    /// Poisson; Binomial proportions must be multiples of 1/denominator).
    pub fn validate_response(&self, y: &[T]) -> Result<(), ExpFamError> {
        let bad = |i: usize, v: T| ExpFamError::InvalidResponse {
            family: self.name(),
            index: i,
            value: v.to_f64(),
        };
        for (i, &v) in y.iter().enumerate() {
            if !v.is_finite() {
                return Err(bad(i, v));
            }
            match self {
                Family::Normal { .. } => {}
                Family::Bernoulli => {
                    if v != T::zero() && v != T::one() {
                        return Err(bad(i, v));
                    }
                }
                Family::Binomial { denominator } => {
                    if v < T::zero() || v > T::one() {
                        return Err(bad(i, v));
                    }
                    let scaled = v.to_f64() * f64::from(*denominator);
                    if (scaled - scaled.round()).abs() > 1e-8 {
                        return Err(bad(i, v));
                    }
                }
                Family::Poisson => {
                    let vf = v.to_f64();
                    if vf < 0.0 || (vf - vf.round()).abs() > 1e-8 {
                        return Err(bad(i, v));
                    }
                }
            }
        }
        Ok(())
    }
}

fn check_unit_interval<T: Scalar>(mu: T) -> Result<(), ExpFamError> {
    if mu <= T::zero() || mu >= T::one() {
        Err(singular(0, mu))
    } else {
        Ok(())
    }
}

fn invalid_mean<T: Scalar>(link: Link, index: usize, value: T) -> ExpFamError {
    ExpFamError::InvalidMean {
        link: link.name(),
        index,
        value: value.to_f64(),
    }
}

fn singular<T: Scalar>(index: usize, value: T) -> ExpFamError {
    ExpFamError::SingularWeight {
        index,
        value: value.to_f64(),
    }
}

fn at_index(e: ExpFamError, i: usize) -> ExpFamError {
    match e {
        ExpFamError::InvalidMean { link, value, .. } => {
            ExpFamError::InvalidMean { link, index: i, value }
        }
        ExpFamError::NonFiniteEta { .. } => ExpFamError::NonFiniteEta { index: i },
        ExpFamError::SingularWeight { value, .. } => {
            ExpFamError::SingularWeight { index: i, value }
        }
        other => other,
    }
}
