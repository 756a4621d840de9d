//! Error types shared across the crate.

use thiserror::Error;

/// Errors from link and variance function evaluation.
#[derive(Debug, Clone, Error)]
pub enum ExpFamError {
    #[error("invalid mean {value} at index {index}: outside the open domain of the {link} link")]
    InvalidMean {
        link: &'static str,
        index: usize,
        value: f64,
    },
    #[error("non-finite linear predictor at index {index}")]
    NonFiniteEta { index: usize },
    #[error("singular weight: mean {value} at index {index} lies on the domain boundary")]
    SingularWeight { index: usize, value: f64 },
    #[error("response invalid for {family} family at index {index}: {value}")]
    InvalidResponse {
        family: &'static str,
        index: usize,
        value: f64,
    },
}

/// Errors from mixed-model design construction and REML fitting.
#[derive(Debug, Clone, Error)]
pub enum LmmError {
    #[error("design error: {0}")]
    Design(String),
    #[error("fixed-effect design is rank deficient (column {0})")]
    RankDeficient(usize),
    #[error("degenerate response: y lies in the column space of X (residual quadratic form {0:.3e})")]
    DegenerateResponse(f64),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
}

/// Errors from null-distribution construction.
#[derive(Debug, Clone, Error)]
pub enum NullDistError {
    #[error("insufficient residual degrees of freedom: N - p - K = {0}")]
    InsufficientResidualDf(i64),
    #[error("invalid statistic {0}: must be nonnegative")]
    InvalidStatistic(f64),
    #[error("invalid null distribution: {0}")]
    InvalidNull(String),
    #[error(transparent)]
    Lmm(#[from] LmmError),
}

/// Errors from the PQL estimation loop.
#[derive(Debug, Clone, Error)]
pub enum PqlError {
    #[error("degenerate data: response is constant")]
    DegenerateData,
    #[error(transparent)]
    ExpFam(#[from] ExpFamError),
    #[error(transparent)]
    Lmm(#[from] LmmError),
}

/// Errors from spline basis construction.
#[derive(Debug, Clone, Error)]
pub enum SplineError {
    #[error("basis dimension {k} too small: need at least degree + 2 = {min}")]
    BasisTooSmall { k: usize, min: usize },
    #[error("domain error: t = {value} outside [{lo}, {hi}]")]
    OutsideDomain { value: f64, lo: f64, hi: f64 },
    #[error("degenerate domain: t_min = t_max = {0}")]
    DegenerateDomain(f64),
    #[error("reparameterization is numerically rank deficient")]
    RankDeficient,
}

/// Errors from test orchestration.
#[derive(Debug, Clone, Error)]
pub enum TestError {
    #[error("invalid tested component index {index}: design has {count} random components")]
    BadTestedIndex { index: usize, count: usize },
    #[error(transparent)]
    Pql(#[from] PqlError),
    #[error(transparent)]
    Lmm(#[from] LmmError),
    #[error(transparent)]
    NullDist(#[from] NullDistError),
}
