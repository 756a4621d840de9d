//! Declarative model configuration: a single JSON document, no formula
//! mini-language.

use serde::{Deserialize, Serialize};
use vcgate_core::FamilyKind;

use crate::error::CliError;

pub const DEFAULT_NULL_SAMPLES: usize = 10_000;

/// How the response is stored in the CSV.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ResponseConfig {
    /// One column holding the response (proportions for Binomial).
    Column(String),
    /// Binomial pair: a successes column and a trials column; trials must be
    /// constant and equal to the family denominator.
    Pair { successes: String, trials: String },
}

/// One random term: a grouping column (random intercept per level) or a
/// penalized smooth of a numeric covariate.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RandomTerm {
    Group {
        group: String,
    },
    Smooth {
        smooth: String,
        #[serde(default = "default_basis_dim")]
        basis_dim: usize,
    },
}

fn default_basis_dim() -> usize {
    vcgate_core::splines::DEFAULT_BASIS_DIM
}

impl RandomTerm {
    /// Identifier used for `tested` matching and reporting.
    pub fn name(&self) -> String {
        match self {
            RandomTerm::Group { group } => group.clone(),
            RandomTerm::Smooth { smooth, .. } => format!("smooth({smooth})"),
        }
    }
}

/// Which null distribution the p-value uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum NullChoice {
    Finite,
    Mixture,
}

impl NullChoice {
    pub fn to_kind(self) -> vcgate_core::NullKind {
        match self {
            NullChoice::Finite => vcgate_core::NullKind::FiniteSample,
            NullChoice::Mixture => vcgate_core::NullKind::ChisqMixture,
        }
    }
}

fn default_true() -> bool {
    true
}
fn default_null() -> NullChoice {
    NullChoice::Finite
}
fn default_samples() -> usize {
    DEFAULT_NULL_SAMPLES
}

/// Full model + test configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelConfig {
    pub response: ResponseConfig,
    pub family: FamilyKind,
    #[serde(default = "default_true")]
    pub intercept: bool,
    /// Fixed-effect columns; numeric columns enter as covariates,
    /// non-numeric ones expand to indicators.
    #[serde(default)]
    pub fixed: Vec<String>,
    pub random: Vec<RandomTerm>,
    /// Name of the tested term: a grouping column or `smooth(col)`.
    pub tested: String,
    #[serde(default = "default_null")]
    pub null: NullChoice,
    #[serde(default = "default_samples")]
    pub null_samples: usize,
    #[serde(default)]
    pub seed: u64,
}

impl ModelConfig {
    pub fn from_path(path: &std::path::Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let cfg: ModelConfig = serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("invalid config {}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.random.is_empty() {
            return Err(CliError::Config("at least one random term is required".into()));
        }
        let matches = self
            .random
            .iter()
            .filter(|t| t.name() == self.tested)
            .count();
        if matches != 1 {
            return Err(CliError::Config(format!(
                "tested term '{}' must match exactly one random term (found {})",
                self.tested, matches
            )));
        }
        let smooths = self
            .random
            .iter()
            .filter(|t| matches!(t, RandomTerm::Smooth { .. }))
            .count();
        if smooths > 1 {
            return Err(CliError::Config("at most one smooth term is supported".into()));
        }
        if smooths == 1 && !self.intercept {
            return Err(CliError::Config(
                "a smooth term needs the intercept (its fixed part is the line [1, t])".into(),
            ));
        }
        for term in &self.random {
            if let RandomTerm::Smooth { smooth, .. } = term {
                if self.fixed.iter().any(|f| f == smooth) {
                    return Err(CliError::Config(format!(
                        "smooth covariate '{smooth}' is added to the fixed design \
                         automatically; remove it from `fixed`"
                    )));
                }
            }
        }
        if let FamilyKind::Binomial { denominator } = self.family {
            if denominator == 0 {
                return Err(CliError::Config("binomial denominator must be positive".into()));
            }
        }
        if matches!(self.response, ResponseConfig::Pair { .. })
            && !matches!(self.family, FamilyKind::Binomial { .. })
        {
            return Err(CliError::Config(
                "successes/trials response columns require the binomial family".into(),
            ));
        }
        Ok(())
    }

    pub fn tested_index(&self) -> usize {
        self.random
            .iter()
            .position(|t| t.name() == self.tested)
            .expect("validated")
    }
}
