//! Machine-readable test report with a fixed schema.

use serde::{Deserialize, Serialize};
use vcgate_core::{NullKind, PqlSummary, TestResult};

use crate::ingest::DesignNames;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NamedValue {
    pub name: String,
    pub value: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NullReport {
    pub kind: NullKind,
    pub samples: usize,
    pub seed: u64,
    pub zero_fraction: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EstimatesReport {
    /// PQL fixed effects, in design-column order.
    pub fixed: Vec<NamedValue>,
    /// PQL variance components per random term.
    pub variance_components: Vec<NamedValue>,
    pub dispersion: f64,
    pub tested: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitReport {
    pub pql: PqlSummary,
    pub null_rel: f64,
    pub alt_rel: f64,
    pub null_ratios: Vec<f64>,
    pub alt_ratios: Vec<f64>,
    pub alt_sigma2_e: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DataReport {
    pub rows: usize,
    pub fixed_columns: usize,
    pub random_terms: Vec<NamedValue>,
}

/// Everything `vcgate test` writes to its output file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TestReport {
    pub schema_version: u32,
    pub method: String,
    pub statistic: f64,
    pub p_value: f64,
    pub seed: u64,
    pub null: NullReport,
    pub estimates: EstimatesReport,
    pub fit: FitReport,
    pub data: DataReport,
    pub warnings: Vec<String>,
}

impl TestReport {
    pub fn build(
        result: &TestResult<f64>,
        names: &DesignNames,
        tested: &str,
        seed: u64,
        rows: usize,
    ) -> Self {
        let fixed = names
            .fixed
            .iter()
            .zip(result.pql.beta.iter())
            .map(|(name, &value)| NamedValue { name: clone_name(name), value })
            .collect();
        let variance_components = names
            .random
            .iter()
            .zip(result.pql.variance_components.iter())
            .map(|(name, &value)| NamedValue { name: clone_name(name), value })
            .collect();
        let random_terms = names
            .random
            .iter()
            .zip(names.random_levels.iter())
            .map(|(name, &levels)| NamedValue { name: clone_name(name), value: levels as f64 })
            .collect();
        TestReport {
            schema_version: SCHEMA_VERSION,
            method: result.method.label().to_string(),
            statistic: result.statistic,
            p_value: result.p_value,
            seed,
            null: NullReport {
                kind: result.null_distribution.kind,
                samples: result.null_distribution.samples,
                seed: result.null_distribution.seed,
                zero_fraction: result.null_distribution.zero_fraction,
            },
            estimates: EstimatesReport {
                fixed,
                variance_components,
                dispersion: result.pql.dispersion,
                tested: tested.to_string(),
            },
            fit: FitReport {
                pql: result.pql.clone(),
                null_rel: result.null_fit.rel,
                alt_rel: result.alt_fit.rel,
                null_ratios: result.null_fit.ratios.clone(),
                alt_ratios: result.alt_fit.ratios.clone(),
                alt_sigma2_e: result.alt_fit.sigma2_e,
            },
            data: DataReport {
                rows,
                fixed_columns: names.fixed.len(),
                random_terms,
            },
            warnings: result.warnings.clone(),
        }
    }

    pub fn to_json_string(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    /// One-line human summary for standard output.
    pub fn summary_line(&self) -> String {
        format!(
            "{} statistic {:.4}, p = {:.6} (tested {}, null {:?}, B = {}, seed {})",
            self.method,
            self.statistic,
            self.p_value,
            self.estimates.tested,
            self.null.kind,
            self.null.samples,
            self.seed
        )
    }
}

fn clone_name(n: &str) -> String {
    n.to_string()
}
