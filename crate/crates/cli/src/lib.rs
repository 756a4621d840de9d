//! Library surface behind the `vcgate` binary: configuration, CSV
//! ingestion, and report schemas.

pub mod config;
pub mod error;
pub mod ingest;
pub mod report;
pub mod simulate;

use nalgebra::DVector;
use vcgate_core::{run_test, GlmmSpec, TestProblem};

use config::ModelConfig;
use error::CliError;
use ingest::{build_model, Dataset, DesignNames};
use report::TestReport;

/// Load a CSV and expand a model configuration against it.
pub fn load_csv(
    data_path: &std::path::Path,
    config: &ModelConfig,
) -> Result<(Dataset, GlmmSpec<f64>, DVector<f64>, DesignNames), CliError> {
    let dataset = Dataset::from_csv_path(data_path)?;
    let (spec, y, names) = build_model(&dataset, config)?;
    Ok((dataset, spec, y, names))
}

/// Full `test` command pipeline, returning the report to serialize.
pub fn run_test_command(
    config: &ModelConfig,
    data_path: &std::path::Path,
) -> Result<TestReport, CliError> {
    let (dataset, spec, y, names) = load_csv(data_path, config)?;
    let problem = TestProblem::new(spec, y, config.tested_index())
        .with_null(config.null.to_kind())
        .with_samples(config.null_samples)
        .with_seed(config.seed);
    let result = run_test(&problem)?;
    if !result.statistic.is_finite() || !result.p_value.is_finite() {
        return Err(CliError::NoResult(format!(
            "non-finite outcome (statistic {}, p {})",
            result.statistic, result.p_value
        )));
    }
    Ok(TestReport::build(
        &result,
        &names,
        &config.tested,
        config.seed,
        dataset.n_rows,
    ))
}
