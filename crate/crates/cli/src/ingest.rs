//! CSV dataset ingestion: column-typed table plus expansion of the model
//! configuration into a concrete design.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use vcgate_core::{smooth_design_for, Family, FamilyKind, GlmmSpec, LmmDesign, RandomComponent};

use crate::config::{ModelConfig, RandomTerm, ResponseConfig};
use crate::error::CliError;

/// One CSV column: raw strings plus the numeric view when every non-missing
/// value parses.
#[derive(Debug, Clone)]
pub struct Column {
    pub raw: Vec<String>,
    pub numeric: Option<Vec<f64>>,
}

/// Column-named table.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub n_rows: usize,
    pub columns: HashMap<String, Column>,
    pub header: Vec<String>,
}

fn is_missing(v: &str) -> bool {
    v.is_empty() || v == "NA" || v == "na" || v == "NaN"
}

impl Dataset {
    pub fn from_csv_path(path: &std::path::Path) -> Result<Self, CliError> {
        let file = std::fs::File::open(path)
            .map_err(|e| CliError::Ingestion(format!("cannot open {}: {e}", path.display())))?;
        Self::from_csv_reader(file)
    }

    pub fn from_csv_reader<R: std::io::Read>(source: R) -> Result<Self, CliError> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_reader(source);
        let header: Vec<String> = reader
            .headers()
            .map_err(|e| CliError::Ingestion(format!("bad header: {e}")))?
            .iter()
            .map(|h| h.to_string())
            .collect();
        let mut raw_cols: Vec<Vec<String>> = vec![Vec::new(); header.len()];
        for (row_idx, record) in reader.records().enumerate() {
            let record =
                record.map_err(|e| CliError::Ingestion(format!("row {}: {e}", row_idx + 2)))?;
            if record.len() != header.len() {
                return Err(CliError::Ingestion(format!(
                    "row {} has {} fields, header has {}",
                    row_idx + 2,
                    record.len(),
                    header.len()
                )));
            }
            for (c, field) in record.iter().enumerate() {
                raw_cols[c].push(field.to_string());
            }
        }
        let n_rows = raw_cols.first().map_or(0, |c| c.len());
        if n_rows == 0 {
            return Err(CliError::Ingestion("dataset has no rows".into()));
        }
        let mut columns = HashMap::new();
        for (name, raw) in header.iter().zip(raw_cols) {
            let numeric: Option<Vec<f64>> = raw
                .iter()
                .map(|v| {
                    if is_missing(v) {
                        Some(f64::NAN)
                    } else {
                        v.parse::<f64>().ok()
                    }
                })
                .collect();
            columns.insert(name.clone(), Column { raw, numeric });
        }
        Ok(Dataset { n_rows, columns, header })
    }

    pub fn column(&self, name: &str) -> Result<&Column, CliError> {
        self.columns
            .get(name)
            .ok_or_else(|| CliError::Ingestion(format!("column '{name}' not found")))
    }

    /// Numeric column with every value present; errors name row and column.
    pub fn numeric_column(&self, name: &str) -> Result<Vec<f64>, CliError> {
        let col = self.column(name)?;
        for (i, v) in col.raw.iter().enumerate() {
            if is_missing(v) {
                return Err(CliError::Ingestion(format!(
                    "missing value in column '{name}' at row {}",
                    i + 2
                )));
            }
        }
        let vals = col.numeric.clone().ok_or_else(|| {
            let bad = col
                .raw
                .iter()
                .position(|v| v.parse::<f64>().is_err())
                .unwrap_or(0);
            CliError::Ingestion(format!(
                "column '{name}' is not numeric (row {}: '{}')",
                bad + 2,
                col.raw[bad]
            ))
        })?;
        Ok(vals)
    }

    /// Factor view: levels in first-appearance order, each row's level index.
    pub fn factor_column(&self, name: &str) -> Result<(Vec<String>, Vec<usize>), CliError> {
        let col = self.column(name)?;
        let mut levels: Vec<String> = Vec::new();
        let mut index = HashMap::new();
        let mut codes = Vec::with_capacity(col.raw.len());
        for (i, v) in col.raw.iter().enumerate() {
            if is_missing(v) {
                return Err(CliError::Ingestion(format!(
                    "missing value in column '{name}' at row {}",
                    i + 2
                )));
            }
            let code = *index.entry(v.clone()).or_insert_with(|| {
                levels.push(v.clone());
                levels.len() - 1
            });
            codes.push(code);
        }
        Ok((levels, codes))
    }
}

/// Names for reporting: fixed-effect columns and random terms.
#[derive(Debug, Clone)]
pub struct DesignNames {
    pub fixed: Vec<String>,
    pub random: Vec<String>,
    pub random_levels: Vec<usize>,
}

/// Expand the configuration against the data into a concrete model.
pub fn build_model(
    dataset: &Dataset,
    config: &ModelConfig,
) -> Result<(GlmmSpec<f64>, DVector<f64>, DesignNames), CliError> {
    let n = dataset.n_rows;

    // response
    let family: Family<f64> = config.family.to_family();
    let y_vals: Vec<f64> = match &config.response {
        ResponseConfig::Column(name) => dataset.numeric_column(name)?,
        ResponseConfig::Pair { successes, trials } => {
            let s = dataset.numeric_column(successes)?;
            let t = dataset.numeric_column(trials)?;
            let FamilyKind::Binomial { denominator } = config.family else {
                return Err(CliError::Config("pair response requires binomial".into()));
            };
            for (i, &tv) in t.iter().enumerate() {
                if (tv - f64::from(denominator)).abs() > 1e-9 {
                    return Err(CliError::Ingestion(format!(
                        "trials column '{trials}' row {} has {} but the family denominator is {}",
                        i + 2,
                        tv,
                        denominator
                    )));
                }
            }
            s.iter().zip(&t).map(|(&si, &ti)| si / ti).collect()
        }
    };
    family
        .validate_response(&y_vals)
        .map_err(|e| CliError::Ingestion(format!("response: {e}")))?;
    let y = DVector::from_vec(y_vals);

    // fixed design
    let mut fixed_cols: Vec<(String, Vec<f64>)> = Vec::new();
    if config.intercept {
        fixed_cols.push(("(intercept)".into(), vec![1.0; n]));
    }
    for name in &config.fixed {
        let col = dataset.column(name)?;
        let numeric_ok = col.numeric.as_ref().is_some_and(|v| v.iter().all(|x| x.is_finite()));
        if numeric_ok {
            fixed_cols.push((name.clone(), dataset.numeric_column(name)?));
        } else {
            let (levels, codes) = dataset.factor_column(name)?;
            // reference coding when an intercept is present, full indicators
            // otherwise
            let skip = usize::from(config.intercept);
            for (li, level) in levels.iter().enumerate().skip(skip) {
                let col: Vec<f64> = codes
                    .iter()
                    .map(|&c| if c == li { 1.0 } else { 0.0 })
                    .collect();
                fixed_cols.push((format!("{name}={level}"), col));
            }
        }
    }

    // smooth term augments the fixed design with its covariate
    for term in &config.random {
        if let RandomTerm::Smooth { smooth, .. } = term {
            let t = dataset.numeric_column(smooth)?;
            fixed_cols.push((smooth.clone(), t));
        }
    }

    if fixed_cols.is_empty() {
        return Err(CliError::Config("empty fixed design: add an intercept or columns".into()));
    }
    let p = fixed_cols.len();
    let x = DMatrix::<f64>::from_fn(n, p, |i, j| fixed_cols[j].1[i]);

    // random terms
    let mut randoms = Vec::new();
    let mut names = Vec::new();
    let mut levels_out = Vec::new();
    for term in &config.random {
        match term {
            RandomTerm::Group { group } => {
                let (levels, codes) = dataset.factor_column(group)?;
                if levels.len() < 2 {
                    return Err(CliError::Ingestion(format!(
                        "grouping column '{group}' has a single level"
                    )));
                }
                let mut z = DMatrix::<f64>::zeros(n, levels.len());
                for (i, &c) in codes.iter().enumerate() {
                    z[(i, c)] = 1.0;
                }
                randoms.push(RandomComponent::iid(z));
                names.push(group.clone());
                levels_out.push(levels.len());
            }
            RandomTerm::Smooth { smooth, basis_dim } => {
                let t = dataset.numeric_column(smooth)?;
                let (lo, hi) = t
                    .iter()
                    .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                        (lo.min(v), hi.max(v))
                    });
                if n < *basis_dim {
                    eprintln!(
                        "warning: {n} rows for a {basis_dim}-dimensional smooth basis; \
                         consider a smaller basis_dim"
                    );
                }
                let sd = smooth_design_for(&t, *basis_dim, lo, hi)
                    .map_err(|e| CliError::Ingestion(format!("smooth({smooth}): {e}")))?;
                randoms.push(sd.component());
                names.push(term.name());
                levels_out.push(basis_dim - 2);
            }
        }
    }

    let design = LmmDesign::new(x, randoms)
        .map_err(|e| CliError::Ingestion(format!("design: {e}")))?;
    let spec = GlmmSpec::new(family, design);
    Ok((
        spec,
        y,
        DesignNames {
            fixed: fixed_cols.into_iter().map(|(n, _)| n).collect(),
            random: names,
            random_levels: levels_out,
        },
    ))
}
