//! `vcgate simulate`: drive the Monte-Carlo harness from a JSON manifest.

use serde::{Deserialize, Serialize};
use vcgate_core::{run_power, run_type1, Method, SimScenario, SimTable};

use crate::error::CliError;

/// Replicate-count profile. `desk` keeps the manifest counts; `paper`
/// switches to the full study sizes (5000 for size, 1000 for power) and is
/// expected to run for hours.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    Desk,
    Paper,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ManifestKind {
    Type1,
    Power,
}

fn default_methods() -> Vec<Method> {
    vec![Method::Arlrt, Method::AsArlrt]
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub kind: ManifestKind,
    pub scenarios: Vec<SimScenario>,
    #[serde(default = "default_methods")]
    pub methods: Vec<Method>,
}

impl Manifest {
    pub fn from_path(path: &std::path::Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let manifest: Manifest = serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("invalid manifest {}: {e}", path.display())))?;
        if manifest.scenarios.is_empty() {
            return Err(CliError::Config("manifest lists no scenarios".into()));
        }
        if manifest.methods.is_empty() {
            return Err(CliError::Config("manifest lists no methods".into()));
        }
        Ok(manifest)
    }

    pub fn paper_replicates(&self) -> usize {
        match self.kind {
            ManifestKind::Type1 => 5000,
            ManifestKind::Power => 1000,
        }
    }
}

/// Run metadata plus the table; this is the JSON mirror of the CSV.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimReport {
    pub schema_version: u32,
    pub profile: Profile,
    pub kind: ManifestKind,
    pub methods: Vec<Method>,
    pub replicates_per_scenario: Vec<usize>,
    pub table: SimTable,
}

pub fn run_manifest(manifest: &Manifest, profile: Profile) -> Result<SimReport, CliError> {
    let mut scenarios: Vec<SimScenario> = manifest.scenarios.clone();
    if profile == Profile::Paper {
        let reps = manifest.paper_replicates();
        for sc in scenarios.iter_mut() {
            sc.replicates = reps;
        }
    }
    for (i, sc) in scenarios.iter().enumerate() {
        eprintln!(
            "scenario {}/{}: {} {} n={} m={} effect={} replicates={}",
            i + 1,
            scenarios.len(),
            sc.model.label(),
            sc.family.label(),
            sc.n,
            sc.m,
            sc.effect,
            sc.replicates
        );
    }
    let table = match manifest.kind {
        ManifestKind::Type1 => run_type1::<f64>(&scenarios, &manifest.methods),
        ManifestKind::Power => run_power::<f64>(&scenarios, &manifest.methods),
    }
    .map_err(CliError::Model)?;
    Ok(SimReport {
        schema_version: crate::report::SCHEMA_VERSION,
        profile,
        kind: manifest.kind,
        methods: manifest.methods.clone(),
        replicates_per_scenario: scenarios.iter().map(|s| s.replicates).collect(),
        table,
    })
}
