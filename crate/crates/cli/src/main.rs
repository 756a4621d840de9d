use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use vcgate::config::{ModelConfig, NullChoice};
use vcgate::error::CliError;
use vcgate::simulate::{run_manifest, Manifest, Profile};

/// Variance-component tests for generalized linear mixed models.
#[derive(Parser)]
#[command(name = "vcgate", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one hypothesis test on a CSV dataset.
    Test {
        /// Model configuration (JSON).
        #[arg(long)]
        config: PathBuf,
        /// Dataset (CSV with a header row).
        #[arg(long)]
        data: PathBuf,
        /// Output report path (JSON).
        #[arg(long)]
        out: PathBuf,
        /// Override the config seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the null distribution.
        #[arg(long, value_enum)]
        null: Option<NullChoice>,
        /// Override the finite-sample null sample count.
        #[arg(long = "B")]
        b: Option<usize>,
    },
    /// Run Monte-Carlo size/power experiments from a manifest.
    Simulate {
        /// Scenario manifest (JSON).
        #[arg(long)]
        manifest: PathBuf,
        /// Output directory for simtable.csv and simtable.json.
        #[arg(long)]
        out: PathBuf,
        /// Replicate-count profile.
        #[arg(long, value_enum, default_value = "desk")]
        profile: Profile,
    },
}

fn init_threads() {
    if let Ok(v) = std::env::var("VCGATE_THREADS") {
        if let Ok(n) = v.parse::<usize>() {
            if n >= 1 {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
        }
    }
}

fn run() -> Result<(), CliError> {
    let cli = Cli::parse();
    init_threads();
    match cli.command {
        Command::Test { config, data, out, seed, null, b } => {
            let mut cfg = ModelConfig::from_path(&config)?;
            if let Some(seed) = seed {
                cfg.seed = seed;
            }
            if let Some(null) = null {
                cfg.null = null;
            }
            if let Some(b) = b {
                cfg.null_samples = b;
            }
            let report = vcgate::run_test_command(&cfg, &data)?;
            std::fs::write(&out, report.to_json_string())
                .map_err(|e| CliError::Io(format!("cannot write {}: {e}", out.display())))?;
            println!("{}", report.summary_line());
            Ok(())
        }
        Command::Simulate { manifest, out, profile } => {
            let manifest = Manifest::from_path(&manifest)?;
            let report = run_manifest(&manifest, profile)?;
            std::fs::create_dir_all(&out)
                .map_err(|e| CliError::Io(format!("cannot create {}: {e}", out.display())))?;
            let csv_path = out.join("simtable.csv");
            let json_path = out.join("simtable.json");
            std::fs::write(&csv_path, report.table.to_csv())
                .map_err(|e| CliError::Io(format!("cannot write {}: {e}", csv_path.display())))?;
            let mut json = serde_json::to_string_pretty(&report).expect("report serializes");
            json.push('\n');
            std::fs::write(&json_path, json)
                .map_err(|e| CliError::Io(format!("cannot write {}: {e}", json_path.display())))?;
            println!(
                "wrote {} rows to {} and {}",
                report.table.rows.len(),
                csv_path.display(),
                json_path.display()
            );
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("vcgate: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
