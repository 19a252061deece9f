//! Verification harness for `nonlocal-core`: configuration, parameter
//! sweeps over orders, multipliers, weights and dimensions, and
//! byte-stable reports.

pub mod config;
pub mod report;
pub mod suites;

use std::fs;
use std::path::{Path, PathBuf};

pub use config::ExperimentConfig;
pub use report::{Format, Row, VerificationReport};
pub use suites::{run_all, run_diffusion, run_energy_scan, run_verify_bernstein, run_verify_fractional, run_verify_poly, Outcome};

/// Coverage tags; every one must appear in the default full report.
pub const COVERAGE: [&str; 10] = [
    "eigen-fractional",
    "eigen-higher-order",
    "eigen-polyharmonic",
    "bernstein-multiplier",
    "separated-extension",
    "semigroup",
    "energy-monotone",
    "energy-balance",
    "a2-weights",
    "escape-decay",
];

pub const EXIT_PASS: i32 = 0;
pub const EXIT_INTERNAL: i32 = 1;
pub const EXIT_GATE: i32 = 2;
pub const EXIT_RESOURCE: i32 = 3;

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("check {check} failed to run: {source}")]
    Check {
        check: String,
        #[source]
        source: nonlocal_core::Error,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl HarnessError {
    pub fn exit_code(&self) -> i32 {
        use nonlocal_core::Error as E;
        match self {
            HarnessError::Check { source: E::InsufficientPaths(_) | E::StepBudget(_), .. } => EXIT_RESOURCE,
            _ => EXIT_INTERNAL,
        }
    }
}

impl Outcome {
    pub fn exit_code(&self) -> i32 {
        if self.report.all_pass() {
            EXIT_PASS
        } else {
            EXIT_GATE
        }
    }

    /// Writes `report.<ext>` and the curve files into `dir`.
    pub fn write(&self, dir: &Path, format: Format) -> Result<PathBuf, HarnessError> {
        fs::create_dir_all(dir)?;
        let path = dir.join(format!("report.{}", format.extension()));
        fs::write(&path, self.report.render(format))?;
        for (name, body) in &self.curves {
            fs::write(dir.join(name), body)?;
        }
        Ok(path)
    }
}
