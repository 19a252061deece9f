use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use nonlocal_harness::{run_all, run_diffusion, run_energy_scan, run_verify_bernstein, run_verify_fractional, run_verify_poly};
use nonlocal_harness::{ExperimentConfig, Format, HarnessError, Outcome, EXIT_INTERNAL};

#[derive(Parser)]
#[command(name = "nonlocal-verify", version, about = "Numerical verification of nonlocal eigenrelations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fractional eigenrelations by the spectral, quadrature and extension routes.
    VerifyFractional(Common),
    /// Bernstein multipliers and the weight hypotheses.
    VerifyBernstein(Common),
    /// Polyharmonic eigenrelations.
    VerifyPoly(Common),
    /// Energy monotonicity scan and weighted energy balance.
    EnergyScan(Common),
    /// Escape-probability curves for the weighted diffusion.
    Diffusion(Common),
    /// Every suite in one report.
    Report(Common),
}

#[derive(Args)]
struct Common {
    /// TOML experiment file; defaults apply to everything it omits.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = ".")]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum, default_value = "json")]
    format: Format,
    /// Worker threads; all cores by default.
    #[arg(long)]
    jobs: Option<usize>,
}

fn load(common: &Common) -> Result<ExperimentConfig, HarnessError> {
    let mut cfg = match &common.config {
        Some(path) => ExperimentConfig::from_toml(&fs::read_to_string(path)?)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn execute(command: &Command) -> Result<Outcome, HarnessError> {
    let (common, run): (&Common, fn(&ExperimentConfig) -> Result<Outcome, HarnessError>) = match command {
        Command::VerifyFractional(c) => (c, run_verify_fractional),
        Command::VerifyBernstein(c) => (c, run_verify_bernstein),
        Command::VerifyPoly(c) => (c, run_verify_poly),
        Command::EnergyScan(c) => (c, run_energy_scan),
        Command::Diffusion(c) => (c, run_diffusion),
        Command::Report(c) => (c, run_all),
    };
    let cfg = load(common)?;
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = common.jobs {
        pool = pool.num_threads(n.max(1));
    }
    let pool = pool.build().map_err(|e| HarnessError::Config(e.to_string()))?;
    let outcome = pool.install(|| run(&cfg))?;
    let path = outcome.write(&common.out, common.format)?;
    if outcome.report.rows.is_empty() {
        eprintln!("warning: the report is empty");
    }
    for row in outcome.report.failures() {
        eprintln!("FAIL {} ({}): measured {} > tolerance {}", row.check, row.params, row.measured, row.tolerance);
    }
    for note in &outcome.report.notes {
        eprintln!("note: {note}");
    }
    eprintln!("{} checks written to {}", outcome.report.rows.len(), path.display());
    Ok(outcome)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match execute(&cli.command) {
        Ok(outcome) => outcome.exit_code(),
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    };
    ExitCode::from(u8::try_from(code).unwrap_or(EXIT_INTERNAL as u8))
}
