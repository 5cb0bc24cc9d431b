//! Command-line front end: configuration, subcommands and report files.

pub mod commands;
pub mod config;
pub mod error;
pub mod report;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use config::{MagSource, RunConfig};
pub use error::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(
    name = "gyromag",
    version,
    about = "Magnetometer-aided gyroscope calibration"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic log and its truth sidecar.
    Simulate(CommonArgs),
    /// Fit magnetometer intrinsics from a log.
    CalibrateMag(CommonArgs),
    /// Estimate gyro parameters from a log.
    CalibrateGyro(CommonArgs),
    /// Magnetometer fit followed by gyro calibration.
    Calibrate(CommonArgs),
    /// Dead-reckoning drift and, with a truth sidecar, parameter errors.
    Evaluate(CommonArgs),
    /// Repeated simulate and calibrate runs with summary statistics.
    MonteCarlo(CommonArgs),
    /// Simulate, calibrate and evaluate.
    Pipeline(CommonArgs),
}

#[derive(Debug, Args, Default)]
pub struct CommonArgs {
    /// TOML configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Monte Carlo run count.
    #[arg(long)]
    pub runs: Option<usize>,
    /// Output directory.
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Input log (CSV).
    #[arg(long)]
    pub log: Option<PathBuf>,
    /// Truth sidecar (JSON).
    #[arg(long)]
    pub truth: Option<PathBuf>,
    /// Calibration artifact (JSON).
    #[arg(long)]
    pub calibration: Option<PathBuf>,
    /// Magnetometer calibration (JSON).
    #[arg(long)]
    pub magcal: Option<PathBuf>,
    /// fit, file, truth or identity.
    #[arg(long, value_parser = parse_mag_source)]
    pub mag_source: Option<MagSource>,
}

fn parse_mag_source(s: &str) -> Result<MagSource, String> {
    match s {
        "fit" => Ok(MagSource::Fit),
        "file" => Ok(MagSource::File),
        "truth" => Ok(MagSource::Truth),
        "identity" => Ok(MagSource::Identity),
        _ => Err(format!(
            "unknown magnetometer source `{s}` (fit, file, truth, identity)"
        )),
    }
}

impl CommonArgs {
    /// Configuration file (or defaults) with command-line overrides applied.
    pub fn resolve(&self) -> CliResult<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.runs {
            cfg.runs = v;
        }
        if let Some(v) = &self.output {
            cfg.output = v.clone();
        }
        if let Some(v) = &self.log {
            cfg.log = Some(v.clone());
        }
        if let Some(v) = &self.truth {
            cfg.truth_file = Some(v.clone());
        }
        if let Some(v) = &self.calibration {
            cfg.calibration_file = Some(v.clone());
        }
        if let Some(v) = &self.magcal {
            cfg.magcal_file = Some(v.clone());
        }
        if let Some(v) = self.mag_source {
            cfg.mag_source = Some(v);
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

type CommandFn = fn(&RunConfig) -> CliResult<Vec<PathBuf>>;

pub fn run(cli: &Cli) -> CliResult<Vec<PathBuf>> {
    let (args, f): (&CommonArgs, CommandFn) = match &cli.command {
        Command::Simulate(a) => (a, commands::simulate),
        Command::CalibrateMag(a) => (a, commands::calibrate_mag),
        Command::CalibrateGyro(a) => (a, commands::calibrate_gyro),
        Command::Calibrate(a) => (a, commands::calibrate),
        Command::Evaluate(a) => (a, commands::evaluate),
        Command::MonteCarlo(a) => (a, commands::run_monte_carlo),
        Command::Pipeline(a) => (a, commands::pipeline),
    };
    f(&args.resolve()?)
}

/// Parses `args`, runs the command and returns the process exit status.
/// Errors go to stderr as a single `error[category]: message` line.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(&cli) {
        Ok(paths) => {
            for p in paths {
                println!("{}", p.display());
            }
            0
        }
        Err(e) => {
            eprintln!("error[{}]: {e}", e.category());
            e.exit_code()
        }
    }
}
