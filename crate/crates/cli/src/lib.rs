//! Argument handling for the `bansim` binary.

use std::ffi::OsString;
use std::path::PathBuf;

use bansim_core::harness::{run_experiment, Experiment, ScenarioConfig};
use bansim_core::{Error, Seed};
use clap::Parser;

/// Run a bansim experiment and write its CSV and SVG outputs.
#[derive(Debug, Parser)]
#[command(name = "bansim", version, about)]
pub struct Args {
    /// ber_sweep, channel_stats, doa_hist, cma_convergence, mud_compare,
    /// la_sim or broadcast_sim
    pub experiment: String,

    /// Scenario file
    #[arg(long)]
    pub config: PathBuf,

    /// Overrides the seed in the scenario file
    #[arg(long)]
    pub seed: Option<u64>,

    /// Output directory
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

pub const EXIT_OK: u8 = 0;
pub const EXIT_FAILURE: u8 = 1;
pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_DIVERGENCE: u8 = 3;

pub fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Config { .. } | Error::MissingKey { .. } | Error::InvalidParameter(_) | Error::InvalidTree(_) => {
            EXIT_CONFIG
        }
        Error::Divergence { .. } => EXIT_DIVERGENCE,
        _ => EXIT_FAILURE,
    }
}

/// Runs the experiment and returns the files written.
pub fn execute(args: &Args) -> Result<Vec<PathBuf>, Error> {
    let experiment: Experiment = args.experiment.parse()?;
    let scenario = ScenarioConfig::load(&args.config, Some(experiment), args.seed.map(Seed), &args.out)?;
    run_experiment(&scenario)?.write_to(&scenario.output_dir)
}

/// Full command line in, exit code out. Written paths go to stdout and
/// errors to stderr.
pub fn run<I, T>(argv: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args = match Args::try_parse_from(argv) {
        Ok(a) => a,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    match execute(&args) {
        Ok(paths) => {
            for p in paths {
                println!("{}", p.display());
            }
            EXIT_OK
        }
        Err(err) => {
            eprintln!("bansim: {err}");
            exit_code(&err)
        }
    }
}
