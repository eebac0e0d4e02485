//! `axsym`: fit, emulate, simulate and diagnose axially symmetric space-time
//! ensembles from the command line.

mod commands;

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use axsym::ErrorClass;
use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "axsym", version, about = "Space-time emulation of climate-model ensembles")]
struct Cli {
    /// Worker threads for all internal parallelism (default: available cores).
    #[arg(long, global = true, env = "AXSYM_WORKERS", value_parser = clap::value_parser!(u16).range(1..))]
    workers: Option<u16>,

    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct OptimizerArgs {
    /// Maximum objective evaluations per simplex search.
    #[arg(long, default_value_t = 2000)]
    max_evals: usize,
    /// Convergence tolerance on the spread of normalized log-likelihoods.
    #[arg(long, default_value_t = 1e-6)]
    ftol: f64,
    /// Convergence tolerance on the simplex diameter in transformed coordinates.
    #[arg(long, default_value_t = 1e-5)]
    xtol: f64,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Stage one: fit the spectrum of every latitude band.
    FitBands {
        #[arg(long)]
        data: PathBuf,
        /// Control run used to standardize the data first.
        #[arg(long)]
        control: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        optimizer: OptimizerArgs,
        /// Compare each band's fitted log-likelihood with the dense route.
        #[arg(long)]
        dense_check: bool,
    },
    /// Stage two: fit coherence and AR coefficients with band spectra fixed.
    FitGlobal {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        control: Option<PathBuf>,
        /// Output of fit-bands.
        #[arg(long)]
        bands: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        optimizer: OptimizerArgs,
        #[arg(long)]
        dense_check: bool,
    },
    /// Fit the CO2-driven mean model under fixed covariance parameters.
    FitMean {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        control: PathBuf,
        /// Covariance parameters (bare or inside a fit report).
        #[arg(long)]
        params: PathBuf,
        /// Region map CSV (lat_index, lon_index, region_id); default 6 x 8 blocks.
        #[arg(long)]
        regions: Option<PathBuf>,
        /// CO2 series JSON; default is the series stored with the data.
        #[arg(long)]
        forcing: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Also report standard errors of the per-pixel coefficients.
        #[arg(long)]
        pixel_sds: bool,
    },
    /// Emulated mean trajectory for a new CO2 scenario.
    Emulate {
        #[arg(long)]
        mean: PathBuf,
        #[arg(long)]
        forcing: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Draw an ensemble from a simulation spec.
    Simulate {
        #[arg(long)]
        spec: PathBuf,
        /// Overrides the seed stored in the spec.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a complete synthetic train / control / held-out dataset.
    GenSynthetic {
        #[arg(long, default_value = "tiny")]
        preset: String,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Contrast-variance diagnostics and, optionally, the lack-of-fit index.
    Diagnose {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        params: PathBuf,
        #[arg(long)]
        control: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Emulated mean (from `emulate`) to score against the data.
        #[arg(long, requires = "index_out")]
        emulated: Option<PathBuf>,
        #[arg(long, requires = "emulated")]
        index_out: Option<PathBuf>,
        /// Per-band periodograms (empirical and model) as CSV.
        #[arg(long)]
        periodogram_out: Option<PathBuf>,
    },
    /// Restricted log-likelihood and the independent-pixel baseline.
    Loglik {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        params: PathBuf,
        #[arg(long)]
        control: Option<PathBuf>,
        #[arg(long)]
        dense_check: bool,
    },
    /// Time the likelihood routes over a list of sizes.
    Benchmark {
        /// JSON list of {"m", "n", "t", "r"} objects.
        #[arg(long)]
        sizes: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 3)]
        reps: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
}

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new()
        .filter_level(level)
        .parse_env("AXSYM_LOG")
        .format(|buf, record| writeln!(buf, "level={} target={} {}", record.level(), record.target(), record.args()))
        .init();
}

fn exit_code(e: &axsym::Error) -> u8 {
    match e.class() {
        ErrorClass::Data => 2,
        ErrorClass::Numerical => 3,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    init_logging(cli.verbose);
    if let Some(k) = cli.workers {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(k as usize).build_global() {
            log::warn!("event=thread_pool_error message=\"{e}\"");
        }
    }
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let code = exit_code(&e);
            log::error!("event=failed exit={code} message=\"{e}\"");
            eprintln!("error: {e}");
            ExitCode::from(code)
        }
    }
}
