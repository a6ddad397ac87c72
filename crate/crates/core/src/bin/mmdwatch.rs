//! Command-line front end.
//!
//! Exit codes: 0 success, 2 config/input error, 3 numerical/calibration error.

use clap::{Args, Parser, Subcommand};
use mmdwatch::calibration::PoolMode;
use mmdwatch::cli::{
    cmd_bench, cmd_calibrate, cmd_run, cmd_thin, BandwidthSpec, DetectorSection, ExperimentConfig,
    RunArgs,
};
use mmdwatch::kernel::KernelFamily;
use mmdwatch::Error;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "mmdwatch", version, about = "Kernel-MMD sequential change-point detection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum FamilyArg {
    Rbf,
    Laplace,
}

impl From<FamilyArg> for KernelFamily {
    fn from(f: FamilyArg) -> Self {
        match f {
            FamilyArg::Rbf => KernelFamily::Rbf,
            FamilyArg::Laplace => KernelFamily::Laplace,
        }
    }
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum DetectorArg {
    Scanb,
    Kcusum,
    Hotelling,
}

fn parse_bandwidth(s: &str) -> Result<BandwidthSpec, String> {
    if s == "median" {
        Ok(BandwidthSpec::Named("median".into()))
    } else {
        s.parse::<f64>()
            .map(BandwidthSpec::Value)
            .map_err(|_| format!("'{s}' is neither a number nor \"median\""))
    }
}

#[derive(Args)]
struct Overrides {
    /// Master seed override
    #[arg(long)]
    seed: Option<u64>,
    /// Monte Carlo trials override
    #[arg(long)]
    trials: Option<usize>,
    /// Censoring horizon override
    #[arg(long = "t-max")]
    t_max: Option<usize>,
    /// Output CSV path override
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Overrides {
    fn apply(&self, cfg: &mut ExperimentConfig) {
        if let Some(s) = self.seed {
            cfg.experiment.master_seed = s;
        }
        if let Some(t) = self.trials {
            cfg.experiment.trials = t;
        }
        if let Some(t) = self.t_max {
            cfg.experiment.t_max = Some(t);
        }
        if let Some(o) = &self.out {
            cfg.experiment.output = o.display().to_string();
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Select the m-point subset of a pool minimizing kernel MMD to the pool
    Thin {
        /// Pool file (headerless CSV, one point per row)
        pool_file: PathBuf,
        /// Subset size
        #[arg(short, long)]
        m: usize,
        /// Kernel family
        #[arg(long, value_enum, default_value = "rbf")]
        kernel: FamilyArg,
        /// Bandwidth: a number or "median"
        #[arg(long, default_value = "median", value_parser = parse_bandwidth)]
        bandwidth: BandwidthSpec,
        /// Output pool file (a trace CSV is written next to it)
        #[arg(long)]
        out: PathBuf,
    },
    /// Calibrate thresholds to the configured target ARLs
    Calibrate {
        config_file: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Calibrate, then measure detection delay; emit one CSV row per cell
    Bench {
        config_file: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Run a single detector over a stream file and print the alarm time
    Run {
        /// Detector kind
        #[arg(long, value_enum)]
        detector: DetectorArg,
        /// History pool file
        #[arg(long)]
        pool: PathBuf,
        /// Stream file
        #[arg(long)]
        stream: PathBuf,
        /// Detection threshold b
        #[arg(long)]
        threshold: f64,
        #[arg(long, value_enum, default_value = "rbf")]
        kernel: FamilyArg,
        #[arg(long, default_value = "median", value_parser = parse_bandwidth)]
        bandwidth: BandwidthSpec,
        /// Scan-B reference blocks
        #[arg(long, default_value_t = 15)]
        n_blocks: usize,
        /// Scan-B block size
        #[arg(long, default_value_t = 50)]
        block_size: usize,
        /// KCUSUM drift
        #[arg(long, default_value_t = 0.02)]
        delta: f64,
        /// Hotelling scan window
        #[arg(long, default_value_t = 50)]
        window: usize,
        /// Hotelling covariance ridge (relative default when omitted)
        #[arg(long)]
        ridge: Option<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long = "t-max")]
        t_max: Option<usize>,
    },
}

fn run(cli: Cli) -> mmdwatch::Result<()> {
    match cli.command {
        Command::Thin { pool_file, m, kernel, bandwidth, out } => {
            let outcome = cmd_thin(&pool_file, m, kernel.into(), &bandwidth, &out)?;
            println!("objective {:.12e}", outcome.result.objective_value);
            Ok(())
        }
        Command::Calibrate { config_file, overrides } => {
            let mut cfg = ExperimentConfig::load(&config_file)?;
            overrides.apply(&mut cfg);
            cfg.validate()?;
            let cells = cmd_calibrate(&cfg)?;
            first_cell_error(&cells)
        }
        Command::Bench { config_file, overrides } => {
            let mut cfg = ExperimentConfig::load(&config_file)?;
            overrides.apply(&mut cfg);
            cfg.validate()?;
            let cells = cmd_bench(&cfg)?;
            first_cell_error(&cells)
        }
        Command::Run {
            detector, pool, stream, threshold, kernel, bandwidth,
            n_blocks, block_size, delta, window, ridge, seed, t_max,
        } => {
            let section = match detector {
                DetectorArg::Scanb => DetectorSection::Scanb {
                    pool_mode: PoolMode::Raw,
                    n_blocks,
                    block_size,
                },
                DetectorArg::Kcusum => DetectorSection::Kcusum {
                    pool_mode: PoolMode::Raw,
                    delta,
                },
                DetectorArg::Hotelling => DetectorSection::Hotelling {
                    pool_mode: PoolMode::Raw,
                    window,
                    ridge,
                },
            };
            let args = RunArgs {
                detector: section,
                kernel_family: kernel.into(),
                bandwidth,
                threshold,
                seed,
                t_max,
            };
            let horizon = {
                let stream_len = mmdwatch::cli::read_points(&stream)?.len();
                t_max.unwrap_or(stream_len)
            };
            let t = cmd_run(&pool, &stream, &args)?;
            if t > horizon {
                println!("no alarm within t_max = {horizon}");
            } else {
                println!("alarm at t = {t}");
            }
            Ok(())
        }
    }
}

/// A bench/calibrate run succeeds overall even if individual cells failed
/// (they are recorded in the CSV), but surface the first failure's class in
/// the exit code.
fn first_cell_error(cells: &[mmdwatch::cli::BenchCell]) -> mmdwatch::Result<()> {
    for c in cells {
        if let Err(msg) = &c.outcome {
            return Err(Error::Calibration(format!(
                "{} {} target {}: {msg}",
                c.detector, c.pool_mode, c.target_arl
            )));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Input(_) | Error::Io(_) => ExitCode::from(2),
                Error::Calibration(_)
                | Error::DegenerateBandwidth
                | Error::DegenerateCovariance { .. } => ExitCode::from(3),
            }
        }
    }
}
