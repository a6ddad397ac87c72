//! Config-driven front end: thin pools, calibrate thresholds, run
//! benchmarks, emit CSV.
//!
//! File formats:
//! - Pool / stream files: CSV without header, one point per row, decimal
//!   coordinates; dimension inferred from the first row and enforced.
//! - Experiment config: TOML; unknown keys are an error.
//! - Bench output: one CSV row per (detector, target ARL) cell, written
//!   atomically (temp file + rename).

use crate::calibration::{
    calibrate_threshold, estimate_arl, estimate_edd, DetectorConfig, DetectorSpec, PoolMode,
};
use crate::datagen::DistributionSpec;
use crate::hotelling::HotellingConfig;
use crate::kcusum::KcusumConfig;
use crate::kernel::{median_heuristic, Kernel, KernelFamily, Point};
use crate::pool::{Provenance, SamplePool};
use crate::scanb::ScanBConfig;
use crate::thinning::{thin, ThinResult};
use crate::{seed, Error, Result};
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::Path;

const POOL_TAG: u64 = 0x706f_6f6c;
const CELL_TAG_BASE: u64 = 0x6365_0000;

// ---------------------------------------------------------------------------
// configuration schema

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentSection,
    pub kernel: KernelSection,
    pub pre_change: DistSection,
    pub post_change: DistSection,
    pub detectors: Vec<DetectorSection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSection {
    pub dimension: usize,
    pub pool_size: usize,
    /// Thinned-pool size m; defaults to pool_size / 4.
    pub thin_size: Option<usize>,
    pub trials: usize,
    /// Censoring horizon; defaults to 20x the largest target ARL.
    pub t_max: Option<usize>,
    pub target_arls: Vec<f64>,
    pub master_seed: u64,
    pub output: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelSection {
    pub family: KernelFamily,
    pub bandwidth: BandwidthSpec,
}

/// Either a fixed bandwidth or the string "median".
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BandwidthSpec {
    Value(f64),
    Named(String),
}

impl BandwidthSpec {
    /// Resolve against reference samples (median heuristic when requested).
    pub fn resolve(&self, reference: &[Point]) -> Result<f64> {
        match self {
            BandwidthSpec::Value(v) => Ok(*v),
            BandwidthSpec::Named(s) if s == "median" => median_heuristic(reference),
            BandwidthSpec::Named(s) => Err(Error::Input(format!(
                "unknown bandwidth '{s}' (expected a number or \"median\")"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DistSection {
    pub kind: DistKind,
    pub mu: Option<f64>,
    pub sigma: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistKind {
    GaussianStd,
    GaussianMixture,
    LaplaceIid,
}

impl DistSection {
    pub fn to_spec(&self, d: usize) -> Result<DistributionSpec> {
        let need = |name: &str, v: Option<f64>| {
            v.ok_or_else(|| Error::Input(format!("distribution {:?} requires '{name}'", self.kind)))
        };
        let spec = match self.kind {
            DistKind::GaussianStd => {
                if self.mu.is_some() || self.sigma.is_some() {
                    return Err(Error::Input(
                        "gaussian_std takes no mu/sigma parameters".into(),
                    ));
                }
                DistributionSpec::GaussianStd { d }
            }
            DistKind::GaussianMixture => DistributionSpec::GaussianMixture {
                d,
                mu: need("mu", self.mu)?,
                sigma: need("sigma", self.sigma)?,
            },
            DistKind::LaplaceIid => DistributionSpec::LaplaceIid {
                d,
                mu: need("mu", self.mu)?,
                sigma: need("sigma", self.sigma)?,
            },
        };
        spec.validate()?;
        Ok(spec)
    }
}

fn default_n_blocks() -> usize {
    15
}
fn default_block_size() -> usize {
    50
}
fn default_delta() -> f64 {
    crate::kcusum::DEFAULT_DELTA
}
fn default_window() -> usize {
    crate::hotelling::DEFAULT_WINDOW
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DetectorSection {
    Scanb {
        pool_mode: PoolMode,
        #[serde(default = "default_n_blocks")]
        n_blocks: usize,
        #[serde(default = "default_block_size")]
        block_size: usize,
    },
    Kcusum {
        pool_mode: PoolMode,
        #[serde(default = "default_delta")]
        delta: f64,
    },
    Hotelling {
        pool_mode: PoolMode,
        #[serde(default = "default_window")]
        window: usize,
        ridge: Option<f64>,
    },
}

impl DetectorSection {
    pub fn pool_mode(&self) -> PoolMode {
        match *self {
            DetectorSection::Scanb { pool_mode, .. } => pool_mode,
            DetectorSection::Kcusum { pool_mode, .. } => pool_mode,
            DetectorSection::Hotelling { pool_mode, .. } => pool_mode,
        }
    }

    pub fn to_spec(&self, kernel: Kernel) -> DetectorSpec {
        let config = match *self {
            DetectorSection::Scanb { n_blocks, block_size, .. } => DetectorConfig::ScanB(
                ScanBConfig { n_blocks, block_size, kernel, seed: 0 },
            ),
            DetectorSection::Kcusum { delta, .. } => {
                DetectorConfig::Kcusum(KcusumConfig { kernel, delta, seed: 0 })
            }
            DetectorSection::Hotelling { window, ridge, .. } => {
                DetectorConfig::Hotelling(HotellingConfig { window, ridge })
            }
        };
        DetectorSpec { config, pool_mode: self.pool_mode() }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| Error::Input(format!("config parse error: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Io(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn thin_size(&self) -> usize {
        self.experiment
            .thin_size
            .unwrap_or(self.experiment.pool_size / 4)
    }

    pub fn t_max(&self) -> usize {
        self.experiment.t_max.unwrap_or_else(|| {
            let max_arl = self
                .experiment
                .target_arls
                .iter()
                .cloned()
                .fold(0.0f64, f64::max);
            (20.0 * max_arl).ceil() as usize
        })
    }

    pub fn validate(&self) -> Result<()> {
        let e = &self.experiment;
        if e.dimension == 0 {
            return Err(Error::Input("dimension must be at least 1".into()));
        }
        if e.pool_size < 2 {
            return Err(Error::Input("pool_size must be at least 2".into()));
        }
        let m = self.thin_size();
        if m > e.pool_size || m < 2 {
            return Err(Error::Input(format!(
                "thin_size {m} must lie in [2, pool_size = {}]",
                e.pool_size
            )));
        }
        if e.trials == 0 {
            return Err(Error::Input("trials must be at least 1".into()));
        }
        if e.target_arls.is_empty() {
            return Err(Error::Input("target_arls must be nonempty".into()));
        }
        if e.target_arls.iter().any(|a| !(a.is_finite() && *a > 1.0)) {
            return Err(Error::Input("every target ARL must be finite and > 1".into()));
        }
        if self.detectors.is_empty() {
            return Err(Error::Input("at least one detector is required".into()));
        }
        self.pre_change.to_spec(e.dimension)?;
        self.post_change.to_spec(e.dimension)?;
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// pool / stream file I/O

pub fn read_points(path: &Path) -> Result<Vec<Point>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Io(format!("cannot read {}: {e}", path.display())))?;
    let mut points = Vec::new();
    let mut dim = None;
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let coords: Vec<f64> = line
            .split(',')
            .map(|f| {
                f.trim().parse::<f64>().map_err(|_| {
                    Error::Input(format!(
                        "{}:{}: '{}' is not a decimal real",
                        path.display(),
                        lineno + 1,
                        f.trim()
                    ))
                })
            })
            .collect::<Result<_>>()?;
        match dim {
            None => dim = Some(coords.len()),
            Some(d) if d != coords.len() => {
                return Err(Error::Input(format!(
                    "{}:{}: row has {} coordinates, expected {d}",
                    path.display(),
                    lineno + 1,
                    coords.len()
                )))
            }
            _ => {}
        }
        points.push(Point::new(coords));
    }
    if points.is_empty() {
        return Err(Error::Input(format!("{}: no data rows", path.display())));
    }
    Ok(points)
}

pub fn read_pool(path: &Path) -> Result<SamplePool> {
    SamplePool::raw(read_points(path)?)
}

fn format_point(p: &Point) -> String {
    p.coords()
        .iter()
        .map(|c| format!("{c:.17e}"))
        .collect::<Vec<_>>()
        .join(",")
}

/// Write a file atomically: temp file in the same directory, then rename.
pub fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    let mut tmp = tempfile::NamedTempFile::new_in(dir.unwrap_or(Path::new(".")))
        .map_err(|e| Error::Io(format!("cannot create temp file: {e}")))?;
    tmp.write_all(contents.as_bytes())
        .map_err(|e| Error::Io(format!("write failed: {e}")))?;
    tmp.persist(path)
        .map_err(|e| Error::Io(format!("cannot rename into {}: {e}", path.display())))?;
    Ok(())
}

pub fn write_points(path: &Path, points: &[Point]) -> Result<()> {
    let body: String = points
        .iter()
        .map(|p| format_point(p) + "\n")
        .collect();
    write_atomic(path, &body)
}

// ---------------------------------------------------------------------------
// subcommand: thin

#[derive(Debug)]
pub struct ThinOutcome {
    pub result: ThinResult,
    pub trace_path: std::path::PathBuf,
}

/// Thin a pool file to m points; writes the thinned pool to `out_file` and
/// a per-step trace CSV (step, chosen_index, objective) next to it.
pub fn cmd_thin(
    pool_file: &Path,
    m: usize,
    family: KernelFamily,
    bandwidth: &BandwidthSpec,
    out_file: &Path,
) -> Result<ThinOutcome> {
    let pool = read_pool(pool_file)?;
    if m > pool.len() {
        return Err(Error::Input(format!(
            "thin size m = {m} exceeds pool size M = {}",
            pool.len()
        )));
    }
    let gamma = bandwidth.resolve(pool.points())?;
    let kernel = Kernel::new(family, gamma)?;
    let result = thin(&kernel, &pool, m)?;
    let thinned = result.to_pool(&pool)?;
    write_points(out_file, thinned.points())?;

    let trace_path = out_file.with_extension("trace.csv");
    let mut trace = String::from("step,chosen_index,objective\n");
    for (i, (&idx, &obj)) in result
        .selected_indices
        .iter()
        .zip(&result.trace)
        .enumerate()
    {
        trace.push_str(&format!("{},{},{:.12e}\n", i + 1, idx, obj));
    }
    write_atomic(&trace_path, &trace)?;
    Ok(ThinOutcome { result, trace_path })
}

// ---------------------------------------------------------------------------
// subcommand: bench / calibrate

/// One (detector, target ARL) result row.
#[derive(Debug, Clone)]
pub struct BenchCell {
    pub detector: String,
    pub pool_mode: PoolMode,
    pub target_arl: f64,
    pub seed: u64,
    pub outcome: std::result::Result<BenchNumbers, String>,
}

#[derive(Debug, Clone, Copy)]
pub struct BenchNumbers {
    pub threshold: f64,
    pub arl_mean: f64,
    pub arl_stderr: f64,
    pub edd_mean: f64,
    pub edd_stderr: f64,
    pub censored: usize,
}

pub const BENCH_CSV_HEADER: &str =
    "detector,pool_mode,target_arl,b,arl_hat,arl_stderr,edd_hat,edd_stderr,censored,seed,error";

fn cell_csv_row(cell: &BenchCell) -> String {
    match &cell.outcome {
        Ok(n) => format!(
            "{},{},{},{:.9e},{:.6},{:.6},{:.6},{:.6},{},{},\n",
            cell.detector,
            cell.pool_mode,
            cell.target_arl,
            n.threshold,
            n.arl_mean,
            n.arl_stderr,
            n.edd_mean,
            n.edd_stderr,
            n.censored,
            cell.seed
        ),
        Err(msg) => format!(
            "{},{},{},NA,NA,NA,NA,NA,NA,{},{}\n",
            cell.detector,
            cell.pool_mode,
            cell.target_arl,
            cell.seed,
            msg.replace([',', '\n'], ";")
        ),
    }
}

/// Shared pools and kernel for a bench run.
struct BenchSetup {
    raw: SamplePool,
    thinned: Option<SamplePool>,
    kernel: Kernel,
}

fn bench_setup(config: &ExperimentConfig) -> Result<BenchSetup> {
    let e = &config.experiment;
    let pre = config.pre_change.to_spec(e.dimension)?;
    let pool_seed = seed::derive(e.master_seed, POOL_TAG);
    let raw_points = pre.sample(e.pool_size, pool_seed)?;
    let raw = SamplePool::new(raw_points, Provenance::Raw, Some(pool_seed))?;
    let gamma = config.kernel.bandwidth.resolve(raw.points())?;
    let kernel = Kernel::new(config.kernel.family, gamma)?;
    let thinned = if config
        .detectors
        .iter()
        .any(|d| d.pool_mode() == PoolMode::Thinned)
    {
        let result = thin(&kernel, &raw, config.thin_size())?;
        Some(result.to_pool(&raw)?)
    } else {
        None
    };
    Ok(BenchSetup { raw, thinned, kernel })
}

fn run_cells(config: &ExperimentConfig, with_edd: bool) -> Result<Vec<BenchCell>> {
    let e = &config.experiment;
    let setup = bench_setup(config)?;
    let null_sampler = config.pre_change.to_spec(e.dimension)?;
    let post_sampler = config.post_change.to_spec(e.dimension)?;
    let t_max = config.t_max();

    let mut cells = Vec::new();
    let mut cell_index = 0u64;
    for det in &config.detectors {
        let spec = det.to_spec(setup.kernel);
        let pool = match det.pool_mode() {
            PoolMode::Raw => &setup.raw,
            PoolMode::Thinned => setup.thinned.as_ref().expect("thinned pool prepared"),
        };
        for &target in &e.target_arls {
            let cell_seed = seed::derive(e.master_seed, CELL_TAG_BASE + cell_index);
            cell_index += 1;
            let outcome = (|| -> Result<BenchNumbers> {
                let b = calibrate_threshold(
                    &spec, pool, &null_sampler, target, e.trials, t_max,
                    seed::derive(cell_seed, 1),
                )?;
                let arl = estimate_arl(
                    &spec, pool, &null_sampler, b, e.trials, t_max,
                    seed::derive(cell_seed, 2),
                )?;
                let edd = if with_edd {
                    estimate_edd(
                        &spec, pool, &post_sampler, b, e.trials, t_max,
                        seed::derive(cell_seed, 3),
                    )?
                } else {
                    arl
                };
                Ok(BenchNumbers {
                    threshold: b,
                    arl_mean: arl.mean,
                    arl_stderr: arl.stderr,
                    edd_mean: edd.mean,
                    edd_stderr: edd.stderr,
                    censored: edd.censored,
                })
            })();
            cells.push(BenchCell {
                detector: spec.config.name().to_string(),
                pool_mode: det.pool_mode(),
                target_arl: target,
                seed: cell_seed,
                outcome: outcome.map_err(|err| err.to_string()),
            });
        }
    }
    Ok(cells)
}

pub fn bench_csv(cells: &[BenchCell]) -> String {
    let mut out = String::from(BENCH_CSV_HEADER);
    out.push('\n');
    for cell in cells {
        out.push_str(&cell_csv_row(cell));
    }
    out
}

fn print_summary(cells: &[BenchCell]) {
    println!(
        "{:<10} {:<8} {:>10} {:>12} {:>10} {:>10}",
        "detector", "pool", "target_arl", "threshold", "arl_hat", "edd_hat"
    );
    for c in cells {
        match &c.outcome {
            Ok(n) => println!(
                "{:<10} {:<8} {:>10} {:>12.4} {:>10.1} {:>10.2}",
                c.detector, c.pool_mode.to_string(), c.target_arl, n.threshold, n.arl_mean,
                n.edd_mean
            ),
            Err(msg) => println!(
                "{:<10} {:<8} {:>10} ERROR: {msg}",
                c.detector, c.pool_mode.to_string(), c.target_arl
            ),
        }
    }
}

/// For each (detector, pool mode, target ARL): calibrate a threshold on the
/// null, then estimate the detection delay on the post-change sampler.
/// Writes one CSV row per cell and a summary table to stdout.
pub fn cmd_bench(config: &ExperimentConfig) -> Result<Vec<BenchCell>> {
    let cells = run_cells(config, true)?;
    write_atomic(Path::new(&config.experiment.output), &bench_csv(&cells))?;
    print_summary(&cells);
    Ok(cells)
}

/// Calibration only: thresholds per cell, no EDD pass.
pub fn cmd_calibrate(config: &ExperimentConfig) -> Result<Vec<BenchCell>> {
    let cells = run_cells(config, false)?;
    println!(
        "{:<10} {:<8} {:>10} {:>12}",
        "detector", "pool", "target_arl", "threshold"
    );
    for c in &cells {
        match &c.outcome {
            Ok(n) => println!(
                "{:<10} {:<8} {:>10} {:>12.4}",
                c.detector, c.pool_mode.to_string(), c.target_arl, n.threshold
            ),
            Err(msg) => println!(
                "{:<10} {:<8} {:>10} ERROR: {msg}",
                c.detector, c.pool_mode.to_string(), c.target_arl
            ),
        }
    }
    Ok(cells)
}

// ---------------------------------------------------------------------------
// subcommand: run (single detector over a stream file)

pub struct RunArgs {
    pub detector: DetectorSection,
    pub kernel_family: KernelFamily,
    pub bandwidth: BandwidthSpec,
    pub threshold: f64,
    pub seed: u64,
    pub t_max: Option<usize>,
}

/// Run one detector over a provided stream file; returns the alarm time,
/// or t_max + 1 when no alarm fires.
pub fn cmd_run(pool_file: &Path, stream_file: &Path, args: &RunArgs) -> Result<usize> {
    let pool = read_pool(pool_file)?;
    let stream = read_points(stream_file)?;
    if stream[0].dim() != pool.dim() {
        return Err(Error::Input(format!(
            "stream dimension {} does not match pool dimension {}",
            stream[0].dim(),
            pool.dim()
        )));
    }
    let gamma = args.bandwidth.resolve(pool.points())?;
    let kernel = Kernel::new(args.kernel_family, gamma)?;
    let t_max = args.t_max.unwrap_or(stream.len());

    match args.detector.to_spec(kernel).config {
        DetectorConfig::ScanB(cfg) => {
            let cfg = ScanBConfig { seed: args.seed, ..cfg };
            let constants = crate::scanb::estimate_constants(
                &pool,
                &cfg,
                crate::calibration::DEFAULT_N_TUPLES,
            )?;
            crate::scanb::scanb_run(
                &pool, &cfg, &constants,
                stream.iter().cloned(),
                args.threshold, t_max,
            )
        }
        DetectorConfig::Kcusum(cfg) => {
            let cfg = KcusumConfig { seed: args.seed, ..cfg };
            crate::kcusum::kcusum_run(&pool, &cfg, stream.iter().cloned(), args.threshold, t_max)
        }
        DetectorConfig::Hotelling(cfg) => crate::hotelling::hotelling_run(
            &pool,
            &cfg,
            stream.iter().cloned(),
            args.threshold,
            t_max,
        ),
    }
}
