//! Sequential change-point detection with kernel maximum mean discrepancy.
//!
//! The library monitors a stream of d-dimensional observations for a change
//! in distribution, given a pool of pre-change history samples. Three
//! detectors are provided:
//!
//! - [`scanb`]: the Scan-B statistic, averaging paired MMD estimates between
//!   N fixed reference blocks and the sliding last-B window of the stream.
//! - [`kcusum`]: a kernel CUSUM, a zero-floored random walk driven by
//!   four-point h-statistics with a negative drift.
//! - [`hotelling`]: a parametric Hotelling T-squared scan over hypothetical
//!   change-points, as a baseline.
//!
//! Before detection, the history pool can be compressed with [`thinning`]:
//! a greedy herding selection of the m-point subset that minimizes the
//! kernel MMD to the full pool. Thresholds are calibrated by Monte Carlo
//! simulation to a target average run length in [`calibration`], and
//! detection power is measured as expected detection delay.

pub mod calibration;
pub mod cli;
pub mod datagen;
pub mod hotelling;
pub mod kcusum;
pub mod kernel;
pub mod mmd;
pub mod pool;
pub mod scanb;
pub mod seed;
pub mod thinning;

pub use kernel::{Kernel, KernelFamily, Point};
pub use pool::{Provenance, SamplePool};

/// Library-wide error type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A precondition on inputs was violated (dimensions, sizes, parameters).
    #[error("invalid input: {0}")]
    Input(String),
    /// All pairwise distances are zero; no usable bandwidth exists.
    #[error("degenerate bandwidth: median pairwise distance is zero")]
    DegenerateBandwidth,
    /// The regularized pooled covariance is numerically singular.
    #[error("degenerate covariance: smallest Cholesky pivot {pivot:.6e}")]
    DegenerateCovariance { pivot: f64 },
    /// Threshold calibration or constant estimation failed.
    #[error("calibration failed: {0}")]
    Calibration(String),
    /// File or parse problem on an external artifact.
    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
