//! Kernel CUSUM detector: a zero-floored random walk driven by four-point
//! h-statistics with negative drift delta.

use crate::kernel::{Kernel, Point};
use crate::pool::SamplePool;
use crate::{seed, Error, Result};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

const DRAWS_TAG: u64 = 0x6b63_7573;

#[derive(Debug, Clone, Copy)]
pub struct KcusumConfig {
    pub kernel: Kernel,
    /// Drift delta > 0; keeps the null expectation of each increment negative.
    pub delta: f64,
    pub seed: u64,
}

/// The default drift from the original procedure, 1/50.
pub const DEFAULT_DELTA: f64 = 1.0 / 50.0;

impl KcusumConfig {
    fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0 && self.delta.is_finite()) {
            return Err(Error::Input(format!(
                "kcusum drift delta must be positive, got {}",
                self.delta
            )));
        }
        Ok(())
    }
}

/// Mutable per-stream state. One reference point is drawn per step (with
/// replacement); odd steps stash their (reference, observation) pair and the
/// statistic only changes at even steps.
#[derive(Debug, Clone)]
pub struct KcusumState {
    kernel: Kernel,
    delta: f64,
    s: f64,
    t: usize,
    pending: Option<(Point, Point)>,
    rng: ChaCha8Rng,
}

pub fn kcusum_init(cfg: &KcusumConfig) -> Result<KcusumState> {
    cfg.validate()?;
    Ok(KcusumState {
        kernel: cfg.kernel,
        delta: cfg.delta,
        s: 0.0,
        t: 0,
        pending: None,
        rng: seed::rng(cfg.seed, DRAWS_TAG),
    })
}

impl KcusumState {
    pub fn t(&self) -> usize {
        self.t
    }

    pub fn statistic(&self) -> f64 {
        self.s
    }

    /// Push the next stream point and return the current statistic S_t.
    ///
    /// Odd t: draws the reference x^(t), stores the pair, S unchanged.
    /// Even t: S <- max(0, S + h(x^(t-1), x^(t), y_{t-1}, y_t) - delta).
    pub fn step(&mut self, pool: &SamplePool, y: &Point) -> Result<f64> {
        if y.dim() != pool.dim() {
            return Err(Error::Input(format!(
                "stream point dimension {} does not match pool dimension {}",
                y.dim(),
                pool.dim()
            )));
        }
        self.t += 1;
        let x = pool.points()[self.rng.random_range(0..pool.len())].clone();
        if self.t % 2 == 1 {
            self.pending = Some((x, y.clone()));
        } else {
            let (x_prev, y_prev) = self.pending.take().expect("odd step stored a pair");
            let h = self.kernel.h_unchecked(
                x_prev.coords(),
                x.coords(),
                y_prev.coords(),
                y.coords(),
            );
            self.s = (self.s + h - self.delta).max(0.0);
        }
        Ok(self.s)
    }
}

/// First t in [1, t_max] with S_t > b (strict), else t_max + 1.
pub fn kcusum_run(
    pool: &SamplePool,
    cfg: &KcusumConfig,
    stream: impl IntoIterator<Item = Point>,
    threshold: f64,
    t_max: usize,
) -> Result<usize> {
    let mut state = kcusum_init(cfg)?;
    for (i, y) in stream.into_iter().enumerate() {
        let t = i + 1;
        if t > t_max {
            break;
        }
        let s = state.step(pool, &y)?;
        if s > threshold {
            return Ok(t);
        }
    }
    Ok(t_max + 1)
}
