//! Parametric baseline: Hotelling's T-squared scan over hypothetical
//! change-points with a pooled covariance estimate.

use crate::kernel::Point;
use crate::pool::SamplePool;
use crate::{Error, Result};
use std::collections::VecDeque;

/// Relative ridge applied when no explicit ridge is configured:
/// eps = 1e-8 * trace(Sigma) / d. Early steps have few post-change points
/// and a near-singular pooled covariance in high dimension.
pub const RELATIVE_RIDGE: f64 = 1e-8;

#[derive(Debug, Clone, Copy)]
pub struct HotellingConfig {
    /// Max lookback for the candidate change-point r: the scan covers
    /// r in [max(1, t-W+1), t-1].
    pub window: usize,
    /// Absolute covariance ridge; `None` uses the relative default.
    pub ridge: Option<f64>,
}

pub const DEFAULT_WINDOW: usize = 50;

impl HotellingConfig {
    fn validate(&self) -> Result<()> {
        if self.window < 2 {
            return Err(Error::Input("hotelling window must be at least 2".into()));
        }
        if let Some(e) = self.ridge {
            if !(e >= 0.0 && e.is_finite()) {
                return Err(Error::Input(format!("hotelling ridge must be >= 0, got {e}")));
            }
        }
        Ok(())
    }
}

/// Cholesky factorization of a symmetric matrix, reporting the smallest
/// pivot on failure. `a` is d x d row-major and is consumed.
fn cholesky(mut a: Vec<f64>, d: usize) -> std::result::Result<Vec<f64>, f64> {
    let mut min_pivot = f64::INFINITY;
    for j in 0..d {
        let mut pivot = a[j * d + j];
        for k in 0..j {
            pivot -= a[j * d + k] * a[j * d + k];
        }
        min_pivot = min_pivot.min(pivot);
        if pivot <= 0.0 {
            return Err(min_pivot);
        }
        let ljj = pivot.sqrt();
        a[j * d + j] = ljj;
        for i in (j + 1)..d {
            let mut v = a[i * d + j];
            for k in 0..j {
                v -= a[i * d + k] * a[j * d + k];
            }
            a[i * d + j] = v / ljj;
        }
    }
    Ok(a)
}

/// Quadratic form x^T A^{-1} x given the Cholesky factor L of A:
/// solve L z = x, then the form is ||z||^2.
fn inv_quadratic_form(l: &[f64], d: usize, x: &[f64]) -> f64 {
    let mut z = vec![0.0; d];
    for i in 0..d {
        let mut v = x[i];
        for k in 0..i {
            v -= l[i * d + k] * z[k];
        }
        z[i] = v / l[i * d + i];
    }
    z.iter().map(|v| v * v).sum()
}

/// Sufficient statistics of a set of points: count, coordinate sums, and
/// the raw second-moment matrix (sum of x x^T).
#[derive(Debug, Clone)]
struct Stats {
    n: usize,
    sum: Vec<f64>,
    ss: Vec<f64>,
}

impl Stats {
    fn zero(d: usize) -> Self {
        Stats { n: 0, sum: vec![0.0; d], ss: vec![0.0; d * d] }
    }

    fn from_points(points: &[Point], d: usize) -> Self {
        let mut s = Stats::zero(d);
        for p in points {
            s.push(p.coords());
        }
        s
    }

    fn push(&mut self, x: &[f64]) {
        let d = self.sum.len();
        self.n += 1;
        for i in 0..d {
            self.sum[i] += x[i];
            for j in 0..d {
                self.ss[i * d + j] += x[i] * x[j];
            }
        }
    }

    fn plus(&self, other: &Stats) -> Stats {
        Stats {
            n: self.n + other.n,
            sum: self.sum.iter().zip(&other.sum).map(|(a, b)| a + b).collect(),
            ss: self.ss.iter().zip(&other.ss).map(|(a, b)| a + b).collect(),
        }
    }

    fn minus(&self, other: &Stats) -> Stats {
        Stats {
            n: self.n - other.n,
            sum: self.sum.iter().zip(&other.sum).map(|(a, b)| a - b).collect(),
            ss: self.ss.iter().zip(&other.ss).map(|(a, b)| a - b).collect(),
        }
    }

    /// Centered scatter: ss - n * mean mean^T, via ss[i][j] - sum[i]sum[j]/n.
    fn scatter(&self, d: usize) -> Vec<f64> {
        let n = self.n as f64;
        let mut out = vec![0.0; d * d];
        for i in 0..d {
            for j in 0..d {
                out[i * d + j] = self.ss[i * d + j] - self.sum[i] * self.sum[j] / n;
            }
        }
        out
    }
}

fn ht2_from_stats(u: &Stats, v: &Stats, d: usize, eps: Option<f64>) -> Result<f64> {
    let (nu, nv) = (u.n as f64, v.n as f64);
    let denom = nu + nv - 2.0;
    let su = u.scatter(d);
    let sv = v.scatter(d);
    let mut sigma = vec![0.0; d * d];
    for i in 0..d * d {
        sigma[i] = (su[i] + sv[i]) / denom;
    }
    let eps = eps.unwrap_or_else(|| {
        let trace: f64 = (0..d).map(|i| sigma[i * d + i]).sum();
        RELATIVE_RIDGE * trace / d as f64
    });
    for i in 0..d {
        sigma[i * d + i] += eps;
    }
    let l = cholesky(sigma, d).map_err(|pivot| Error::DegenerateCovariance { pivot })?;
    let diff: Vec<f64> = (0..d).map(|i| u.sum[i] / nu - v.sum[i] / nv).collect();
    Ok(nu * nv / (nu + nv) * inv_quadratic_form(&l, d, &diff))
}

/// Hotelling's two-sample T-squared with pooled covariance and ridge eps:
/// (|U||V|/(|U|+|V|)) (Ubar - Vbar)^T (Sigma + eps I)^{-1} (Ubar - Vbar),
/// where Sigma is the pooled scatter over (|U|+|V|-2).
pub fn ht2(u: &[Point], v: &[Point], eps: f64) -> Result<f64> {
    if u.is_empty() || v.is_empty() {
        return Err(Error::Input("ht2: empty block".into()));
    }
    if u.len() + v.len() < 3 {
        return Err(Error::Input("ht2 needs |U| + |V| >= 3 for the pooled covariance".into()));
    }
    let d = u[0].dim();
    if u.iter().chain(v).any(|p| p.dim() != d) {
        return Err(Error::Input("ht2: mismatched dimensions".into()));
    }
    if !(eps >= 0.0 && eps.is_finite()) {
        return Err(Error::Input(format!("ht2 ridge must be >= 0, got {eps}")));
    }
    ht2_from_stats(
        &Stats::from_points(u, d),
        &Stats::from_points(v, d),
        d,
        Some(eps),
    )
}

/// Mutable scan state. Keeps the fixed history sufficient statistics plus a
/// ring of stream prefix statistics covering the candidate window, so each
/// step assembles every candidate split in O(d^2) without touching raw
/// points again.
#[derive(Debug, Clone)]
pub struct HotellingState {
    cfg: HotellingConfig,
    dim: usize,
    hist: Stats,
    /// prefix statistics of the stream; front covers index t - window,
    /// back is the full stream (index t)
    prefixes: VecDeque<Stats>,
    /// stream index of the front prefix
    front_index: usize,
    t: usize,
    degenerate_skips: usize,
}

pub fn hotelling_init(pool: &SamplePool, cfg: &HotellingConfig) -> Result<HotellingState> {
    cfg.validate()?;
    let d = pool.dim();
    let mut prefixes = VecDeque::new();
    prefixes.push_back(Stats::zero(d));
    Ok(HotellingState {
        cfg: *cfg,
        dim: d,
        hist: Stats::from_points(pool.points(), d),
        prefixes,
        front_index: 0,
        t: 0,
        degenerate_skips: 0,
    })
}

impl HotellingState {
    pub fn t(&self) -> usize {
        self.t
    }

    /// Candidates skipped so far because the regularized covariance was
    /// numerically singular.
    pub fn degenerate_skips(&self) -> usize {
        self.degenerate_skips
    }

    /// Number of candidate change-points scanned at the current t.
    pub fn candidate_count(&self) -> usize {
        if self.t < 2 {
            0
        } else {
            (self.t - 1).min(self.cfg.window)
        }
    }

    fn prefix(&self, index: usize) -> &Stats {
        &self.prefixes[index - self.front_index]
    }

    /// Push the next stream point; once t >= 2, returns
    /// S_t = max over r in [max(1, t-W+1), t-1] of HT^2_t(r), where
    /// U(r) = history + stream[..r-1] and V(r) = stream[r-1..t].
    pub fn step(&mut self, y: &Point) -> Result<Option<f64>> {
        if y.dim() != self.dim {
            return Err(Error::Input(format!(
                "stream point dimension {} does not match pool dimension {}",
                y.dim(),
                self.dim
            )));
        }
        self.t += 1;
        let mut next = self.prefixes.back().unwrap().clone();
        next.push(y.coords());
        self.prefixes.push_back(next);
        // candidate r needs prefix r-1 >= t - window
        while self.front_index < self.t.saturating_sub(self.cfg.window) {
            self.prefixes.pop_front();
            self.front_index += 1;
        }

        if self.t < 2 {
            return Ok(None);
        }
        let total = self.prefixes.back().unwrap().clone();
        let r_lo = 1.max(self.t.saturating_sub(self.cfg.window - 1));
        let mut best = f64::NEG_INFINITY;
        for r in r_lo..self.t {
            let pre = self.prefix(r - 1);
            let u = self.hist.plus(pre);
            let v = total.minus(pre);
            match ht2_from_stats(&u, &v, self.dim, self.cfg.ridge) {
                Ok(stat) => best = best.max(stat),
                Err(Error::DegenerateCovariance { .. }) => self.degenerate_skips += 1,
                Err(e) => return Err(e),
            }
        }
        if best == f64::NEG_INFINITY {
            // every candidate degenerate; report a floor rather than aborting
            return Ok(Some(0.0));
        }
        Ok(Some(best))
    }
}

/// First t in [2, t_max] with S_t^H > b (strict), else t_max + 1.
pub fn hotelling_run(
    pool: &SamplePool,
    cfg: &HotellingConfig,
    stream: impl IntoIterator<Item = Point>,
    threshold: f64,
    t_max: usize,
) -> Result<usize> {
    let mut state = hotelling_init(pool, cfg)?;
    for (i, y) in stream.into_iter().enumerate() {
        let t = i + 1;
        if t > t_max {
            break;
        }
        if let Some(s) = state.step(&y)? {
            if s > threshold {
                return Ok(t);
            }
        }
    }
    Ok(t_max + 1)
}
