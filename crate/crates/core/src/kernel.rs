//! Kernel functions, bandwidth selection, and the four-point h-statistic.

use crate::{seed, Error, Result};
use rand::seq::index;
use serde::{Deserialize, Serialize};

/// A d-dimensional observation.
#[derive(Debug, Clone, PartialEq)]
pub struct Point(pub Vec<f64>);

impl Point {
    pub fn new(coords: Vec<f64>) -> Self {
        Point(coords)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn coords(&self) -> &[f64] {
        &self.0
    }
}

/// Kernel family tag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelFamily {
    /// Gaussian RBF: k(x,y) = exp(-||x-y||^2 / gamma^2).
    Rbf,
    /// Laplace: k(x,y) = exp(-||x-y|| / gamma).
    Laplace,
}

/// A kernel family plus a positive bandwidth. Immutable after construction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Kernel {
    family: KernelFamily,
    bandwidth: f64,
}

impl Kernel {
    pub fn new(family: KernelFamily, bandwidth: f64) -> Result<Self> {
        if !(bandwidth > 0.0 && bandwidth.is_finite()) {
            return Err(Error::Input(format!(
                "kernel bandwidth must be positive and finite, got {bandwidth}"
            )));
        }
        Ok(Kernel { family, bandwidth })
    }

    pub fn family(&self) -> KernelFamily {
        self.family
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    /// Kernel value for two points of equal dimension. Hot path; dimension
    /// agreement is the caller's responsibility (checked in debug builds).
    #[inline]
    pub fn eval_unchecked(&self, x: &[f64], y: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), y.len());
        let mut sq = 0.0;
        for (a, b) in x.iter().zip(y) {
            let d = a - b;
            sq += d * d;
        }
        match self.family {
            KernelFamily::Rbf => (-sq / (self.bandwidth * self.bandwidth)).exp(),
            KernelFamily::Laplace => (-sq.sqrt() / self.bandwidth).exp(),
        }
    }

    /// Checked kernel evaluation; value lies in (0, 1], exactly 1 when x = y.
    pub fn eval(&self, x: &Point, y: &Point) -> Result<f64> {
        if x.dim() != y.dim() {
            return Err(Error::Input(format!(
                "dimension mismatch: {} vs {}",
                x.dim(),
                y.dim()
            )));
        }
        Ok(self.eval_unchecked(x.coords(), y.coords()))
    }

    /// The four-point statistic
    /// h = k(xi,xj) + k(yi,yj) - k(xi,yj) - k(xj,yi), in [-2, 2].
    ///
    /// Mean zero when both pairs are drawn from the same distribution;
    /// repeated points are allowed, index constraints are the caller's.
    pub fn h_stat(&self, xi: &Point, xj: &Point, yi: &Point, yj: &Point) -> Result<f64> {
        let d = xi.dim();
        if xj.dim() != d || yi.dim() != d || yj.dim() != d {
            return Err(Error::Input("dimension mismatch in h_stat".into()));
        }
        Ok(self.h_unchecked(xi.coords(), xj.coords(), yi.coords(), yj.coords()))
    }

    #[inline]
    pub fn h_unchecked(&self, xi: &[f64], xj: &[f64], yi: &[f64], yj: &[f64]) -> f64 {
        self.eval_unchecked(xi, xj) + self.eval_unchecked(yi, yj)
            - self.eval_unchecked(xi, yj)
            - self.eval_unchecked(xj, yi)
    }
}

/// Exact pairwise medians get expensive past this pool size; larger pools
/// use a seeded subset of this many points.
const MEDIAN_EXACT_LIMIT: usize = 2000;
const MEDIAN_SUBSET_TAG: u64 = 0x6d65_6469; // "medi"

/// Median of all pairwise l2 distances; the usual bandwidth choice for both
/// kernel families. For even pair counts, the mean of the two middle order
/// statistics. Pools beyond 2,000 points are subsampled with a fixed seed,
/// so the result is still deterministic for a fixed input.
pub fn median_heuristic(points: &[Point]) -> Result<f64> {
    if points.len() < 2 {
        return Err(Error::Input(format!(
            "median heuristic needs at least 2 points, got {}",
            points.len()
        )));
    }
    let d = points[0].dim();
    if points.iter().any(|p| p.dim() != d) {
        return Err(Error::Input("median heuristic: inhomogeneous dimensions".into()));
    }

    let subset: Vec<&Point> = if points.len() > MEDIAN_EXACT_LIMIT {
        let mut rng = seed::rng(0, MEDIAN_SUBSET_TAG);
        let mut idx: Vec<usize> =
            index::sample(&mut rng, points.len(), MEDIAN_EXACT_LIMIT).into_vec();
        idx.sort_unstable();
        idx.into_iter().map(|i| &points[i]).collect()
    } else {
        points.iter().collect()
    };

    let n = subset.len();
    let mut dists = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in (i + 1)..n {
            let sq: f64 = subset[i]
                .coords()
                .iter()
                .zip(subset[j].coords())
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            dists.push(sq.sqrt());
        }
    }
    dists.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let m = dists.len();
    let median = if m % 2 == 1 {
        dists[m / 2]
    } else {
        0.5 * (dists[m / 2 - 1] + dists[m / 2])
    };
    if median <= 0.0 {
        return Err(Error::DegenerateBandwidth);
    }
    Ok(median)
}
