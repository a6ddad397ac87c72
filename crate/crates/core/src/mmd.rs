//! Unbiased MMD estimators over point collections.

use crate::kernel::{Kernel, Point};
use crate::{Error, Result};

/// Blocks at or above this size accumulate with Kahan compensation.
const KAHAN_THRESHOLD: usize = 1024;

struct Accum {
    sum: f64,
    comp: f64,
    kahan: bool,
}

impl Accum {
    fn new(kahan: bool) -> Self {
        Accum { sum: 0.0, comp: 0.0, kahan }
    }

    #[inline]
    fn add(&mut self, v: f64) {
        if self.kahan {
            let y = v - self.comp;
            let t = self.sum + y;
            self.comp = (t - self.sum) - y;
            self.sum = t;
        } else {
            self.sum += v;
        }
    }
}

fn check_block(name: &str, block: &[Point], min: usize, dim: usize) -> Result<()> {
    if block.len() < min {
        return Err(Error::Input(format!(
            "{name} must have at least {min} points, got {}",
            block.len()
        )));
    }
    if block.iter().any(|p| p.dim() != dim) {
        return Err(Error::Input(format!("{name} has inhomogeneous or mismatched dimension")));
    }
    Ok(())
}

/// The standard unbiased U-statistic MMD^2 estimator:
/// within-X off-diagonal mean + within-Y off-diagonal mean - 2 * cross mean.
pub fn mmd_u(k: &Kernel, x: &[Point], y: &[Point]) -> Result<f64> {
    if x.is_empty() || y.is_empty() {
        return Err(Error::Input("mmd_u: empty block".into()));
    }
    let d = x[0].dim();
    check_block("X", x, 2, d)?;
    check_block("Y", y, 2, d)?;
    let (m, n) = (x.len(), y.len());
    let kahan = m.max(n) > KAHAN_THRESHOLD;

    let mut xx = Accum::new(kahan);
    for i in 0..m {
        for j in 0..m {
            if i != j {
                xx.add(k.eval_unchecked(x[i].coords(), x[j].coords()));
            }
        }
    }
    let mut yy = Accum::new(kahan);
    for i in 0..n {
        for j in 0..n {
            if i != j {
                yy.add(k.eval_unchecked(y[i].coords(), y[j].coords()));
            }
        }
    }
    let mut xy = Accum::new(kahan);
    for xi in x {
        for yj in y {
            xy.add(k.eval_unchecked(xi.coords(), yj.coords()));
        }
    }
    Ok(xx.sum / (m * (m - 1)) as f64 + yy.sum / (n * (n - 1)) as f64
        - 2.0 * xy.sum / (m * n) as f64)
}

/// The equal-size paired estimator: mean over ordered pairs i != j of the
/// four-point h-statistic h(X_i, X_j, Y_i, Y_j). Pairs X_i with Y_i by
/// position; callers wanting pairing-free behavior must shuffle first.
pub fn mmd_s(k: &Kernel, x: &[Point], y: &[Point]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::Input(format!(
            "mmd_s needs equal block sizes, got {} and {}",
            x.len(),
            y.len()
        )));
    }
    if x.is_empty() {
        return Err(Error::Input("mmd_s: empty block".into()));
    }
    let d = x[0].dim();
    check_block("X", x, 2, d)?;
    check_block("Y", y, 2, d)?;
    let n = x.len();
    let mut acc = Accum::new(n > KAHAN_THRESHOLD);
    for i in 0..n {
        for j in 0..n {
            if i != j {
                acc.add(k.h_unchecked(
                    x[i].coords(),
                    x[j].coords(),
                    y[i].coords(),
                    y[j].coords(),
                ));
            }
        }
    }
    Ok(acc.sum / (n * (n - 1)) as f64)
}
