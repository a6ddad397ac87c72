//! Seeded samplers for the pre- and post-change distributions.

use crate::kernel::Point;
use crate::{seed, Error, Result};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

/// A stream distribution. The mixture picks the shifted component
/// N(mu*1, sigma^2 I) with probability 0.7 and N(0, I) otherwise; the
/// Laplace is i.i.d. per coordinate with location `mu` and scale `sigma`
/// (variance 2 sigma^2).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DistributionSpec {
    GaussianStd { d: usize },
    GaussianMixture { d: usize, mu: f64, sigma: f64 },
    LaplaceIid { d: usize, mu: f64, sigma: f64 },
}

/// Shifted-component weight of the Gaussian mixture.
pub const MIXTURE_SHIFT_WEIGHT: f64 = 0.7;

impl DistributionSpec {
    pub fn dim(&self) -> usize {
        match *self {
            DistributionSpec::GaussianStd { d } => d,
            DistributionSpec::GaussianMixture { d, .. } => d,
            DistributionSpec::LaplaceIid { d, .. } => d,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim() == 0 {
            return Err(Error::Input("distribution dimension must be at least 1".into()));
        }
        match *self {
            DistributionSpec::GaussianStd { .. } => Ok(()),
            DistributionSpec::GaussianMixture { sigma, mu, .. } => {
                if !(sigma > 0.0 && sigma.is_finite()) || !mu.is_finite() {
                    Err(Error::Input(format!("mixture needs finite mu and sigma > 0, got mu={mu} sigma={sigma}")))
                } else {
                    Ok(())
                }
            }
            DistributionSpec::LaplaceIid { sigma, mu, .. } => {
                if !(sigma > 0.0 && sigma.is_finite()) || !mu.is_finite() {
                    Err(Error::Input(format!("laplace needs finite mu and sigma > 0, got mu={mu} sigma={sigma}")))
                } else {
                    Ok(())
                }
            }
        }
    }

    /// One draw from the distribution.
    pub fn draw(&self, rng: &mut ChaCha8Rng) -> Point {
        match *self {
            DistributionSpec::GaussianStd { d } => {
                Point::new((0..d).map(|_| rng.sample(StandardNormal)).collect())
            }
            DistributionSpec::GaussianMixture { d, mu, sigma } => {
                let shifted = rng.random::<f64>() < MIXTURE_SHIFT_WEIGHT;
                Point::new(
                    (0..d)
                        .map(|_| {
                            let z: f64 = rng.sample(StandardNormal);
                            if shifted {
                                mu + sigma * z
                            } else {
                                z
                            }
                        })
                        .collect(),
                )
            }
            DistributionSpec::LaplaceIid { d, mu, sigma } => Point::new(
                (0..d)
                    .map(|_| {
                        // inverse CDF: u in (0,1), centered at 1/2
                        let u: f64 = rng.random::<f64>() - 0.5;
                        let mag = (1.0 - 2.0 * u.abs()).max(f64::MIN_POSITIVE).ln();
                        mu - sigma * u.signum() * mag
                    })
                    .collect(),
            ),
        }
    }

    /// n i.i.d. seeded draws.
    pub fn sample(&self, n: usize, seed_value: u64) -> Result<Vec<Point>> {
        self.validate()?;
        if n == 0 {
            return Err(Error::Input("sample size must be at least 1".into()));
        }
        let mut rng = seed::rng(seed_value, 0);
        Ok((0..n).map(|_| self.draw(&mut rng)).collect())
    }
}
