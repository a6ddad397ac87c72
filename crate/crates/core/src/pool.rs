//! History sample pools.

use crate::kernel::Point;
use crate::{Error, Result};

/// Whether a pool holds the raw history or a thinned subset of it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    Raw,
    Thinned,
}

/// An ordered collection of d-dimensional history observations.
#[derive(Debug, Clone)]
pub struct SamplePool {
    points: Vec<Point>,
    provenance: Provenance,
    source_seed: Option<u64>,
}

impl SamplePool {
    pub fn new(points: Vec<Point>, provenance: Provenance, source_seed: Option<u64>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::Input("pool must be nonempty".into()));
        }
        let d = points[0].dim();
        if d == 0 {
            return Err(Error::Input("pool dimension must be at least 1".into()));
        }
        for (i, p) in points.iter().enumerate() {
            if p.dim() != d {
                return Err(Error::Input(format!(
                    "pool point {i} has dimension {} but pool dimension is {d}",
                    p.dim()
                )));
            }
            if p.coords().iter().any(|c| !c.is_finite()) {
                return Err(Error::Input(format!("pool point {i} has non-finite coordinate")));
            }
        }
        Ok(SamplePool {
            points,
            provenance,
            source_seed,
        })
    }

    pub fn raw(points: Vec<Point>) -> Result<Self> {
        Self::new(points, Provenance::Raw, None)
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.points[0].dim()
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn source_seed(&self) -> Option<u64> {
        self.source_seed
    }
}
