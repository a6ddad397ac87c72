//! Greedy herding selection of an m-point subset of the history pool that
//! minimizes the kernel MMD between the subset and the full pool.

use crate::kernel::Kernel;
use crate::pool::{Provenance, SamplePool};
use crate::{Error, Result};
use rayon::prelude::*;

/// Outcome of a thinning run.
#[derive(Debug, Clone)]
pub struct ThinResult {
    /// Selected indices into the raw pool, in selection order. Distinct.
    pub selected_indices: Vec<usize>,
    /// Final biased (V-statistic) MMD^2 between the subset and the pool.
    /// Reported in the biased form so the value is guaranteed nonnegative;
    /// the selection rule itself does not depend on this choice.
    pub objective_value: f64,
    /// Objective after each selection step; length m. Not guaranteed
    /// monotone, recorded as-is.
    pub trace: Vec<f64>,
}

impl ThinResult {
    /// The thinned pool built from the selected indices of `pool`.
    pub fn to_pool(&self, pool: &SamplePool) -> Result<SamplePool> {
        SamplePool::new(
            self.selected_indices
                .iter()
                .map(|&i| pool.points()[i].clone())
                .collect(),
            Provenance::Thinned,
            pool.source_seed(),
        )
    }
}

/// Greedy herding without replacement.
///
/// At step s (with s-1 points already selected) the candidate c minimizing
///
/// ```text
/// (1/s) * sum_{j selected} k(x_c, x_j)  -  (1/M) * sum_{i=1..M} k(x_c, x_i)
/// ```
///
/// is chosen, which is the exact greedy minimizer of the squared-MMD
/// increment against the empirical pool measure (the candidate's self-term
/// k(x,x)=1 is constant and drops out). Step 1 reduces to maximizing the
/// mean similarity to the pool. Ties break to the lowest index. Fully
/// deterministic: no RNG anywhere.
pub fn thin(k: &Kernel, pool: &SamplePool, m: usize) -> Result<ThinResult> {
    let big_m = pool.len();
    if pool.provenance() != Provenance::Raw {
        return Err(Error::Input("thin expects a raw pool".into()));
    }
    if m < 2 {
        return Err(Error::Input(format!(
            "thin size m must be at least 2, got {m}"
        )));
    }
    if m > big_m {
        return Err(Error::Input(format!(
            "thin size m = {m} exceeds pool size M = {big_m}"
        )));
    }

    let pts = pool.points();
    // mean similarity of each candidate to the full pool, computed once
    let mean_sim: Vec<f64> = (0..big_m)
        .into_par_iter()
        .map(|c| {
            let xc = pts[c].coords();
            let s: f64 = pts.iter().map(|p| k.eval_unchecked(xc, p.coords())).sum();
            s / big_m as f64
        })
        .collect();
    // (1/M^2) * full Gram sum, a constant term of the objective
    let pool_term = mean_sim.iter().sum::<f64>() / big_m as f64;

    let mut selected = Vec::with_capacity(m);
    let mut is_selected = vec![false; big_m];
    // running sum of k(x_c, x_j) over selected j, per candidate
    let mut sel_sim = vec![0.0f64; big_m];
    // full within-subset Gram sum (diagonal included) and selected mean_sim sum
    let mut within_sum = 0.0;
    let mut sel_mean_sum = 0.0;
    let mut trace = Vec::with_capacity(m);

    for step in 1..=m {
        let s = step as f64;
        let best = (0..big_m)
            .into_par_iter()
            .filter(|&c| !is_selected[c])
            .map(|c| (sel_sim[c] / s - mean_sim[c], c))
            .reduce_with(|a, b| {
                // strict value order, then lowest index; associative and
                // commutative, so the parallel reduction is deterministic
                if b.0 < a.0 || (b.0 == a.0 && b.1 < a.1) {
                    b
                } else {
                    a
                }
            })
            .expect("candidates remain");
        let chosen = best.1;

        within_sum += 2.0 * sel_sim[chosen] + 1.0;
        sel_mean_sum += mean_sim[chosen];
        is_selected[chosen] = true;
        selected.push(chosen);

        let xc = pts[chosen].coords();
        sel_sim
            .par_iter_mut()
            .enumerate()
            .for_each(|(c, v)| *v += k.eval_unchecked(pts[c].coords(), xc));

        let obj = within_sum / (s * s) + pool_term - 2.0 * sel_mean_sum / s;
        trace.push(obj);
    }

    Ok(ThinResult {
        objective_value: *trace.last().unwrap(),
        selected_indices: selected,
        trace,
    })
}

/// Biased (V-statistic) MMD^2 between a subset and a pool: the squared RKHS
/// norm of the difference of mean embeddings, always >= 0.
pub fn subset_mmd(k: &Kernel, subset: &SamplePool, pool: &SamplePool) -> Result<f64> {
    if subset.dim() != pool.dim() {
        return Err(Error::Input(format!(
            "dimension mismatch: subset d={} pool d={}",
            subset.dim(),
            pool.dim()
        )));
    }
    let a = subset.points();
    let b = pool.points();
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let mut aa = 0.0;
    for x in a {
        for y in a {
            aa += k.eval_unchecked(x.coords(), y.coords());
        }
    }
    let mut bb = 0.0;
    for x in b {
        for y in b {
            bb += k.eval_unchecked(x.coords(), y.coords());
        }
    }
    let mut ab = 0.0;
    for x in a {
        for y in b {
            ab += k.eval_unchecked(x.coords(), y.coords());
        }
    }
    Ok(aa / (na * na) + bb / (nb * nb) - 2.0 * ab / (na * nb))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::{median_heuristic, KernelFamily, Point};
    use crate::seed;
    use rand::Rng;

    fn p1(v: f64) -> Point {
        Point::new(vec![v])
    }

    fn rbf() -> Kernel {
        Kernel::new(KernelFamily::Rbf, 1.0).unwrap()
    }

    fn gaussian_pool(n: usize, d: usize, tag: u64) -> SamplePool {
        let mut rng = seed::rng(7, tag);
        SamplePool::raw(
            (0..n)
                .map(|_| Point::new((0..d).map(|_| rng.sample(rand_distr::StandardNormal)).collect()))
                .collect(),
        )
        .unwrap()
    }

    /// Exhaustive re-scan of the per-step objective, independent of the
    /// cached accumulators in `thin`.
    fn oracle_greedy(k: &Kernel, pool: &SamplePool, m: usize) -> Vec<usize> {
        let pts = pool.points();
        let big_m = pts.len();
        let mean_sim: Vec<f64> = (0..big_m)
            .map(|c| {
                pts.iter()
                    .map(|p| k.eval(&pts[c], p).unwrap())
                    .sum::<f64>()
                    / big_m as f64
            })
            .collect();
        let mut selected: Vec<usize> = Vec::new();
        for step in 1..=m {
            let s = step as f64;
            let mut best: Option<(f64, usize)> = None;
            for c in 0..big_m {
                if selected.contains(&c) {
                    continue;
                }
                let sim: f64 = selected
                    .iter()
                    .map(|&j| k.eval(&pts[c], &pts[j]).unwrap())
                    .sum();
                let obj = sim / s - mean_sim[c];
                if best.is_none() || obj < best.unwrap().0 {
                    best = Some((obj, c));
                }
            }
            selected.push(best.unwrap().1);
        }
        selected
    }

    #[test]
    fn size_preconditions() {
        let pool = SamplePool::raw(vec![p1(0.0)]).unwrap();
        assert!(thin(&rbf(), &pool, 2).is_err());
        let pool3 = SamplePool::raw(vec![p1(0.0), p1(1.0), p1(2.0)]).unwrap();
        assert!(thin(&rbf(), &pool3, 1).is_err());
        assert!(thin(&rbf(), &pool3, 4).is_err());
    }

    #[test]
    fn rejects_thinned_input() {
        let pool = SamplePool::new(
            vec![p1(0.0), p1(1.0)],
            crate::pool::Provenance::Thinned,
            None,
        )
        .unwrap();
        assert!(thin(&rbf(), &pool, 2).is_err());
    }

    #[test]
    fn near_duplicate_pool_picks_distinct_support() {
        // {(0,),(0,),(5,)} with m=2: the greedy objective penalizes
        // re-selecting a duplicate of an already chosen point
        let pool = SamplePool::raw(vec![p1(0.0), p1(0.0), p1(5.0)]).unwrap();
        let r = thin(&rbf(), &pool, 2).unwrap();
        assert_eq!(r.selected_indices, vec![0, 2]);
    }

    #[test]
    fn matches_per_step_oracle() {
        let pool = gaussian_pool(10, 1, 1);
        let gamma = median_heuristic(pool.points()).unwrap();
        let k = Kernel::new(KernelFamily::Rbf, gamma).unwrap();
        let r = thin(&k, &pool, 3).unwrap();
        assert_eq!(r.selected_indices, oracle_greedy(&k, &pool, 3));
    }

    #[test]
    fn deterministic_and_structurally_valid() {
        let pool = gaussian_pool(40, 3, 2);
        let a = thin(&rbf(), &pool, 10).unwrap();
        let b = thin(&rbf(), &pool, 10).unwrap();
        assert_eq!(a.selected_indices, b.selected_indices);
        assert_eq!(a.trace, b.trace);
        assert_eq!(a.trace.len(), 10);
        let mut seen = std::collections::HashSet::new();
        for &i in &a.selected_indices {
            assert!(i < pool.len());
            assert!(seen.insert(i), "index {i} repeated");
        }
    }

    #[test]
    fn objective_matches_subset_mmd() {
        let pool = gaussian_pool(30, 2, 3);
        let r = thin(&rbf(), &pool, 8).unwrap();
        let sub = r.to_pool(&pool).unwrap();
        let direct = subset_mmd(&rbf(), &sub, &pool).unwrap();
        assert!((r.objective_value - direct).abs() <= 1e-12);
    }

    #[test]
    fn subset_mmd_identities_and_oracle() {
        let pool = gaussian_pool(8, 2, 4);
        assert!(subset_mmd(&rbf(), &pool, &pool).unwrap().abs() <= 1e-12);

        // identical empirical measures by value
        let a = SamplePool::raw(vec![p1(0.0)]).unwrap();
        let b = SamplePool::raw(vec![p1(0.0), p1(0.0)]).unwrap();
        assert!(subset_mmd(&rbf(), &a, &b).unwrap().abs() <= 1e-12);

        // brute-force oracle on a 3-of-8 subset
        let sub = SamplePool::new(
            pool.points()[..3].to_vec(),
            crate::pool::Provenance::Thinned,
            None,
        )
        .unwrap();
        let v = subset_mmd(&rbf(), &sub, &pool).unwrap();
        let mut aa = 0.0;
        let mut bb = 0.0;
        let mut ab = 0.0;
        for x in sub.points() {
            for y in sub.points() {
                aa += rbf().eval(x, y).unwrap();
            }
        }
        for x in pool.points() {
            for y in pool.points() {
                bb += rbf().eval(x, y).unwrap();
            }
        }
        for x in sub.points() {
            for y in pool.points() {
                ab += rbf().eval(x, y).unwrap();
            }
        }
        let expect = aa / 9.0 + bb / 64.0 - 2.0 * ab / 24.0;
        assert!((v - expect).abs() <= 1e-12);
        assert!(v >= -1e-12);
    }

    #[test]
    fn dimension_mismatch_error() {
        let a = SamplePool::raw(vec![p1(0.0), p1(1.0)]).unwrap();
        let b = SamplePool::raw(vec![Point::new(vec![0.0, 1.0])]).unwrap();
        assert!(subset_mmd(&rbf(), &a, &b).is_err());
    }
}
