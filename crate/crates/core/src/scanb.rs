//! Scan-B detector: N fixed reference blocks against the sliding last-B
//! window of the stream, normalized by the null standard deviation sigma(B).

use crate::kernel::{Kernel, Point};
use crate::pool::SamplePool;
use crate::{seed, Error, Result};
use rand::seq::index;

const CONSTANTS_TAG: u64 = 0x7363_6e31;
const BLOCKS_TAG: u64 = 0x7363_6e32;

#[derive(Debug, Clone, Copy)]
pub struct ScanBConfig {
    /// Number of reference blocks N.
    pub n_blocks: usize,
    /// Block size B (also the sliding-window length).
    pub block_size: usize,
    pub kernel: Kernel,
    pub seed: u64,
}

impl ScanBConfig {
    fn validate(&self) -> Result<()> {
        if self.n_blocks < 1 {
            return Err(Error::Input("scanb: N must be at least 1".into()));
        }
        if self.block_size < 2 {
            return Err(Error::Input("scanb: B must be at least 2".into()));
        }
        Ok(())
    }
}

/// The moment constants of the null variance and the resulting sigma(B):
/// sigma^2(B) = C(B,2)^{-1} * (C2 + (C1 - C2) / N).
#[derive(Debug, Clone, Copy)]
pub struct VarianceConstants {
    pub c1: f64,
    pub c2: f64,
    pub sigma_b: f64,
}

impl VarianceConstants {
    pub fn from_moments(c1: f64, c2: f64, block_size: usize, n_blocks: usize) -> Result<Self> {
        if block_size < 2 || n_blocks < 1 {
            return Err(Error::Input("variance constants need B >= 2, N >= 1".into()));
        }
        let pairs = (block_size * (block_size - 1) / 2) as f64;
        let sigma_sq = (c2 + (c1 - c2) / n_blocks as f64) / pairs;
        if !(sigma_sq > 0.0 && sigma_sq.is_finite()) {
            return Err(Error::Calibration(format!(
                "sigma^2(B) = {sigma_sq} not positive (C1 = {c1}, C2 = {c2}); \
                 increase n_tuples"
            )));
        }
        Ok(VarianceConstants { c1, c2, sigma_b: sigma_sq.sqrt() })
    }
}

/// Estimate C1 = E[h^2] and C2 = Cov(h, h') from the history pool by drawing
/// `n_tuples` seeded 6-tuples without replacement within each tuple.
pub fn estimate_constants(
    pool: &SamplePool,
    cfg: &ScanBConfig,
    n_tuples: usize,
) -> Result<VarianceConstants> {
    cfg.validate()?;
    if pool.len() < 6 {
        return Err(Error::Input(format!(
            "constant estimation needs a pool of at least 6 points, got {}",
            pool.len()
        )));
    }
    if n_tuples < 1000 {
        return Err(Error::Input(format!(
            "constant estimation needs at least 1,000 tuples, got {n_tuples}"
        )));
    }
    let mut rng = seed::rng(cfg.seed, CONSTANTS_TAG);
    let pts = pool.points();
    let k = &cfg.kernel;
    let n = n_tuples as f64;
    let mut sum_h1_sq = 0.0;
    let mut sum_h1 = 0.0;
    let mut sum_h2 = 0.0;
    let mut sum_h1h2 = 0.0;
    for _ in 0..n_tuples {
        let idx = index::sample(&mut rng, pts.len(), 6);
        let g = |i: usize| pts[idx.index(i)].coords();
        // (x, x', x'', x''', y, y')
        let h1 = k.h_unchecked(g(0), g(1), g(4), g(5));
        let h2 = k.h_unchecked(g(2), g(3), g(4), g(5));
        sum_h1_sq += h1 * h1;
        sum_h1 += h1;
        sum_h2 += h2;
        sum_h1h2 += h1 * h2;
    }
    let c1 = sum_h1_sq / n;
    let c2 = (sum_h1h2 - sum_h1 * sum_h2 / n) / (n - 1.0);
    VarianceConstants::from_moments(c1, c2, cfg.block_size, cfg.n_blocks)
}

/// Mutable per-stream detector state. Per step: O(N*B) kernel evaluations,
/// with cached cross-similarity columns per block and a ring Gram matrix
/// for the window.
#[derive(Debug, Clone)]
pub struct ScanBState {
    kernel: Kernel,
    n_blocks: usize,
    b: usize,
    sigma_b: f64,
    dim: usize,
    blocks: Vec<Vec<Point>>,
    /// off-diagonal Gram sum within each block (static)
    block_within: Vec<f64>,
    /// per block: k(X_j, w_slot) flattened as slot*B + j
    block_cols: Vec<Vec<f64>>,
    /// per block, per slot: column sum over j
    block_colsum: Vec<Vec<f64>>,
    /// window ring; slot of the oldest point is `head` once full
    window: Vec<Point>,
    head: usize,
    count: usize,
    /// window Gram, B x B ring-indexed; diagonal entries are 1
    win_gram: Vec<f64>,
    /// off-diagonal sum of win_gram over occupied slots
    win_off_sum: f64,
    t: usize,
}

/// Draw N*B distinct pool indices with the config seed and split them into
/// N reference blocks, held fixed for the whole run.
pub fn scanb_init(
    pool: &SamplePool,
    cfg: &ScanBConfig,
    constants: &VarianceConstants,
) -> Result<ScanBState> {
    cfg.validate()?;
    let need = cfg.n_blocks * cfg.block_size;
    if pool.len() < need {
        return Err(Error::Input(format!(
            "pool of {} points cannot supply N*B = {need} block samples",
            pool.len()
        )));
    }
    let mut rng = seed::rng(cfg.seed, BLOCKS_TAG);
    let idx = index::sample(&mut rng, pool.len(), need);
    let pts = pool.points();
    let blocks: Vec<Vec<Point>> = (0..cfg.n_blocks)
        .map(|i| {
            (0..cfg.block_size)
                .map(|j| pts[idx.index(i * cfg.block_size + j)].clone())
                .collect()
        })
        .collect();
    let k = &cfg.kernel;
    let block_within: Vec<f64> = blocks
        .iter()
        .map(|blk| {
            let mut s = 0.0;
            for i in 0..blk.len() {
                for j in 0..blk.len() {
                    if i != j {
                        s += k.eval_unchecked(blk[i].coords(), blk[j].coords());
                    }
                }
            }
            s
        })
        .collect();
    let b = cfg.block_size;
    Ok(ScanBState {
        kernel: cfg.kernel,
        n_blocks: cfg.n_blocks,
        b,
        sigma_b: constants.sigma_b,
        dim: pool.dim(),
        blocks,
        block_within,
        block_cols: vec![vec![0.0; b * b]; cfg.n_blocks],
        block_colsum: vec![vec![0.0; b]; cfg.n_blocks],
        window: Vec::with_capacity(b),
        head: 0,
        count: 0,
        win_gram: vec![0.0; b * b],
        win_off_sum: 0.0,
        t: 0,
    })
}

impl ScanBState {
    pub fn t(&self) -> usize {
        self.t
    }

    pub fn blocks(&self) -> &[Vec<Point>] {
        &self.blocks
    }

    /// Window contents in stream order, oldest first.
    pub fn window_points(&self) -> Vec<Point> {
        (0..self.count)
            .map(|j| self.window[self.slot_of(j)].clone())
            .collect()
    }

    fn slot_of(&self, pos: usize) -> usize {
        if self.count < self.b {
            pos
        } else {
            (self.head + pos) % self.b
        }
    }

    /// Push the next stream point; emits Z_t once the window holds B points.
    pub fn step(&mut self, y: &Point) -> Result<Option<f64>> {
        if y.dim() != self.dim {
            return Err(Error::Input(format!(
                "stream point dimension {} does not match pool dimension {}",
                y.dim(),
                self.dim
            )));
        }
        self.t += 1;
        let b = self.b;
        let slot;
        if self.count < b {
            slot = self.count;
            self.window.push(y.clone());
            self.count += 1;
        } else {
            // evict the oldest; its slot is reused for the new point
            slot = self.head;
            self.head = (self.head + 1) % b;
            for l in 0..b {
                if l != slot {
                    self.win_off_sum -= 2.0 * self.win_gram[slot * b + l];
                }
            }
            self.window[slot] = y.clone();
        }

        // window Gram row/column for the new point
        for l in 0..self.count.min(b) {
            if l == slot {
                continue;
            }
            let g = self
                .kernel
                .eval_unchecked(y.coords(), self.window[l].coords());
            self.win_gram[slot * b + l] = g;
            self.win_gram[l * b + slot] = g;
            self.win_off_sum += 2.0 * g;
        }
        self.win_gram[slot * b + slot] = 1.0;

        // per-block column against the new point
        for i in 0..self.n_blocks {
            let mut colsum = 0.0;
            for j in 0..b {
                let v = self
                    .kernel
                    .eval_unchecked(self.blocks[i][j].coords(), y.coords());
                self.block_cols[i][slot * b + j] = v;
                colsum += v;
            }
            self.block_colsum[i][slot] = colsum;
        }

        if self.count < b {
            return Ok(None);
        }
        Ok(Some(self.statistic()))
    }

    /// Z_t from the cached sums. mmd_s for block i decomposes as
    /// [within_block + within_window - 2*(cross_full - cross_diag)] / (B(B-1)),
    /// where cross_diag pairs X_j with the window point at position j.
    fn statistic(&self) -> f64 {
        let b = self.b;
        let denom = (b * (b - 1)) as f64;
        let mut total = 0.0;
        for i in 0..self.n_blocks {
            let cross_full: f64 = self.block_colsum[i].iter().sum();
            let mut diag = 0.0;
            for j in 0..b {
                diag += self.block_cols[i][self.slot_of(j) * b + j];
            }
            let mmd = (self.block_within[i] + self.win_off_sum - 2.0 * (cross_full - diag)) / denom;
            total += mmd;
        }
        total / self.n_blocks as f64 / self.sigma_b
    }
}

/// First t in [B, t_max] with Z_t > b (strict), else t_max + 1.
pub fn scanb_run(
    pool: &SamplePool,
    cfg: &ScanBConfig,
    constants: &VarianceConstants,
    stream: impl IntoIterator<Item = Point>,
    threshold: f64,
    t_max: usize,
) -> Result<usize> {
    let mut state = scanb_init(pool, cfg, constants)?;
    for (i, y) in stream.into_iter().enumerate() {
        let t = i + 1;
        if t > t_max {
            break;
        }
        if let Some(z) = state.step(&y)? {
            if z > threshold {
                return Ok(t);
            }
        }
    }
    Ok(t_max + 1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::KernelFamily;
    use crate::mmd::mmd_s;
    use crate::seed;
    use rand::Rng;

    fn rbf() -> Kernel {
        Kernel::new(KernelFamily::Rbf, 1.0).unwrap()
    }

    fn unit_constants() -> VarianceConstants {
        VarianceConstants { c1: 1.0, c2: 0.0, sigma_b: 1.0 }
    }

    fn gaussian_pool(n: usize, d: usize, tag: u64) -> SamplePool {
        let mut rng = seed::rng(5, tag);
        SamplePool::raw(
            (0..n)
                .map(|_| Point::new((0..d).map(|_| rng.sample(rand_distr::StandardNormal)).collect()))
                .collect(),
        )
        .unwrap()
    }

    fn gaussian_stream(n: usize, d: usize, tag: u64, shift: f64) -> Vec<Point> {
        let mut rng = seed::rng(6, tag);
        (0..n)
            .map(|_| {
                Point::new(
                    (0..d)
                        .map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal) + shift)
                        .collect(),
                )
            })
            .collect()
    }

    #[test]
    fn sigma_formula_fixtures() {
        // C(2,2)=1: sigma^2 = 2 + (4-2)/2 = 3
        let v = VarianceConstants::from_moments(4.0, 2.0, 2, 2).unwrap();
        assert!((v.sigma_b * v.sigma_b - 3.0).abs() <= 1e-15);
        // C(3,2)=3: sigma^2 = (0 + (3-0)/3)/3 = 1/3
        let v = VarianceConstants::from_moments(3.0, 0.0, 3, 3).unwrap();
        assert!((v.sigma_b * v.sigma_b - 1.0 / 3.0).abs() <= 1e-15);
    }

    #[test]
    fn nonpositive_sigma_is_calibration_error() {
        assert!(matches!(
            VarianceConstants::from_moments(0.0, 0.0, 5, 3),
            Err(crate::Error::Calibration(_))
        ));
    }

    #[test]
    fn estimate_constants_is_stable_across_seeds() {
        let pool = gaussian_pool(500, 20, 1);
        let gamma = crate::kernel::median_heuristic(pool.points()).unwrap();
        let kern = Kernel::new(KernelFamily::Rbf, gamma).unwrap();
        let cfg_a = ScanBConfig { n_blocks: 15, block_size: 50, kernel: kern, seed: 10 };
        let cfg_b = ScanBConfig { seed: 11, ..cfg_a };
        let a = estimate_constants(&pool, &cfg_a, 10_000).unwrap();
        let b = estimate_constants(&pool, &cfg_b, 10_000).unwrap();
        assert!((a.c1 - b.c1).abs() / a.c1 <= 0.05, "c1: {} vs {}", a.c1, b.c1);
    }

    #[test]
    fn init_partitions_pool_exactly_when_sizes_match() {
        let pool = gaussian_pool(12, 2, 2);
        let cfg = ScanBConfig { n_blocks: 3, block_size: 4, kernel: rbf(), seed: 1 };
        let st = scanb_init(&pool, &cfg, &unit_constants()).unwrap();
        let mut used: Vec<&Point> = st.blocks().iter().flatten().collect();
        assert_eq!(used.len(), 12);
        // every pool point appears exactly once
        for p in pool.points() {
            let pos = used.iter().position(|q| *q == p).expect("point missing");
            used.remove(pos);
        }
        assert!(used.is_empty());
    }

    #[test]
    fn init_seeded_determinism_and_seed_sensitivity() {
        let pool = gaussian_pool(40, 2, 3);
        let cfg = ScanBConfig { n_blocks: 2, block_size: 5, kernel: rbf(), seed: 42 };
        let a = scanb_init(&pool, &cfg, &unit_constants()).unwrap();
        let b = scanb_init(&pool, &cfg, &unit_constants()).unwrap();
        assert_eq!(a.blocks(), b.blocks());
        let cfg2 = ScanBConfig { seed: 43, ..cfg };
        let c = scanb_init(&pool, &cfg2, &unit_constants()).unwrap();
        assert_ne!(a.blocks(), c.blocks());
    }

    #[test]
    fn init_rejects_small_pool() {
        let pool = gaussian_pool(5, 2, 4);
        let cfg = ScanBConfig { n_blocks: 2, block_size: 3, kernel: rbf(), seed: 1 };
        assert!(scanb_init(&pool, &cfg, &unit_constants()).is_err());
    }

    #[test]
    fn identical_block_and_window_give_zero() {
        let pool = SamplePool::raw(vec![Point::new(vec![0.0]), Point::new(vec![0.0])]).unwrap();
        let cfg = ScanBConfig { n_blocks: 1, block_size: 2, kernel: rbf(), seed: 0 };
        let mut st = scanb_init(&pool, &cfg, &unit_constants()).unwrap();
        assert_eq!(st.step(&Point::new(vec![0.0])).unwrap(), None);
        let z = st.step(&Point::new(vec![0.0])).unwrap().unwrap();
        assert!(z.abs() <= 1e-12);
    }

    #[test]
    fn absent_before_window_fills() {
        let pool = gaussian_pool(20, 2, 5);
        let cfg = ScanBConfig { n_blocks: 2, block_size: 5, kernel: rbf(), seed: 7 };
        let mut st = scanb_init(&pool, &cfg, &unit_constants()).unwrap();
        let stream = gaussian_stream(4, 2, 1, 0.0);
        for y in &stream {
            assert_eq!(st.step(y).unwrap(), None);
        }
    }

    #[test]
    fn incremental_matches_from_scratch_oracle() {
        let pool = gaussian_pool(60, 2, 6);
        let gamma = crate::kernel::median_heuristic(pool.points()).unwrap();
        let kern = Kernel::new(KernelFamily::Rbf, gamma).unwrap();
        let cfg = ScanBConfig { n_blocks: 3, block_size: 5, kernel: kern, seed: 9 };
        let constants = estimate_constants(&pool, &cfg, 2_000).unwrap();
        let mut st = scanb_init(&pool, &cfg, &constants).unwrap();
        let stream = gaussian_stream(40, 2, 2, 0.0);
        for (i, y) in stream.iter().enumerate() {
            let z = st.step(y).unwrap();
            let win = st.window_points();
            assert_eq!(win.len(), (i + 1).min(5), "window length");
            if let Some(z) = z {
                let scratch: f64 = st
                    .blocks()
                    .iter()
                    .map(|blk| mmd_s(&kern, blk, &win).unwrap())
                    .sum::<f64>()
                    / 3.0
                    / constants.sigma_b;
                assert!((z - scratch).abs() <= 1e-10, "t={} {z} vs {scratch}", i + 1);
                assert!(z.abs() <= 4.0 / constants.sigma_b);
            }
        }
    }

    #[test]
    fn run_threshold_extremes() {
        let pool = gaussian_pool(30, 2, 7);
        let cfg = ScanBConfig { n_blocks: 2, block_size: 4, kernel: rbf(), seed: 3 };
        let stream = gaussian_stream(50, 2, 3, 0.0);
        let t = scanb_run(&pool, &cfg, &unit_constants(), stream.iter().cloned(), -1e9, 50).unwrap();
        assert_eq!(t, 4); // stops the moment the window fills
        let t = scanb_run(&pool, &cfg, &unit_constants(), stream.iter().cloned(), 1e9, 50).unwrap();
        assert_eq!(t, 51);
    }

    #[test]
    fn null_mean_near_zero() {
        // grand mean of Z_t over 50 seeded null runs within 3 se of 0
        let pool = gaussian_pool(400, 20, 8);
        let gamma = crate::kernel::median_heuristic(pool.points()).unwrap();
        let kern = Kernel::new(KernelFamily::Rbf, gamma).unwrap();
        let mut zs = Vec::new();
        for rep in 0..50u64 {
            let cfg = ScanBConfig { n_blocks: 5, block_size: 10, kernel: kern, seed: 100 + rep };
            let constants = estimate_constants(&pool, &cfg, 2_000).unwrap();
            let mut st = scanb_init(&pool, &cfg, &constants).unwrap();
            for y in gaussian_stream(200, 20, 1_000 + rep, 0.0) {
                if let Some(z) = st.step(&y).unwrap() {
                    zs.push(z);
                }
            }
        }
        let n = zs.len() as f64;
        let mean = zs.iter().sum::<f64>() / n;
        let var = zs.iter().map(|z| (z - mean) * (z - mean)).sum::<f64>() / (n - 1.0);
        // Z_t values are serially dependent; use a conservative effective
        // sample size of one per window length
        let eff = n / 10.0;
        let se = (var / eff).sqrt();
        assert!(mean.abs() <= 3.0 * se, "mean {mean}, se {se}");
    }

    #[test]
    fn shifted_stream_detected_earlier_than_null() {
        let pool = gaussian_pool(200, 5, 9);
        let gamma = crate::kernel::median_heuristic(pool.points()).unwrap();
        let kern = Kernel::new(KernelFamily::Rbf, gamma).unwrap();
        for rep in 0..20u64 {
            let cfg = ScanBConfig { n_blocks: 4, block_size: 10, kernel: kern, seed: rep };
            let constants = estimate_constants(&pool, &cfg, 2_000).unwrap();
            let b = 10.0; // far above null fluctuation, far below shift response
            let h0 = scanb_run(
                &pool, &cfg, &constants,
                gaussian_stream(500, 5, 10_000 + rep, 0.0).into_iter(),
                b, 500,
            )
            .unwrap();
            let h1 = scanb_run(
                &pool, &cfg, &constants,
                gaussian_stream(500, 5, 20_000 + rep, 3.0).into_iter(),
                b, 500,
            )
            .unwrap();
            assert!(h1 < h0, "rep {rep}: h1 {h1} !< h0 {h0}");
        }
    }
}
