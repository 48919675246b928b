use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::tree::{check_inputs, fit_weighted, presort, Tree, TreeConfig};
use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// Circular block bootstrap: contiguous blocks of `block_len` positions
/// (wrapping around) with uniform starts, truncated to `n`.
pub fn block_bootstrap_indices<R: Rng>(n: usize, block_len: usize, rng: &mut R) -> Vec<usize> {
    let mut out = Vec::with_capacity(n);
    let block_len = block_len.max(1);
    while out.len() < n {
        let s = rng.random_range(0..n);
        for j in 0..block_len.min(n - out.len()) {
            out.push((s + j) % n);
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Bootstrap {
    Iid,
    /// Circular blocks of consecutive rows.
    Block(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForestConfig {
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_leaf: usize,
    /// Features tried per split; `None` means `⌈√p⌉`.
    pub mtry: Option<usize>,
    pub bootstrap: Bootstrap,
}

/// Default block length: one day of half-hours.
pub const DEFAULT_BLOCK: usize = 48;

impl Default for ForestConfig {
    fn default() -> Self {
        ForestConfig { n_trees: 1000, max_depth: 6, min_leaf: 5, mtry: None, bootstrap: Bootstrap::Iid }
    }
}

impl ForestConfig {
    /// The default forest with day-long block resampling.
    pub fn block() -> Self {
        ForestConfig { bootstrap: Bootstrap::Block(DEFAULT_BLOCK), ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_trees == 0 {
            return Err(Error::usage("a forest needs at least one tree"));
        }
        if self.bootstrap == Bootstrap::Block(0) {
            return Err(Error::usage("block length must be at least 1"));
        }
        Ok(())
    }

    pub fn mtry_for(&self, p: usize) -> usize {
        self.mtry.unwrap_or_else(|| (p as f64).sqrt().ceil() as usize).clamp(1, p.max(1))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forest {
    pub config: ForestConfig,
    pub n_features: usize,
    pub trees: Vec<Tree>,
}

/// Generator of tree `t`: its own ChaCha stream under the forest seed, so
/// forests do not depend on thread scheduling.
fn tree_rng(seed: u64, t: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(t as u64);
    rng
}

/// Averages `n_trees` trees, each grown on a resample of the rows. Rows are
/// taken in time order, so block resampling keeps consecutive rows together.
pub fn fit_forest(x: &Matrix<f64>, y: &[f64], config: &ForestConfig, seed: u64) -> Result<Forest> {
    config.validate()?;
    check_inputs(x, y)?;
    let n = y.len();
    let order = presort(x);
    let tree_cfg =
        TreeConfig { max_depth: config.max_depth, min_leaf: config.min_leaf, mtry: Some(config.mtry_for(x.ncols())) };
    let trees = (0..config.n_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = tree_rng(seed, t);
            let mut weights = vec![0u32; n];
            match config.bootstrap {
                Bootstrap::Iid => {
                    for _ in 0..n {
                        weights[rng.random_range(0..n)] += 1;
                    }
                }
                Bootstrap::Block(len) => {
                    for i in block_bootstrap_indices(n, len.min(n), &mut rng) {
                        weights[i] += 1;
                    }
                }
            }
            fit_weighted(x, y, &weights, &order, &tree_cfg, &mut rng)
        })
        .collect();
    Ok(Forest { config: *config, n_features: x.ncols(), trees })
}

impl Forest {
    pub fn predict_row(&self, x: &[f64]) -> f64 {
        self.trees.iter().map(|t| t.predict(x)).sum::<f64>() / self.trees.len() as f64
    }

    pub fn predict(&self, x: &Matrix<f64>) -> Result<Vec<f64>> {
        if x.ncols() != self.n_features {
            return Err(Error::usage(format!("forest expects {} features, got {}", self.n_features, x.ncols())));
        }
        Ok((0..x.nrows()).into_par_iter().map(|i| self.predict_row(x.row(i))).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use statrs::distribution::{ChiSquared, ContinuousCDF};

    fn data(n: usize, p: usize, seed: u64) -> (Matrix<f64>, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows: Vec<Vec<f64>> = (0..n).map(|_| (0..p).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
        let y = rows.iter().map(|r| 3.0 * r[0] + r[1].abs() + rng.random_range(-0.2..0.2)).collect();
        (Matrix::from_rows(&rows).unwrap(), y)
    }

    fn small(bootstrap: Bootstrap) -> ForestConfig {
        ForestConfig { n_trees: 30, max_depth: 4, min_leaf: 3, mtry: None, bootstrap }
    }

    #[test]
    fn unit_blocks_are_an_iid_bootstrap() {
        let n = 50;
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut counts = vec![0f64; n];
        let draws = 100_000;
        while counts.iter().sum::<f64>() < draws as f64 {
            for i in block_bootstrap_indices(n, 1, &mut rng) {
                counts[i] += 1.0;
            }
        }
        let e = counts.iter().sum::<f64>() / n as f64;
        let chi2: f64 = counts.iter().map(|c| (c - e).powi(2) / e).sum();
        let p = 1.0 - ChiSquared::new((n - 1) as f64).unwrap().cdf(chi2);
        assert!(p > 0.01, "chi2 {chi2}, p {p}");
    }

    #[test]
    fn full_block_is_a_rotation() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10 {
            let idx = block_bootstrap_indices(17, 17, &mut rng);
            let s = idx[0];
            assert_eq!(idx, (0..17).map(|j| (s + j) % 17).collect::<Vec<_>>());
        }
        let idx = block_bootstrap_indices(100, 7, &mut rng);
        assert_eq!(idx.len(), 100);
        assert!(idx.iter().all(|&i| i < 100));
    }

    #[test]
    fn prediction_is_the_tree_mean() {
        let (x, y) = data(300, 3, 1);
        let f = fit_forest(&x, &y, &small(Bootstrap::Iid), 4).unwrap();
        for i in 0..20 {
            let r = x.row(i);
            let m = f.trees.iter().map(|t| t.predict(r)).sum::<f64>() / f.trees.len() as f64;
            assert!((f.predict_row(r) - m).abs() < 1e-12);
        }
    }

    #[test]
    fn same_seed_same_forest() {
        let (x, y) = data(200, 4, 2);
        let a = fit_forest(&x, &y, &small(Bootstrap::Block(10)), 11).unwrap();
        let b = fit_forest(&x, &y, &small(Bootstrap::Block(10)), 11).unwrap();
        assert_eq!(a, b);
        let c = fit_forest(&x, &y, &small(Bootstrap::Block(10)), 12).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn predictions_stay_inside_the_target_range() {
        let (x, y) = data(200, 3, 3);
        let f = fit_forest(&x, &y, &small(Bootstrap::Iid), 1).unwrap();
        let (lo, hi) = y.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
        for row in [vec![100.0, -100.0, 0.0], vec![-50.0, 50.0, 9.0]] {
            let p = f.predict_row(&row);
            assert!((lo..=hi).contains(&p));
        }
    }

    #[test]
    fn permuted_features_give_identical_predictions() {
        let (x, y) = data(150, 3, 4);
        let perm = [2, 0, 1];
        let mut xp = Matrix::zeros(x.nrows(), 3);
        for i in 0..x.nrows() {
            for (j, &src) in perm.iter().enumerate() {
                xp[(i, j)] = x[(i, src)];
            }
        }
        // nodes stay large so no two features induce the same in-bag partition,
        // where the lower-index tie rule would otherwise follow the relabeling
        let cfg = ForestConfig { mtry: Some(3), max_depth: 3, min_leaf: 12, ..small(Bootstrap::Iid) };
        let a = fit_forest(&x, &y, &cfg, 5).unwrap();
        let b = fit_forest(&xp, &y, &cfg, 5).unwrap();
        for i in 0..x.nrows() {
            assert_eq!(a.predict_row(x.row(i)), b.predict_row(xp.row(i)));
        }
    }

    /// Slowly moving covariate, half-hour profile and AR(0.95) noise; the
    /// first half trains, the second half tests.
    fn autocorrelated(seed: u64, n: usize) -> (Matrix<f64>, Vec<f64>, Matrix<f64>, Vec<f64>) {
        use rand_distr::{Distribution, Normal};
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let z = Normal::new(0.0, 1.0).unwrap();
        let (mut x, mut e) = (0.0f64, 0.0f64);
        let mut rows = Vec::with_capacity(2 * n);
        let mut y = Vec::with_capacity(2 * n);
        for t in 0..2 * n {
            x = 0.98 * x + 0.2 * z.sample(&mut rng);
            e = 0.95 * e + 0.3 * z.sample(&mut rng);
            let h = (t % 48) as f64;
            rows.push(vec![x, h, rng.random::<f64>()]);
            y.push((2.0 * x).sin() + 0.5 * (h / 48.0 * std::f64::consts::TAU).cos() + e);
        }
        let test = y.split_off(n);
        let xtest = rows.split_off(n);
        (Matrix::from_rows(&rows).unwrap(), y, Matrix::from_rows(&xtest).unwrap(), test)
    }

    #[test]
    fn block_bootstrap_helps_on_autocorrelated_series() {
        let rmse =
            |p: &[f64], y: &[f64]| (p.iter().zip(y).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / y.len() as f64).sqrt();
        let mut wins = 0;
        for seed in 0..20 {
            let (x, y, xt, yt) = autocorrelated(seed, 2000);
            let score = |b| {
                let cfg = ForestConfig { n_trees: 100, bootstrap: b, ..ForestConfig::default() };
                rmse(&fit_forest(&x, &y, &cfg, seed).unwrap().predict(&xt).unwrap(), &yt)
            };
            if score(Bootstrap::Block(DEFAULT_BLOCK)) <= score(Bootstrap::Iid) {
                wins += 1;
            }
        }
        assert!(wins >= 14, "block variant better in {wins}/20 seeds");
    }

    #[test]
    fn config_checks() {
        let (x, y) = data(20, 2, 0);
        assert!(fit_forest(&x, &y, &ForestConfig { n_trees: 0, ..small(Bootstrap::Iid) }, 0).is_err());
        assert!(fit_forest(&x, &y, &small(Bootstrap::Block(0)), 0).is_err());
        assert_eq!(ForestConfig::default().mtry_for(20), 5);
    }
}
