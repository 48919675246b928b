use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::ensemble::{fit_forest, ForestConfig};
use crate::error::{Error, Result};
use crate::linalg::Matrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapleyEstimate {
    pub values: Vec<f64>,
    /// Monte-Carlo standard error of each value.
    pub std_errors: Vec<f64>,
    /// Value of the full feature set.
    pub total: f64,
    /// Set when the full model explains nothing; values are then zero.
    pub degenerate: bool,
}

/// Fewest permutations accepted.
pub const MIN_PERMUTATIONS: usize = 50;

/// Permutation estimator of Shapley values for a value function on feature
/// subsets (given as sorted index lists, the empty set worth 0). Subset
/// values are cached, so each is computed once.
pub fn shapley_values<F>(n_features: usize, permutations: usize, seed: u64, mut value: F) -> Result<ShapleyEstimate>
where
    F: FnMut(&[usize]) -> Result<f64>,
{
    if permutations < MIN_PERMUTATIONS {
        return Err(Error::usage(format!("at least {MIN_PERMUTATIONS} permutations are needed")));
    }
    if n_features == 0 || n_features > 63 {
        return Err(Error::usage("between 1 and 63 features are supported"));
    }
    let mut cache: HashMap<u64, f64> = HashMap::new();
    cache.insert(0, 0.0);
    let mut eval = |mask: u64, cache: &mut HashMap<u64, f64>| -> Result<f64> {
        if let Some(v) = cache.get(&mask) {
            return Ok(*v);
        }
        let set: Vec<usize> = (0..n_features).filter(|&j| mask >> j & 1 == 1).collect();
        let v = value(&set)?;
        cache.insert(mask, v);
        Ok(v)
    };
    let full = (1u64 << n_features) - 1;
    let total = eval(full, &mut cache)?;
    if !(total > 0.0) {
        return Ok(ShapleyEstimate {
            values: vec![0.0; n_features],
            std_errors: vec![0.0; n_features],
            total,
            degenerate: true,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..n_features).collect();
    let (mut sum, mut sum_sq) = (vec![0.0; n_features], vec![0.0; n_features]);
    for _ in 0..permutations {
        order.shuffle(&mut rng);
        let mut mask = 0u64;
        let mut prev = 0.0;
        for &j in &order {
            mask |= 1 << j;
            let v = eval(mask, &mut cache)?;
            let c = v - prev;
            sum[j] += c;
            sum_sq[j] += c * c;
            prev = v;
        }
    }
    let m = permutations as f64;
    let values: Vec<f64> = sum.iter().map(|s| s / m).collect();
    let std_errors =
        sum_sq.iter().zip(&values).map(|(ss, mean)| ((ss / m - mean * mean).max(0.0) / (m - 1.0)).sqrt()).collect();
    Ok(ShapleyEstimate { values, std_errors, total, degenerate: false })
}

/// In-sample `R²` of a forest on the given feature columns.
pub fn forest_r2(
    features: &[Vec<f64>],
    target: &[f64],
    subset: &[usize],
    config: &ForestConfig,
    seed: u64,
) -> Result<f64> {
    if subset.is_empty() {
        return Ok(0.0);
    }
    let n = target.len();
    let mut x = Matrix::zeros(n, subset.len());
    for (c, &j) in subset.iter().enumerate() {
        for i in 0..n {
            x[(i, c)] = features[j][i];
        }
    }
    let forest = fit_forest(&x, target, config, seed)?;
    let pred = forest.predict(&x)?;
    Ok(r_squared(target, &pred))
}

pub fn r_squared(y: &[f64], pred: &[f64]) -> f64 {
    let m = y.iter().sum::<f64>() / y.len() as f64;
    let tss: f64 = y.iter().map(|v| (v - m).powi(2)).sum();
    let rss: f64 = y.iter().zip(pred).map(|(a, b)| (a - b).powi(2)).sum();
    if tss > 0.0 {
        1.0 - rss / tss
    } else {
        0.0
    }
}
