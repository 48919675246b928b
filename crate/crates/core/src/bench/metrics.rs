use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::ensemble::block_bootstrap_indices;
use crate::error::{Error, Result};

fn check(y: &[f64], yhat: &[f64]) -> Result<()> {
    if y.len() != yhat.len() {
        return Err(Error::usage(format!("{} targets vs {} forecasts", y.len(), yhat.len())));
    }
    if y.is_empty() {
        return Err(Error::data("no points to score"));
    }
    Ok(())
}

/// Root mean square error.
pub fn rmse(y: &[f64], yhat: &[f64]) -> Result<f64> {
    check(y, yhat)?;
    let mse = y.iter().zip(yhat).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / y.len() as f64;
    Ok(mse.sqrt())
}

/// Mean absolute percentage error, in percent.
pub fn mape(y: &[f64], yhat: &[f64]) -> Result<f64> {
    check(y, yhat)?;
    if let Some(i) = y.iter().position(|&v| v == 0.0) {
        return Err(Error::data(format!("zero target at position {i}; MAPE undefined")));
    }
    Ok(100.0 * y.iter().zip(yhat).map(|(a, b)| ((a - b) / a).abs()).sum::<f64>() / y.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Metric {
    Rmse,
    Mape,
}

/// Half-width of the percentile confidence interval of a metric under the
/// circular block bootstrap of the paired series.
pub fn bootstrap_ci(
    y: &[f64],
    yhat: &[f64],
    metric: Metric,
    block_len: usize,
    reps: usize,
    level: f64,
    seed: u64,
) -> Result<f64> {
    check(y, yhat)?;
    if reps < 2 || !(0.0 < level && level < 1.0) || block_len == 0 {
        return Err(Error::usage("bootstrap needs reps >= 2, a level in (0, 1) and a positive block length"));
    }
    let n = y.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut stats = Vec::with_capacity(reps);
    let (mut ys, mut fs) = (vec![0.0; n], vec![0.0; n]);
    for _ in 0..reps {
        for (j, i) in block_bootstrap_indices(n, block_len, &mut rng).into_iter().enumerate() {
            ys[j] = y[i];
            fs[j] = yhat[i];
        }
        stats.push(match metric {
            Metric::Rmse => rmse(&ys, &fs)?,
            Metric::Mape => mape(&ys, &fs)?,
        });
    }
    stats.sort_by(|a, b| a.total_cmp(b));
    let q = |p: f64| {
        let pos = p * (reps - 1) as f64;
        let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
        stats[lo] + (stats[hi] - stats[lo]) * (pos - lo as f64)
    };
    let alpha = 1.0 - level;
    Ok(0.5 * (q(1.0 - alpha / 2.0) - q(alpha / 2.0)))
}

/// Scores of one model on one window; CIs are 95% half-widths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Score {
    pub model: String,
    pub window: String,
    pub rmse: f64,
    pub mape: f64,
    pub ci_rmse: f64,
    pub ci_mape: f64,
    pub n: usize,
}
