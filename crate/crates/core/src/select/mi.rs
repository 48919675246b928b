use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `⌈n^{1/3}⌉` capped at 16.
pub fn default_bins(n: usize) -> usize {
    ((n as f64).cbrt().ceil() as usize).clamp(1, 16)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MutualInformation {
    pub nats: f64,
    /// Set when either input is constant.
    pub degenerate: bool,
}

/// Equal-frequency bin of every value; equal values share a bin.
pub(crate) fn quantile_bins(x: &[f64], bins: usize) -> Vec<usize> {
    let n = x.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut out = vec![0; n];
    let mut first = 0;
    for pos in 0..n {
        if pos > 0 && x[idx[pos]] != x[idx[pos - 1]] {
            first = pos;
        }
        out[idx[pos]] = (first * bins / n).min(bins - 1);
    }
    out
}

/// Plug-in mutual information on equal-frequency bins.
pub fn mutual_information(x: &[f64], y: &[f64], bins: usize) -> Result<MutualInformation> {
    if x.len() != y.len() {
        return Err(Error::usage("mutual information needs paired samples"));
    }
    if bins < 2 {
        return Err(Error::usage("at least two bins are needed"));
    }
    if x.len() < 10 * bins {
        return Err(Error::data(format!("{} samples for {bins} bins, need {}", x.len(), 10 * bins)));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::data("non-finite sample"));
    }
    let constant = |v: &[f64]| v.iter().all(|&a| a == v[0]);
    if constant(x) || constant(y) {
        return Ok(MutualInformation { nats: 0.0, degenerate: true });
    }
    let (bx, by) = (quantile_bins(x, bins), quantile_bins(y, bins));
    let n = x.len() as f64;
    let mut joint = vec![0f64; bins * bins];
    let (mut px, mut py) = (vec![0f64; bins], vec![0f64; bins]);
    for (&a, &b) in bx.iter().zip(&by) {
        joint[a * bins + b] += 1.0;
        px[a] += 1.0;
        py[b] += 1.0;
    }
    let mut mi = 0.0;
    for a in 0..bins {
        for b in 0..bins {
            let c = joint[a * bins + b];
            if c > 0.0 {
                mi += c / n * (c * n / (px[a] * py[b])).ln();
            }
        }
    }
    Ok(MutualInformation { nats: mi.max(0.0), degenerate: false })
}
