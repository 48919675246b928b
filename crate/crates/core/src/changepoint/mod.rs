//! Offline change-in-mean detection by binary segmentation, significance
//! filtering of the ranked change points, and residual diagnostics.

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{Error, Result};

/// Default minimum segment length: one day of half-hours.
pub const DEFAULT_MIN_SEGMENT: usize = 48;
/// Default ratio between a retained jump and the residual standard deviation.
pub const DEFAULT_KAPPA: f64 = 0.25;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChangePoint {
    /// First index of the segment the change opens.
    pub index: usize,
    pub timestamp: Option<DateTime<Utc>>,
    /// Drop in within-segment sum of squares when the split was made.
    pub reduction: f64,
    /// Mean after minus mean before, on the segment that was split.
    pub jump: f64,
    /// Discovery order, starting at 1.
    pub rank: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChangePointReport {
    /// Sorted by index.
    pub points: Vec<ChangePoint>,
    /// Sum of squared deviations from the global mean.
    pub initial_cost: f64,
    pub min_segment: usize,
}

impl ChangePointReport {
    pub fn indices(&self) -> Vec<usize> {
        self.points.iter().map(|p| p.index).collect()
    }

    /// Points in discovery order.
    pub fn by_rank(&self) -> Vec<&ChangePoint> {
        let mut v: Vec<&ChangePoint> = self.points.iter().collect();
        v.sort_by_key(|p| p.rank);
        v
    }

    pub fn total_reduction(&self) -> f64 {
        self.points.iter().map(|p| p.reduction).sum()
    }

    pub fn attach_times(&mut self, times: &[DateTime<Utc>]) {
        for p in &mut self.points {
            p.timestamp = times.get(p.index).copied();
        }
    }
}

struct Prefix {
    s: Vec<f64>,
}

impl Prefix {
    fn new(x: &[f64]) -> Self {
        let mut s = Vec::with_capacity(x.len() + 1);
        s.push(0.0);
        for v in x {
            s.push(s.last().unwrap() + v);
        }
        Prefix { s }
    }

    fn mean(&self, a: usize, b: usize) -> f64 {
        (self.s[b] - self.s[a]) / (b - a) as f64
    }
}

/// Best split of `[a, b)`: `(index, reduction, jump)`; ties go to the
/// earliest index.
fn best_split(p: &Prefix, a: usize, b: usize, min_seg: usize) -> Option<(usize, f64, f64)> {
    if b - a < 2 * min_seg {
        return None;
    }
    let n = (b - a) as f64;
    let mut best: Option<(usize, f64, f64)> = None;
    for k in a + min_seg..=b - min_seg {
        let (nl, nr) = ((k - a) as f64, (b - k) as f64);
        let d = p.mean(k, b) - p.mean(a, k);
        let red = nl * nr / n * d * d;
        if best.is_none_or(|(_, r, _)| red > r) {
            best = Some((k, red, d));
        }
    }
    best
}

/// Greedy binary segmentation: each round splits the segment whose best
/// single split removes the most squared deviation from segment means.
pub fn binseg(series: &[f64], max_cp: usize, min_segment: usize) -> Result<ChangePointReport> {
    let min_seg = min_segment.max(2);
    if max_cp == 0 {
        return Err(Error::usage("max_cp must be at least 1"));
    }
    if series.len() < 2 * min_seg {
        return Err(Error::data(format!("{} points, binary segmentation needs {}", series.len(), 2 * min_seg)));
    }
    if series.iter().any(|v| !v.is_finite()) {
        return Err(Error::data("binary segmentation needs a complete finite series"));
    }
    let p = Prefix::new(series);
    let n = series.len();
    let m = p.mean(0, n);
    let initial_cost = series.iter().map(|v| (v - m).powi(2)).sum();
    let mut segments: Vec<(usize, usize, Option<(usize, f64, f64)>)> = vec![(0, n, best_split(&p, 0, n, min_seg))];
    let mut points = Vec::new();
    for rank in 1..=max_cp {
        let pick = segments.iter().enumerate().filter_map(|(i, s)| s.2.map(|b| (i, b))).fold(
            None::<(usize, (usize, f64, f64))>,
            |acc, (i, b)| match acc {
                Some((_, a)) if a.1 > b.1 || (a.1 == b.1 && a.0 < b.0) => acc,
                _ => Some((i, b)),
            },
        );
        let Some((i, (k, reduction, jump))) = pick else {
            break;
        };
        let (a, b, _) = segments.remove(i);
        segments.push((a, k, best_split(&p, a, k, min_seg)));
        segments.push((k, b, best_split(&p, k, b, min_seg)));
        points.push(ChangePoint { index: k, timestamp: None, reduction, jump, rank });
    }
    points.sort_by_key(|p| p.index);
    Ok(ChangePointReport { points, initial_cost, min_segment: min_seg })
}

/// Piecewise-constant series of segment means between the change points.
pub fn segment_means(series: &[f64], change_points: &[usize]) -> Vec<f64> {
    let mut cuts: Vec<usize> = change_points.iter().copied().filter(|&k| k > 0 && k < series.len()).collect();
    cuts.sort_unstable();
    cuts.dedup();
    let mut out = Vec::with_capacity(series.len());
    let mut start = 0;
    for end in cuts.into_iter().chain(std::iter::once(series.len())) {
        let seg = &series[start..end];
        let m = seg.iter().sum::<f64>() / seg.len().max(1) as f64;
        out.extend(std::iter::repeat_n(m, seg.len()));
        start = end;
    }
    out
}

/// Keeps change points in discovery order while `|jump| ≥ κ·sd`, stopping
/// at the first that falls short.
pub fn significance_filter(report: &ChangePointReport, residual_sd: f64, kappa: f64) -> ChangePointReport {
    let mut kept = Vec::new();
    for p in report.by_rank() {
        if p.jump.abs() >= kappa * residual_sd && p.reduction > 0.0 {
            kept.push(p.clone());
        } else {
            break;
        }
    }
    kept.sort_by_key(|p| p.index);
    ChangePointReport { points: kept, ..report.clone() }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub n: usize,
    pub mean: f64,
    pub sd: f64,
    pub skewness: f64,
    /// Excess kurtosis.
    pub kurtosis: f64,
    /// `mean / (sd / √n)`.
    pub t_statistic: f64,
    /// Autocorrelations at lags `1..=max_lag`.
    pub acf: Vec<f64>,
    pub ljung_box: f64,
    pub ljung_box_p: f64,
    /// Set for a constant series: every moment beyond the mean is zero.
    pub degenerate: bool,
}

/// Lags of the Ljung–Box statistic: one day of half-hours.
pub const LJUNG_BOX_LAGS: usize = 48;

pub fn residual_diagnostics(residuals: &[f64], max_lag: usize) -> Result<Diagnostics> {
    let n = residuals.len();
    if n < 30 {
        return Err(Error::data(format!("{n} residuals, diagnostics need at least 30")));
    }
    if max_lag == 0 || max_lag >= n {
        return Err(Error::usage("lag window must lie in [1, n)"));
    }
    if residuals.iter().any(|v| !v.is_finite()) {
        return Err(Error::data("non-finite residual"));
    }
    let nf = n as f64;
    let mean = residuals.iter().sum::<f64>() / nf;
    let dev: Vec<f64> = residuals.iter().map(|v| v - mean).collect();
    let m2 = dev.iter().map(|d| d * d).sum::<f64>() / nf;
    let sd = (m2 * nf / (nf - 1.0)).sqrt();
    if m2 <= f64::EPSILON * mean.abs().max(1.0).powi(2) * 1e-6 || m2 == 0.0 {
        return Ok(Diagnostics {
            n,
            mean,
            sd: 0.0,
            skewness: 0.0,
            kurtosis: 0.0,
            t_statistic: 0.0,
            acf: vec![0.0; max_lag],
            ljung_box: 0.0,
            ljung_box_p: 1.0,
            degenerate: true,
        });
    }
    let m3 = dev.iter().map(|d| d.powi(3)).sum::<f64>() / nf;
    let m4 = dev.iter().map(|d| d.powi(4)).sum::<f64>() / nf;
    let c0 = m2 * nf;
    let acf: Vec<f64> = (1..=max_lag).map(|k| (0..n - k).map(|t| dev[t] * dev[t + k]).sum::<f64>() / c0).collect();
    let ljung_box = nf * (nf + 2.0) * acf.iter().enumerate().map(|(i, r)| r * r / (nf - (i + 1) as f64)).sum::<f64>();
    let ljung_box_p = 1.0 - ChiSquared::new(max_lag as f64).expect("positive dof").cdf(ljung_box);
    Ok(Diagnostics {
        n,
        mean,
        sd,
        skewness: m3 / m2.powf(1.5),
        kurtosis: m4 / (m2 * m2) - 3.0,
        t_statistic: mean / (sd / nf.sqrt()),
        acf,
        ljung_box,
        ljung_box_p,
        degenerate: false,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum SavingsMode {
    /// Mean over the window of `res_t / L̂_t`.
    #[default]
    MeanOfRatios,
    /// `Σ res_t / Σ L̂_t`.
    RatioOfMeans,
}

/// Loads below this are treated as a broken prediction.
pub const MIN_PREDICTED_LOAD: f64 = 1e-6;

/// Residuals relative to the predicted load, in percent.
pub fn savings_percent(residuals: &[f64], predicted: &[f64], mode: SavingsMode) -> Result<f64> {
    if residuals.len() != predicted.len() {
        return Err(Error::usage("residuals and predicted loads differ in length"));
    }
    if residuals.is_empty() {
        return Err(Error::data("empty savings window"));
    }
    if let Some(k) = predicted.iter().position(|l| !(l.abs() >= MIN_PREDICTED_LOAD)) {
        return Err(Error::numerical(format!("predicted load {} at position {k} is too close to zero", predicted[k])));
    }
    let n = residuals.len() as f64;
    Ok(100.0
        * match mode {
            SavingsMode::MeanOfRatios => residuals.iter().zip(predicted).map(|(r, l)| r / l).sum::<f64>() / n,
            SavingsMode::RatioOfMeans => residuals.iter().sum::<f64>() / predicted.iter().sum::<f64>(),
        })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn sse(x: &[f64]) -> f64 {
        let m = x.iter().sum::<f64>() / x.len() as f64;
        x.iter().map(|v| (v - m).powi(2)).sum()
    }

    #[test]
    fn single_noiseless_step() {
        let x: Vec<f64> = (0..200).map(|i| if i < 100 { 0.0 } else { 5.0 }).collect();
        let r = binseg(&x, 1, 10).unwrap();
        assert_eq!(r.points.len(), 1);
        assert_eq!(r.points[0].index, 100);
        assert_eq!(r.points[0].rank, 1);
        assert!((r.points[0].jump - 5.0).abs() < 1e-12);
        // exhaustive oracle: every split's direct SSE
        let best = (10..=190)
            .min_by(|&a, &b| (sse(&x[..a]) + sse(&x[a..])).total_cmp(&(sse(&x[..b]) + sse(&x[b..]))))
            .unwrap();
        assert_eq!(best, 100);
    }

    #[test]
    fn larger_step_is_ranked_first() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x: Vec<f64> = (0..300)
            .map(|i| {
                (if i < 100 {
                    0.0
                } else if i < 200 {
                    5.0
                } else {
                    6.0
                }) + 0.1 * rng.sample::<f64, _>(StandardNormal)
            })
            .collect();
        let r = binseg(&x, 2, 10).unwrap();
        let ranked = r.by_rank();
        assert_eq!(ranked[0].index, 100);
        assert_eq!(ranked[1].index, 200);
        // brute force over all pairs of splits: the same pair is optimal
        let mut best = (f64::INFINITY, 0, 0);
        for a in (10..=280).step_by(1) {
            for b in (a + 10..=290).step_by(5) {
                let c = sse(&x[..a]) + sse(&x[a..b]) + sse(&x[b..]);
                if c < best.0 {
                    best = (c, a, b);
                }
            }
        }
        assert_eq!(best.1, 100);
        assert!((best.2 as i64 - 200).abs() <= 5);
    }

    #[test]
    fn constant_series_has_no_significant_change() {
        let x = vec![3.0; 200];
        let r = binseg(&x, 5, 10).unwrap();
        assert!(r.points.iter().all(|p| p.reduction == 0.0));
        assert!(significance_filter(&r, 1.0, 0.25).points.is_empty());
    }

    #[test]
    fn reconstruction_error_is_the_residual_cost() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x: Vec<f64> = (0..500).map(|i| (i / 120) as f64 + rng.sample::<f64, _>(StandardNormal)).collect();
        let r = binseg(&x, 6, 20).unwrap();
        let fitted = segment_means(&x, &r.indices());
        let resid: f64 = x.iter().zip(&fitted).map(|(a, b)| (a - b).powi(2)).sum();
        assert!((resid - (r.initial_cost - r.total_reduction())).abs() < 1e-8 * r.initial_cost);
    }

    #[test]
    fn segment_means_cases() {
        assert_eq!(segment_means(&[1.0, 2.0, 3.0], &[]), vec![2.0; 3]);
        assert_eq!(segment_means(&[1.0, 3.0, 10.0, 20.0], &[2]), vec![2.0, 2.0, 15.0, 15.0]);
    }

    #[test]
    fn filter_edge_cases() {
        let x: Vec<f64> = (0..400).map(|i| 100.0 * (i / 100) as f64).collect();
        let r = binseg(&x, 3, 10).unwrap();
        assert_eq!(significance_filter(&r, 1.0, 0.25).points.len(), 3);
        assert!(significance_filter(&r, 1.0, f64::INFINITY).points.is_empty());
    }

    #[test]
    fn short_series_is_rejected() {
        assert!(binseg(&[1.0; 50], 1, 48).is_err());
        assert!(binseg(&[1.0; 96], 1, 48).is_ok());
    }

    #[test]
    fn white_noise_passes_the_portmanteau_test() {
        let n = 2000;
        let crit = ChiSquared::new(48.0).unwrap().inverse_cdf(0.99);
        let (mut pass, mut centred) = (0, 0);
        for seed in 0..40 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let e: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
            let d = residual_diagnostics(&e, LJUNG_BOX_LAGS).unwrap();
            if d.mean.abs() < 3.0 / (n as f64).sqrt() {
                centred += 1;
            }
            if d.ljung_box < crit {
                pass += 1;
            }
        }
        assert!(pass >= 38, "{pass}/40");
        // a 3-sigma band misses about 0.3% of seeds
        assert!(centred >= 39, "{centred}/40");
    }

    #[test]
    fn autocorrelated_noise_fails_the_portmanteau_test() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut e = vec![0.0f64; 2000];
        for t in 1..e.len() {
            e[t] = 0.9 * e[t - 1] + rng.sample::<f64, _>(StandardNormal);
        }
        let d = residual_diagnostics(&e, LJUNG_BOX_LAGS).unwrap();
        assert!(d.ljung_box > ChiSquared::new(48.0).unwrap().inverse_cdf(0.99));
        assert!((d.acf[0] - 0.9).abs() < 0.05);
    }

    #[test]
    fn diagnostics_hand_values() {
        let x: Vec<f64> = (0..40).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        let d = residual_diagnostics(&x, 2).unwrap();
        assert_eq!(d.mean, 0.0);
        assert!((d.acf[0] + 39.0 / 40.0).abs() < 1e-12);
        assert!((d.acf[1] - 38.0 / 40.0).abs() < 1e-12);
        assert!(d.skewness.abs() < 1e-12);
        assert!((d.kurtosis + 2.0).abs() < 1e-12);
        let c = residual_diagnostics(&[2.5; 40], 5).unwrap();
        assert!(c.degenerate && c.sd == 0.0);
        assert!(residual_diagnostics(&[1.0; 10], 2).is_err());
    }

    #[test]
    fn savings_cases() {
        let l = vec![50.0, 60.0, 70.0];
        let r: Vec<f64> = l.iter().map(|v| -0.1 * v).collect();
        assert!((savings_percent(&r, &l, SavingsMode::MeanOfRatios).unwrap() + 10.0).abs() < 1e-12);
        assert!((savings_percent(&r, &l, SavingsMode::RatioOfMeans).unwrap() + 10.0).abs() < 1e-12);
        assert_eq!(savings_percent(&[0.0; 3], &l, SavingsMode::MeanOfRatios).unwrap(), 0.0);
        assert!(savings_percent(&[1.0], &[0.0], SavingsMode::MeanOfRatios).is_err());
        // the two definitions differ once ratios vary
        let r2 = [-10.0, 0.0, 0.0];
        let a = savings_percent(&r2, &l, SavingsMode::MeanOfRatios).unwrap();
        let b = savings_percent(&r2, &l, SavingsMode::RatioOfMeans).unwrap();
        assert!((a - b).abs() > 0.1);
    }

    proptest! {
        #[test]
        fn translation_and_scale_leave_change_points_alone(seed in 0u64..500, c in -50.0f64..50.0, a in 0.1f64..20.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x: Vec<f64> = (0..300).map(|i| (i / 75) as f64 * 2.0 + rng.sample::<f64, _>(StandardNormal)).collect();
            let base = binseg(&x, 4, 10).unwrap();
            let shifted = binseg(&x.iter().map(|v| v + c).collect::<Vec<_>>(), 4, 10).unwrap();
            let scaled = binseg(&x.iter().map(|v| v * a).collect::<Vec<_>>(), 4, 10).unwrap();
            let key = |r: &ChangePointReport| r.points.iter().map(|p| (p.index, p.rank)).collect::<Vec<_>>();
            prop_assert_eq!(key(&base), key(&shifted));
            prop_assert_eq!(key(&base), key(&scaled));
            for (p, q) in base.points.iter().zip(&shifted.points) {
                prop_assert!((p.jump - q.jump).abs() < 1e-9);
            }
        }

        #[test]
        fn reductions_telescope(seed in 0u64..500) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x: Vec<f64> = (0..240).map(|_| rng.random_range(-1.0..1.0)).collect();
            let r = binseg(&x, 5, 12).unwrap();
            let fitted = segment_means(&x, &r.indices());
            let resid: f64 = x.iter().zip(&fitted).map(|(a, b)| (a - b).powi(2)).sum();
            prop_assert!((r.initial_cost - resid - r.total_reduction()).abs() < 1e-9 * r.initial_cost.max(1.0));
        }
    }
}
