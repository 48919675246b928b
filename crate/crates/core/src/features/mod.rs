//! Derived regressors: smoothed temperatures and their daily extrema, time of
//! year, lags, standardisation, correlation, calendar and mobility indices.

mod calendar;
mod design;
mod mobility;

use chrono::{DateTime, Datelike, TimeZone, Utc};

use crate::error::{Error, Result};
use crate::real::Real;
use crate::timegrid::{civil_time, Step, TimeGrid};

pub use calendar::{calendar_rows, CalendarDay, CalendarRow, CalendarTable};
pub use design::{build_design, columns as design_columns, DesignOptions};
pub use mobility::{daily_indices, MobilityCategory, MobilityIndices, MobilityOrigin, MobilityRecord, MobilityTable};

/// Exponential smoothing `s(0) = x(0)`, `s(k) = alpha·s(k-1) + (1-alpha)·x(k)`.
pub fn exp_smooth<T: Real>(x: &[T], alpha: T) -> Result<Vec<T>> {
    if !(alpha >= T::zero() && alpha < T::one()) {
        return Err(Error::usage(format!("smoothing factor {alpha} outside [0, 1)")));
    }
    let mut out = Vec::with_capacity(x.len());
    let mut prev: Option<T> = None;
    for &v in x {
        let s = match prev {
            None => v,
            Some(p) => alpha * p + (T::one() - alpha) * v,
        };
        out.push(s);
        prev = Some(s);
    }
    Ok(out)
}

/// Smoothing that tolerates holes: the state is held across missing cells,
/// which stay missing in the output.
pub fn exp_smooth_gappy(x: &[Option<f64>], alpha: f64) -> Result<Vec<Option<f64>>> {
    if !(0.0..1.0).contains(&alpha) {
        return Err(Error::usage(format!("smoothing factor {alpha} outside [0, 1)")));
    }
    let mut prev: Option<f64> = None;
    Ok(x.iter()
        .map(|v| {
            let v = (*v)?;
            let s = prev.map_or(v, |p| alpha * p + (1.0 - alpha) * v);
            prev = Some(s);
            Some(s)
        })
        .collect())
}

/// Running minimum and maximum within each civil day, up to and including
/// the current half-hour.
pub fn running_extrema_by_day<T: Real>(s: &[T], grid: &TimeGrid) -> Result<(Vec<T>, Vec<T>)> {
    if grid.step() != Step::HalfHour {
        return Err(Error::usage("daily extrema need a half-hourly grid"));
    }
    if s.len() != grid.len() {
        return Err(Error::data("series does not match grid"));
    }
    let mut mins = Vec::with_capacity(s.len());
    let mut maxs = Vec::with_capacity(s.len());
    let mut current_day = None;
    let (mut lo, mut hi) = (T::zero(), T::zero());
    for (k, &v) in s.iter().enumerate() {
        let day = civil_time(grid.timestamp(k)).date();
        if current_day != Some(day) {
            current_day = Some(day);
            lo = v;
            hi = v;
        } else {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        mins.push(lo);
        maxs.push(hi);
    }
    Ok((mins, maxs))
}

/// Gap-tolerant variant of [`running_extrema_by_day`]; missing cells are skipped.
pub fn running_extrema_gappy(s: &[Option<f64>], grid: &TimeGrid) -> (Vec<Option<f64>>, Vec<Option<f64>>) {
    let mut mins = Vec::with_capacity(s.len());
    let mut maxs = Vec::with_capacity(s.len());
    let mut current_day = None;
    let (mut lo, mut hi): (Option<f64>, Option<f64>) = (None, None);
    for (k, v) in s.iter().enumerate() {
        let day = civil_time(grid.timestamp(k)).date();
        if current_day != Some(day) {
            current_day = Some(day);
            lo = None;
            hi = None;
        }
        if let Some(v) = *v {
            lo = Some(lo.map_or(v, |l| l.min(v)));
            hi = Some(hi.map_or(v, |h| h.max(v)));
            mins.push(lo);
            maxs.push(hi);
        } else {
            mins.push(None);
            maxs.push(None);
        }
    }
    (mins, maxs)
}

/// Position in the (UTC) year: 0 at 1 January 00:00, 1 at 31 December 23:30.
pub fn time_of_year(t: DateTime<Utc>) -> f64 {
    let year = t.year();
    let start = Utc.with_ymd_and_hms(year, 1, 1, 0, 0, 0).unwrap();
    let next = Utc.with_ymd_and_hms(year + 1, 1, 1, 0, 0, 0).unwrap();
    let span = (next - start).num_seconds() - 1800;
    ((t - start).num_seconds() as f64 / span as f64).min(1.0)
}

/// Fractional years elapsed since 2000-01-01 UTC; the calendar-time regressor.
pub fn calendar_time(t: DateTime<Utc>) -> f64 {
    let origin = Utc.with_ymd_and_hms(2000, 1, 1, 0, 0, 0).unwrap();
    (t - origin).num_seconds() as f64 / (365.25 * 86_400.0)
}

/// `y(t) = x(t - k)`; the first `k` cells are missing.
pub fn lag<T: Copy>(x: &[Option<T>], k: usize) -> Vec<Option<T>> {
    (0..x.len()).map(|t| if t >= k { x[t - k] } else { None }).collect()
}

fn mean_sd<T: Real>(values: &[T]) -> (T, T) {
    let n = T::from_usize_lossy(values.len());
    let mean = values.iter().copied().sum::<T>() / n;
    let var = values.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / (n - T::one());
    (mean, var.sqrt())
}

/// Standardises the present entries to mean 0 and (sample) standard deviation 1.
pub fn zscore<T: Real>(x: &[Option<T>]) -> Result<Vec<Option<T>>> {
    let present: Vec<T> = x.iter().flatten().copied().collect();
    if present.len() < 2 {
        return Err(Error::data("z-score needs at least two values"));
    }
    let (mean, sd) = mean_sd(&present);
    if !(sd > T::zero()) {
        return Err(Error::data("z-score of a constant series"));
    }
    Ok(x.iter().map(|v| v.map(|v| (v - mean) / sd)).collect())
}

/// Pearson correlation between `x(t - lag)` and `y(t)` over the cells where
/// both are present and `keep(t)` holds.
pub fn pearson<T: Real>(x: &[Option<T>], y: &[Option<T>], lag: usize, keep: Option<&[bool]>) -> Result<T> {
    if x.len() != y.len() {
        return Err(Error::data("pearson: series lengths differ"));
    }
    let pairs: Vec<(T, T)> =
        (lag..y.len()).filter(|&t| keep.is_none_or(|k| k[t])).filter_map(|t| Some((x[t - lag]?, y[t]?))).collect();
    if pairs.len() < 3 {
        return Err(Error::data(format!("pearson: only {} overlapping pairs", pairs.len())));
    }
    let n = T::from_usize_lossy(pairs.len());
    let mx = pairs.iter().map(|p| p.0).sum::<T>() / n;
    let my = pairs.iter().map(|p| p.1).sum::<T>() / n;
    let (mut sxy, mut sxx, mut syy) = (T::zero(), T::zero(), T::zero());
    for &(a, b) in &pairs {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == T::zero() || syy == T::zero() {
        return Err(Error::data("pearson: zero variance"));
    }
    Ok((sxy / (sxx * syy).sqrt()).max(-T::one()).min(T::one()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::timegrid::build_grid;
    use chrono::Duration;
    use proptest::prelude::*;

    #[test]
    fn exp_smooth_cases() {
        assert_eq!(exp_smooth(&[3.0, 3.0, 3.0], 0.7).unwrap(), vec![3.0; 3]);
        assert_eq!(exp_smooth(&[1.0, -2.0, 5.0], 0.0).unwrap(), vec![1.0, -2.0, 5.0]);
        let s = exp_smooth(&[0.0f64, 1.0, 1.0], 0.95).unwrap();
        // s1 = 0.05, s2 = 0.95*0.05 + 0.05 = 0.0975
        assert!((s[1] - 0.05).abs() < 1e-15);
        assert!((s[2] - 0.0975).abs() < 1e-15);
        assert!(exp_smooth(&[1.0], 1.0).is_err());
        assert!(exp_smooth(&[1.0], -0.1).is_err());
    }

    proptest! {
        #[test]
        fn exp_smooth_stays_within_input_range(x in proptest::collection::vec(-40.0f64..40.0, 1..200), alpha in 0.0f64..0.999) {
            let s = exp_smooth(&x, alpha).unwrap();
            let lo = x.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            for v in s {
                prop_assert!(v >= lo - 1e-12 && v <= hi + 1e-12);
            }
        }

        #[test]
        fn pearson_affine_equivariance(
            x in proptest::collection::vec(-10.0f64..10.0, 6..40),
            noise in proptest::collection::vec(-1.0f64..1.0, 40),
            a in prop_oneof![-5.0f64..-0.1, 0.1f64..5.0],
            b in -20.0f64..20.0,
        ) {
            let y: Vec<Option<f64>> = x.iter().zip(&noise).map(|(v, e)| Some(v + e)).collect();
            let xs: Vec<Option<f64>> = x.iter().map(|v| Some(*v)).collect();
            let ay: Vec<Option<f64>> = y.iter().map(|v| v.map(|v| a * v + b)).collect();
            if let (Ok(r1), Ok(r2)) = (pearson(&xs, &y, 0, None), pearson(&xs, &ay, 0, None)) {
                prop_assert!((r2 - a.signum() * r1).abs() < 1e-12);
            }
        }
    }

    fn hh_grid(day: (i32, u32, u32), days: i64) -> TimeGrid {
        let t = Utc.with_ymd_and_hms(day.0, day.1, day.2, 0, 0, 0).unwrap() - Duration::hours(1);
        build_grid(t, t + Duration::days(days), Step::HalfHour).unwrap()
    }

    #[test]
    fn extrema_of_a_rising_day() {
        // winter: civil midnight is 23:00 UTC the day before
        let g = hh_grid((2021, 1, 10), 1);
        let s: Vec<f64> = (0..48).map(|i| i as f64).collect();
        let (lo, hi) = running_extrema_by_day(&s, &g).unwrap();
        assert!(lo.iter().all(|&v| v == 0.0));
        assert_eq!(hi, s);
    }

    #[test]
    fn extrema_reset_at_civil_midnight_and_match_prefix_scan() {
        let g = hh_grid((2021, 2, 1), 3);
        let s: Vec<f64> = (0..g.len()).map(|i| ((i * 7919) % 97) as f64 - 40.0).collect();
        let (lo, hi) = running_extrema_by_day(&s, &g).unwrap();
        for k in 0..s.len() {
            let day = civil_time(g.timestamp(k)).date();
            // O(n^2) oracle: scan back to the first cell of the same civil day
            let mut j = k;
            while j > 0 && civil_time(g.timestamp(j - 1)).date() == day {
                j -= 1;
            }
            let window = &s[j..=k];
            assert_eq!(lo[k], window.iter().copied().fold(f64::INFINITY, f64::min));
            assert_eq!(hi[k], window.iter().copied().fold(f64::NEG_INFINITY, f64::max));
            if j == k {
                assert_eq!(lo[k], hi[k]);
            }
        }
    }

    #[test]
    fn time_of_year_anchors() {
        let jan1 = Utc.with_ymd_and_hms(2021, 1, 1, 0, 0, 0).unwrap();
        assert_eq!(time_of_year(jan1), 0.0);
        let dec31 = Utc.with_ymd_and_hms(2021, 12, 31, 23, 30, 0).unwrap();
        assert!((time_of_year(dec31) - 1.0).abs() < 1e-15);
        let leap_dec31 = Utc.with_ymd_and_hms(2020, 12, 31, 23, 30, 0).unwrap();
        assert!((time_of_year(leap_dec31) - 1.0).abs() < 1e-15);
        let jul2 = Utc.with_ymd_and_hms(2021, 7, 2, 0, 0, 0).unwrap();
        let oracle = 182.0 / (365.0 - 0.5 / 24.0);
        assert!((time_of_year(jul2) - oracle).abs() < 1e-6);
    }

    #[test]
    fn time_of_year_monotone_within_year() {
        let g = hh_grid((2019, 12, 30), 5);
        let toy: Vec<f64> = g.timestamps().map(time_of_year).collect();
        let restart = g.timestamps().position(|t| t.year() == 2020).unwrap();
        assert!(toy[..restart].windows(2).all(|w| w[1] >= w[0]));
        assert_eq!(toy[restart], 0.0);
        assert!(toy[restart..].windows(2).all(|w| w[1] >= w[0]));
    }

    #[test]
    fn lags() {
        let x: Vec<Option<f64>> = (0..100).map(|i| Some(i as f64)).collect();
        assert_eq!(lag(&lag(&x, 3), 3), lag(&x, 6));
        let d = lag(&x, 48);
        assert!(d[..48].iter().all(Option::is_none));
        assert_eq!(d[48], Some(0.0));
        assert!(lag(&x, 500).iter().all(Option::is_none));
    }

    #[test]
    fn zscore_cases() {
        let x = [Some(1.0), Some(2.0), Some(3.0), Some(4.0), Some(10.0)];
        // mean 4, sample variance (9+4+1+0+36)/4 = 12.5
        let z = zscore(&x).unwrap();
        let sd = 12.5f64.sqrt();
        assert!((z[0].unwrap() - (-3.0 / sd)).abs() < 1e-14);
        assert!((z[4].unwrap() - (6.0 / sd)).abs() < 1e-14);
        let again = zscore(&z).unwrap();
        for (a, b) in again.iter().zip(&z) {
            assert!((a.unwrap() - b.unwrap()).abs() < 1e-12);
        }
        let affine: Vec<_> = x.iter().map(|v| v.map(|v| 3.0 * v - 7.0)).collect();
        for (a, b) in zscore(&affine).unwrap().iter().zip(&z) {
            assert!((a.unwrap() - b.unwrap()).abs() < 1e-12);
        }
        assert!(zscore(&[Some(2.0), Some(2.0), None]).is_err());
    }

    #[test]
    fn pearson_cases() {
        let x: Vec<Option<f64>> = [1.0, 3.0, 2.0, 5.0, 4.0, 7.0].iter().map(|v| Some(*v)).collect();
        let neg: Vec<Option<f64>> = x.iter().map(|v| v.map(|v| -v)).collect();
        assert!((pearson(&x, &x, 0, None).unwrap() - 1.0).abs() < 1e-15);
        assert!((pearson(&x, &neg, 0, None).unwrap() + 1.0).abs() < 1e-15);
        let y: Vec<Option<f64>> = [2.0, 1.0, 4.0, 3.0, 6.0, 8.0].iter().map(|v| Some(*v)).collect();
        // covariance-ratio oracle
        let xs: Vec<f64> = x.iter().map(|v| v.unwrap()).collect();
        let ys: Vec<f64> = y.iter().map(|v| v.unwrap()).collect();
        let (mx, my) = (xs.iter().sum::<f64>() / 6.0, ys.iter().sum::<f64>() / 6.0);
        let cov: f64 = xs.iter().zip(&ys).map(|(a, b)| (a - mx) * (b - my)).sum::<f64>() / 5.0;
        let sx = (xs.iter().map(|a| (a - mx).powi(2)).sum::<f64>() / 5.0).sqrt();
        let sy = (ys.iter().map(|b| (b - my).powi(2)).sum::<f64>() / 5.0).sqrt();
        assert!((pearson(&x, &y, 0, None).unwrap() - cov / (sx * sy)).abs() < 1e-12);
        let keep = [true, true, false, false, false, false];
        assert!(pearson(&x, &y, 0, Some(&keep)).is_err());
        assert!(pearson(&x, &y, 4, None).is_err());
    }
}
