use std::cmp::Ordering;

use chrono::{DateTime, Duration, Utc};
use serde::{Deserialize, Serialize};

use super::{Column, TimeGrid};
use crate::error::{Error, Result};

/// Mainland France bounding box (lat_min, lat_max, lon_min, lon_max).
const MAINLAND_FRANCE: (f64, f64, f64, f64) = (41.0, 51.5, -5.5, 10.0);

/// Three-hourly temperature record of one weather station.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationSeries {
    pub station_id: String,
    /// (latitude, longitude) in degrees.
    pub location: (f64, f64),
    pub grid: TimeGrid,
    pub values: Column,
}

impl StationSeries {
    pub fn new(station_id: impl Into<String>, location: (f64, f64), grid: TimeGrid, values: Column) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::data("station values do not match the station grid"));
        }
        Ok(StationSeries { station_id: station_id.into(), location, grid, values })
    }

    pub fn value_at(&self, t: DateTime<Utc>) -> Option<f64> {
        self.grid.index_of(t).and_then(|k| self.values[k])
    }

    /// Rejects stations outside mainland France.
    pub fn check_geo(&self) -> Result<()> {
        let (lat, lon) = self.location;
        let (a, b, c, d) = MAINLAND_FRANCE;
        if (a..=b).contains(&lat) && (c..=d).contains(&lon) {
            Ok(())
        } else {
            Err(Error::data(format!("station {} at ({lat}, {lon}) lies outside mainland France", self.station_id)))
        }
    }
}

/// Haversine distance on a 6371 km sphere.
pub fn great_circle_km(a: (f64, f64), b: (f64, f64)) -> f64 {
    let (lat1, lon1) = (a.0.to_radians(), a.1.to_radians());
    let (lat2, lon2) = (b.0.to_radians(), b.1.to_radians());
    let h = ((lat2 - lat1) / 2.0).sin().powi(2) + lat1.cos() * lat2.cos() * ((lon2 - lon1) / 2.0).sin().powi(2);
    2.0 * 6371.0 * h.sqrt().min(1.0).asin()
}

/// Candidates other than `target`, nearest first; ties broken by station id.
pub fn order_neighbors<'a>(target: &StationSeries, candidates: &'a [StationSeries]) -> Vec<&'a StationSeries> {
    let mut out: Vec<(f64, &StationSeries)> = candidates
        .iter()
        .filter(|s| s.station_id != target.station_id)
        .map(|s| (great_circle_km(target.location, s.location), s))
        .collect();
    out.sort_by(|a, b| {
        a.0.partial_cmp(&b.0).unwrap_or(Ordering::Equal).then_with(|| a.1.station_id.cmp(&b.1.station_id))
    });
    out.into_iter().map(|(_, s)| s).collect()
}

/// Which rule filled each hole, plus the holes nothing could fill.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ImputationReport {
    pub by_time_neighbors: usize,
    pub by_nearest_station: usize,
    pub by_adjacent_days: usize,
    pub unrecovered: Vec<DateTime<Utc>>,
}

/// Fills holes of `series` in priority order: mean of the values 3 h before
/// and after; else the nearest station (in `neighbors` order) with a value;
/// else the mean of the values 24 h before and after. Rules only read
/// original measurements, never values imputed in the same pass.
pub fn impute_station(series: &StationSeries, neighbors: &[&StationSeries]) -> (StationSeries, ImputationReport) {
    let mut out = series.clone();
    let mut report = ImputationReport::default();
    let around = |t: DateTime<Utc>, h: i64| -> Option<f64> {
        let before = series.value_at(t - Duration::hours(h))?;
        let after = series.value_at(t + Duration::hours(h))?;
        Some(0.5 * (before + after))
    };
    for (k, slot) in out.values.iter_mut().enumerate() {
        if slot.is_some() {
            continue;
        }
        let t = series.grid.timestamp(k);
        if let Some(v) = around(t, 3) {
            *slot = Some(v);
            report.by_time_neighbors += 1;
        } else if let Some(v) = neighbors.iter().find_map(|s| s.value_at(t)) {
            *slot = Some(v);
            report.by_nearest_station += 1;
        } else if let Some(v) = around(t, 24) {
            *slot = Some(v);
            report.by_adjacent_days += 1;
        } else {
            report.unrecovered.push(t);
        }
    }
    (out, report)
}

/// Pointwise weighted mean over the stations holding a value; weights are
/// renormalised over those stations. Uniform when `weights` is `None`.
pub fn regional_mean_temperature(stations: &[StationSeries], weights: Option<&[f64]>) -> Result<Column> {
    let first = stations.first().ok_or_else(|| Error::data("no stations given"))?;
    if stations.iter().any(|s| s.grid != first.grid) {
        return Err(Error::data("stations must share one grid"));
    }
    let uniform;
    let w = match weights {
        Some(w) => {
            if w.len() != stations.len() || w.iter().any(|&x| !(x >= 0.0)) {
                return Err(Error::usage("weights must be nonnegative, one per station"));
            }
            if (w.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
                return Err(Error::usage("station weights must sum to 1"));
            }
            w
        }
        None => {
            uniform = vec![1.0 / stations.len() as f64; stations.len()];
            &uniform
        }
    };
    Ok((0..first.grid.len())
        .map(|k| {
            let (mut num, mut den) = (0.0, 0.0);
            for (s, &wi) in stations.iter().zip(w) {
                if let Some(v) = s.values[k] {
                    num += wi * v;
                    den += wi;
                }
            }
            (den > 0.0).then(|| num / den)
        })
        .collect())
}
