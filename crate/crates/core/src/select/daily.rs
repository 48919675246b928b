use std::collections::BTreeMap;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::timegrid::{civil_time, SeriesFrame};

/// Design columns ranked on daily data by default.
pub const DAILY_FEATURES: [&str; 7] = ["temp", "toy", "daytype", "holiday", "work", "tourism", "resident"];

/// Civil-day means of design columns, restricted to complete days.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DailyTable {
    pub dates: Vec<NaiveDate>,
    pub features: Vec<(String, Vec<f64>)>,
    pub target: Vec<f64>,
}

/// Averages `features` and `target` over each civil day. A day is kept only
/// when it has at least 46 half-hours (a short DST day) and every value of
/// every requested column is present, so days without mobility data drop out
/// whenever a mobility index is requested.
pub fn daily_table(design: &SeriesFrame, features: &[&str], target: &str) -> Result<DailyTable> {
    let mut cols = Vec::with_capacity(features.len() + 1);
    for name in features.iter().chain(std::iter::once(&target)) {
        cols.push(design.column(name)?);
    }
    let grid = design.grid();
    // per day: row count and running sums, None once a value is missing
    let mut days: BTreeMap<NaiveDate, (usize, Option<Vec<f64>>)> = BTreeMap::new();
    for k in 0..design.len() {
        let day = civil_time(grid.timestamp(k)).date();
        let entry = days.entry(day).or_insert_with(|| (0, Some(vec![0.0; cols.len()])));
        entry.0 += 1;
        if let Some(sums) = entry.1.as_mut() {
            let mut complete = true;
            for (s, c) in sums.iter_mut().zip(&cols) {
                match c[k] {
                    Some(v) => *s += v,
                    None => complete = false,
                }
            }
            if !complete {
                entry.1 = None;
            }
        }
    }
    let mut dates = Vec::new();
    let mut values: Vec<Vec<f64>> = vec![Vec::new(); cols.len()];
    for (day, (count, sums)) in days {
        let Some(sums) = sums else { continue };
        if count < 46 {
            continue;
        }
        dates.push(day);
        for (v, s) in values.iter_mut().zip(sums) {
            v.push(s / count as f64);
        }
    }
    if dates.is_empty() {
        return Err(Error::data("no complete day for the requested columns"));
    }
    let target = values.pop().unwrap_or_default();
    let features = features.iter().map(|s| s.to_string()).zip(values).collect();
    Ok(DailyTable { dates, features, target })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::timegrid::{Step, TimeGrid};
    use chrono::{TimeZone, Utc};

    #[test]
    fn means_over_complete_civil_days() {
        // Paris is UTC+1 in January: the grid starts at civil 01:00
        let grid = TimeGrid::new(Utc.with_ymd_and_hms(2021, 1, 1, 0, 0, 0).unwrap(), Step::HalfHour, 48 * 3).unwrap();
        let mut frame = SeriesFrame::new(grid);
        let load: Vec<Option<f64>> = (0..144).map(|k| Some(k as f64)).collect();
        let mut work: Vec<Option<f64>> = (0..144).map(|k| Some(if k < 94 { 1.0 } else { 2.0 })).collect();
        work[120] = None;
        frame.push("load", load).unwrap();
        frame.push("work", work).unwrap();
        let t = daily_table(&frame, &["work"], "load").unwrap();
        // Jan 1 has 46 rows (civil 01:00..24:00), Jan 2 is full, Jan 3 has a gap
        assert_eq!(
            t.dates,
            vec![NaiveDate::from_ymd_opt(2021, 1, 1).unwrap(), NaiveDate::from_ymd_opt(2021, 1, 2).unwrap()]
        );
        assert_eq!(t.target[0], (0..46).sum::<usize>() as f64 / 46.0);
        assert_eq!(t.target[1], (46..94).sum::<usize>() as f64 / 48.0);
        assert_eq!(t.features[0].1, vec![1.0, 1.0]);
        assert!(daily_table(&frame, &["nope"], "load").is_err());
    }
}
