use super::{
    calendar_rows, calendar_time, exp_smooth_gappy, lag, running_extrema_gappy, time_of_year, CalendarTable,
    MobilityTable,
};
use crate::error::{Error, Result};
use crate::timegrid::{civil_time, deletion_mask, SeriesFrame, Step, AVAILABILITY_COLUMN};

/// Column names of the assembled design.
pub mod columns {
    pub const LOAD: &str = "load";
    pub const TEMP: &str = "temp";
    pub const TEMP95: &str = "temp95";
    pub const TEMP99: &str = "temp99";
    pub const TEMPMIN99: &str = "tempmin99";
    pub const TEMPMAX99: &str = "tempmax99";
    pub const TOY: &str = "toy";
    pub const TIME: &str = "time";
    pub const DAYTYPE: &str = "daytype";
    pub const DLS: &str = "dls";
    pub const HOLIDAY: &str = "holiday";
    pub const SUMMER_HOLIDAY: &str = "summer_holiday";
    pub const HALFHOUR: &str = "halfhour";
    pub const LOAD1D: &str = "load1d";
    pub const LOAD1W: &str = "load1w";
    pub const WORK: &str = "work";
    pub const TOURISM: &str = "tourism";
    pub const RESIDENT: &str = "resident";
    pub const AVAILABLE: &str = crate::timegrid::AVAILABILITY_COLUMN;

    pub fn school(zone: usize) -> String {
        format!("school_{}", (b'a' + zone as u8) as char)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DesignOptions {
    pub fast_smoothing: f64,
    pub slow_smoothing: f64,
}

impl Default for DesignOptions {
    fn default() -> Self {
        DesignOptions { fast_smoothing: 0.95, slow_smoothing: 0.99 }
    }
}

fn flag(b: bool) -> Option<f64> {
    Some(if b { 1.0 } else { 0.0 })
}

/// Assembles every regressor used by the model formulas from a half-hourly
/// frame holding `load` and `temp`. Mobility indices are held constant over
/// each civil day; the availability column marks rows with mobility data.
pub fn build_design(
    frame: &SeriesFrame,
    calendar: &CalendarTable,
    mobility: &MobilityTable,
    options: &DesignOptions,
) -> Result<SeriesFrame> {
    use columns::*;
    let grid = *frame.grid();
    if grid.step() != Step::HalfHour {
        return Err(Error::data("the design is built on a half-hourly grid"));
    }
    let load = frame.column(LOAD)?.to_vec();
    let temp = frame.column(TEMP)?.to_vec();

    let temp95 = exp_smooth_gappy(&temp, options.fast_smoothing)?;
    let temp99 = exp_smooth_gappy(&temp, options.slow_smoothing)?;
    let (tmin, tmax) = running_extrema_gappy(&temp99, &grid);
    let cal = calendar_rows(&grid, calendar);

    let mut out = SeriesFrame::new(grid);
    out.push(LOAD, load.clone())?;
    out.push(TEMP, temp)?;
    out.push(TEMP95, temp95)?;
    out.push(TEMP99, temp99)?;
    out.push(TEMPMIN99, tmin)?;
    out.push(TEMPMAX99, tmax)?;
    out.push(TOY, grid.timestamps().map(|t| Some(time_of_year(t))).collect())?;
    out.push(TIME, grid.timestamps().map(|t| Some(calendar_time(t))).collect())?;
    out.push(DAYTYPE, cal.iter().map(|r| Some(r.day_type as f64)).collect())?;
    out.push(DLS, cal.iter().map(|r| flag(r.dls)).collect())?;
    out.push(HOLIDAY, cal.iter().map(|r| flag(r.holiday)).collect())?;
    out.push(SUMMER_HOLIDAY, cal.iter().map(|r| flag(r.summer_holiday)).collect())?;
    for z in 0..calendar.zones() {
        out.push(school(z), cal.iter().map(|r| flag(r.school_holiday[z])).collect())?;
    }
    out.push(HALFHOUR, (0..grid.len()).map(|k| Some(grid.half_hour_of(k) as f64)).collect())?;
    out.push(LOAD1D, lag(&load, 48))?;
    out.push(LOAD1W, lag(&load, 336))?;

    let daily: Vec<_> = grid.timestamps().map(|t| mobility.get(&civil_time(t).date()).copied()).collect();
    out.push(WORK, daily.iter().map(|d| d.map(|m| m.work)).collect())?;
    out.push(TOURISM, daily.iter().map(|d| d.map(|m| m.tourism)).collect())?;
    out.push(RESIDENT, daily.iter().map(|d| d.map(|m| m.resident)).collect())?;
    let masked = deletion_mask(&out, &[WORK, TOURISM, RESIDENT])?;
    debug_assert!(masked.has(AVAILABILITY_COLUMN));
    Ok(masked)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::MobilityIndices;
    use crate::gam::parse_formula;
    use crate::timegrid::build_grid;
    use chrono::{Duration, TimeZone, Utc};

    fn base_frame(days: i64) -> SeriesFrame {
        let t = Utc.with_ymd_and_hms(2021, 1, 4, 0, 0, 0).unwrap();
        let g = build_grid(t, t + Duration::days(days), Step::HalfHour).unwrap();
        let n = g.len();
        SeriesFrame::new(g)
            .with("load", (0..n).map(|i| Some(50.0 + (i % 48) as f64 * 0.1)).collect())
            .unwrap()
            .with("temp", (0..n).map(|i| Some(5.0 + ((i as f64) / 20.0).sin())).collect())
            .unwrap()
    }

    #[test]
    fn design_has_every_regressor_of_the_reference_model() {
        let f = base_frame(10);
        let d = build_design(&f, &CalendarTable::default(), &MobilityTable::new(), &DesignOptions::default()).unwrap();
        for name in [
            "Temp95",
            "Temp99",
            "TempMin99",
            "TempMax99",
            "ToY",
            "DayType",
            "DLS",
            "Load1D",
            "Load1W",
            "Work",
            "Tourism",
            "Resident",
            "Holiday",
        ] {
            assert!(d.has(&name.to_lowercase()), "missing {name}");
        }
        // load lags
        let l1d = d.column("load1d").unwrap();
        assert!(l1d[..48].iter().all(Option::is_none));
        assert_eq!(l1d[48], f.column("load").unwrap()[0]);
    }

    #[test]
    fn empty_mobility_means_missing_indices_and_false_mask() {
        let f = base_frame(3);
        let d = build_design(&f, &CalendarTable::default(), &MobilityTable::new(), &DesignOptions::default()).unwrap();
        assert!(d.column("work").unwrap().iter().all(Option::is_none));
        assert!(d.column("available").unwrap().iter().all(|v| *v == Some(0.0)));
    }

    #[test]
    fn mobility_held_over_the_civil_day() {
        let f = base_frame(3);
        let mut m = MobilityTable::new();
        let date = chrono::NaiveDate::from_ymd_opt(2021, 1, 5).unwrap();
        m.insert(date, MobilityIndices { work: 3.0, tourism: 1.0, resident: 9.0 });
        let d = build_design(&f, &CalendarTable::default(), &m, &DesignOptions::default()).unwrap();
        let work = d.column("work").unwrap();
        let present = work.iter().filter(|v| v.is_some()).count();
        assert_eq!(present, 48);
        assert!(work.iter().flatten().all(|&v| v == 3.0));
    }

    #[test]
    fn formula_variables_are_all_emitted() {
        let f = base_frame(2);
        let d = build_design(&f, &CalendarTable::default(), &MobilityTable::new(), &DesignOptions::default()).unwrap();
        let formula = parse_formula(crate::gam::REFERENCE_FORMULA).unwrap();
        let vars = formula.variables();
        assert!(!vars.is_empty());
        for v in &vars {
            assert!(d.has(v), "design lacks `{v}`");
        }
        // audited count: every design column is either a regressor, the response or bookkeeping
        let bookkeeping =
            ["halfhour", "available", "summer_holiday", "holiday", "tourism", "resident", "work", "temp95"];
        for name in d.names() {
            assert!(vars.contains(name) || name == "load" || bookkeeping.contains(&name.as_str()), "unexpected {name}");
        }
    }

    #[test]
    fn missing_prerequisite_is_named() {
        let t = Utc.with_ymd_and_hms(2021, 1, 4, 0, 0, 0).unwrap();
        let g = build_grid(t, t + Duration::days(1), Step::HalfHour).unwrap();
        let f = SeriesFrame::new(g).with("load", vec![Some(1.0); 48]).unwrap();
        let err =
            build_design(&f, &CalendarTable::default(), &MobilityTable::new(), &DesignOptions::default()).unwrap_err();
        assert!(err.to_string().contains("temp"));
    }
}
