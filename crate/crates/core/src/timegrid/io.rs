//! CSV ingestion and export. Timestamps are ISO-8601; naive timestamps are
//! read as UTC and bare dates as UTC midnight.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use chrono::{DateTime, NaiveDate, NaiveDateTime, TimeZone, Utc};

use super::{build_grid, SeriesFrame, StationSeries, Step, TimeGrid};
use crate::error::{Error, Result};
use crate::features::{CalendarDay, CalendarTable, MobilityCategory, MobilityOrigin, MobilityRecord, MobilityTable};

pub fn parse_timestamp(s: &str) -> Result<DateTime<Utc>> {
    let s = s.trim();
    if let Ok(t) = DateTime::parse_from_rfc3339(s) {
        return Ok(t.with_timezone(&Utc));
    }
    for fmt in ["%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M", "%Y-%m-%d %H:%M"] {
        if let Ok(t) = NaiveDateTime::parse_from_str(s, fmt) {
            return Ok(Utc.from_utc_datetime(&t));
        }
    }
    if let Ok(d) = NaiveDate::parse_from_str(s, "%Y-%m-%d") {
        return Ok(Utc.from_utc_datetime(&d.and_hms_opt(0, 0, 0).expect("midnight")));
    }
    Err(Error::data(format!("unparseable timestamp `{s}`")))
}

pub fn format_timestamp(t: DateTime<Utc>) -> String {
    t.format("%Y-%m-%dT%H:%M:%SZ").to_string()
}

fn parse_cell(s: &str, what: &str) -> Result<Option<f64>> {
    let s = s.trim();
    if s.is_empty() || s.eq_ignore_ascii_case("na") || s.eq_ignore_ascii_case("nan") {
        return Ok(None);
    }
    s.parse::<f64>().map(Some).map_err(|_| Error::data(format!("bad numeric value `{s}` in {what}")))
}

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| Error::io(path.display().to_string(), e))
}

fn csv_err(e: csv::Error) -> Error {
    Error::data(format!("csv: {e}"))
}

/// Infers the regular grid covering `stamps` (any order, duplicates rejected).
pub fn infer_grid(stamps: &[DateTime<Utc>]) -> Result<TimeGrid> {
    let mut sorted = stamps.to_vec();
    sorted.sort();
    if sorted.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::data("duplicate timestamps"));
    }
    let first = *sorted.first().ok_or_else(|| Error::data("no rows"))?;
    let step = if sorted.len() == 1 {
        Step::HalfHour
    } else {
        let min_gap = sorted.windows(2).map(|w| (w[1] - w[0]).num_seconds()).min().unwrap_or(1800);
        Step::from_seconds(min_gap)?
    };
    let last = *sorted.last().expect("nonempty");
    let grid = build_grid(first, last + step.duration(), step)?;
    if sorted.iter().any(|t| grid.index_of(*t).is_none()) {
        return Err(Error::data("timestamps are not on a regular grid"));
    }
    Ok(grid)
}

/// Reads a frame with a `timestamp` column followed by numeric columns.
pub fn read_frame<R: Read>(reader: R) -> Result<SeriesFrame> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers().map_err(csv_err)?.clone();
    let ts_col =
        headers.iter().position(|h| h == "timestamp").ok_or_else(|| Error::MissingColumn("timestamp".into()))?;
    let mut stamps = Vec::new();
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(csv_err)?;
        stamps.push(parse_timestamp(rec.get(ts_col).unwrap_or(""))?);
        rows.push(rec);
    }
    let grid = infer_grid(&stamps)?;
    let mut frame = SeriesFrame::new(grid);
    for (j, name) in headers.iter().enumerate() {
        if j == ts_col {
            continue;
        }
        let mut col = vec![None; grid.len()];
        for (rec, t) in rows.iter().zip(&stamps) {
            let k = grid.index_of(*t).expect("checked by infer_grid");
            col[k] = parse_cell(rec.get(j).unwrap_or(""), name)?;
        }
        frame.push(name, col)?;
    }
    Ok(frame)
}

pub fn read_frame_path(path: &Path) -> Result<SeriesFrame> {
    read_frame(open(path)?)
}

/// Writes `timestamp` plus every column; missing cells are empty.
pub fn write_frame<W: Write>(frame: &SeriesFrame, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["timestamp".to_string()];
    header.extend(frame.names().iter().cloned());
    w.write_record(&header).map_err(csv_err)?;
    let cols: Vec<&[Option<f64>]> = frame.columns().map(|(_, c)| c).collect();
    for (k, t) in frame.grid().timestamps().enumerate() {
        let mut rec = vec![format_timestamp(t)];
        rec.extend(cols.iter().map(|c| c[k].map(|v| v.to_string()).unwrap_or_default()));
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io("csv output", e))?;
    Ok(())
}

/// Reads `station_id,lat,lon,timestamp,temp_c`; all stations share the
/// 3-hourly grid spanning every timestamp in the file.
pub fn read_stations<R: Read>(reader: R) -> Result<Vec<StationSeries>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers().map_err(csv_err)?.clone();
    let idx = |name: &str| headers.iter().position(|h| h == name).ok_or_else(|| Error::MissingColumn(name.to_string()));
    let (c_id, c_lat, c_lon, c_ts, c_t) =
        (idx("station_id")?, idx("lat")?, idx("lon")?, idx("timestamp")?, idx("temp_c")?);
    let mut by_station: BTreeMap<String, ((f64, f64), Vec<(DateTime<Utc>, Option<f64>)>)> = BTreeMap::new();
    let mut all = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(csv_err)?;
        let id = rec.get(c_id).unwrap_or("").to_string();
        let lat = parse_cell(rec.get(c_lat).unwrap_or(""), "lat")?.ok_or_else(|| Error::data("missing lat"))?;
        let lon = parse_cell(rec.get(c_lon).unwrap_or(""), "lon")?.ok_or_else(|| Error::data("missing lon"))?;
        let t = parse_timestamp(rec.get(c_ts).unwrap_or(""))?;
        let v = parse_cell(rec.get(c_t).unwrap_or(""), "temp_c")?;
        all.push(t);
        by_station.entry(id).or_insert(((lat, lon), Vec::new())).1.push((t, v));
    }
    all.sort();
    all.dedup();
    let first = *all.first().ok_or_else(|| Error::data("empty station file"))?;
    let last = *all.last().expect("nonempty");
    let grid = build_grid(first, last + Step::ThreeHours.duration(), Step::ThreeHours)?;
    by_station
        .into_iter()
        .map(|(id, (loc, obs))| {
            let mut values = vec![None; grid.len()];
            for (t, v) in obs {
                let k = grid
                    .index_of(t)
                    .ok_or_else(|| Error::data(format!("station {id}: timestamp {t} is off the 3-hourly grid")))?;
                values[k] = v;
            }
            StationSeries::new(id, loc, grid, values)
        })
        .collect()
}

pub fn read_stations_path(path: &Path) -> Result<Vec<StationSeries>> {
    read_stations(open(path)?)
}

/// Reads `date,area_id,category,origin,count`.
pub fn read_mobility<R: Read>(reader: R) -> Result<Vec<MobilityRecord>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers().map_err(csv_err)?.clone();
    let idx = |name: &str| headers.iter().position(|h| h == name).ok_or_else(|| Error::MissingColumn(name.to_string()));
    let (c_date, c_area, c_cat, c_org, c_count) =
        (idx("date")?, idx("area_id")?, idx("category")?, idx("origin")?, idx("count")?);
    rdr.records()
        .map(|rec| {
            let rec = rec.map_err(csv_err)?;
            let date = parse_timestamp(rec.get(c_date).unwrap_or(""))?.date_naive();
            let count = parse_cell(rec.get(c_count).unwrap_or(""), "count")?
                .ok_or_else(|| Error::data("missing mobility count"))?;
            if count < 0.0 {
                return Err(Error::data("negative mobility count"));
            }
            Ok(MobilityRecord {
                date,
                area_id: rec.get(c_area).unwrap_or("").to_string(),
                category: rec.get(c_cat).unwrap_or("").parse::<MobilityCategory>()?,
                origin: rec.get(c_org).unwrap_or("").parse::<MobilityOrigin>()?,
                count,
            })
        })
        .collect()
}

pub fn read_mobility_path(path: &Path) -> Result<Vec<MobilityRecord>> {
    read_mobility(open(path)?)
}

/// Reads `date,holiday[,school_a,school_b,school_c][,summer_holiday]`;
/// binary columns hold 0/1.
pub fn read_calendar<R: Read>(reader: R) -> Result<CalendarTable> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers().map_err(csv_err)?.clone();
    let find = |name: &str| headers.iter().position(|h| h == name);
    let c_date = find("date").ok_or_else(|| Error::MissingColumn("date".into()))?;
    let c_hol = find("holiday").ok_or_else(|| Error::MissingColumn("holiday".into()))?;
    let zones: Vec<usize> = ["school_a", "school_b", "school_c"].iter().filter_map(|z| find(z)).collect();
    let c_summer = find("summer_holiday");
    let flag = |rec: &csv::StringRecord, j: usize| -> Result<bool> {
        Ok(parse_cell(rec.get(j).unwrap_or(""), "calendar flag")?.unwrap_or(0.0) != 0.0)
    };
    let mut table = CalendarTable::default();
    for rec in rdr.records() {
        let rec = rec.map_err(csv_err)?;
        let date = parse_timestamp(rec.get(c_date).unwrap_or(""))?.date_naive();
        let day = CalendarDay {
            holiday: flag(&rec, c_hol)?,
            school_holiday: zones.iter().map(|&j| flag(&rec, j)).collect::<Result<Vec<_>>>()?,
            summer_holiday: match c_summer {
                Some(j) => flag(&rec, j)?,
                None => false,
            },
        };
        table.insert(date, day);
    }
    Ok(table)
}

pub fn read_calendar_path(path: &Path) -> Result<CalendarTable> {
    read_calendar(open(path)?)
}

const ZONE_COLUMNS: [&str; 3] = ["school_a", "school_b", "school_c"];

/// Writes a calendar in the layout `read_calendar` accepts.
pub fn write_calendar<W: Write>(table: &CalendarTable, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let zones = table.zones().min(ZONE_COLUMNS.len());
    let mut header = vec!["date", "holiday"];
    header.extend(&ZONE_COLUMNS[..zones]);
    header.push("summer_holiday");
    w.write_record(&header).map_err(csv_err)?;
    let bit = |b: bool| if b { "1" } else { "0" }.to_string();
    for (date, day) in table.iter() {
        let mut rec = vec![date.format("%Y-%m-%d").to_string(), bit(day.holiday)];
        rec.extend((0..zones).map(|z| bit(day.school_holiday.get(z).copied().unwrap_or(false))));
        rec.push(bit(day.summer_holiday));
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io("csv output", e))?;
    Ok(())
}

/// Writes daily indices as presence records of one national area, one
/// record per index, so that `read_mobility` and `daily_indices` give the
/// table back.
pub fn write_mobility<W: Write>(table: &MobilityTable, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["date", "area_id", "category", "origin", "count"]).map_err(csv_err)?;
    for (date, ix) in table {
        let d = date.format("%Y-%m-%d").to_string();
        for (cat, org, v) in [
            ("recurrent_excursionist", "local", ix.work),
            ("tourist", "foreign", ix.tourism),
            ("resident", "local", ix.resident),
        ] {
            w.write_record([d.as_str(), "national", cat, org, &v.to_string()]).map_err(csv_err)?;
        }
    }
    w.flush().map_err(|e| Error::io("csv output", e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn timestamp_forms() {
        let a = parse_timestamp("2020-01-01T00:30:00Z").unwrap();
        let b = parse_timestamp("2020-01-01T01:30:00+01:00").unwrap();
        let c = parse_timestamp("2020-01-01T00:30:00").unwrap();
        assert_eq!(a, c);
        assert_eq!(a, b);
        assert_eq!(parse_timestamp("2020-01-01").unwrap(), parse_timestamp("2020-01-01T00:00:00Z").unwrap());
        assert!(parse_timestamp("yesterday").is_err());
    }

    #[test]
    fn frame_round_trip_with_holes() {
        let text =
            "timestamp,load,temp\n2020-01-01T00:00:00Z,50.5,3\n2020-01-01T01:00:00Z,,4\n2020-01-01T00:30:00Z,51,\n";
        let f = read_frame(text.as_bytes()).unwrap();
        assert_eq!(f.len(), 3);
        assert_eq!(f.column("load").unwrap(), &[Some(50.5), Some(51.0), None]);
        let mut buf = Vec::new();
        write_frame(&f, &mut buf).unwrap();
        let back = read_frame(buf.as_slice()).unwrap();
        assert_eq!(back, f);
    }

    #[test]
    fn stations_and_mobility() {
        let s = "station_id,lat,lon,timestamp,temp_c\nB,45,1,2021-01-01T00:00:00Z,3\nA,48,2,2021-01-01T03:00:00Z,\nA,48,2,2021-01-01T06:00:00Z,5.5\n";
        let st = read_stations(s.as_bytes()).unwrap();
        assert_eq!(st.len(), 2);
        assert_eq!(st[0].station_id, "A");
        assert_eq!(st[0].values, vec![None, None, Some(5.5)]);
        let m = "date,area_id,category,origin,count\n2021-01-04,75,recurrent_excursionist,local,1200\n";
        let recs = read_mobility(m.as_bytes()).unwrap();
        assert_eq!(recs[0].category, MobilityCategory::RecurrentExcursionist);
        let bad = "date,area_id,category,origin,count\n2021-01-04,75,alien,local,1\n";
        assert!(read_mobility(bad.as_bytes()).is_err());
    }

    #[test]
    fn calendar_and_mobility_round_trip() {
        use crate::features::{daily_indices, MobilityIndices};
        let d = |m, dd| NaiveDate::from_ymd_opt(2021, m, dd).unwrap();
        let mut cal = CalendarTable::default();
        cal.insert(
            d(1, 1),
            CalendarDay { holiday: true, school_holiday: vec![true, false, true], summer_holiday: false },
        );
        cal.insert(
            d(7, 20),
            CalendarDay { holiday: false, school_holiday: vec![true, true, true], summer_holiday: true },
        );
        let mut buf = Vec::new();
        write_calendar(&cal, &mut buf).unwrap();
        assert_eq!(read_calendar(buf.as_slice()).unwrap(), cal);
        let mut mob = MobilityTable::new();
        mob.insert(d(1, 4), MobilityIndices { work: 0.95, tourism: 1.0 / 3.0, resident: 1.02 });
        mob.insert(d(1, 5), MobilityIndices { work: 1.0, tourism: 0.2, resident: 0.99 });
        let mut buf = Vec::new();
        write_mobility(&mob, &mut buf).unwrap();
        assert_eq!(daily_indices(&read_mobility(buf.as_slice()).unwrap()), mob);
    }
}
