//! Regular time grids, named series frames, weather imputation, resampling
//! between frequencies and the deletion mask used for incomplete datasets.

mod civil;
pub mod io;
mod mask;
mod resample;
mod stations;

use chrono::{DateTime, Duration, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use civil::{civil_time, is_daylight_saving, paris_offset_hours};
pub use mask::{deletion_mask, AVAILABILITY_COLUMN};
pub use resample::{downsample_first, upsample_hold};
pub use stations::{
    great_circle_km, impute_station, order_neighbors, regional_mean_temperature, ImputationReport, StationSeries,
};

/// Sampling step of a grid. Every supported step divides 24 h.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Step {
    HalfHour,
    ThreeHours,
    Day,
}

impl Step {
    pub fn seconds(self) -> i64 {
        match self {
            Step::HalfHour => 1800,
            Step::ThreeHours => 10_800,
            Step::Day => 86_400,
        }
    }

    pub fn duration(self) -> Duration {
        Duration::seconds(self.seconds())
    }

    pub fn from_seconds(s: i64) -> Result<Self> {
        match s {
            1800 => Ok(Step::HalfHour),
            10_800 => Ok(Step::ThreeHours),
            86_400 => Ok(Step::Day),
            other => Err(Error::data(format!("unsupported step of {other} s (expected 30 min, 3 h or 1 day)"))),
        }
    }

    /// Cells per day.
    pub fn per_day(self) -> usize {
        (86_400 / self.seconds()) as usize
    }
}

/// A regular UTC timeline `start + k·step`, `0 <= k < count`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimeGrid {
    start: DateTime<Utc>,
    step: Step,
    count: usize,
}

impl TimeGrid {
    pub fn new(start: DateTime<Utc>, step: Step, count: usize) -> Result<Self> {
        if count == 0 {
            return Err(Error::usage("time grid must contain at least one cell"));
        }
        Ok(TimeGrid { start, step, count })
    }

    pub fn start(&self) -> DateTime<Utc> {
        self.start
    }

    pub fn step(&self) -> Step {
        self.step
    }

    pub fn len(&self) -> usize {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    /// Exclusive end of the grid.
    pub fn end(&self) -> DateTime<Utc> {
        self.start + Duration::seconds(self.step.seconds() * self.count as i64)
    }

    pub fn timestamp(&self, k: usize) -> DateTime<Utc> {
        self.start + Duration::seconds(self.step.seconds() * k as i64)
    }

    pub fn timestamps(&self) -> impl Iterator<Item = DateTime<Utc>> + '_ {
        (0..self.count).map(move |k| self.timestamp(k))
    }

    /// Index of `t` when it lies exactly on the grid.
    pub fn index_of(&self, t: DateTime<Utc>) -> Option<usize> {
        let delta = (t - self.start).num_seconds();
        if delta < 0 || delta % self.step.seconds() != 0 {
            return None;
        }
        let k = (delta / self.step.seconds()) as usize;
        (k < self.count).then_some(k)
    }

    /// Index of the cell containing `t`.
    pub fn cell_of(&self, t: DateTime<Utc>) -> Option<usize> {
        let delta = (t - self.start).num_seconds();
        if delta < 0 {
            return None;
        }
        let k = (delta / self.step.seconds()) as usize;
        (k < self.count).then_some(k)
    }

    /// Half-hour-of-day slot (0..48) of cell `k` in UTC.
    pub fn half_hour_of(&self, k: usize) -> usize {
        let t = self.timestamp(k);
        let secs = t.timestamp().rem_euclid(86_400);
        (secs / 1800) as usize
    }
}

/// Builds the grid spanning `[start, end)`; the span must be a whole number of steps.
pub fn build_grid(start: DateTime<Utc>, end: DateTime<Utc>, step: Step) -> Result<TimeGrid> {
    if start >= end {
        return Err(Error::usage(format!("grid start {start} is not before end {end}")));
    }
    let span = (end - start).num_seconds();
    if span % step.seconds() != 0 {
        return Err(Error::usage(format!("span of {span} s is not a multiple of the {} s step", step.seconds())));
    }
    TimeGrid::new(start, step, (span / step.seconds()) as usize)
}

/// Half-open time range `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Window {
    pub start: DateTime<Utc>,
    pub end: DateTime<Utc>,
}

impl Window {
    pub fn new(start: DateTime<Utc>, end: DateTime<Utc>) -> Result<Self> {
        if start >= end {
            return Err(Error::usage(format!("window start {start} is not before end {end}")));
        }
        Ok(Window { start, end })
    }

    /// The whole span of a grid.
    pub fn of(grid: &TimeGrid) -> Self {
        Window { start: grid.start(), end: grid.end() }
    }

    pub fn contains(&self, t: DateTime<Utc>) -> bool {
        self.start <= t && t < self.end
    }

    /// Grid cells inside the window.
    pub fn cells(&self, grid: &TimeGrid) -> std::ops::Range<usize> {
        let first = if self.start <= grid.start() {
            0
        } else {
            grid.cell_of(self.start).map_or(grid.len(), |k| k + usize::from(grid.timestamp(k) < self.start))
        };
        let last = if self.end >= grid.end() {
            grid.len()
        } else {
            grid.cell_of(self.end).map_or(0, |k| k + usize::from(grid.timestamp(k) < self.end))
        };
        first..last.max(first)
    }
}

/// Optional real values, one per grid cell.
pub type Column = Vec<Option<f64>>;

/// Named columns of optional values aligned on one grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesFrame {
    grid: TimeGrid,
    names: Vec<String>,
    columns: Vec<Column>,
}

impl SeriesFrame {
    pub fn new(grid: TimeGrid) -> Self {
        SeriesFrame { grid, names: Vec::new(), columns: Vec::new() }
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn has(&self, name: &str) -> bool {
        self.position(name).is_some()
    }

    fn position(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// Adds a new column; names must be unique.
    pub fn push(&mut self, name: impl Into<String>, values: Column) -> Result<()> {
        let name = name.into();
        if values.len() != self.grid.len() {
            return Err(Error::data(format!(
                "column `{name}` has {} entries, grid has {}",
                values.len(),
                self.grid.len()
            )));
        }
        if self.has(&name) {
            return Err(Error::data(format!("duplicate column `{name}`")));
        }
        self.names.push(name);
        self.columns.push(values);
        Ok(())
    }

    /// Adds or replaces a column.
    pub fn set(&mut self, name: impl Into<String>, values: Column) -> Result<()> {
        let name = name.into();
        match self.position(&name) {
            Some(i) => {
                if values.len() != self.grid.len() {
                    return Err(Error::data(format!("column `{name}` has the wrong length")));
                }
                self.columns[i] = values;
                Ok(())
            }
            None => self.push(name, values),
        }
    }

    pub fn with(mut self, name: impl Into<String>, values: Column) -> Result<Self> {
        self.push(name, values)?;
        Ok(self)
    }

    pub fn column(&self, name: &str) -> Result<&[Option<f64>]> {
        self.position(name).map(|i| self.columns[i].as_slice()).ok_or_else(|| Error::MissingColumn(name.to_string()))
    }

    /// Column with missing cells replaced by NaN.
    pub fn dense(&self, name: &str) -> Result<Vec<f64>> {
        Ok(self.column(name)?.iter().map(|v| v.unwrap_or(f64::NAN)).collect())
    }

    pub fn columns(&self) -> impl Iterator<Item = (&str, &[Option<f64>])> {
        self.names.iter().map(String::as_str).zip(self.columns.iter().map(Vec::as_slice))
    }

    /// Frame restricted to the cells `[from, to)` of the grid.
    pub fn slice(&self, from: usize, to: usize) -> Result<SeriesFrame> {
        if from >= to || to > self.len() {
            return Err(Error::usage(format!("invalid slice {from}..{to} of {}", self.len())));
        }
        let grid = TimeGrid::new(self.grid.timestamp(from), self.grid.step(), to - from)?;
        Ok(SeriesFrame {
            grid,
            names: self.names.clone(),
            columns: self.columns.iter().map(|c| c[from..to].to_vec()).collect(),
        })
    }
}

/// Converts a dense slice into a column, mapping non-finite values to missing.
pub fn to_column(values: &[f64]) -> Column {
    values.iter().map(|&v| v.is_finite().then_some(v)).collect()
}
