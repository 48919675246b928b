use std::collections::BTreeMap;

use chrono::{Datelike, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::timegrid::{civil_time, is_daylight_saving, TimeGrid};

/// Ingested holiday flags for one civil date.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CalendarDay {
    pub holiday: bool,
    /// One flag per school-holiday zone.
    pub school_holiday: Vec<bool>,
    pub summer_holiday: bool,
}

/// Holiday calendar keyed by civil date. Dates absent from the table are
/// ordinary days.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CalendarTable {
    days: BTreeMap<NaiveDate, CalendarDay>,
}

impl CalendarTable {
    pub fn insert(&mut self, date: NaiveDate, day: CalendarDay) {
        self.days.insert(date, day);
    }

    pub fn get(&self, date: NaiveDate) -> Option<&CalendarDay> {
        self.days.get(&date)
    }

    pub fn is_holiday(&self, date: NaiveDate) -> bool {
        self.days.get(&date).is_some_and(|d| d.holiday)
    }

    pub fn holidays(&self) -> impl Iterator<Item = NaiveDate> + '_ {
        self.days.iter().filter(|(_, d)| d.holiday).map(|(k, _)| *k)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&NaiveDate, &CalendarDay)> {
        self.days.iter()
    }

    pub fn zones(&self) -> usize {
        self.days.values().map(|d| d.school_holiday.len()).max().unwrap_or(0)
    }

    pub fn len(&self) -> usize {
        self.days.len()
    }

    pub fn is_empty(&self) -> bool {
        self.days.is_empty()
    }
}

/// Calendar regressors of one grid cell.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CalendarRow {
    /// 1 = Monday … 7 = Sunday, on the civil date.
    pub day_type: u8,
    pub dls: bool,
    pub holiday: bool,
    pub school_holiday: Vec<bool>,
    pub summer_holiday: bool,
}

pub fn calendar_rows(grid: &TimeGrid, table: &CalendarTable) -> Vec<CalendarRow> {
    let zones = table.zones();
    grid.timestamps()
        .map(|t| {
            let date = civil_time(t).date();
            let day = table.get(date);
            let mut school = day.map(|d| d.school_holiday.clone()).unwrap_or_default();
            school.resize(zones, false);
            CalendarRow {
                day_type: date.weekday().number_from_monday() as u8,
                dls: is_daylight_saving(t),
                holiday: day.is_some_and(|d| d.holiday),
                school_holiday: school,
                summer_holiday: day.is_some_and(|d| d.summer_holiday),
            }
        })
        .collect()
}
