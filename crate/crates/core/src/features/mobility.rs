use std::collections::BTreeMap;
use std::str::FromStr;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MobilityCategory {
    Resident,
    UsuallyPresent,
    Tourist,
    Excursionist,
    RecurrentExcursionist,
}

impl FromStr for MobilityCategory {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        Ok(match s.trim() {
            "resident" => Self::Resident,
            "usually_present" => Self::UsuallyPresent,
            "tourist" => Self::Tourist,
            "excursionist" => Self::Excursionist,
            "recurrent_excursionist" => Self::RecurrentExcursionist,
            other => return Err(Error::data(format!("unknown visitor category `{other}`"))),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MobilityOrigin {
    Foreign,
    Local,
    NonLocal,
}

impl FromStr for MobilityOrigin {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        Ok(match s.trim() {
            "foreign" => Self::Foreign,
            "local" => Self::Local,
            "non_local" => Self::NonLocal,
            other => return Err(Error::data(format!("unknown visitor origin `{other}`"))),
        })
    }
}

/// One row of an aggregated presence report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MobilityRecord {
    pub date: NaiveDate,
    pub area_id: String,
    pub category: MobilityCategory,
    pub origin: MobilityOrigin,
    pub count: f64,
}

/// National daily presence indices.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MobilityIndices {
    /// Recurrent excursionists.
    pub work: f64,
    /// Foreign and non-local tourists.
    pub tourism: f64,
    /// Residents and usually-present visitors.
    pub resident: f64,
}

pub type MobilityTable = BTreeMap<NaiveDate, MobilityIndices>;

/// Sums presence records over areas into the three daily indices.
pub fn daily_indices(records: &[MobilityRecord]) -> MobilityTable {
    let mut out = MobilityTable::new();
    for r in records {
        let e = out.entry(r.date).or_default();
        match r.category {
            MobilityCategory::RecurrentExcursionist => e.work += r.count,
            MobilityCategory::Tourist if r.origin != MobilityOrigin::Local => e.tourism += r.count,
            MobilityCategory::Resident | MobilityCategory::UsuallyPresent => e.resident += r.count,
            _ => {}
        }
    }
    out
}
