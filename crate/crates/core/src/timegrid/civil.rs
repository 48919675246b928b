//! Civil time for mainland France (CET/CEST) computed from the EU rule:
//! summer time runs from the last Sunday of March 01:00 UTC to the last
//! Sunday of October 01:00 UTC.

use chrono::{DateTime, Datelike, Duration, NaiveDate, NaiveDateTime, TimeZone, Utc, Weekday};

fn last_sunday(year: i32, month: u32) -> NaiveDate {
    let first_next =
        if month == 12 { NaiveDate::from_ymd_opt(year + 1, 1, 1) } else { NaiveDate::from_ymd_opt(year, month + 1, 1) }
            .expect("valid date");
    let mut d = first_next.pred_opt().expect("valid date");
    while d.weekday() != Weekday::Sun {
        d = d.pred_opt().expect("valid date");
    }
    d
}

fn switch_instant(year: i32, month: u32) -> DateTime<Utc> {
    let d = last_sunday(year, month);
    Utc.from_utc_datetime(&d.and_hms_opt(1, 0, 0).expect("valid time"))
}

/// Whether `t` falls in summer (daylight-saving) time.
pub fn is_daylight_saving(t: DateTime<Utc>) -> bool {
    let y = t.year();
    t >= switch_instant(y, 3) && t < switch_instant(y, 10)
}

/// UTC offset in hours: 2 in summer time, 1 otherwise.
pub fn paris_offset_hours(t: DateTime<Utc>) -> i64 {
    if is_daylight_saving(t) {
        2
    } else {
        1
    }
}

/// Local wall-clock time.
pub fn civil_time(t: DateTime<Utc>) -> NaiveDateTime {
    (t + Duration::hours(paris_offset_hours(t))).naive_utc()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn switch_dates_2022() {
        assert_eq!(last_sunday(2022, 3), NaiveDate::from_ymd_opt(2022, 3, 27).unwrap());
        assert_eq!(last_sunday(2022, 10), NaiveDate::from_ymd_opt(2022, 10, 30).unwrap());
        let before = Utc.with_ymd_and_hms(2022, 3, 27, 0, 30, 0).unwrap();
        let after = Utc.with_ymd_and_hms(2022, 3, 27, 1, 0, 0).unwrap();
        assert!(!is_daylight_saving(before));
        assert!(is_daylight_saving(after));
        let winter = Utc.with_ymd_and_hms(2022, 10, 30, 1, 0, 0).unwrap();
        assert!(!is_daylight_saving(winter));
    }

    #[test]
    fn civil_midnight_in_summer_is_22_utc() {
        let t = Utc.with_ymd_and_hms(2021, 7, 1, 22, 0, 0).unwrap();
        let c = civil_time(t);
        assert_eq!(c.date(), NaiveDate::from_ymd_opt(2021, 7, 2).unwrap());
        assert_eq!(c.time(), chrono::NaiveTime::from_hms_opt(0, 0, 0).unwrap());
    }
}
