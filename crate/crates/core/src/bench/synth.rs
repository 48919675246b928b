//! Synthetic half-hourly load with known components: a desk-scale surrogate
//! for the open load, weather and mobility datasets.

use std::f64::consts::PI;

use chrono::{DateTime, Datelike, NaiveDate, TimeZone, Timelike, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{time_of_year, CalendarDay, CalendarTable, MobilityIndices, MobilityTable};
use crate::timegrid::{build_grid, civil_time, SeriesFrame, Step, Window};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TemperatureSpec {
    /// Annual mean, °C.
    pub mean: f64,
    pub annual_amplitude: f64,
    pub daily_amplitude: f64,
    /// Stationary standard deviation of the weather anomaly, °C.
    pub anomaly_sd: f64,
    /// Day-to-day autocorrelation of the anomaly.
    pub anomaly_ar: f64,
}

impl Default for TemperatureSpec {
    fn default() -> Self {
        TemperatureSpec { mean: 12.0, annual_amplitude: 7.5, daily_amplitude: 4.0, anomaly_sd: 3.0, anomaly_ar: 0.8 }
    }
}

/// Daily work index: a weekly profile lowered on holidays and in August,
/// plus AR(1) day-to-day noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WorkSpec {
    pub weekday: f64,
    pub saturday: f64,
    pub sunday: f64,
    pub holiday: f64,
    /// Relative drop in August and between Christmas and New Year.
    pub vacation_drop: f64,
    pub noise_sd: f64,
    pub noise_ar: f64,
    /// Load response, GW per unit of the index, during daytime.
    pub effect: f64,
}

impl Default for WorkSpec {
    fn default() -> Self {
        WorkSpec {
            weekday: 1.0,
            saturday: 0.55,
            sunday: 0.4,
            holiday: 0.4,
            vacation_drop: 0.2,
            noise_sd: 0.05,
            noise_ar: 0.5,
            effect: 12.0,
        }
    }
}

/// What a regime acts on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RegimeChannel {
    /// Multiplies the whole load.
    Level,
    /// Multiplies the work index; the load follows through its work effect.
    Work,
    /// Multiplies the heating and cooling response.
    Weather,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Regime {
    pub start: NaiveDate,
    /// Exclusive; open-ended when absent.
    pub end: Option<NaiveDate>,
    /// Relative change in percent.
    pub magnitude: f64,
    pub channel: RegimeChannel,
    /// Days over which the change ramps in linearly; 0 gives a step.
    pub ramp_days: u32,
}

impl Regime {
    pub fn step(start: NaiveDate, end: Option<NaiveDate>, magnitude: f64, channel: RegimeChannel) -> Self {
        Regime { start, end, magnitude, channel, ramp_days: 0 }
    }

    fn factor(&self, t: DateTime<Utc>) -> f64 {
        let start = midnight(self.start);
        if t < start || self.end.is_some_and(|e| t >= midnight(e)) {
            return 0.0;
        }
        let ramp = if self.ramp_days == 0 {
            1.0
        } else {
            ((t - start).num_seconds() as f64 / (self.ramp_days as f64 * 86_400.0)).min(1.0)
        };
        ramp * self.magnitude / 100.0
    }

    pub fn window(&self, horizon_end: DateTime<Utc>) -> Result<Window> {
        Window::new(midnight(self.start), self.end.map_or(horizon_end, midnight))
    }
}

/// Yearly season with mobility records, from `(month, day)` inclusive to
/// `(month, day)` exclusive; it may wrap over New Year.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Season {
    pub from: (u32, u32),
    pub to: (u32, u32),
}

impl Season {
    fn contains(&self, d: NaiveDate) -> bool {
        let md = (d.month(), d.day());
        if self.from <= self.to {
            self.from <= md && md < self.to
        } else {
            md >= self.from || md < self.to
        }
    }
}

/// July to the end of February, as in the mobile-network dataset.
pub const MOBILITY_SEASON: Season = Season { from: (7, 1), to: (3, 1) };

/// Scenario presets.
pub const SCENARIOS: [&str; 4] = ["reference", "drift", "mobility", "selection"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub seed: u64,
    pub start: NaiveDate,
    pub end: NaiveDate,
    /// Mean load, GW.
    pub level: f64,
    /// Daily random-walk standard deviation of the level, relative.
    pub level_walk_sd: f64,
    /// Relative amplitude of the weather-independent annual cycle (lighting).
    pub annual_amplitude: f64,
    /// Relative amplitude of the intraday profile.
    pub daily_amplitude: f64,
    pub temperature: TemperatureSpec,
    /// GW per °C of smoothed temperature below the threshold.
    pub heating: f64,
    pub heating_threshold: f64,
    pub cooling: f64,
    pub cooling_threshold: f64,
    pub work: WorkSpec,
    /// Half-hourly AR(1) noise: stationary standard deviation in GW and
    /// autocorrelation.
    pub noise_sd: f64,
    pub noise_ar: f64,
    pub regimes: Vec<Regime>,
    pub mobility_seasons: Vec<Season>,
    /// No mobility record before this date.
    pub mobility_from: Option<NaiveDate>,
}

fn date(y: i32, m: u32, d: u32) -> NaiveDate {
    NaiveDate::from_ymd_opt(y, m, d).expect("valid preset date")
}

pub(crate) fn midnight(d: NaiveDate) -> DateTime<Utc> {
    Utc.from_utc_datetime(&d.and_hms_opt(0, 0, 0).expect("midnight"))
}

impl SynthSpec {
    /// Plain scenario without regimes.
    pub fn baseline(seed: u64, start: NaiveDate, end: NaiveDate) -> Self {
        SynthSpec {
            seed,
            start,
            end,
            level: 52.0,
            level_walk_sd: 0.0,
            annual_amplitude: 0.03,
            daily_amplitude: 0.12,
            temperature: TemperatureSpec::default(),
            heating: 1.8,
            heating_threshold: 15.0,
            cooling: 0.4,
            cooling_threshold: 22.0,
            work: WorkSpec::default(),
            noise_sd: 0.6,
            noise_ar: 0.9,
            regimes: Vec::new(),
            mobility_seasons: vec![MOBILITY_SEASON],
            mobility_from: None,
        }
    }

    /// Savings scenario: a spring lockdown dip and a −10.6% sobriety regime
    /// to the end of the series.
    pub fn reference(seed: u64) -> Self {
        let mut s = Self::baseline(seed, date(2017, 1, 1), date(2023, 3, 1));
        s.regimes = vec![
            Regime::step(date(2020, 3, 16), Some(date(2020, 5, 11)), -12.0, RegimeChannel::Level),
            Regime::step(date(2022, 10, 10), None, -10.6, RegimeChannel::Level),
        ];
        s.mobility_from = Some(date(2019, 7, 1));
        s
    }

    /// Forecasting scenario whose level wanders and then declines while the
    /// weather response strengthens over the last year.
    pub fn drift(seed: u64) -> Self {
        let mut s = Self::baseline(seed, date(2018, 1, 1), date(2022, 1, 1));
        s.level_walk_sd = 0.0015;
        s.regimes = vec![
            Regime {
                start: date(2021, 1, 1),
                end: None,
                magnitude: -4.0,
                channel: RegimeChannel::Level,
                ramp_days: 120,
            },
            Regime {
                start: date(2021, 1, 1),
                end: None,
                magnitude: 20.0,
                channel: RegimeChannel::Weather,
                ramp_days: 180,
            },
        ];
        s
    }

    /// Mobility scenario: remote work lowers the work index from October
    /// 2021 on; mobility records exist from July 2019, July to February.
    pub fn mobility(seed: u64) -> Self {
        let mut s = Self::baseline(seed, date(2018, 1, 1), date(2022, 3, 1));
        s.regimes = vec![Regime::step(date(2021, 10, 10), None, -25.0, RegimeChannel::Work)];
        s.mobility_from = Some(date(2019, 7, 1));
        s
    }

    /// Ranking scenario: no regime; the work index carries persistent
    /// day-to-day movements beyond the day type, which the load follows.
    pub fn selection(seed: u64) -> Self {
        let mut s = Self::baseline(seed, date(2019, 1, 1), date(2022, 3, 1));
        s.work.noise_sd = 0.1;
        s.work.noise_ar = 0.8;
        s.mobility_from = Some(date(2019, 7, 1));
        s
    }

    /// Named scenario, see [`SCENARIOS`].
    pub fn preset(name: &str, seed: u64) -> Result<Self> {
        match name {
            "reference" => Ok(Self::reference(seed)),
            "drift" => Ok(Self::drift(seed)),
            "mobility" => Ok(Self::mobility(seed)),
            "selection" => Ok(Self::selection(seed)),
            other => Err(Error::usage(format!("unknown scenario `{other}` (one of {})", SCENARIOS.join(", ")))),
        }
    }

    pub fn horizon(&self) -> Result<Window> {
        Window::new(midnight(self.start), midnight(self.end))
    }

    pub fn validate(&self) -> Result<()> {
        if self.start >= self.end {
            return Err(Error::usage("synthetic horizon is empty"));
        }
        for r in &self.regimes {
            if !(r.magnitude > -50.0 && r.magnitude < 50.0) {
                return Err(Error::usage(format!("regime magnitude {}% outside (-50, 50)", r.magnitude)));
            }
            if r.end.is_some_and(|e| e <= r.start) {
                return Err(Error::usage("regime ends before it starts"));
            }
        }
        for (i, a) in self.mobility_seasons.iter().enumerate() {
            if a.from == a.to {
                return Err(Error::usage("empty mobility season"));
            }
            for b in &self.mobility_seasons[i + 1..] {
                let probe = date(2001, b.from.0, b.from.1.min(28));
                let probe_a = date(2001, a.from.0, a.from.1.min(28));
                if a.contains(probe) || b.contains(probe_a) {
                    return Err(Error::usage("mobility seasons overlap"));
                }
            }
        }
        let positive = [self.level, self.noise_sd, self.temperature.anomaly_sd, self.work.noise_sd];
        let unit = [self.noise_ar, self.temperature.anomaly_ar, self.work.noise_ar];
        if positive.iter().any(|v| !(*v >= 0.0)) || unit.iter().any(|v| !(0.0..1.0).contains(v)) {
            return Err(Error::usage("negative scale or autocorrelation outside [0, 1)"));
        }
        Ok(())
    }
}

/// Generated data with its ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthBundle {
    pub spec: SynthSpec,
    /// Half-hourly `load` and `temp`.
    pub frame: SeriesFrame,
    pub calendar: CalendarTable,
    pub mobility: MobilityTable,
    /// Additive components of the load in GW: `base` (level, annual and daily
    /// cycles), `weather`, `work`, `regime` and `noise`; they sum to `load`.
    pub truth: SeriesFrame,
}

/// Fixed-date public holidays.
const HOLIDAYS: [(u32, u32); 8] = [(1, 1), (5, 1), (5, 8), (7, 14), (8, 15), (11, 1), (11, 11), (12, 25)];

fn is_holiday(d: NaiveDate) -> bool {
    HOLIDAYS.contains(&(d.month(), d.day()))
}

fn in_vacation(d: NaiveDate) -> bool {
    d.month() == 8 || (d.month() == 12 && d.day() >= 24) || (d.month() == 1 && d.day() == 1)
}

/// Intraday shape: night trough, morning rise and an evening peak.
fn daily_profile(hour: f64) -> f64 {
    -0.7 * (2.0 * PI * (hour - 3.0) / 24.0).cos() + 0.3 * (4.0 * PI * (hour - 19.0) / 24.0).cos()
}

/// Share of the work effect present at a civil hour.
fn daytime_weight(hour: f64) -> f64 {
    0.3 + 0.7 * (-(hour - 13.0).powi(2) / 32.0).exp()
}

struct DailyDraws {
    dates: Vec<NaiveDate>,
    work: Vec<f64>,
    tourism: Vec<f64>,
    resident: Vec<f64>,
    level: Vec<f64>,
}

fn daily_draws(spec: &SynthSpec, rng: &mut ChaCha8Rng) -> DailyDraws {
    // one civil day before the start covers the first UTC hours
    let first = spec.start.pred_opt().expect("valid date");
    let dates: Vec<NaiveDate> = first.iter_days().take_while(|d| *d <= spec.end).collect();
    let w = &spec.work;
    let mut e: f64 = 0.0;
    let mut walk: f64 = 0.0;
    let (mut work, mut tourism, mut resident, mut level) = (vec![], vec![], vec![], vec![]);
    for d in &dates {
        let z: f64 = rng.sample(StandardNormal);
        e = w.noise_ar * e + w.noise_sd * (1.0 - w.noise_ar * w.noise_ar).sqrt() * z;
        let mut base = match d.weekday().number_from_monday() {
            1..=5 => w.weekday,
            6 => w.saturday,
            _ => w.sunday,
        };
        if is_holiday(*d) {
            base = base.min(w.holiday);
        }
        if in_vacation(*d) {
            base *= 1.0 - w.vacation_drop;
        }
        let t = midnight(*d);
        let regime: f64 = spec.regimes.iter().filter(|r| r.channel == RegimeChannel::Work).map(|r| r.factor(t)).sum();
        work.push((base + e) * (1.0 + regime));
        let toy = time_of_year(t);
        let summer = (-(toy - 0.6).powi(2) / 0.004).exp();
        let zt: f64 = rng.sample(StandardNormal);
        let tour = 1.0 + 0.6 * summer + if in_vacation(*d) { 0.2 } else { 0.0 } + 0.03 * zt;
        tourism.push(tour);
        let zr: f64 = rng.sample(StandardNormal);
        resident.push(1.0 - 0.25 * (tour - 1.0) + 0.02 * zr);
        let zl: f64 = rng.sample(StandardNormal);
        walk += spec.level_walk_sd * zl;
        level.push(walk);
    }
    DailyDraws { dates, work, tourism, resident, level }
}

/// Draws a bundle; the same spec always yields the same bundle.
pub fn synth_generate(spec: &SynthSpec) -> Result<SynthBundle> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let grid = build_grid(midnight(spec.start), midnight(spec.end), Step::HalfHour)?;
    let daily = daily_draws(spec, &mut rng);
    let day_index = |d: NaiveDate| (d - daily.dates[0]).num_days() as usize;

    let ts = &spec.temperature;
    let phi_t = ts.anomaly_ar.powf(1.0 / 48.0);
    let phi_e = spec.noise_ar;
    let (mut anomaly, mut noise_state, mut smooth): (f64, f64, Option<f64>) = (0.0, 0.0, None);
    let n = grid.len();
    let mut cols: [Vec<Option<f64>>; 7] = Default::default();
    for k in 0..n {
        let t = grid.timestamp(k);
        let civil = civil_time(t);
        let d = civil.date();
        let hour = civil.hour() as f64 + civil.minute() as f64 / 60.0;
        let toy = time_of_year(t);
        let di = day_index(d);

        let z: f64 = rng.sample(StandardNormal);
        anomaly = phi_t * anomaly + ts.anomaly_sd * (1.0 - phi_t * phi_t).sqrt() * z;
        let temp = ts.mean - ts.annual_amplitude * (2.0 * PI * (toy - 0.05)).cos()
            + ts.daily_amplitude * (2.0 * PI * (hour - 15.0) / 24.0).cos()
            + anomaly;
        let s = smooth.map_or(temp, |p| 0.95 * p + 0.05 * temp);
        smooth = Some(s);

        let level = spec.level * (1.0 + daily.level[di]);
        let base = level
            + spec.level * spec.annual_amplitude * (2.0 * PI * toy).cos()
            + spec.level * spec.daily_amplitude * daily_profile(hour);
        let weather_factor: f64 =
            1.0 + spec.regimes.iter().filter(|r| r.channel == RegimeChannel::Weather).map(|r| r.factor(t)).sum::<f64>();
        let weather = weather_factor
            * (spec.heating * (spec.heating_threshold - s).max(0.0)
                + spec.cooling * (s - spec.cooling_threshold).max(0.0));
        let work = spec.work.effect * daily.work[di] * daytime_weight(hour);
        let level_factor: f64 =
            spec.regimes.iter().filter(|r| r.channel == RegimeChannel::Level).map(|r| r.factor(t)).sum();
        let clean = base + weather + work;
        let regime = clean * level_factor;
        let ze: f64 = rng.sample(StandardNormal);
        noise_state = phi_e * noise_state + spec.noise_sd * (1.0 - phi_e * phi_e).sqrt() * ze;
        let load = clean + regime + noise_state;
        for (c, v) in cols.iter_mut().zip([load, temp, base, weather, work, regime, noise_state]) {
            c.push(Some(v));
        }
    }
    let [load, temp, base, weather, work, regime, noise] = cols;
    let frame = SeriesFrame::new(grid).with("load", load)?.with("temp", temp)?;
    let truth = SeriesFrame::new(grid)
        .with("base", base)?
        .with("weather", weather)?
        .with("work", work)?
        .with("regime", regime)?
        .with("noise", noise)?;

    let mut calendar = CalendarTable::default();
    let mut mobility = MobilityTable::new();
    for (i, &d) in daily.dates.iter().enumerate() {
        let summer = (d.month() == 7 && d.day() >= 6) || d.month() == 8;
        if is_holiday(d) || summer {
            calendar
                .insert(d, CalendarDay { holiday: is_holiday(d), school_holiday: Vec::new(), summer_holiday: summer });
        }
        let covered = spec.mobility_seasons.iter().any(|s| s.contains(d)) && spec.mobility_from.is_none_or(|f| d >= f);
        if covered {
            mobility.insert(
                d,
                MobilityIndices { work: daily.work[i], tourism: daily.tourism[i], resident: daily.resident[i] },
            );
        }
    }
    Ok(SynthBundle { spec: spec.clone(), frame, calendar, mobility, truth })
}

/// Reassigns the mobility records to randomly permuted dates: the negative
/// control for mobility gains.
pub fn shuffle_mobility(table: &MobilityTable, seed: u64) -> MobilityTable {
    use rand::seq::SliceRandom;
    let dates: Vec<NaiveDate> = table.keys().copied().collect();
    let mut values: Vec<MobilityIndices> = table.values().copied().collect();
    values.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    dates.into_iter().zip(values).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn short(seed: u64) -> SynthSpec {
        SynthSpec::baseline(seed, date(2020, 1, 1), date(2020, 3, 1))
    }

    /// The presets are the calibrated scenarios; changing one means
    /// recalibrating and updating the versioned file.
    #[test]
    fn presets_match_the_calibration_file() {
        let file: serde_json::Value = serde_json::from_str(include_str!("../../calibration/scenarios.json")).unwrap();
        for name in SCENARIOS {
            let spec: SynthSpec = serde_json::from_value(file[name].clone()).unwrap();
            assert_eq!(spec, SynthSpec::preset(name, 0).unwrap(), "{name}");
        }
        assert!(SynthSpec::preset("weekend", 0).is_err());
    }

    #[test]
    fn same_seed_same_bundle() {
        let a = synth_generate(&short(4)).unwrap();
        let b = synth_generate(&short(4)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.frame, synth_generate(&short(5)).unwrap().frame);
    }

    #[test]
    fn components_sum_to_load() {
        let mut spec = short(1);
        spec.regimes.push(Regime::step(date(2020, 2, 1), None, -10.0, RegimeChannel::Level));
        let b = synth_generate(&spec).unwrap();
        let load = b.frame.dense("load").unwrap();
        let parts: Vec<Vec<f64>> = b.truth.names().iter().map(|n| b.truth.dense(n).unwrap()).collect();
        for (k, l) in load.iter().enumerate() {
            let s: f64 = parts.iter().map(|p| p[k]).sum();
            assert!((s - l).abs() < 1e-9);
        }
    }

    #[test]
    fn level_regime_is_an_exact_relative_step() {
        let mut spec = short(2);
        spec.noise_sd = 0.0;
        let plain = synth_generate(&spec).unwrap();
        spec.regimes.push(Regime::step(date(2020, 2, 1), Some(date(2020, 2, 15)), -10.6, RegimeChannel::Level));
        let shifted = synth_generate(&spec).unwrap();
        let (a, b) = (plain.frame.dense("load").unwrap(), shifted.frame.dense("load").unwrap());
        let w = spec.regimes[0].window(midnight(spec.end)).unwrap().cells(plain.frame.grid());
        for k in 0..a.len() {
            let expected = if w.contains(&k) { 0.894 * a[k] } else { a[k] };
            assert!((b[k] - expected).abs() < 1e-9);
        }
    }

    #[test]
    fn mobility_follows_the_season_pattern() {
        let mut spec = SynthSpec::baseline(3, date(2019, 1, 1), date(2021, 1, 1));
        spec.mobility_from = Some(date(2019, 7, 1));
        let b = synth_generate(&spec).unwrap();
        assert!(!b.mobility.contains_key(&date(2019, 2, 1)));
        assert!(b.mobility.contains_key(&date(2019, 7, 1)));
        assert!(b.mobility.contains_key(&date(2020, 2, 29)));
        assert!(!b.mobility.contains_key(&date(2020, 3, 1)));
        assert!(!b.mobility.contains_key(&date(2020, 6, 30)));
        assert!(b.mobility.contains_key(&date(2020, 12, 31)));
    }

    #[test]
    fn work_index_drops_on_weekends_and_under_a_work_regime() {
        let mut spec = short(6);
        spec.regimes.push(Regime::step(date(2020, 2, 3), None, -20.0, RegimeChannel::Work));
        let b = synth_generate(&spec).unwrap();
        let mon = b.mobility[&date(2020, 1, 13)].work;
        let sun = b.mobility[&date(2020, 1, 12)].work;
        assert!(mon > sun + 0.3);
        let before: f64 = (6..11).map(|d| b.mobility[&date(2020, 1, d)].work).sum::<f64>() / 5.0;
        let after: f64 = (3..8).map(|d| b.mobility[&date(2020, 2, d)].work).sum::<f64>() / 5.0;
        assert!(after < 0.9 * before);
    }

    #[test]
    fn shuffled_mobility_keeps_values_and_dates() {
        let b = synth_generate(&short(7)).unwrap();
        let s = shuffle_mobility(&b.mobility, 1);
        assert_eq!(s.len(), b.mobility.len());
        let mut w1: Vec<f64> = b.mobility.values().map(|m| m.work).collect();
        let mut w2: Vec<f64> = s.values().map(|m| m.work).collect();
        assert_ne!(w1, w2);
        w1.sort_by(f64::total_cmp);
        w2.sort_by(f64::total_cmp);
        assert_eq!(w1, w2);
    }

    #[test]
    fn invalid_specs_rejected() {
        let mut s = short(0);
        s.regimes.push(Regime::step(date(2020, 2, 1), None, -60.0, RegimeChannel::Level));
        assert!(synth_generate(&s).is_err());
        let mut s = short(0);
        s.mobility_seasons.push(Season { from: (1, 1), to: (2, 1) });
        assert!(s.validate().is_err());
        let mut s = short(0);
        s.end = s.start;
        assert!(s.validate().is_err());
    }
}
