use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::formula::{parse_formula, Formula, SEASONALITY_FORMULA};
use super::model::{fit_model, FitOptions, GamModel};
use crate::error::{Error, Result};
use crate::timegrid::{Column, SeriesFrame, Step, Window};

pub const HALF_HOURS: usize = 48;

/// One additive model per half-hour of the day, all sharing one formula.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GamBank {
    pub formula: Formula,
    pub models: Vec<GamModel>,
    pub window: Window,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GamOptions {
    pub fit: FitOptions,
    /// Required training rows per coefficient in every half-hour.
    pub rows_per_coefficient: usize,
}

impl Default for GamOptions {
    fn default() -> Self {
        GamOptions { fit: FitOptions::default(), rows_per_coefficient: 10 }
    }
}

/// Rows of half-hour `h` inside `window` where the response and every
/// regressor are present.
pub fn complete_rows(design: &SeriesFrame, formula: &Formula, window: &Window, h: usize) -> Result<Vec<usize>> {
    let grid = design.grid();
    let mut cols = vec![design.column(&formula.response)?];
    for v in formula.variables() {
        cols.push(design.column(&v)?);
    }
    Ok(window
        .cells(grid)
        .filter(|&k| grid.half_hour_of(k) == h)
        .filter(|&k| cols.iter().all(|c| c[k].is_some_and(f64::is_finite)))
        .collect())
}

/// Per-term variable columns restricted to `rows`.
pub fn gather(design: &SeriesFrame, formula: &Formula, rows: &[usize]) -> Result<Vec<Vec<Vec<f64>>>> {
    formula
        .terms
        .iter()
        .map(|t| {
            t.variables()
                .iter()
                .map(|v| {
                    let c = design.column(v)?;
                    Ok(rows.iter().map(|&k| c[k].unwrap_or(f64::NAN)).collect())
                })
                .collect()
        })
        .collect()
}

fn check_grid(design: &SeriesFrame) -> Result<()> {
    if design.grid().step() != Step::HalfHour {
        return Err(Error::data("GAM banks are fitted on half-hourly data"));
    }
    Ok(())
}

pub fn fit_gam_bank(design: &SeriesFrame, formula: &Formula, window: &Window) -> Result<GamBank> {
    fit_gam_bank_with(design, formula, window, &GamOptions::default())
}

pub fn fit_gam_bank_with(
    design: &SeriesFrame,
    formula: &Formula,
    window: &Window,
    options: &GamOptions,
) -> Result<GamBank> {
    check_grid(design)?;
    let rows = (0..HALF_HOURS).map(|h| complete_rows(design, formula, window, h)).collect::<Result<Vec<_>>>()?;
    fit_on_rows(design, formula, window, &rows, options)
}

/// Fits the bank on explicit per-half-hour row sets.
pub(crate) fn fit_on_rows(
    design: &SeriesFrame,
    formula: &Formula,
    window: &Window,
    rows: &[Vec<usize>],
    options: &GamOptions,
) -> Result<GamBank> {
    let models = rows
        .par_iter()
        .enumerate()
        .map(|(h, r)| {
            let min_rows = options.rows_per_coefficient.max(1);
            if r.len() < min_rows {
                return Err(Error::data(format!("half-hour {h}: only {} usable training rows", r.len())));
            }
            let data = gather(design, formula, r)?;
            let y = design.column(&formula.response)?;
            let y: Vec<f64> = r.iter().map(|&k| y[k].unwrap_or(f64::NAN)).collect();
            let model = fit_model(h, &formula.terms, &data, &y, &options.fit)
                .map_err(|e| Error::data(format!("half-hour {h}: {e}")))?;
            let need = options.rows_per_coefficient * model.n_coefficients();
            if r.len() < need {
                return Err(Error::data(format!(
                    "half-hour {h}: {} usable training rows, {} coefficients need {need}",
                    r.len(),
                    model.n_coefficients()
                )));
            }
            Ok(model)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(GamBank { formula: formula.clone(), models, window: *window })
}

/// The calendar-and-weather bank used to measure demand shifts.
pub fn seasonality_gam(design: &SeriesFrame, window: &Window) -> Result<GamBank> {
    fit_gam_bank(design, &parse_formula(SEASONALITY_FORMULA)?, window)
}

/// Forecasts of a bank with the per-term effects behind them.
#[derive(Debug, Clone, PartialEq)]
pub struct GamPrediction {
    pub term_labels: Vec<String>,
    pub forecast: Column,
    /// Raw term effects `f_j`, per row.
    pub effects: Vec<Option<Vec<f64>>>,
    /// Inputs clamped into a knot range.
    pub clamped: usize,
}

impl GamBank {
    pub fn n_terms(&self) -> usize {
        self.formula.terms.len()
    }

    /// Kalman regressor `(1, f_1/sd_1, …, f_d/sd_d)` for a row of half-hour `h`.
    pub fn effect_vector(&self, h: usize, effects: &[f64]) -> Vec<f64> {
        let m = &self.models[h];
        std::iter::once(1.0)
            .chain(effects.iter().zip(&m.effect_sd).map(|(f, &sd)| if sd > 0.0 { f / sd } else { *f }))
            .collect()
    }

    /// State making the filter reproduce the bank forecast: `(β₀, sd_1, …, sd_d)`.
    pub fn neutral_theta(&self, h: usize) -> Vec<f64> {
        let m = &self.models[h];
        std::iter::once(m.intercept()).chain(m.effect_sd.iter().map(|&sd| if sd > 0.0 { sd } else { 1.0 })).collect()
    }
}

/// Forecast for every row of `design` whose regressors are all present.
pub fn predict_gam(bank: &GamBank, design: &SeriesFrame) -> Result<GamPrediction> {
    check_grid(design)?;
    let vars = bank.formula.variables();
    let cols = vars.iter().map(|v| design.column(v)).collect::<Result<Vec<_>>>()?;
    let grid = design.grid();
    let n = design.len();
    let mut forecast = vec![None; n];
    let mut effects = vec![None; n];
    let mut clamped = 0;
    for (h, model) in bank.models.iter().enumerate() {
        let rows: Vec<usize> = (0..n)
            .filter(|&k| grid.half_hour_of(k) == h)
            .filter(|&k| cols.iter().all(|c| c[k].is_some_and(f64::is_finite)))
            .collect();
        if rows.is_empty() {
            continue;
        }
        let data = gather(design, &bank.formula, &rows)?;
        let (eff, c) = model.effects(&data, rows.len());
        clamped += c;
        for (i, &k) in rows.iter().enumerate() {
            let e = eff.row(i).to_vec();
            forecast[k] = Some(model.intercept() + e.iter().sum::<f64>());
            effects[k] = Some(e);
        }
    }
    if clamped > 0 {
        log::warn!("{clamped} regressor value(s) outside the training range were clamped to the knot range");
    }
    Ok(GamPrediction {
        term_labels: bank.formula.terms.iter().map(|t| t.to_string()).collect(),
        forecast,
        effects,
        clamped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::timegrid::build_grid;
    use chrono::{Duration, TimeZone, Utc};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn g1(toy: f64) -> f64 {
        3.0 * (2.0 * std::f64::consts::PI * toy).cos()
    }

    fn g2(temp: f64) -> f64 {
        0.05 * (temp - 15.0).powi(2)
    }

    fn frame(days: i64, sigma: f64, seed: u64) -> SeriesFrame {
        let t0 = Utc.with_ymd_and_hms(2019, 1, 1, 0, 0, 0).unwrap();
        let g = build_grid(t0, t0 + Duration::days(days), Step::HalfHour).unwrap();
        let n = g.len();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let toy: Vec<f64> = g.timestamps().map(crate::features::time_of_year).collect();
        let temp: Vec<f64> =
            (0..n).map(|i| 12.0 + 8.0 * ((i as f64) / 700.0).sin() + 3.0 * ((i as f64) / 37.0).cos()).collect();
        let load: Vec<f64> = (0..n)
            .map(|i| {
                50.0 + (i % 48) as f64 * 0.1 + g1(toy[i]) + g2(temp[i]) + sigma * rng.sample::<f64, _>(StandardNormal)
            })
            .collect();
        let wrap = |v: Vec<f64>| v.into_iter().map(Some).collect();
        SeriesFrame::new(g)
            .with("load", wrap(load))
            .unwrap()
            .with("toy", wrap(toy))
            .unwrap()
            .with("temp", wrap(temp))
            .unwrap()
    }

    fn opts() -> GamOptions {
        GamOptions { rows_per_coefficient: 10, ..Default::default() }
    }

    #[test]
    fn intercept_only_predicts_half_hour_means() {
        let f = frame(30, 1.0, 1);
        let w = Window::of(f.grid());
        let bank = fit_gam_bank(&f, &parse_formula("load ~ 1").unwrap(), &w).unwrap();
        assert_eq!(bank.models.len(), 48);
        let p = predict_gam(&bank, &f).unwrap();
        let load = f.column("load").unwrap();
        for h in [0, 17, 47] {
            let vals: Vec<f64> = (0..f.len()).filter(|&k| k % 48 == h).map(|k| load[k].unwrap()).collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            assert!((p.forecast[h].unwrap() - mean).abs() < 1e-10);
        }
    }

    #[test]
    fn recovers_additive_truth() {
        let sigma = 0.3;
        let f = frame(365 * 2, sigma, 2);
        let w = Window::of(f.grid());
        let formula = parse_formula("load ~ s(toy, k=12, cyclic) + s(temp, k=6)").unwrap();
        let bank = fit_gam_bank_with(&f, &formula, &w, &opts()).unwrap();
        let p = predict_gam(&bank, &f).unwrap();
        let (toy, temp) = (f.dense("toy").unwrap(), f.dense("temp").unwrap());
        for h in [5, 30] {
            let rows: Vec<usize> = (0..f.len()).filter(|&k| k % 48 == h).collect();
            let n = rows.len() as f64;
            for (t, truth) in [(0usize, &toy as &Vec<f64>), (1, &temp)] {
                let g = |x: f64| if t == 0 { g1(x) } else { g2(x) };
                let tm = rows.iter().map(|&k| g(truth[k])).sum::<f64>() / n;
                let mse =
                    rows.iter().map(|&k| (p.effects[k].as_ref().unwrap()[t] - (g(truth[k]) - tm)).powi(2)).sum::<f64>()
                        / n;
                // a few coefficients' worth of estimation noise
                assert!(mse.sqrt() < 3.0 * sigma * (12.0 / n).sqrt() + 0.02, "h {h} term {t}: {}", mse.sqrt());
            }
        }
    }

    #[test]
    fn predictions_are_sums_of_effects_and_centred() {
        let f = frame(120, 0.5, 3);
        let w = Window::of(f.grid());
        let formula = parse_formula("load ~ s(toy, k=6, cyclic) + s(temp, k=5)").unwrap();
        let bank = fit_gam_bank_with(&f, &formula, &w, &GamOptions { rows_per_coefficient: 5, ..opts() }).unwrap();
        let p = predict_gam(&bank, &f).unwrap();
        let load = f.column("load").unwrap();
        let mut resid = vec![0.0; 48];
        for k in 0..f.len() {
            let e = p.effects[k].as_ref().unwrap();
            let h = k % 48;
            assert!((bank.models[h].intercept() + e.iter().sum::<f64>() - p.forecast[k].unwrap()).abs() < 1e-10);
            resid[h] += load[k].unwrap() - p.forecast[k].unwrap();
        }
        for r in resid {
            assert!((r / 120.0).abs() < 1e-6);
        }
        // neutral state reproduces the bank
        for k in [0, 100, 1000] {
            let h = k % 48;
            let x = bank.effect_vector(h, p.effects[k].as_ref().unwrap());
            let th = bank.neutral_theta(h);
            let v: f64 = x.iter().zip(&th).map(|(a, b)| a * b).sum();
            assert!((v - p.forecast[k].unwrap()).abs() < 1e-9);
        }
    }

    #[test]
    fn row_order_does_not_matter() {
        let f = frame(60, 0.5, 4);
        let w = Window::of(f.grid());
        let formula = parse_formula("load ~ s(temp, k=5)").unwrap();
        let o = GamOptions { rows_per_coefficient: 5, ..opts() };
        let mut rows: Vec<Vec<usize>> = (0..48).map(|h| complete_rows(&f, &formula, &w, h).unwrap()).collect();
        let a = fit_on_rows(&f, &formula, &w, &rows, &o).unwrap();
        for r in rows.iter_mut() {
            r.reverse();
            r.rotate_left(7);
        }
        let b = fit_on_rows(&f, &formula, &w, &rows, &o).unwrap();
        for (ma, mb) in a.models.iter().zip(&b.models) {
            for (x, y) in ma.coefficients.iter().zip(&mb.coefficients) {
                assert!((x - y).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn half_hours_are_independent() {
        let f = frame(60, 0.5, 5);
        let w = Window::of(f.grid());
        let formula = parse_formula("load ~ s(temp, k=5)").unwrap();
        let o = GamOptions { rows_per_coefficient: 5, ..opts() };
        let a = fit_gam_bank_with(&f, &formula, &w, &o).unwrap();
        // perturb every row of half-hour 10 only
        let mut load = f.column("load").unwrap().to_vec();
        for (k, v) in load.iter_mut().enumerate() {
            if k % 48 == 10 {
                *v = v.map(|x| x * 1.5 + 3.0);
            }
        }
        let mut g = f.clone();
        g.set("load", load).unwrap();
        let b = fit_gam_bank_with(&g, &formula, &w, &o).unwrap();
        for h in 0..48 {
            assert_eq!(a.models[h] == b.models[h], h != 10, "half-hour {h}");
        }
    }

    #[test]
    fn insufficient_rows_name_the_half_hour() {
        let mut f = frame(20, 0.5, 6);
        let mut temp = f.column("temp").unwrap().to_vec();
        for (k, v) in temp.iter_mut().enumerate() {
            if k % 48 == 13 && k > 48 * 3 {
                *v = None;
            }
        }
        f.set("temp", temp).unwrap();
        let w = Window::of(f.grid());
        let formula = parse_formula("load ~ s(temp, k=5)").unwrap();
        let e = fit_gam_bank_with(&f, &formula, &w, &GamOptions { rows_per_coefficient: 3, ..opts() }).unwrap_err();
        assert!(e.to_string().contains("half-hour 13"), "{e}");
    }

    #[test]
    fn extrapolated_inputs_are_clamped() {
        let f = frame(60, 0.5, 7);
        let w = Window::of(f.grid());
        let formula = parse_formula("load ~ s(temp, k=5)").unwrap();
        let bank = fit_gam_bank_with(&f, &formula, &w, &GamOptions { rows_per_coefficient: 5, ..opts() }).unwrap();
        let mut hot = f.clone();
        let temp = f.column("temp").unwrap();
        let max = temp.iter().step_by(48).flatten().copied().fold(f64::MIN, f64::max);
        let mut t2 = temp.to_vec();
        t2[0] = Some(max + 30.0);
        t2[48] = Some(max);
        hot.set("temp", t2).unwrap();
        let p = predict_gam(&bank, &hot).unwrap();
        assert_eq!(p.clamped, 1);
        assert!((p.forecast[0].unwrap() - p.forecast[48].unwrap()).abs() < 1e-12);
    }

    #[test]
    fn missing_column_is_an_error() {
        let f = frame(30, 0.5, 8);
        let w = Window::of(f.grid());
        let formula = parse_formula("load ~ s(humidity, k=5)").unwrap();
        assert!(matches!(fit_gam_bank(&f, &formula, &w), Err(Error::MissingColumn(_))));
    }
}
