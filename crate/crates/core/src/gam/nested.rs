use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, FisherSnedecor};

use super::bank::{complete_rows, fit_on_rows, predict_gam, GamBank, GamOptions, HALF_HOURS};
use super::formula::{parse_formula, Formula, NESTED_FORMULAS};
use crate::bench::{mape, rmse};
use crate::error::Result;
use crate::timegrid::{SeriesFrame, Window};

/// Significance of one term, from the RSS of the bank with and without it,
/// pooled over the half-hours.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FTest {
    pub term: String,
    pub f: f64,
    pub df1: f64,
    pub df2: f64,
    pub p_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowScore {
    pub window: String,
    pub rmse: f64,
    pub mape: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NestedRow {
    pub name: String,
    pub formula: String,
    pub scores: Vec<WindowScore>,
    pub f_tests: Vec<FTest>,
    /// Set when the bank could not be fitted; the other rows still run.
    pub error: Option<String>,
}

/// F statistic of a nested pair: `((RSS₀ − RSS₁)/(edf₁ − edf₀)) / (RSS₁/(n − edf₁))`.
pub fn nested_f(rss_reduced: f64, edf_reduced: f64, rss_full: f64, edf_full: f64, n: f64) -> (f64, f64, f64, f64) {
    let df1 = edf_full - edf_reduced;
    let df2 = n - edf_full;
    if !(df1 > 1e-9) || !(df2 > 0.0) || !(rss_full > 0.0) {
        return (0.0, df1, df2, 1.0);
    }
    let f = ((rss_reduced - rss_full) / df1 / (rss_full / df2)).max(0.0);
    let p = FisherSnedecor::new(df1, df2).map(|d| d.sf(f)).unwrap_or(f64::NAN);
    (f, df1, df2, p)
}

fn pooled(bank: &GamBank) -> (f64, f64, f64) {
    bank.models.iter().fold((0.0, 0.0, 0.0), |(r, e, n), m| (r + m.rss, e + m.edf, n + m.n_obs as f64))
}

/// Pooled F test of every term of `formula`, each reduced bank refitted on
/// exactly the rows of the full one.
pub fn f_tests(design: &SeriesFrame, formula: &Formula, train: &Window, options: &GamOptions) -> Result<Vec<FTest>> {
    let rows = (0..HALF_HOURS).map(|h| complete_rows(design, formula, train, h)).collect::<Result<Vec<_>>>()?;
    let full = fit_on_rows(design, formula, train, &rows, options)?;
    let (rss1, edf1, n) = pooled(&full);
    let relaxed = GamOptions { rows_per_coefficient: 0, ..options.clone() };
    formula
        .terms
        .iter()
        .enumerate()
        .map(|(j, term)| {
            let mut reduced = formula.clone();
            reduced.terms.remove(j);
            let bank = fit_on_rows(design, &reduced, train, &rows, &relaxed)?;
            let (rss0, edf0, _) = pooled(&bank);
            let (f, df1, df2, p_value) = nested_f(rss0, edf0, rss1, edf1, n);
            Ok(FTest { term: term.to_string(), f, df1, df2, p_value })
        })
        .collect()
}

fn score(bank: &GamBank, design: &SeriesFrame, window: &Window) -> Result<(f64, f64)> {
    let pred = predict_gam(bank, design)?;
    let load = design.column(&bank.formula.response)?;
    let (mut y, mut yhat) = (Vec::new(), Vec::new());
    for k in window.cells(design.grid()) {
        if let (Some(a), Some(b)) = (load[k], pred.forecast[k]) {
            y.push(a);
            yhat.push(b);
        }
    }
    Ok((rmse(&y, &yhat)?, mape(&y, &yhat)?))
}

/// Fits the seven nested models on `train` and scores each on every
/// evaluation window. A failing model is reported and skipped.
pub fn nested_gam_suite(
    design: &SeriesFrame,
    train: &Window,
    windows: &[(String, Window)],
    options: &GamOptions,
    with_f_tests: bool,
) -> Vec<NestedRow> {
    NESTED_FORMULAS
        .iter()
        .map(|(name, text)| {
            let run = || -> Result<(Vec<WindowScore>, Vec<FTest>)> {
                let formula = parse_formula(text)?;
                let bank = super::bank::fit_gam_bank_with(design, &formula, train, options)?;
                let scores = windows
                    .iter()
                    .map(|(label, w)| {
                        let (r, m) = score(&bank, design, w)?;
                        Ok(WindowScore { window: label.clone(), rmse: r, mape: m })
                    })
                    .collect::<Result<Vec<_>>>()?;
                let tests = if with_f_tests { f_tests(design, &formula, train, options)? } else { Vec::new() };
                Ok((scores, tests))
            };
            match run() {
                Ok((scores, f_tests)) => {
                    NestedRow { name: name.to_string(), formula: text.to_string(), scores, f_tests, error: None }
                }
                Err(e) => {
                    log::warn!("nested model `{name}` failed: {e}");
                    NestedRow {
                        name: name.to_string(),
                        formula: text.to_string(),
                        scores: Vec::new(),
                        f_tests: Vec::new(),
                        error: Some(e.to_string()),
                    }
                }
            }
        })
        .collect()
}
