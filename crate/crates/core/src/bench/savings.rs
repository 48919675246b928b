use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::changepoint::{
    binseg, residual_diagnostics, savings_percent, segment_means, significance_filter, ChangePointReport, Diagnostics,
    SavingsMode, DEFAULT_KAPPA, DEFAULT_MIN_SEGMENT, LJUNG_BOX_LAGS,
};
use crate::error::{Error, Result};
use crate::gam::{fit_gam_bank, parse_formula, predict_gam, Formula, SEASONALITY_FORMULA};
use crate::timegrid::{SeriesFrame, Window};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SavingsConfig {
    pub formula: String,
    pub train: Window,
    /// Window whose residuals are segmented.
    pub eval: Window,
    pub max_cp: usize,
    pub min_segment: usize,
    pub kappa: f64,
    pub mode: SavingsMode,
}

impl SavingsConfig {
    pub fn new(train: Window, eval: Window) -> Self {
        SavingsConfig {
            formula: SEASONALITY_FORMULA.to_string(),
            train,
            eval,
            max_cp: 10,
            min_segment: DEFAULT_MIN_SEGMENT,
            kappa: DEFAULT_KAPPA,
            mode: SavingsMode::default(),
        }
    }
}

/// Residuals of a calendar-and-weather model over the evaluation window
/// and their change points. Rows without a forecast are skipped, so change
/// point indices count the kept rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SavingsAnalysis {
    pub timestamps: Vec<DateTime<Utc>>,
    pub residuals: Vec<f64>,
    pub predicted: Vec<f64>,
    pub change_points: ChangePointReport,
    /// Change points that pass the jump-size filter.
    pub significant: ChangePointReport,
    /// Residual mean of the segment holding each row, under `significant`.
    pub segment_means: Vec<f64>,
    /// Standard deviation of the residuals around the segment means.
    pub within_sd: f64,
    pub diagnostics: Diagnostics,
}

impl SavingsAnalysis {
    /// Savings in percent over the rows inside `window`.
    pub fn savings(&self, window: &Window, mode: SavingsMode) -> Result<f64> {
        let (r, p): (Vec<f64>, Vec<f64>) = self
            .timestamps
            .iter()
            .zip(self.residuals.iter().zip(&self.predicted))
            .filter(|(t, _)| window.contains(**t))
            .map(|(_, (r, p))| (*r, *p))
            .unzip();
        savings_percent(&r, &p, mode)
    }
}

pub fn seasonality_analysis(design: &SeriesFrame, config: &SavingsConfig) -> Result<SavingsAnalysis> {
    let formula: Formula = parse_formula(&config.formula)?;
    let bank = fit_gam_bank(design, &formula, &config.train)?;
    let pred = predict_gam(&bank, design)?;
    let load = design.column(&formula.response)?;
    let grid = design.grid();
    let mut timestamps = Vec::new();
    let mut residuals = Vec::new();
    let mut predicted = Vec::new();
    for k in config.eval.cells(grid) {
        if let (Some(y), Some(f)) = (load[k], pred.forecast[k]) {
            timestamps.push(grid.timestamp(k));
            residuals.push(y - f);
            predicted.push(f);
        }
    }
    if residuals.is_empty() {
        return Err(Error::data("no residuals in the evaluation window"));
    }
    let mut report = binseg(&residuals, config.max_cp, config.min_segment)?;
    report.attach_times(&timestamps);
    let full_means = segment_means(&residuals, &report.indices());
    let n = residuals.len() as f64;
    let within_sd = (residuals.iter().zip(&full_means).map(|(r, m)| (r - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    let significant = significance_filter(&report, within_sd, config.kappa);
    let means = segment_means(&residuals, &significant.indices());
    let diagnostics = residual_diagnostics(&residuals, LJUNG_BOX_LAGS)?;
    Ok(SavingsAnalysis {
        timestamps,
        residuals,
        predicted,
        change_points: report,
        significant,
        segment_means: means,
        within_sd,
        diagnostics,
    })
}
