use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gam::{fit_gam_bank_with, predict_gam, Formula, GamBank, GamOptions};
use crate::timegrid::{Column, SeriesFrame, Window};

/// Response column the mobility model is fitted on.
pub const RESIDUAL_COLUMN: &str = "residual";

/// Default mobility model: day-type intercepts plus linear index effects,
/// so the index slopes are estimated within day types.
pub const MOBILITY_FORMULA: &str = "residual ~ daytype:dls + work + tourism + resident";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StackedForecast {
    /// Base forecast plus the residual forecast where mobility is available,
    /// the base forecast elsewhere.
    pub forecast: Column,
    pub residual_forecast: Column,
    /// Rows where the residual model contributed.
    pub stacked: Vec<bool>,
    pub bank: GamBank,
}

/// Fits a model of `load − base` on the rows of `train` where every
/// regressor of `formula` (the mobility indices in particular) is present,
/// and adds its forecast to `base`.
pub fn residual_stack(
    design: &SeriesFrame,
    base: &[Option<f64>],
    formula: &Formula,
    train: &Window,
) -> Result<StackedForecast> {
    if formula.response != RESIDUAL_COLUMN {
        return Err(Error::usage(format!("the mobility model must have `{RESIDUAL_COLUMN}` as response")));
    }
    if base.len() != design.len() {
        return Err(Error::usage("base forecast does not match the design"));
    }
    let load = design.column("load")?;
    let residual: Column = load.iter().zip(base).map(|(y, f)| Some((*y)? - (*f)?)).collect();
    let mut frame = design.clone();
    frame.set(RESIDUAL_COLUMN, residual)?;
    let overlap = train
        .cells(frame.grid())
        .filter(|&k| {
            base[k].is_some() && formula.variables().iter().all(|v| frame.column(v).is_ok_and(|c| c[k].is_some()))
        })
        .count();
    if overlap == 0 {
        return Err(Error::data("no training row has both a base forecast and mobility data"));
    }
    let bank = fit_gam_bank_with(&frame, formula, train, &GamOptions::default())?;
    let pred = predict_gam(&bank, &frame)?;
    let mut forecast = Vec::with_capacity(base.len());
    let mut stacked = Vec::with_capacity(base.len());
    for (b, e) in base.iter().zip(&pred.forecast) {
        match (b, e) {
            (Some(b), Some(e)) => {
                forecast.push(Some(b + e));
                stacked.push(true);
            }
            _ => {
                forecast.push(*b);
                stacked.push(false);
            }
        }
    }
    Ok(StackedForecast { forecast, residual_forecast: pred.forecast, stacked, bank })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bench::{synth_generate, SynthSpec};
    use crate::features::{build_design, DesignOptions};
    use crate::gam::parse_formula;
    use chrono::NaiveDate;

    fn design() -> (SeriesFrame, Window) {
        let d = |y, m, dd| NaiveDate::from_ymd_opt(y, m, dd).unwrap();
        let mut spec = SynthSpec::baseline(3, d(2019, 6, 1), d(2020, 2, 1));
        spec.mobility_from = Some(d(2019, 7, 1));
        let b = synth_generate(&spec).unwrap();
        let design = build_design(&b.frame, &b.calendar, &b.mobility, &DesignOptions::default()).unwrap();
        let w = Window::of(design.grid());
        (design, w)
    }

    #[test]
    fn exact_base_leaves_nothing_to_stack() {
        let (design, w) = design();
        let base = design.column("load").unwrap().to_vec();
        let s = residual_stack(&design, &base, &parse_formula(MOBILITY_FORMULA).unwrap(), &w).unwrap();
        for (a, b) in s.forecast.iter().zip(&base) {
            match (a, b) {
                (Some(a), Some(b)) => assert!((a - b).abs() < 1e-9),
                (a, b) => assert_eq!(a, b),
            }
        }
        let avail = design.column("available").unwrap();
        for (k, flag) in s.stacked.iter().enumerate() {
            assert_eq!(*flag, avail[k] == Some(1.0));
        }
    }

    #[test]
    fn no_mobility_overlap_is_a_data_error() {
        let (design, _) = design();
        let base = design.column("load").unwrap().to_vec();
        let g = design.grid();
        let june = Window::new(g.start(), g.timestamp(48 * 20)).unwrap();
        let err = residual_stack(&design, &base, &parse_formula(MOBILITY_FORMULA).unwrap(), &june).unwrap_err();
        assert_eq!(err.kind(), "data");
        let wrong = parse_formula("load ~ work").unwrap();
        assert!(residual_stack(&design, &base, &wrong, &june).is_err());
    }
}
