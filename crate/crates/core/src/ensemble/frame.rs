use serde::{Deserialize, Serialize};

use super::forest::{fit_forest, Forest, ForestConfig};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::timegrid::{Column, SeriesFrame, Window};

/// A forest together with the design columns it reads, in order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestModel {
    pub response: String,
    pub features: Vec<String>,
    pub forest: Forest,
}

fn feature_columns<'a>(design: &'a SeriesFrame, features: &[String]) -> Result<Vec<&'a [Option<f64>]>> {
    features.iter().map(|f| design.column(f)).collect()
}

fn complete(cols: &[&[Option<f64>]], k: usize) -> bool {
    cols.iter().all(|c| c[k].is_some_and(f64::is_finite))
}

/// Fits a forest on the rows of `window` where the response and every
/// feature are present.
pub fn fit_forest_model(
    design: &SeriesFrame,
    response: &str,
    features: &[String],
    window: &Window,
    config: &ForestConfig,
    seed: u64,
) -> Result<ForestModel> {
    let cols = feature_columns(design, features)?;
    let y = design.column(response)?;
    let rows: Vec<usize> = window.cells(design.grid()).filter(|&k| complete(&cols, k) && y[k].is_some()).collect();
    if rows.len() < 2 {
        return Err(Error::data("too few complete training rows for the forest"));
    }
    let mut x = Matrix::zeros(rows.len(), cols.len());
    for (i, &k) in rows.iter().enumerate() {
        for (j, c) in cols.iter().enumerate() {
            x[(i, j)] = c[k].unwrap_or(f64::NAN);
        }
    }
    let target: Vec<f64> = rows.iter().map(|&k| y[k].unwrap_or(f64::NAN)).collect();
    let forest = fit_forest(&x, &target, config, seed)?;
    Ok(ForestModel { response: response.to_string(), features: features.to_vec(), forest })
}

impl ForestModel {
    /// Forecast for every row with complete features, missing elsewhere.
    pub fn predict_frame(&self, design: &SeriesFrame) -> Result<Column> {
        let cols = feature_columns(design, &self.features)?;
        let mut row = vec![0.0; cols.len()];
        Ok((0..design.len())
            .map(|k| {
                if !complete(&cols, k) {
                    return None;
                }
                for (j, c) in cols.iter().enumerate() {
                    row[j] = c[k].unwrap_or(f64::NAN);
                }
                Some(self.forest.predict_row(&row))
            })
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::timegrid::{Step, TimeGrid};
    use chrono::{TimeZone, Utc};

    #[test]
    fn incomplete_rows_are_skipped_and_not_forecast() {
        let n = 200;
        let grid = TimeGrid::new(Utc.with_ymd_and_hms(2021, 1, 1, 0, 0, 0).unwrap(), Step::HalfHour, n).unwrap();
        let mut x: Column = (0..n).map(|k| Some((k % 10) as f64)).collect();
        x[5] = None;
        let y: Column = (0..n).map(|k| Some(if k % 10 < 5 { 1.0 } else { 3.0 })).collect();
        let frame = SeriesFrame::new(grid).with("x", x).unwrap().with("load", y).unwrap();
        let cfg = ForestConfig { n_trees: 5, ..ForestConfig::default() };
        let m = fit_forest_model(&frame, "load", &["x".into()], &Window::of(&grid), &cfg, 1).unwrap();
        let f = m.predict_frame(&frame).unwrap();
        assert_eq!(f[5], None);
        assert_eq!(f[0], Some(1.0));
        assert_eq!(f[9], Some(3.0));
        assert!(fit_forest_model(&frame, "load", &["nope".into()], &Window::of(&grid), &cfg, 1).is_err());
    }
}
