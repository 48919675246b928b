use super::{Column, TimeGrid};
use crate::error::{Error, Result};

/// Repeats each coarse value over the target cells it covers. Target cells
/// outside the coarse grid are missing.
pub fn upsample_hold(values: &[Option<f64>], coarse: &TimeGrid, target: &TimeGrid) -> Result<Column> {
    if values.len() != coarse.len() {
        return Err(Error::data("values do not match the coarse grid"));
    }
    let (cs, ts) = (coarse.step().seconds(), target.step().seconds());
    if cs % ts != 0 {
        return Err(Error::usage(format!("coarse step {cs} s is not a multiple of target step {ts} s")));
    }
    Ok(target.timestamps().map(|t| coarse.cell_of(t).and_then(|k| values[k])).collect())
}

/// Keeps the first fine value of every coarse interval.
pub fn downsample_first(values: &[Option<f64>], fine: &TimeGrid, coarse: &TimeGrid) -> Result<Column> {
    if values.len() != fine.len() {
        return Err(Error::data("values do not match the fine grid"));
    }
    let (cs, fs) = (coarse.step().seconds(), fine.step().seconds());
    if cs % fs != 0 {
        return Err(Error::usage("coarse step is not a multiple of the fine step"));
    }
    Ok(coarse.timestamps().map(|t| fine.index_of(t).and_then(|k| values[k])).collect())
}
