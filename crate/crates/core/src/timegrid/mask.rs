use super::SeriesFrame;
use crate::error::Result;

/// Name of the boolean availability column (1 = usable row, 0 = deleted).
pub const AVAILABILITY_COLUMN: &str = "available";

/// Copy of `frame` carrying an availability column that is 1 exactly where
/// every `required` column is present. The input frame is not modified; an
/// existing availability column is replaced.
pub fn deletion_mask(frame: &SeriesFrame, required: &[&str]) -> Result<SeriesFrame> {
    let cols = required.iter().map(|name| frame.column(name)).collect::<Result<Vec<_>>>()?;
    let mask = (0..frame.len()).map(|k| Some(if cols.iter().all(|c| c[k].is_some()) { 1.0 } else { 0.0 })).collect();
    let mut out = frame.clone();
    out.set(AVAILABILITY_COLUMN, mask)?;
    Ok(out)
}
