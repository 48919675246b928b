//! Versioned binary container for fitted models.
//!
//! Layout, little endian: 8-byte magic `LOADCAST`, `u16` format version,
//! `u8`-prefixed kind tag, `u32`-prefixed formula text, `u64`-prefixed JSON
//! payload. The formula is readable without decoding the payload.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::ensemble::{BoostBank, ForestModel};
use crate::error::{Error, Result};
use crate::gam::GamBank;

pub const MAGIC: &[u8; 8] = b"LOADCAST";
pub const FORMAT_VERSION: u16 = 1;

/// A model that can be written to the container.
pub trait Stored: Serialize + DeserializeOwned {
    const KIND: &'static str;
    fn formula(&self) -> String;
}

impl Stored for GamBank {
    const KIND: &'static str = "gam-bank";
    fn formula(&self) -> String {
        self.formula.to_string()
    }
}

impl Stored for BoostBank {
    const KIND: &'static str = "boost-bank";
    fn formula(&self) -> String {
        self.formula.to_string()
    }
}

impl Stored for ForestModel {
    const KIND: &'static str = "forest";
    fn formula(&self) -> String {
        format!("{} ~ {}", self.response, self.features.join(" + "))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Header {
    pub version: u16,
    pub kind: String,
    pub formula: String,
}

pub fn encode<T: Stored>(model: &T) -> Result<Vec<u8>> {
    let payload = serde_json::to_vec(model).map_err(|e| Error::data(format!("cannot serialize model: {e}")))?;
    let formula = model.formula();
    let mut out = Vec::with_capacity(payload.len() + formula.len() + 32);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.push(T::KIND.len() as u8);
    out.extend_from_slice(T::KIND.as_bytes());
    out.extend_from_slice(&(formula.len() as u32).to_le_bytes());
    out.extend_from_slice(formula.as_bytes());
    out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
    out.extend_from_slice(&payload);
    Ok(out)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.at.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Parse { position: self.at, message: "truncated model file".into() })?;
        let s = &self.bytes[self.at..end];
        self.at = end;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }

    fn text(&mut self, n: usize) -> Result<String> {
        let at = self.at;
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|_| Error::Parse { position: at, message: "invalid UTF-8".into() })
    }
}

fn split(bytes: &[u8]) -> Result<(Header, &[u8])> {
    let mut c = Cursor { bytes, at: 0 };
    if c.take(MAGIC.len()).ok() != Some(MAGIC.as_slice()) {
        return Err(Error::Parse { position: 0, message: "not a model file".into() });
    }
    let version = u16::from_le_bytes(c.array()?);
    if version != FORMAT_VERSION {
        return Err(Error::data(format!("model format version {version}, this build reads {FORMAT_VERSION}")));
    }
    let kind_len = c.array::<1>()?[0] as usize;
    let kind = c.text(kind_len)?;
    let formula_len = u32::from_le_bytes(c.array()?) as usize;
    let formula = c.text(formula_len)?;
    let payload_len = usize::try_from(u64::from_le_bytes(c.array()?))
        .map_err(|_| Error::Parse { position: c.at, message: "payload too large".into() })?;
    let payload = c.take(payload_len)?;
    if c.at != bytes.len() {
        return Err(Error::Parse { position: c.at, message: "trailing bytes after payload".into() });
    }
    Ok((Header { version, kind, formula }, payload))
}

/// Reads the header only.
pub fn peek(bytes: &[u8]) -> Result<Header> {
    split(bytes).map(|(h, _)| h)
}

pub fn decode<T: Stored>(bytes: &[u8]) -> Result<T> {
    let (header, payload) = split(bytes)?;
    if header.kind != T::KIND {
        return Err(Error::data(format!("expected a {} model, found {}", T::KIND, header.kind)));
    }
    serde_json::from_slice(payload).map_err(|e| Error::Parse { position: 0, message: format!("model payload: {e}") })
}

pub fn save<T: Stored>(model: &T, path: &Path) -> Result<()> {
    std::fs::write(path, encode(model)?).map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn load<T: Stored>(path: &Path) -> Result<T> {
    decode(&std::fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gam::{fit_gam_bank, parse_formula, predict_gam};
    use crate::timegrid::{SeriesFrame, Step, TimeGrid, Window};
    use chrono::{TimeZone, Utc};

    fn bank() -> (GamBank, SeriesFrame) {
        let n = 48 * 100;
        let grid = TimeGrid::new(Utc.with_ymd_and_hms(2021, 1, 4, 0, 0, 0).unwrap(), Step::HalfHour, n).unwrap();
        let x: Vec<Option<f64>> = (0..n).map(|k| Some(((k * 37) % 101) as f64 / 10.0)).collect();
        let y: Vec<Option<f64>> =
            x.iter().enumerate().map(|(k, v)| Some(v.unwrap().sin() + (k % 7) as f64 * 0.01)).collect();
        let frame = SeriesFrame::new(grid).with("x", x).unwrap().with("y", y).unwrap();
        let b = fit_gam_bank(&frame, &parse_formula("y ~ s(x, k=8)").unwrap(), &Window::of(&grid)).unwrap();
        (b, frame)
    }

    #[test]
    fn gam_bank_round_trip_predicts_identically() {
        let (b, frame) = bank();
        let bytes = encode(&b).unwrap();
        let h = peek(&bytes).unwrap();
        assert_eq!((h.version, h.kind.as_str()), (FORMAT_VERSION, "gam-bank"));
        assert_eq!(h.formula, b.formula.to_string());
        let back: GamBank = decode(&bytes).unwrap();
        assert_eq!(back, b);
        assert_eq!(predict_gam(&back, &frame).unwrap().forecast, predict_gam(&b, &frame).unwrap().forecast);
    }

    #[test]
    fn damaged_files_are_rejected() {
        let (b, _) = bank();
        let bytes = encode(&b).unwrap();
        assert!(decode::<GamBank>(&bytes[..bytes.len() - 3]).is_err());
        assert!(decode::<GamBank>(b"LOADCASX").is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(decode::<GamBank>(&extra).is_err());
        let mut old = bytes.clone();
        old[8] = 9;
        assert_eq!(decode::<GamBank>(&old).unwrap_err().kind(), "data");
        assert_eq!(decode::<BoostBank>(&bytes).unwrap_err().kind(), "data");
    }
}
