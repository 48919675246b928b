//! Plot data: long-format CSV (`series,timestamp,value`) plus a bare SVG.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use chrono::{DateTime, Duration, Utc};
use loadcast::timegrid::io::{format_timestamp, parse_timestamp};
use loadcast::{Error, Result};

use crate::out::Outputs;

/// Width of the centered rolling average.
pub const ROLLING_DAYS: i64 = 15;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlotKind {
    /// Residuals with segment means and their rolling average.
    Residuals,
    /// Several series on one time axis, each with its rolling average.
    IndexComparison,
    /// One series against another sharing timestamps.
    ScatterEffect,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub name: String,
    pub points: Vec<(DateTime<Utc>, f64)>,
}

impl Series {
    pub fn new(name: impl Into<String>, points: Vec<(DateTime<Utc>, f64)>) -> Self {
        Series { name: name.into(), points }
    }
}

/// Centered moving average over `days` days: each point averages the points
/// within half the width on either side. `points` must be time ordered.
pub fn rolling_mean(points: &[(DateTime<Utc>, f64)], days: i64) -> Vec<(DateTime<Utc>, f64)> {
    let half = Duration::hours(days * 12);
    let (mut lo, mut hi, mut sum) = (0usize, 0usize, 0.0);
    let mut out = Vec::with_capacity(points.len());
    for &(t, _) in points {
        while hi < points.len() && points[hi].0 <= t + half {
            sum += points[hi].1;
            hi += 1;
        }
        while points[lo].0 < t - half {
            sum -= points[lo].1;
            lo += 1;
        }
        // recompute the window sum now and then so rounding cannot drift
        if out.len() % 4096 == 4095 {
            sum = points[lo..hi].iter().map(|p| p.1).sum();
        }
        out.push((t, sum / (hi - lo) as f64));
    }
    out
}

pub fn long_csv(series: &[Series]) -> String {
    let mut s = String::from("series,timestamp,value\n");
    for ser in series {
        for (t, v) in &ser.points {
            let _ = writeln!(s, "{},{},{}", ser.name, format_timestamp(*t), v);
        }
    }
    s
}

/// Reads long-format plot data back, series in order of first appearance.
pub fn parse_long_csv(text: &str) -> Result<Vec<Series>> {
    let mut order: Vec<String> = Vec::new();
    let mut by_name: BTreeMap<String, Vec<(DateTime<Utc>, f64)>> = BTreeMap::new();
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, "series,timestamp,value")) => {}
        _ => return Err(Error::Parse { position: 1, message: "expected header `series,timestamp,value`".into() }),
    }
    for (i, line) in lines {
        if line.is_empty() {
            continue;
        }
        let bad = |m: &str| Error::Parse { position: i + 1, message: m.to_string() };
        let mut parts = line.rsplitn(3, ',');
        let (v, t, name) = match (parts.next(), parts.next(), parts.next()) {
            (Some(v), Some(t), Some(n)) => (v, t, n),
            _ => return Err(bad("expected three fields")),
        };
        let v: f64 = v.parse().map_err(|_| bad("bad value"))?;
        let t = parse_timestamp(t).map_err(|_| bad("bad timestamp"))?;
        if !by_name.contains_key(name) {
            order.push(name.to_string());
        }
        by_name.entry(name.to_string()).or_default().push((t, v));
    }
    Ok(order.into_iter().map(|n| Series { points: by_name.remove(&n).unwrap_or_default(), name: n }).collect())
}

const W: f64 = 900.0;
const H: f64 = 420.0;
const PAD: f64 = 50.0;
const COLORS: [&str; 6] = ["#999999", "#d62728", "#1f77b4", "#2ca02c", "#9467bd", "#ff7f0e"];
/// Points drawn per polyline; longer series are averaged in bins.
const MAX_POINTS: usize = 2000;

struct Frame {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Frame {
    fn fit(xs: impl Iterator<Item = f64> + Clone, ys: impl Iterator<Item = f64> + Clone) -> Self {
        let range = |it: &mut dyn Iterator<Item = f64>| {
            it.filter(|v| v.is_finite()).fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)))
        };
        let (mut x0, mut x1) = range(&mut xs.clone());
        let (mut y0, mut y1) = range(&mut ys.clone());
        if !(x0 < x1) {
            (x0, x1) = (x0.min(0.0) - 1.0, x1.max(0.0) + 1.0);
        }
        if !(y0 < y1) {
            (y0, y1) = (y0.min(0.0) - 1.0, y1.max(0.0) + 1.0);
        }
        Frame { x0, x1, y0, y1 }
    }

    fn px(&self, x: f64) -> f64 {
        PAD + (x - self.x0) / (self.x1 - self.x0) * (W - 2.0 * PAD)
    }

    fn py(&self, y: f64) -> f64 {
        H - PAD - (y - self.y0) / (self.y1 - self.y0) * (H - 2.0 * PAD)
    }
}

fn svg_open(title: &str, f: &Frame, x_label: (&str, &str)) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<text x="{PAD}" y="20" font-size="14">{}</text>"#, escape(title));
    let (l, r, t, b) = (PAD, W - PAD, PAD, H - PAD);
    let _ = writeln!(s, r#"<polyline fill="none" stroke="black" points="{l},{t} {l},{b} {r},{b}"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="{}">{:.3}</text>"#, 2.0, t + 4.0, f.y1);
    let _ = writeln!(s, r#"<text x="{}" y="{}">{:.3}</text>"#, 2.0, b, f.y0);
    let _ = writeln!(s, r#"<text x="{l}" y="{}">{}</text>"#, b + 16.0, escape(x_label.0));
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#, r, b + 16.0, escape(x_label.1));
    s
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn thin(points: &[(f64, f64)]) -> Vec<(f64, f64)> {
    if points.len() <= MAX_POINTS {
        return points.to_vec();
    }
    let per = points.len().div_ceil(MAX_POINTS);
    points
        .chunks(per)
        .map(|c| {
            let n = c.len() as f64;
            (c.iter().map(|p| p.0).sum::<f64>() / n, c.iter().map(|p| p.1).sum::<f64>() / n)
        })
        .collect()
}

/// Time series as polylines, one color per series, with a legend.
pub fn svg_lines(title: &str, series: &[Series]) -> String {
    let secs = |t: &DateTime<Utc>| t.timestamp() as f64;
    let f = Frame::fit(
        series.iter().flat_map(|s| s.points.iter().map(|p| secs(&p.0))),
        series.iter().flat_map(|s| s.points.iter().map(|p| p.1)),
    );
    let first = series.iter().filter_map(|s| s.points.first()).map(|p| p.0).min();
    let last = series.iter().filter_map(|s| s.points.last()).map(|p| p.0).max();
    let date = |t: Option<DateTime<Utc>>| t.map(|t| t.format("%Y-%m-%d").to_string()).unwrap_or_default();
    let mut s = svg_open(title, &f, (&date(first), &date(last)));
    for (i, ser) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let pts: Vec<(f64, f64)> = ser.points.iter().map(|p| (secs(&p.0), p.1)).filter(|p| p.1.is_finite()).collect();
        let coords: Vec<String> = thin(&pts).iter().map(|&(x, y)| format!("{:.1},{:.1}", f.px(x), f.py(y))).collect();
        let _ =
            writeln!(s, r#"<polyline fill="none" stroke="{color}" stroke-width="1" points="{}"/>"#, coords.join(" "));
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" fill="{color}">{}</text>"#,
            W - PAD - 160.0,
            PAD + 14.0 * i as f64,
            escape(&ser.name)
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Scatter of `y` against `x`, matched on timestamps.
pub fn svg_scatter(title: &str, x: &Series, y: &Series) -> String {
    let xs: BTreeMap<DateTime<Utc>, f64> = x.points.iter().copied().collect();
    let pts: Vec<(f64, f64)> = y.points.iter().filter_map(|(t, v)| xs.get(t).map(|u| (*u, *v))).collect();
    let f = Frame::fit(pts.iter().map(|p| p.0), pts.iter().map(|p| p.1));
    let mut s = svg_open(title, &f, (&format!("{} {:.3}", x.name, f.x0), &format!("{:.3}", f.x1)));
    let step = pts.len().div_ceil(MAX_POINTS * 2).max(1);
    for &(a, b) in pts.iter().step_by(step) {
        let _ = writeln!(s, r#"<circle cx="{:.1}" cy="{:.1}" r="1.2" fill="{}"/>"#, f.px(a), f.py(b), COLORS[2]);
    }
    s.push_str("</svg>\n");
    s
}

/// Adds `<stem>.csv` and `<stem>.svg` to the outputs. For residuals the
/// first series is the residual and any others (segment means) are drawn
/// as given; a rolling average of the first series is added. For index
/// comparisons every series gets its rolling average. A scatter takes
/// exactly two series, x then y.
pub fn emit_plotdata(out: &mut Outputs, stem: &str, kind: PlotKind, series: Vec<Series>) -> Result<()> {
    let rolled =
        |s: &Series| Series::new(format!("{}_rolling{ROLLING_DAYS}d", s.name), rolling_mean(&s.points, ROLLING_DAYS));
    let (data, svg) = match kind {
        PlotKind::Residuals => {
            let first = series.first().ok_or_else(|| Error::data("no residual series to plot"))?;
            let mut data = series.clone();
            data.insert(1, rolled(first));
            let svg = svg_lines(stem, &data);
            (data, svg)
        }
        PlotKind::IndexComparison => {
            let mut data = series.clone();
            data.extend(series.iter().map(rolled));
            let svg = svg_lines(stem, &data[series.len()..]);
            (data, svg)
        }
        PlotKind::ScatterEffect => {
            let [x, y] = series.as_slice() else {
                return Err(Error::usage("a scatter needs exactly two series"));
            };
            let svg = svg_scatter(stem, x, y);
            (series.clone(), svg)
        }
    };
    out.add(&format!("{stem}.csv"), long_csv(&data))?;
    out.add(&format!("{stem}.svg"), svg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::TimeZone;

    fn hourly(values: &[f64]) -> Vec<(DateTime<Utc>, f64)> {
        let t0 = Utc.with_ymd_and_hms(2021, 1, 1, 0, 0, 0).unwrap();
        values.iter().enumerate().map(|(i, v)| (t0 + Duration::hours(i as i64), *v)).collect()
    }

    #[test]
    fn rolling_mean_of_a_constant_is_constant() {
        let pts = hourly(&vec![4.25; 2000]);
        assert!(rolling_mean(&pts, ROLLING_DAYS).iter().all(|p| p.1 == 4.25));
    }

    #[test]
    fn rolling_mean_matches_a_direct_window() {
        let vals: Vec<f64> = (0..1500).map(|i| ((i * 7919) % 113) as f64 / 10.0).collect();
        let pts = hourly(&vals);
        let fast = rolling_mean(&pts, 2);
        for (i, (t, v)) in fast.iter().enumerate() {
            let w: Vec<f64> = pts.iter().filter(|p| (p.0 - *t).num_hours().abs() <= 24).map(|p| p.1).collect();
            let direct = w.iter().sum::<f64>() / w.len() as f64;
            assert!((v - direct).abs() < 1e-9, "{i}");
        }
        // centered: a linear trend is left unchanged away from the ends
        let lin = hourly(&(0..200).map(f64::from).collect::<Vec<_>>());
        let r = rolling_mean(&lin, 2);
        assert!((r[100].1 - 100.0).abs() < 1e-12);
    }

    #[test]
    fn long_csv_parses_back() {
        let a = Series::new("residual", hourly(&[0.5, -1.25, 1e-7]));
        let b = Series::new("segment_mean", hourly(&[0.1, 0.1, 0.1]));
        let back = parse_long_csv(&long_csv(&[a.clone(), b.clone()])).unwrap();
        assert_eq!(back, vec![a, b]);
        assert!(parse_long_csv("x,y\n").is_err());
        assert!(matches!(
            parse_long_csv("series,timestamp,value\na,2021-01-01,zz\n"),
            Err(Error::Parse { position: 2, .. })
        ));
    }

    #[test]
    fn svg_is_well_formed_enough() {
        let s = svg_lines("t<1>", &[Series::new("a", hourly(&[1.0, 2.0, f64::NAN, 3.0]))]);
        assert!(s.starts_with("<svg") && s.trim_end().ends_with("</svg>"));
        assert!(s.contains("t&lt;1&gt;"));
        let x = Series::new("x", hourly(&[1.0, 2.0]));
        let y = Series::new("y", hourly(&[3.0, 3.0]));
        assert_eq!(svg_scatter("s", &x, &y).matches("<circle").count(), 2);
    }
}
