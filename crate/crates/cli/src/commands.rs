use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use chrono::{DateTime, NaiveDate, Utc};
use loadcast::adapt::{adapt_bank, AdaptConfig, AdaptMethod};
use loadcast::aggregate::aggregate_run;
use loadcast::bench::{run_benchmark, synth_generate, BenchConfig, SynthSpec, BENCH_KEYS, FOREST_FEATURES};
use loadcast::changepoint::SavingsMode;
use loadcast::config::{parse_window, Config};
use loadcast::ensemble::{
    fit_forest_model, fit_gam_boost, predict_boost, BoostBank, BoostConfig, Bootstrap, ForestConfig, ForestModel,
    DEFAULT_BLOCK,
};
use loadcast::features::{build_design, daily_indices, CalendarTable, DesignOptions, MobilityTable};
use loadcast::gam::{
    f_tests, fit_gam_bank, parse_formula, predict_gam, GamBank, GamOptions, REFERENCE_FORMULA, SEASONALITY_FORMULA,
};
use loadcast::select::{
    correct_for, correction_label, daily_table, hoeffding_rank, mrmr_rank, shapley_importance, RankingReport,
    ShapleyConfig, DAILY_FEATURES,
};
use loadcast::store::{self, Stored};
use loadcast::timegrid::io::{
    format_timestamp, infer_grid, read_calendar, read_frame, read_mobility, read_stations, write_calendar, write_frame,
    write_mobility,
};
use loadcast::timegrid::{
    impute_station, order_neighbors, regional_mean_temperature, upsample_hold, Column, SeriesFrame, Window,
};
use loadcast::{bench, Error, Result};
use serde_json::json;

use crate::out::Outputs;
use crate::plot::{emit_plotdata, parse_long_csv, PlotKind, Series};
use crate::{Command, EnsembleKind, Method};

/// Config keys naming the benchmark data, besides the [`BENCH_KEYS`].
pub const DATA_KEYS: [&str; 6] =
    ["data.design", "data.frame", "data.calendar", "data.mobility", "data.synth", "data.seed"];

pub fn run(command: Command, args: &[String]) -> Result<()> {
    let name = args.first().map(String::as_str).unwrap_or("");
    let outputs = |dir: &Path| Outputs::new(dir, name, args);
    match command {
        Command::Version => {
            println!("{}", loadcast::VERSION);
            Ok(())
        }
        Command::Synth(a) => synth(outputs(&a.common.out), &a.scenario, a.seed),
        Command::Ingest(a) => {
            let mut out = outputs(&a.common.out);
            match (&a.load, &a.stations, &a.long) {
                (Some(load), Some(stations), None) => ingest(&mut out, load, stations, a.weights.as_deref())?,
                (None, None, Some(long)) => pivot(&mut out, long)?,
                _ => return Err(Error::usage("give either --load with --stations, or --long")),
            }
            out.finish().map(drop)
        }
        Command::Features(a) => {
            let mut out = outputs(&a.common.out);
            let frame = frame(&mut out, &a.frame)?;
            let calendar = read_calendar(&out.input(&a.calendar)?[..])?;
            let mobility = match &a.mobility {
                Some(p) => daily_indices(&read_mobility(&out.input(p)?[..])?),
                None => MobilityTable::new(),
            };
            let design = build_design(&frame, &calendar, &mobility, &DesignOptions::default())?;
            out.add("design.csv", frame_csv(&design)?)?;
            out.finish().map(drop)
        }
        Command::Fit(a) => {
            let mut out = outputs(&a.common.out);
            let design = frame(&mut out, &a.design)?;
            let formula = parse_formula(formula_text(&a.formula))?;
            let train = parse_window(&a.train)?;
            let bank = fit_gam_bank(&design, &formula, &train)?;
            out.add("model.lcm", store::encode(&bank)?)?;
            if a.f_tests {
                let mut csv = String::from("term,f,df1,df2,p_value\n");
                for t in f_tests(&design, &formula, &train, &GamOptions::default())? {
                    let _ = writeln!(csv, "\"{}\",{},{},{},{:e}", t.term, t.f, t.df1, t.df2, t.p_value);
                }
                out.add("ftests.csv", csv)?;
            }
            out.finish().map(drop)
        }
        Command::Predict(a) => {
            let mut out = outputs(&a.common.out);
            let bytes = out.input(&a.model)?;
            let design = frame(&mut out, &a.design)?;
            let header = store::peek(&bytes)?;
            let is_gam = header.kind == GamBank::KIND;
            if a.effect.is_some() && !is_gam {
                return Err(Error::usage("effect plots need an additive model bank"));
            }
            let (response, forecast) = match header.kind.as_str() {
                _ if is_gam => {
                    let bank: GamBank = store::decode(&bytes)?;
                    let pred = predict_gam(&bank, &design)?;
                    if let Some(var) = &a.effect {
                        effect_plot(&mut out, &design, &bank, &pred, var)?;
                    }
                    (bank.formula.response.clone(), pred.forecast)
                }
                k if k == BoostBank::KIND => {
                    let bank: BoostBank = store::decode(&bytes)?;
                    (bank.formula.response.clone(), predict_boost(&bank, &design)?)
                }
                k if k == ForestModel::KIND => {
                    let model: ForestModel = store::decode(&bytes)?;
                    (model.response.clone(), model.predict_frame(&design)?)
                }
                other => return Err(Error::data(format!("unknown model kind `{other}`"))),
            };
            let window = a.window.as_deref().map(parse_window).transpose()?;
            out.add("forecast.csv", forecast_csv(&design, &response, &[("forecast", forecast)], window.as_ref())?)?;
            out.finish().map(drop)
        }
        Command::Adapt(a) => {
            let mut out = outputs(&a.common.out);
            let bank: GamBank = store::decode(&out.input(&a.model)?)?;
            let design = frame(&mut out, &a.design)?;
            let burn = match &a.burn {
                Some(w) => parse_window(w)?,
                None => last_year(&bank.window)?,
            };
            let method = match a.method {
                Method::Static => AdaptMethod::Static,
                Method::Dynamic => AdaptMethod::Dynamic,
                Method::Viking => AdaptMethod::VikingLite,
            };
            let pred = predict_gam(&bank, &design)?;
            let loads = design.column(&bank.formula.response)?;
            let run = adapt_bank(&bank, &pred, loads, design.grid(), method, &AdaptConfig::new(burn))?;
            let cols = [("gam", pred.forecast), ("forecast", run.forecast)];
            out.add("forecast.csv", forecast_csv(&design, &bank.formula.response, &cols, None)?)?;
            out.add("noise.json", pretty(&run.noise)?)?;
            out.finish().map(drop)
        }
        Command::Aggregate(a) => {
            let mut out = outputs(&a.common.out);
            let experts = frame(&mut out, &a.experts)?;
            let names: Vec<String> = if a.columns.is_empty() {
                experts.names().iter().filter(|n| **n != a.target).cloned().collect()
            } else {
                a.columns.clone()
            };
            let cols = names.iter().map(|n| experts.column(n).map(<[_]>::to_vec)).collect::<Result<Vec<Column>>>()?;
            let targets = experts.column(&a.target)?;
            let run = aggregate_run(&names, &cols, targets, experts.grid(), a.bound)?;
            out.add("forecast.csv", forecast_csv(&experts, &a.target, &[("aggregate", run.forecast)], None)?)?;
            let mut csv = format!("timestamp,{}\n", names.join(","));
            for (t, w) in experts.grid().timestamps().zip(&run.weights) {
                if let Some(w) = w {
                    let cells: Vec<String> = w.iter().map(f64::to_string).collect();
                    let _ = writeln!(csv, "{},{}", format_timestamp(t), cells.join(","));
                }
            }
            out.add("weights.csv", csv)?;
            out.finish().map(drop)
        }
        Command::Ensemble(a) => {
            let mut out = outputs(&a.common.out);
            out.set_seed(a.seed);
            let design = frame(&mut out, &a.design)?;
            let train = parse_window(&a.train)?;
            let bytes = match a.kind {
                EnsembleKind::Rf | EnsembleKind::RfBlock => {
                    let mut cfg = ForestConfig::default();
                    if matches!(a.kind, EnsembleKind::RfBlock) {
                        cfg.bootstrap = Bootstrap::Block(DEFAULT_BLOCK);
                    }
                    if let Some(n) = a.trees {
                        cfg.n_trees = n;
                    }
                    let features: Vec<String> = if a.features.is_empty() {
                        FOREST_FEATURES.iter().map(|s| s.to_string()).collect()
                    } else {
                        a.features.clone()
                    };
                    store::encode(&fit_forest_model(&design, "load", &features, &train, &cfg, a.seed)?)?
                }
                EnsembleKind::Boosting => {
                    let mut cfg = BoostConfig::default();
                    if let Some(s) = a.steps {
                        cfg.steps = s;
                    }
                    let formula = parse_formula(formula_text(&a.formula))?;
                    store::encode(&fit_gam_boost(&design, &formula, &train, &cfg)?)?
                }
            };
            out.add("model.lcm", bytes)?;
            out.finish().map(drop)
        }
        Command::Changepoint(a) => {
            let mut out = outputs(&a.common.out);
            let design = frame(&mut out, &a.design)?;
            let mut cfg = bench::SavingsConfig::new(parse_window(&a.train)?, parse_window(&a.eval)?);
            cfg.max_cp = a.max_cp;
            if let Some(f) = &a.formula {
                cfg.formula = formula_text(f).to_string();
            }
            let savings_window = parse_window(&a.savings)?;
            let an = bench::seasonality_analysis(&design, &cfg)?;
            let savings = match an.savings(&savings_window, SavingsMode::default()) {
                Ok(s) => Some(s),
                Err(e) => {
                    log::warn!("no savings over {}: {e}", a.savings);
                    None
                }
            };
            let kept = an.significant.indices();
            let mut csv = String::from("rank,index,timestamp,jump,reduction,significant\n");
            for p in an.change_points.by_rank() {
                let t = p.timestamp.map(format_timestamp).unwrap_or_default();
                let sig = kept.contains(&p.index);
                let _ = writeln!(csv, "{},{},{t},{},{},{sig}", p.rank, p.index, p.jump, p.reduction);
            }
            out.add("changepoints.csv", csv)?;
            let summary = json!({
                "formula": cfg.formula,
                "train": window_json(&cfg.train),
                "eval": window_json(&cfg.eval),
                "rows": an.residuals.len(),
                "within_sd": an.within_sd,
                "savings_window": window_json(&savings_window),
                "savings_percent": savings,
                "diagnostics": an.diagnostics,
            });
            out.add("summary.json", pretty(&summary)?)?;
            let series = vec![
                Series::new("residual", an.timestamps.iter().copied().zip(an.residuals.iter().copied()).collect()),
                Series::new(
                    "segment_mean",
                    an.timestamps.iter().copied().zip(an.segment_means.iter().copied()).collect(),
                ),
            ];
            emit_plotdata(&mut out, "residuals", PlotKind::Residuals, series)?;
            out.finish().map(drop)
        }
        Command::Select(a) => {
            let mut out = outputs(&a.common.out);
            out.set_seed(a.seed);
            let design = frame(&mut out, &a.design)?;
            select(&mut out, &design, &a)?;
            out.finish().map(drop)
        }
        Command::Bench(a) => bench_cmd(outputs(&a.common.out), &a.config),
    }
}

fn formula_text(s: &str) -> &str {
    match s {
        "reference" => REFERENCE_FORMULA,
        "seasonality" => SEASONALITY_FORMULA,
        other => other,
    }
}

fn frame(out: &mut Outputs, path: &Path) -> Result<SeriesFrame> {
    read_frame(&out.input(path)?[..])
}

fn frame_csv(frame: &SeriesFrame) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    write_frame(frame, &mut buf)?;
    Ok(buf)
}

fn pretty<T: serde::Serialize>(value: &T) -> Result<String> {
    serde_json::to_string_pretty(value).map(|s| s + "\n").map_err(|e| Error::data(format!("json: {e}")))
}

fn window_json(w: &Window) -> serde_json::Value {
    json!({ "start": format_timestamp(w.start), "end": format_timestamp(w.end) })
}

/// The last 365 days of `w`, or all of it when shorter.
fn last_year(w: &Window) -> Result<Window> {
    Window::new((w.end - chrono::Duration::days(365)).max(w.start), w.end)
}

/// Response (when present) and forecast columns over `window`.
fn forecast_csv(
    design: &SeriesFrame,
    response: &str,
    forecasts: &[(&str, Column)],
    window: Option<&Window>,
) -> Result<Vec<u8>> {
    let mut f = SeriesFrame::new(*design.grid());
    if design.has(response) {
        f.push(response, design.column(response)?.to_vec())?;
    }
    for (name, col) in forecasts {
        f.push(*name, col.clone())?;
    }
    if let Some(w) = window {
        let cells = w.cells(design.grid());
        if cells.is_empty() {
            return Err(Error::data("the window does not overlap the design"));
        }
        f = f.slice(cells.start, cells.end)?;
    }
    frame_csv(&f)
}

fn synth(mut out: Outputs, scenario: &str, seed: u64) -> Result<()> {
    out.set_seed(seed);
    let spec = SynthSpec::preset(scenario, seed)?;
    let b = synth_generate(&spec)?;
    out.add("frame.csv", frame_csv(&b.frame)?)?;
    out.add("truth.csv", frame_csv(&b.truth)?)?;
    let mut cal = Vec::new();
    write_calendar(&b.calendar, &mut cal)?;
    out.add("calendar.csv", cal)?;
    let mut mob = Vec::new();
    write_mobility(&b.mobility, &mut mob)?;
    out.add("mobility.csv", mob)?;
    out.add("spec.json", pretty(&b.spec)?)?;
    out.finish().map(drop)
}

/// `station_id,weight` lines after a header.
fn parse_weights(text: &str) -> Result<BTreeMap<String, f64>> {
    let mut lines = text.lines().enumerate();
    if lines.next().map(|(_, h)| h.trim()) != Some("station_id,weight") {
        return Err(Error::Parse { position: 1, message: "expected header `station_id,weight`".into() });
    }
    let mut out = BTreeMap::new();
    for (i, line) in lines.filter(|(_, l)| !l.trim().is_empty()) {
        let bad = || Error::Parse { position: i + 1, message: format!("expected `station_id,weight`, found `{line}`") };
        let (id, w) = line.split_once(',').ok_or_else(bad)?;
        out.insert(id.trim().to_string(), w.trim().parse::<f64>().map_err(|_| bad())?);
    }
    Ok(out)
}

fn ingest(out: &mut Outputs, load: &Path, stations: &Path, weights: Option<&Path>) -> Result<()> {
    let mut frame = frame(out, load)?;
    frame.column("load")?;
    let stations = read_stations(&out.input(stations)?[..])?;
    let mut imputed = Vec::with_capacity(stations.len());
    let mut report = Vec::new();
    for s in &stations {
        let (filled, r) = impute_station(s, &order_neighbors(s, &stations));
        if !r.unrecovered.is_empty() {
            log::warn!("station {}: {} value(s) left missing", s.station_id, r.unrecovered.len());
        }
        report.push(json!({ "station_id": s.station_id, "report": r }));
        imputed.push(filled);
    }
    let w = match weights {
        Some(p) => {
            let text = String::from_utf8(out.input(p)?).map_err(|_| Error::data("weights file is not UTF-8"))?;
            let map = parse_weights(&text)?;
            let w = imputed
                .iter()
                .map(|s| {
                    map.get(&s.station_id)
                        .copied()
                        .ok_or_else(|| Error::data(format!("no weight for {}", s.station_id)))
                })
                .collect::<Result<Vec<f64>>>()?;
            Some(w)
        }
        None => None,
    };
    let temp = regional_mean_temperature(&imputed, w.as_deref())?;
    let coarse = imputed.first().ok_or_else(|| Error::data("no stations given"))?.grid;
    let temp = upsample_hold(&temp, &coarse, frame.grid())?;
    frame.set("temp", temp)?;
    out.add("frame.csv", frame_csv(&frame)?)?;
    out.add("imputation.json", pretty(&report)?)
}

/// Long plot data to a wide frame, one column per series.
fn pivot(out: &mut Outputs, path: &Path) -> Result<()> {
    let text = String::from_utf8(out.input(path)?).map_err(|_| Error::data("plot data is not UTF-8"))?;
    let series = parse_long_csv(&text)?;
    let mut stamps: Vec<DateTime<Utc>> = series.iter().flat_map(|s| s.points.iter().map(|p| p.0)).collect();
    stamps.sort();
    stamps.dedup();
    let grid = infer_grid(&stamps)?;
    let mut f = SeriesFrame::new(grid);
    for s in &series {
        let mut col = vec![None; grid.len()];
        for (t, v) in &s.points {
            let k = grid.index_of(*t).expect("on the inferred grid");
            if col[k].is_some() {
                return Err(Error::data(format!("series {} repeats {}", s.name, format_timestamp(*t))));
            }
            col[k] = Some(*v);
        }
        f.push(s.name.clone(), col)?;
    }
    out.add("frame.csv", frame_csv(&f)?)
}

fn effect_plot(
    out: &mut Outputs,
    design: &SeriesFrame,
    bank: &GamBank,
    pred: &loadcast::gam::GamPrediction,
    var: &str,
) -> Result<()> {
    let j = bank
        .formula
        .terms
        .iter()
        .position(|t| t.variables().first() == Some(&var))
        .ok_or_else(|| Error::usage(format!("no model term starts with `{var}`")))?;
    let x = design.column(var)?;
    let grid = design.grid();
    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    for (k, e) in pred.effects.iter().enumerate() {
        if let (Some(e), Some(v)) = (e, x[k]) {
            xs.push((grid.timestamp(k), v));
            ys.push((grid.timestamp(k), e[j]));
        }
    }
    let series = vec![Series::new(var, xs), Series::new(pred.term_labels[j].clone(), ys)];
    emit_plotdata(out, &format!("effect_{var}"), PlotKind::ScatterEffect, series)
}

fn midnight(d: NaiveDate) -> DateTime<Utc> {
    d.and_hms_opt(0, 0, 0).expect("midnight").and_utc()
}

fn select(out: &mut Outputs, design: &SeriesFrame, a: &crate::SelectArgs) -> Result<()> {
    let features: Vec<String> = if a.features.is_empty() {
        DAILY_FEATURES.iter().filter(|f| design.has(f)).map(|s| s.to_string()).collect()
    } else {
        a.features.clone()
    };
    let names: Vec<&str> = features.iter().map(String::as_str).collect();
    let table = daily_table(design, &names, &a.target)?;
    let feats = &table.features[..];
    let shapley = ShapleyConfig {
        forest: ForestConfig { n_trees: a.trees, ..ForestConfig::default() },
        seed: a.seed,
        ..ShapleyConfig::default()
    };
    let removed: Vec<&str> = a.correct.iter().map(String::as_str).filter(|s| !s.is_empty()).collect();
    let mut targets = vec![(a.target.clone(), table.target.clone())];
    if !removed.is_empty() {
        targets.push((correction_label(&a.target, &removed), correct_for(feats, &table.target, &removed)?));
    }
    let mut reports: Vec<RankingReport> = Vec::new();
    for (label, y) in &targets {
        reports.push(mrmr_rank(feats, y, feats.len(), label)?);
        reports.push(hoeffding_rank(feats, y, label)?);
        reports.push(shapley_importance(feats, y, &shapley, label)?);
    }
    let mut csv = String::from("method,target,rank,feature,score\n");
    for r in &reports {
        for (i, e) in r.entries.iter().enumerate() {
            let _ = writeln!(csv, "{},\"{}\",{},{},{}", r.method, r.target, i + 1, e.feature, e.score);
        }
    }
    out.add("rankings.csv", csv)?;
    out.add("rankings.json", pretty(&reports)?)?;
    // standardized daily target and mobility indices on one axis
    let z = |v: &[f64]| -> Vec<f64> {
        let n = v.len() as f64;
        let m = v.iter().sum::<f64>() / n;
        let sd = (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n).sqrt();
        v.iter().map(|x| if sd > 0.0 { (x - m) / sd } else { 0.0 }).collect()
    };
    let stamps: Vec<DateTime<Utc>> = table.dates.iter().copied().map(midnight).collect();
    let mut series = vec![Series::new(a.target.clone(), stamps.iter().copied().zip(z(&table.target)).collect())];
    for (name, col) in feats.iter().filter(|(n, _)| ["work", "tourism", "resident"].contains(&n.as_str())) {
        series.push(Series::new(name.clone(), stamps.iter().copied().zip(z(col)).collect()));
    }
    emit_plotdata(out, "index_comparison", PlotKind::IndexComparison, series)
}

fn bench_cmd(mut out: Outputs, config_path: &Path) -> Result<()> {
    let text = String::from_utf8(out.input(config_path)?).map_err(|_| Error::data("config is not UTF-8"))?;
    let config = Config::parse(&text)?;
    let known: Vec<&str> = BENCH_KEYS.iter().chain(DATA_KEYS.iter()).copied().collect();
    config.check_known(&known)?;
    out.set_config_hash(&config.canonical());
    let base = config_path.parent().map(Path::to_path_buf).unwrap_or_default();
    let path = |key: &str| -> Option<PathBuf> { config.get(key).map(|p| base.join(p)) };
    let bc = BenchConfig::from_config(&config)?;
    out.set_seed(bc.seed);
    let options = DesignOptions::default();
    let design = if let Some(p) = path("data.design") {
        frame(&mut out, &p)?
    } else if let Some(p) = path("data.frame") {
        let f = frame(&mut out, &p)?;
        let cal_path = path("data.calendar").ok_or_else(|| Error::usage("data.frame needs data.calendar"))?;
        let cal: CalendarTable = read_calendar(&out.input(&cal_path)?[..])?;
        let mob = match path("data.mobility") {
            Some(p) => daily_indices(&read_mobility(&out.input(&p)?[..])?),
            None => MobilityTable::new(),
        };
        build_design(&f, &cal, &mob, &options)?
    } else if let Some(name) = config.get("data.synth") {
        let seed = config.value::<u64>("data.seed")?.unwrap_or(bc.seed);
        let b = synth_generate(&SynthSpec::preset(name, seed)?)?;
        build_design(&b.frame, &b.calendar, &b.mobility, &options)?
    } else {
        return Err(Error::usage("the config names no data: set data.design, data.frame or data.synth"));
    };
    let report = run_benchmark(&design, &bc)?;
    out.add("scores.csv", report.scores_csv())?;
    out.add("weights.csv", report.weights_csv().unwrap_or_else(|| "timestamp\n".into()))?;
    out.add("report.md", report.report_md())?;
    out.finish().map(drop)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weights_file() {
        let w = parse_weights("station_id,weight\na,0.25\n b , 0.75\n\n").unwrap();
        assert_eq!(w["b"], 0.75);
        assert!(matches!(parse_weights("station_id,weight\na;1\n"), Err(Error::Parse { position: 2, .. })));
        assert!(parse_weights("id,w\n").is_err());
    }

    #[test]
    fn named_formulas() {
        assert_eq!(formula_text("reference"), REFERENCE_FORMULA);
        assert_eq!(formula_text("load ~ temp"), "load ~ temp");
    }
}
