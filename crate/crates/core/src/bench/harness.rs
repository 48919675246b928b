use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use chrono::{DateTime, Duration, NaiveDate, Utc};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::{bootstrap_ci, mape, rmse, Metric, Score};
use super::stack::{residual_stack, MOBILITY_FORMULA};
use crate::adapt::{adapt_bank, AdaptConfig, AdaptMethod};
use crate::aggregate::{aggregate_run, DEFAULT_BOUND};
use crate::config::{parse_window, Config};
use crate::ensemble::{
    fit_forest_model, fit_gam_boost, predict_boost, BoostConfig, Bootstrap, ForestConfig, DEFAULT_BLOCK,
};
use crate::error::{Error, Result};
use crate::gam::{fit_gam_bank, parse_formula, predict_gam, GamBank, GamPrediction, REFERENCE_FORMULA};
use crate::timegrid::io::format_timestamp;
use crate::timegrid::{civil_time, Column, SeriesFrame, Window};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ModelKind {
    Persistence,
    Gam,
    StaticKalman,
    DynamicKalman,
    Viking,
    Aggregation,
    GamBoosting,
    RandomForest,
    RandomForestBlock,
}

impl ModelKind {
    pub const ALL: [ModelKind; 9] = [
        ModelKind::Persistence,
        ModelKind::Gam,
        ModelKind::StaticKalman,
        ModelKind::DynamicKalman,
        ModelKind::Viking,
        ModelKind::Aggregation,
        ModelKind::GamBoosting,
        ModelKind::RandomForest,
        ModelKind::RandomForestBlock,
    ];

    pub fn label(self) -> &'static str {
        match self {
            ModelKind::Persistence => "Persistence (1 day)",
            ModelKind::Gam => "GAM",
            ModelKind::StaticKalman => "Static Kalman filter",
            ModelKind::DynamicKalman => "Dynamic Kalman filter",
            ModelKind::Viking => "Viking-lite",
            ModelKind::Aggregation => "Aggregation of experts",
            ModelKind::GamBoosting => "GAM boosting",
            ModelKind::RandomForest => "Random forests",
            ModelKind::RandomForestBlock => "Random forests + bootstrap",
        }
    }

    /// Short name used in configuration files and CSV output.
    pub fn key(self) -> &'static str {
        match self {
            ModelKind::Persistence => "persistence",
            ModelKind::Gam => "gam",
            ModelKind::StaticKalman => "static",
            ModelKind::DynamicKalman => "dynamic",
            ModelKind::Viking => "viking",
            ModelKind::Aggregation => "aggregation",
            ModelKind::GamBoosting => "boosting",
            ModelKind::RandomForest => "rf",
            ModelKind::RandomForestBlock => "rf_block",
        }
    }

    pub fn from_key(key: &str) -> Result<Self> {
        Self::ALL.into_iter().find(|m| m.key() == key).ok_or_else(|| Error::usage(format!("unknown model `{key}`")))
    }

    /// Whether a mobility variant exists; persistence has none.
    pub fn stackable(self) -> bool {
        self != ModelKind::Persistence
    }

    fn needs_gam(self) -> bool {
        matches!(self, ModelKind::Gam | ModelKind::StaticKalman | ModelKind::DynamicKalman | ModelKind::Viking)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Variant {
    Without,
    With,
}

impl Variant {
    pub fn key(self) -> &'static str {
        match self {
            Variant::Without => "without",
            Variant::With => "with",
        }
    }
}

/// Regressors of the forests.
pub const FOREST_FEATURES: [&str; 12] = [
    "temp",
    "temp95",
    "temp99",
    "tempmin99",
    "tempmax99",
    "toy",
    "time",
    "daytype",
    "dls",
    "halfhour",
    "load1d",
    "load1w",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub formula: String,
    pub mobility_formula: String,
    pub train: Window,
    pub test: Window,
    /// Window scored by the Kalman grid search.
    pub burn: Window,
    pub models: Vec<ModelKind>,
    /// Also score the residual-stacking variants.
    pub mobility: bool,
    /// Drop holidays and the days directly before and after them.
    pub exclude_holidays: bool,
    pub forest: ForestConfig,
    pub forest_features: Vec<String>,
    pub block_len: usize,
    pub boost: BoostConfig,
    pub p0_scale: f64,
    pub ci_reps: usize,
    pub ci_block: usize,
    pub seed: u64,
}

impl BenchConfig {
    pub fn new(train: Window, test: Window, burn: Window) -> Self {
        BenchConfig {
            formula: REFERENCE_FORMULA.to_string(),
            mobility_formula: MOBILITY_FORMULA.to_string(),
            train,
            test,
            burn,
            models: ModelKind::ALL.to_vec(),
            mobility: true,
            exclude_holidays: false,
            forest: ForestConfig::default(),
            forest_features: FOREST_FEATURES.iter().map(|s| s.to_string()).collect(),
            block_len: DEFAULT_BLOCK,
            boost: BoostConfig::default(),
            p0_scale: 1.0,
            ci_reps: 500,
            ci_block: DEFAULT_BLOCK,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.models.is_empty() {
            return Err(Error::usage("no model selected"));
        }
        if self.ci_reps < 500 {
            return Err(Error::usage("confidence intervals need at least 500 bootstrap replicates"));
        }
        if self.train.start >= self.test.end || self.test.start < self.train.end {
            return Err(Error::usage("the test window must follow the training window"));
        }
        self.forest.validate()?;
        self.boost.validate()
    }
}

/// Keys read by [`BenchConfig::from_config`].
pub const BENCH_KEYS: [&str; 19] = [
    "model.formula",
    "model.mobility_formula",
    "model.list",
    "model.mobility",
    "windows.train",
    "windows.test",
    "windows.burn",
    "bench.exclude_holidays",
    "bench.seed",
    "bench.ci_reps",
    "bench.ci_block",
    "forest.n_trees",
    "forest.max_depth",
    "forest.min_leaf",
    "forest.mtry",
    "forest.block_len",
    "forest.features",
    "boost.",
    "kalman.p0_scale",
];

impl BenchConfig {
    /// Builds a configuration from a config file. Windows default to the
    /// `open-train` and `test` presets; the burn-in window defaults to the
    /// last year of training.
    pub fn from_config(c: &Config) -> Result<Self> {
        let train = c.window("windows.train")?.map_or_else(|| parse_window("open-train"), Ok)?;
        let test = c.window("windows.test")?.map_or_else(|| parse_window("test"), Ok)?;
        let burn = match c.window("windows.burn")? {
            Some(w) => w,
            None => Window::new((train.end - Duration::days(365)).max(train.start), train.end)?,
        };
        let mut cfg = BenchConfig::new(train, test, burn);
        if let Some(f) = c.get("model.formula") {
            cfg.formula = f.to_string();
        }
        if let Some(f) = c.get("model.mobility_formula") {
            cfg.mobility_formula = f.to_string();
        }
        if let Some(list) = c.list("model.list") {
            cfg.models = list.iter().map(|k| ModelKind::from_key(k)).collect::<Result<_>>()?;
        }
        cfg.mobility = c.bool("model.mobility")?.unwrap_or(cfg.mobility);
        cfg.exclude_holidays = c.bool("bench.exclude_holidays")?.unwrap_or(false);
        cfg.seed = c.value("bench.seed")?.unwrap_or(cfg.seed);
        cfg.ci_reps = c.value("bench.ci_reps")?.unwrap_or(cfg.ci_reps);
        cfg.ci_block = c.value("bench.ci_block")?.unwrap_or(cfg.ci_block);
        cfg.forest.n_trees = c.value("forest.n_trees")?.unwrap_or(cfg.forest.n_trees);
        cfg.forest.max_depth = c.value("forest.max_depth")?.unwrap_or(cfg.forest.max_depth);
        cfg.forest.min_leaf = c.value("forest.min_leaf")?.unwrap_or(cfg.forest.min_leaf);
        if let Some(m) = c.value("forest.mtry")? {
            cfg.forest.mtry = Some(m);
        }
        cfg.block_len = c.value("forest.block_len")?.unwrap_or(cfg.block_len);
        if let Some(f) = c.list("forest.features") {
            cfg.forest_features = f;
        }
        cfg.boost.steps = c.value("boost.steps")?.unwrap_or(cfg.boost.steps);
        cfg.boost.shrinkage = c.value("boost.shrinkage")?.unwrap_or(cfg.boost.shrinkage);
        cfg.boost.df = c.value("boost.df")?.unwrap_or(cfg.boost.df);
        cfg.p0_scale = c.value("kalman.p0_scale")?.unwrap_or(cfg.p0_scale);
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub model: ModelKind,
    pub variant: Variant,
    pub score: Option<Score>,
    /// False for combinations without a mobility variant; the score then
    /// repeats the variant without mobility.
    pub applicable: bool,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
    /// Test cells scored by every model.
    pub scored: Vec<DateTime<Utc>>,
    /// Civil dates dropped in holiday-exclusion mode.
    pub excluded_dates: BTreeSet<NaiveDate>,
    /// Forecasts over the whole grid, by `model/variant` key.
    pub forecasts: BTreeMap<String, Column>,
    /// Expert names and aggregation weights over the scored cells.
    pub weights: Option<(Vec<String>, Vec<Vec<f64>>)>,
}

impl BenchReport {
    pub fn score(&self, model: ModelKind, variant: Variant) -> Option<&Score> {
        self.rows.iter().find(|r| r.model == model && r.variant == variant).and_then(|r| r.score.as_ref())
    }

    pub fn scores_csv(&self) -> String {
        let mut out = String::from("model,variant,rmse,ci_rmse,mape,ci_mape,n,status\n");
        for r in &self.rows {
            let status = match (&r.error, r.applicable) {
                (Some(_), _) => "failed",
                (None, false) => "n/a",
                (None, true) => "ok",
            };
            match &r.score {
                Some(s) => writeln!(
                    out,
                    "{},{},{:.6},{:.6},{:.6},{:.6},{},{status}",
                    r.model.key(),
                    r.variant.key(),
                    s.rmse,
                    s.ci_rmse,
                    s.mape,
                    s.ci_mape,
                    s.n
                ),
                None => writeln!(out, "{},{},,,,,0,{status}", r.model.key(), r.variant.key()),
            }
            .expect("write to string");
        }
        out
    }

    pub fn weights_csv(&self) -> Option<String> {
        let (names, w) = self.weights.as_ref()?;
        let mut out = format!("timestamp,{}\n", names.join(","));
        for (t, row) in self.scored.iter().zip(w) {
            let cells: Vec<String> = row.iter().map(|v| format!("{v:.6}")).collect();
            writeln!(out, "{},{}", format_timestamp(*t), cells.join(",")).expect("write to string");
        }
        Some(out)
    }

    /// Markdown table in the layout of a with/without-mobility benchmark.
    pub fn report_md(&self) -> String {
        let cell = |m: ModelKind, v: Variant| -> (String, String) {
            let row = self.rows.iter().find(|r| r.model == m && r.variant == v);
            match row {
                Some(r) if !r.applicable => ("N.A.".into(), "N.A.".into()),
                Some(BenchRow { score: Some(s), .. }) => {
                    (format!("{:.2} ± {:.2}", s.rmse, s.ci_rmse), format!("{:.2} ± {:.2}", s.mape, s.ci_mape))
                }
                Some(BenchRow { error: Some(_), .. }) => ("failed".into(), "failed".into()),
                _ => ("".into(), "".into()),
            }
        };
        let mut out = String::from("# Benchmark\n\n");
        writeln!(out, "Scored cells: {}.", self.scored.len()).expect("write to string");
        if !self.excluded_dates.is_empty() {
            writeln!(out, "Excluded days (holidays and neighbours): {}.", self.excluded_dates.len())
                .expect("write to string");
        }
        out.push_str("\n| Model | RMSE (GW) | MAPE (%) | RMSE with mobility (GW) | MAPE with mobility (%) |\n");
        out.push_str("|---|---|---|---|---|\n");
        let mut seen = BTreeSet::new();
        for r in &self.rows {
            if !seen.insert(r.model) {
                continue;
            }
            let (a, b) = cell(r.model, Variant::Without);
            let (c, d) = cell(r.model, Variant::With);
            writeln!(out, "| {} | {a} | {b} | {c} | {d} |", r.model.label()).expect("write to string");
        }
        let failures: Vec<&BenchRow> = self.rows.iter().filter(|r| r.error.is_some()).collect();
        if !failures.is_empty() {
            out.push_str("\nFailures:\n\n");
            for r in failures {
                writeln!(out, "- {} ({}): {}", r.model.label(), r.variant.key(), r.error.as_deref().unwrap_or(""))
                    .expect("write to string");
            }
        }
        out
    }
}

/// Holiday dates of the design (civil calendar) with the day before and the
/// day after each.
pub fn holiday_exclusion(design: &SeriesFrame) -> Result<BTreeSet<NaiveDate>> {
    let flags = design.column("holiday")?;
    let grid = design.grid();
    let mut out = BTreeSet::new();
    for (k, f) in flags.iter().enumerate() {
        if *f == Some(1.0) {
            let d = civil_time(grid.timestamp(k)).date();
            out.extend([d - Duration::days(1), d, d + Duration::days(1)]);
        }
    }
    Ok(out)
}

struct Context<'a> {
    design: &'a SeriesFrame,
    config: &'a BenchConfig,
    gam: std::result::Result<(GamBank, GamPrediction), String>,
}

fn persistence(design: &SeriesFrame) -> Result<Column> {
    Ok(design.column("load1d")?.to_vec())
}

fn forest_forecast(ctx: &Context, block: bool) -> Result<Column> {
    let mut cfg = ctx.config.forest;
    cfg.bootstrap = if block { Bootstrap::Block(ctx.config.block_len) } else { Bootstrap::Iid };
    let model =
        fit_forest_model(ctx.design, "load", &ctx.config.forest_features, &ctx.config.train, &cfg, ctx.config.seed)?;
    model.predict_frame(ctx.design)
}

fn base_forecast(kind: ModelKind, ctx: &Context) -> Result<Column> {
    let design = ctx.design;
    let cfg = ctx.config;
    let gam = || ctx.gam.as_ref().map_err(|e| Error::numerical(format!("GAM bank unavailable: {e}")));
    let adapt = |method: AdaptMethod| -> Result<Column> {
        let (bank, pred) = gam()?;
        let mut a = AdaptConfig::new(cfg.burn);
        a.p0_scale = cfg.p0_scale;
        let load = design.column("load")?;
        Ok(adapt_bank(bank, pred, load, design.grid(), method, &a)?.forecast)
    };
    match kind {
        ModelKind::Persistence => persistence(design),
        ModelKind::Gam => Ok(gam()?.1.forecast.clone()),
        ModelKind::StaticKalman => adapt(AdaptMethod::Static),
        ModelKind::DynamicKalman => adapt(AdaptMethod::Dynamic),
        ModelKind::Viking => adapt(AdaptMethod::VikingLite),
        ModelKind::GamBoosting => {
            let bank = fit_gam_boost(design, &parse_formula(&cfg.formula)?, &cfg.train, &cfg.boost)?;
            predict_boost(&bank, design)
        }
        ModelKind::RandomForest => forest_forecast(ctx, false),
        ModelKind::RandomForestBlock => forest_forecast(ctx, true),
        ModelKind::Aggregation => Err(Error::usage("aggregation is formed from the other experts")),
    }
}

const EXPERTS: [ModelKind; 4] = [ModelKind::Gam, ModelKind::StaticKalman, ModelKind::DynamicKalman, ModelKind::Viking];

fn aggregate(
    design: &SeriesFrame,
    train: &Window,
    columns: &BTreeMap<ModelKind, Result<Column>>,
) -> Result<(Column, Vec<String>, Vec<Option<Vec<f64>>>)> {
    let (names, experts): (Vec<String>, Vec<Column>) = EXPERTS
        .iter()
        .filter_map(|m| columns.get(m).and_then(|c| c.as_ref().ok()).map(|c| (m.label().to_string(), c.clone())))
        .unzip();
    if experts.is_empty() {
        return Err(Error::numerical("no expert available for aggregation"));
    }
    let load = design.column("load")?;
    let peak = train.cells(design.grid()).filter_map(|k| load[k]).fold(0.0, f64::max);
    let bound = DEFAULT_BOUND.max(2.0 * peak);
    let run = aggregate_run(&names, &experts, load, design.grid(), bound)?;
    Ok((run.forecast, names, run.weights))
}

fn score(
    model: ModelKind,
    variant: Variant,
    y: &[f64],
    f: &[f64],
    window: &str,
    config: &BenchConfig,
    salt: u64,
) -> Result<Score> {
    let seed = config.seed.wrapping_add(salt);
    Ok(Score {
        model: format!("{}/{}", model.key(), variant.key()),
        window: window.to_string(),
        rmse: rmse(y, f)?,
        mape: mape(y, f)?,
        ci_rmse: bootstrap_ci(y, f, Metric::Rmse, config.ci_block, config.ci_reps, 0.95, seed)?,
        ci_mape: bootstrap_ci(y, f, Metric::Mape, config.ci_block, config.ci_reps, 0.95, seed)?,
        n: y.len(),
    })
}

/// Fits every configured model on the training window and scores it on the
/// test window. A failing model is reported in its row; the others run on.
pub fn run_benchmark(design: &SeriesFrame, config: &BenchConfig) -> Result<BenchReport> {
    config.validate()?;
    let formula = parse_formula(&config.formula)?;
    let mobility_formula = parse_formula(&config.mobility_formula)?;
    let wants_gam = config.models.iter().any(|m| m.needs_gam() || *m == ModelKind::Aggregation);
    let gam = if wants_gam {
        fit_gam_bank(design, &formula, &config.train)
            .and_then(|b| predict_gam(&b, design).map(|p| (b, p)))
            .map_err(|e| e.to_string())
    } else {
        Err("not requested".into())
    };
    let ctx = Context { design, config, gam };

    let mut needed: BTreeSet<ModelKind> =
        config.models.iter().copied().filter(|m| *m != ModelKind::Aggregation).collect();
    if config.models.contains(&ModelKind::Aggregation) {
        needed.extend(EXPERTS);
    }
    let needed: Vec<ModelKind> = needed.into_iter().collect();
    let mut base: BTreeMap<ModelKind, Result<Column>> =
        needed.par_iter().map(|&m| (m, base_forecast(m, &ctx))).collect::<Vec<_>>().into_iter().collect();
    let mut weights = None;
    if config.models.contains(&ModelKind::Aggregation) {
        let agg = aggregate(design, &config.train, &base).map(|(f, names, w)| {
            weights = Some((names, w));
            f
        });
        base.insert(ModelKind::Aggregation, agg);
    }

    let mut stacked: BTreeMap<ModelKind, Result<Column>> = BTreeMap::new();
    if config.mobility {
        let stack_of: Vec<ModelKind> =
            base.keys().copied().filter(|m| m.stackable() && *m != ModelKind::Aggregation).collect();
        stacked = stack_of
            .par_iter()
            .map(|&m| {
                let res = match &base[&m] {
                    Ok(b) => residual_stack(design, b, &mobility_formula, &config.train).map(|s| s.forecast),
                    Err(e) => Err(Error::numerical(format!("no base forecast: {e}"))),
                };
                (m, res)
            })
            .collect::<Vec<_>>()
            .into_iter()
            .collect();
        if config.models.contains(&ModelKind::Aggregation) {
            stacked.insert(ModelKind::Aggregation, aggregate(design, &config.train, &stacked).map(|(f, _, _)| f));
        }
    }

    // common scoring cells
    let grid = design.grid();
    let load = design.column("load")?;
    let excluded = if config.exclude_holidays { holiday_exclusion(design)? } else { BTreeSet::new() };
    let successful: Vec<&Column> = config
        .models
        .iter()
        .flat_map(|m| [base.get(m), stacked.get(m)])
        .flatten()
        .filter_map(|r| r.as_ref().ok())
        .collect();
    let cells: Vec<usize> = config
        .test
        .cells(grid)
        .filter(|&k| load[k].is_some())
        .filter(|&k| !excluded.contains(&civil_time(grid.timestamp(k)).date()))
        .filter(|&k| successful.iter().all(|c| c[k].is_some()))
        .collect();
    if cells.is_empty() {
        return Err(Error::data("no test cell where every model has a forecast"));
    }
    let y: Vec<f64> = cells.iter().map(|&k| load[k].unwrap_or(f64::NAN)).collect();
    let window_label = format!("{}..{}", format_timestamp(config.test.start), format_timestamp(config.test.end));

    let mut jobs = Vec::new();
    for (i, &m) in config.models.iter().enumerate() {
        jobs.push((i as u64 * 2, m, Variant::Without, base.get(&m), true));
        if config.mobility {
            if m.stackable() {
                jobs.push((i as u64 * 2 + 1, m, Variant::With, stacked.get(&m), true));
            } else {
                jobs.push((i as u64 * 2 + 1, m, Variant::With, base.get(&m), false));
            }
        }
    }
    let rows: Vec<BenchRow> = jobs
        .par_iter()
        .map(|(salt, m, v, col, applicable)| {
            let result = match col {
                Some(Ok(c)) => {
                    let f: Vec<f64> = cells.iter().map(|&k| c[k].unwrap_or(f64::NAN)).collect();
                    score(*m, *v, &y, &f, &window_label, config, *salt).map_err(|e| e.to_string())
                }
                Some(Err(e)) => Err(e.to_string()),
                None => Err("not computed".to_string()),
            };
            if let Err(e) = &result {
                log::warn!("{} ({}) failed: {e}", m.label(), v.key());
            }
            BenchRow {
                model: *m,
                variant: *v,
                applicable: *applicable,
                error: result.as_ref().err().cloned(),
                score: result.ok(),
            }
        })
        .collect();

    let mut forecasts = BTreeMap::new();
    for (m, c) in &base {
        if let Ok(c) = c {
            forecasts.insert(format!("{}/without", m.key()), c.clone());
        }
    }
    for (m, c) in &stacked {
        if let Ok(c) = c {
            forecasts.insert(format!("{}/with", m.key()), c.clone());
        }
    }
    let weights = weights.map(|(names, w)| {
        let rows = cells.iter().map(|&k| w[k].clone().unwrap_or_else(|| vec![f64::NAN; names.len()])).collect();
        (names, rows)
    });
    Ok(BenchReport {
        rows,
        scored: cells.iter().map(|&k| grid.timestamp(k)).collect(),
        excluded_dates: excluded,
        forecasts,
        weights,
    })
}
