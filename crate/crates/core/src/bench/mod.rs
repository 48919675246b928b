//! Scores, bootstrap confidence intervals, residual stacking, the synthetic
//! scenario generator and the benchmark harness.

mod harness;
mod metrics;
mod savings;
mod stack;
mod synth;

pub use harness::{
    holiday_exclusion, run_benchmark, BenchConfig, BenchReport, BenchRow, ModelKind, Variant, BENCH_KEYS,
    FOREST_FEATURES,
};
pub use metrics::{bootstrap_ci, mape, rmse, Metric, Score};
pub use savings::{seasonality_analysis, SavingsAnalysis, SavingsConfig};
pub use stack::{residual_stack, StackedForecast, MOBILITY_FORMULA, RESIDUAL_COLUMN};
pub use synth::{
    shuffle_mobility, synth_generate, Regime, RegimeChannel, Season, SynthBundle, SynthSpec, TemperatureSpec, WorkSpec,
    MOBILITY_SEASON, SCENARIOS,
};
