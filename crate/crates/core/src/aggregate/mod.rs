//! ML-Poly online aggregation of expert forecast streams, run independently
//! for each half-hour.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gam::HALF_HOURS;
use crate::timegrid::{Column, TimeGrid};

/// Default bound on the target, in GW.
pub const DEFAULT_BOUND: f64 = 100.0;

/// Experts with their cumulative regrets, learning rates and weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpertPool {
    pub names: Vec<String>,
    pub regrets: Vec<f64>,
    /// Running sum of squared instantaneous regrets.
    pub squared_regrets: Vec<f64>,
    pub weights: Vec<f64>,
    pub bound: f64,
}

impl ExpertPool {
    pub fn new(names: Vec<String>, bound: f64) -> Result<Self> {
        if names.is_empty() {
            return Err(Error::usage("an expert pool needs at least one expert"));
        }
        if !(bound > 0.0 && bound.is_finite()) {
            return Err(Error::usage("the target bound must be positive"));
        }
        let n = names.len();
        Ok(ExpertPool {
            names,
            regrets: vec![0.0; n],
            squared_regrets: vec![0.0; n],
            weights: vec![1.0 / n as f64; n],
            bound,
        })
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn learning_rates(&self) -> Vec<f64> {
        self.squared_regrets.iter().map(|s| 1.0 / (1.0 + s)).collect()
    }

    /// Weights renormalised over the experts present at this step.
    pub fn active_weights(&self, active: &[bool]) -> Option<Vec<f64>> {
        let total: f64 = self.weights.iter().zip(active).filter(|(_, &a)| a).map(|(w, _)| w).sum();
        let count = active.iter().filter(|&&a| a).count();
        if count == 0 {
            return None;
        }
        Some(
            self.weights
                .iter()
                .zip(active)
                .map(|(&w, &a)| match (a, total > 0.0) {
                    (false, _) => 0.0,
                    (true, true) => w / total,
                    (true, false) => 1.0 / count as f64,
                })
                .collect(),
        )
    }

    /// Aggregated forecast with the current weights; `None` when no expert
    /// is present.
    pub fn forecast(&self, forecasts: &[Option<f64>]) -> Option<(f64, Vec<f64>)> {
        let active: Vec<bool> = forecasts.iter().map(Option::is_some).collect();
        let w = self.active_weights(&active)?;
        let yhat = forecasts.iter().zip(&w).map(|(f, w)| f.map_or(0.0, |f| f * w)).sum();
        Some((yhat, w))
    }

    /// One ML-Poly round with squared loss. Absent experts neither
    /// contribute nor accumulate regret. Returns the forecast made with
    /// the pre-update weights.
    pub fn step(&mut self, forecasts: &[Option<f64>], y: f64) -> Result<Option<f64>> {
        self.check(forecasts)?;
        if !y.is_finite() {
            return Err(Error::data("non-finite target"));
        }
        if !(0.0..=self.bound).contains(&y) {
            return Err(Error::data(format!("target {y} outside [0, {}]", self.bound)));
        }
        let Some((yhat, _)) = self.forecast(forecasts) else {
            return Ok(None);
        };
        let agg_loss = (yhat - y).powi(2);
        for (i, f) in forecasts.iter().enumerate() {
            if let Some(f) = f {
                let r = agg_loss - (f - y).powi(2);
                self.regrets[i] += r;
                self.squared_regrets[i] += r * r;
            }
        }
        self.reweight();
        Ok(Some(yhat))
    }

    fn check(&self, forecasts: &[Option<f64>]) -> Result<()> {
        if forecasts.len() != self.len() {
            return Err(Error::usage(format!("{} forecasts for {} experts", forecasts.len(), self.len())));
        }
        if forecasts.iter().flatten().any(|f| !f.is_finite()) {
            return Err(Error::data("non-finite expert forecast"));
        }
        Ok(())
    }

    fn reweight(&mut self) {
        let raw: Vec<f64> = self.learning_rates().iter().zip(&self.regrets).map(|(eta, r)| eta * r.max(0.0)).collect();
        let total: f64 = raw.iter().sum();
        if total > 0.0 && total.is_finite() {
            self.weights = raw.into_iter().map(|v| v / total).collect();
        } else {
            self.weights = vec![1.0 / self.len() as f64; self.len()];
        }
    }
}

/// Functional form of [`ExpertPool::step`] for complete forecasts.
pub fn mlpoly_step(pool: &ExpertPool, forecasts: &[f64], y: f64) -> Result<(ExpertPool, f64)> {
    let mut next = pool.clone();
    let f: Vec<Option<f64>> = forecasts.iter().copied().map(Some).collect();
    let yhat = next.step(&f, y)?.expect("complete forecasts");
    Ok((next, yhat))
}

/// Aggregated series, the weights used at each step (zero for absent
/// experts) and the final pool of every half-hour.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRun {
    pub names: Vec<String>,
    pub forecast: Column,
    pub weights: Vec<Option<Vec<f64>>>,
    pub pools: Vec<ExpertPool>,
    /// Expert values missing at steps where an aggregate was still formed.
    pub exclusions: usize,
}

/// Runs one pool per half-hour over the expert columns. Steps without a
/// target produce a forecast but leave the pool untouched.
pub fn aggregate_run(
    names: &[String],
    experts: &[Column],
    targets: &[Option<f64>],
    grid: &TimeGrid,
    bound: f64,
) -> Result<AggregateRun> {
    let n = grid.len();
    if names.len() != experts.len() {
        return Err(Error::usage("one name per expert column"));
    }
    if targets.len() != n || experts.iter().any(|e| e.len() != n) {
        return Err(Error::usage("expert, target and grid lengths differ"));
    }
    let template = ExpertPool::new(names.to_vec(), bound)?;
    let chains = (0..HALF_HOURS)
        .into_par_iter()
        .map(|h| -> Result<(Vec<(usize, Option<f64>, Option<Vec<f64>>)>, ExpertPool, usize)> {
            let mut pool = template.clone();
            let mut rows = Vec::new();
            let mut excluded = 0;
            for k in (0..n).filter(|&k| grid.half_hour_of(k) == h) {
                let f: Vec<Option<f64>> = experts.iter().map(|e| e[k]).collect();
                let Some((yhat, w)) = pool.forecast(&f) else {
                    rows.push((k, None, None));
                    continue;
                };
                let missing = f.iter().filter(|v| v.is_none()).count();
                if missing > 0 {
                    excluded += missing;
                    log::debug!("aggregation at cell {k}: {missing} expert(s) missing, weights renormalised");
                }
                if let Some(y) = targets[k] {
                    pool.step(&f, y)?;
                }
                rows.push((k, Some(yhat), Some(w)));
            }
            Ok((rows, pool, excluded))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut forecast = vec![None; n];
    let mut weights = vec![None; n];
    let mut pools = Vec::with_capacity(HALF_HOURS);
    let mut exclusions = 0;
    for (rows, pool, ex) in chains {
        for (k, f, w) in rows {
            forecast[k] = f;
            weights[k] = w;
        }
        pools.push(pool);
        exclusions += ex;
    }
    if exclusions > 0 {
        log::info!("aggregation excluded {exclusions} missing expert values");
    }
    Ok(AggregateRun { names: names.to_vec(), forecast, weights, pools, exclusions })
}
