//! Variable ranking: mRMR on mutual information, Hoeffding's D and
//! Monte-Carlo Shapley importance, with optional correction of the target
//! for already-explained features.

mod daily;
mod hoeffding;
mod mi;
mod shapley;

pub use daily::{daily_table, DailyTable, DAILY_FEATURES};
pub use hoeffding::hoeffding_d;
pub use mi::{default_bins, mutual_information, MutualInformation};
pub use shapley::{forest_r2, r_squared, shapley_values, ShapleyEstimate, MIN_PERMUTATIONS};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ensemble::ForestConfig;
use crate::error::{Error, Result};
use crate::gam::{fit_model, FitOptions, Term};

/// Named feature columns, all complete and of one length.
pub type Features = [(String, Vec<f64>)];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankEntry {
    pub feature: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingReport {
    pub method: String,
    /// Ranked features, best first.
    pub entries: Vec<RankEntry>,
    /// Target label, e.g. `Load \ (Temp, Work)`.
    pub target: String,
    pub degenerate: bool,
}

impl RankingReport {
    pub fn position(&self, feature: &str) -> Option<usize> {
        self.entries.iter().position(|e| e.feature == feature)
    }

    pub fn score(&self, feature: &str) -> Option<f64> {
        self.entries.iter().find(|e| e.feature == feature).map(|e| e.score)
    }
}

/// Label of a corrected target: `Load`, `Load \ Temp`, `Load \ (Temp, Work)`.
pub fn correction_label(target: &str, removed: &[&str]) -> String {
    match removed {
        [] => target.to_string(),
        [one] => format!("{target} \\ {one}"),
        many => format!("{target} \\ ({})", many.join(", ")),
    }
}

fn check(features: &Features, target: &[f64]) -> Result<()> {
    if features.is_empty() {
        return Err(Error::usage("no features to rank"));
    }
    if let Some((name, _)) = features.iter().find(|(_, c)| c.len() != target.len()) {
        return Err(Error::usage(format!("feature `{name}` length differs from the target")));
    }
    Ok(())
}

/// Greedy mRMR: the first pick maximizes `MI(f, target)`, later picks
/// maximize `MI(f, target) − mean MI(f, selected)`. Ties go to column order.
pub fn mrmr_rank(features: &Features, target: &[f64], k: usize, target_label: &str) -> Result<RankingReport> {
    check(features, target)?;
    if k > features.len() {
        return Err(Error::usage(format!("k = {k} exceeds the {} features", features.len())));
    }
    let bins = default_bins(target.len());
    let relevance: Vec<MutualInformation> =
        features.par_iter().map(|(_, c)| mutual_information(c, target, bins)).collect::<Result<Vec<_>>>()?;
    let p = features.len();
    let mut pair = vec![vec![None::<f64>; p]; p];
    let mut chosen: Vec<usize> = Vec::new();
    let mut entries = Vec::new();
    for _ in 0..k {
        let last = chosen.last().copied();
        if let Some(s) = last {
            let fresh: Vec<(usize, f64)> = (0..p)
                .into_par_iter()
                .filter(|j| !chosen.contains(j))
                .map(|j| mutual_information(&features[j].1, &features[s].1, bins).map(|m| (j, m.nats)))
                .collect::<Result<Vec<_>>>()?;
            for (j, v) in fresh {
                pair[j][s] = Some(v);
            }
        }
        let mut best: Option<(usize, f64)> = None;
        for j in (0..p).filter(|j| !chosen.contains(j)) {
            let redundancy = if chosen.is_empty() {
                0.0
            } else {
                chosen.iter().map(|&s| pair[j][s].unwrap_or(0.0)).sum::<f64>() / chosen.len() as f64
            };
            let score = relevance[j].nats - redundancy;
            if best.is_none_or(|(_, b)| score > b) {
                best = Some((j, score));
            }
        }
        let (j, score) = best.expect("k <= p");
        chosen.push(j);
        entries.push(RankEntry { feature: features[j].0.clone(), score });
    }
    Ok(RankingReport {
        method: "mrmr".into(),
        entries,
        target: target_label.into(),
        degenerate: relevance.iter().all(|m| m.degenerate),
    })
}

/// Features sorted by decreasing Hoeffding's D with the target; ties keep
/// column order.
pub fn hoeffding_rank(features: &Features, target: &[f64], target_label: &str) -> Result<RankingReport> {
    check(features, target)?;
    let scores = features.par_iter().map(|(_, c)| hoeffding_d(c, target)).collect::<Result<Vec<_>>>()?;
    Ok(sorted_report("hoeffding", features, &scores, target_label, false))
}

fn sorted_report(method: &str, features: &Features, scores: &[f64], target: &str, degenerate: bool) -> RankingReport {
    let mut idx: Vec<usize> = (0..features.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    RankingReport {
        method: method.into(),
        entries: idx.into_iter().map(|j| RankEntry { feature: features[j].0.clone(), score: scores[j] }).collect(),
        target: target.into(),
        degenerate,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShapleyConfig {
    pub permutations: usize,
    pub forest: ForestConfig,
    pub seed: u64,
}

impl Default for ShapleyConfig {
    fn default() -> Self {
        ShapleyConfig { permutations: MIN_PERMUTATIONS, forest: ForestConfig::default(), seed: 0 }
    }
}

/// Shapley shares of the forest's in-sample `R²`.
pub fn shapley_importance(
    features: &Features,
    target: &[f64],
    config: &ShapleyConfig,
    target_label: &str,
) -> Result<RankingReport> {
    check(features, target)?;
    let cols: Vec<Vec<f64>> = features.iter().map(|(_, c)| c.clone()).collect();
    let est = shapley_values(features.len(), config.permutations, config.seed, |s| {
        forest_r2(&cols, target, s, &config.forest, config.seed)
    })?;
    if est.degenerate {
        log::warn!("full model R² is {:.3}; Shapley importances set to zero", est.total);
    }
    Ok(sorted_report("shapley", features, &est.values, target_label, est.degenerate))
}

/// Distinct values below which a feature enters the correction linearly.
const SMOOTH_MIN_DISTINCT: usize = 10;

/// Residuals of the target after an additive penalized-spline fit on the
/// removed features; the target itself when nothing is removed.
pub fn correct_for(features: &Features, target: &[f64], remove: &[&str]) -> Result<Vec<f64>> {
    if remove.is_empty() {
        return Ok(target.to_vec());
    }
    check(features, target)?;
    let mut terms = Vec::new();
    let mut data = Vec::new();
    for name in remove {
        let (_, col) =
            features.iter().find(|(n, _)| n == name).ok_or_else(|| Error::MissingColumn((*name).to_string()))?;
        let mut distinct = col.clone();
        distinct.sort_by(f64::total_cmp);
        distinct.dedup();
        terms.push(if distinct.len() >= SMOOTH_MIN_DISTINCT {
            Term::Smooth { var: name.to_string(), dim: 10, cyclic: false }
        } else {
            Term::Linear(name.to_string())
        });
        data.push(vec![col.clone()]);
    }
    let model = fit_model(0, &terms, &data, target, &FitOptions::default())?;
    let (eff, _) = model.effects(&data, target.len());
    Ok((0..target.len()).map(|i| target[i] - model.intercept() - eff.row(i).iter().sum::<f64>()).collect())
}
