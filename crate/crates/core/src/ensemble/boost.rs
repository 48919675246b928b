use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gam::{build_terms, complete_rows, gather, term_block, Formula, Term, TermDesign, HALF_HOURS};
use crate::linalg::{dot, Cholesky, Matrix};
use crate::timegrid::{Column, SeriesFrame, Window};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoostConfig {
    pub steps: usize,
    pub shrinkage: f64,
    /// Effective degrees of freedom of every weak learner (capped by its width).
    pub df: f64,
}

impl Default for BoostConfig {
    fn default() -> Self {
        BoostConfig { steps: 500, shrinkage: 0.1, df: 4.0 }
    }
}

impl BoostConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::usage("boosting needs at least one step"));
        }
        if !(self.shrinkage > 0.0 && self.shrinkage <= 1.0) {
            return Err(Error::usage("shrinkage must lie in (0, 1]"));
        }
        if !(self.df > 0.0) {
            return Err(Error::usage("learner degrees of freedom must be positive"));
        }
        Ok(())
    }
}

/// Componentwise L2-boosted additive model of one half-hour.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoostModel {
    pub offset: f64,
    pub terms: Vec<TermDesign>,
    /// Smoothing parameter of each learner.
    pub lambdas: Vec<f64>,
    pub coefficients: Vec<Vec<f64>>,
    /// Learner picked at each step.
    pub selected: Vec<usize>,
    /// Training RSS after each step.
    pub train_rss: Vec<f64>,
}

/// Relative ridge added to every learner's cross-product matrix.
const RIDGE: f64 = 1e-8;

/// Learner penalty: the term's difference penalties (each scaled to its
/// block), a ridge for wide unpenalised blocks, nothing otherwise.
fn learner_penalty(term: &TermDesign, g: &Matrix<f64>, df: f64) -> Matrix<f64> {
    let w = term.width();
    let roots = term.roots();
    let mut s = Matrix::zeros(w, w);
    if roots.is_empty() {
        if w as f64 > df {
            s = Matrix::identity(w).scale(g.trace() / w as f64);
        }
        return s;
    }
    for r in roots {
        let rr = r.gram();
        let scale = if rr.trace() > 0.0 { g.trace() / rr.trace() } else { 1.0 };
        s = s.add(&rr.scale(scale)).expect("same width");
    }
    s
}

fn edf(g: &Matrix<f64>, s: &Matrix<f64>, lambda: f64) -> Result<f64> {
    let inv = Cholesky::new(&g.add(&s.scale(lambda))?)?.inverse();
    Ok(inv.matmul(g)?.trace())
}

/// Smallest-penalty `λ` (on a log scale) giving at most `target` degrees of freedom.
fn lambda_for_df(g: &Matrix<f64>, s: &Matrix<f64>, target: f64) -> Result<f64> {
    if s.trace() == 0.0 {
        return Ok(0.0);
    }
    let (mut lo, mut hi) = (-12.0f64, 12.0f64);
    if edf(g, s, 10f64.powf(lo)).unwrap_or(f64::INFINITY) <= target {
        return Ok(10f64.powf(lo));
    }
    // very large penalties swamp the unpenalised directions in round-off
    let top = loop {
        match edf(g, s, 10f64.powf(hi)) {
            Ok(e) => break e,
            Err(_) if hi > lo + 1.0 => hi -= 1.0,
            Err(e) => return Err(e),
        }
    };
    if top > target {
        return Ok(10f64.powf(hi));
    }
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if edf(g, s, 10f64.powf(mid)).unwrap_or(f64::INFINITY) > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(10f64.powf(hi))
}

/// Boosts single-term penalized splines from the mean: every step fits all
/// learners to the current residuals and adds `ν` times the one reducing
/// the RSS most (ties to the earlier term). Works on cross-products only,
/// so a step costs nothing in the number of rows.
pub fn boost_model(
    formula_terms: &[Term],
    data: &[Vec<Vec<f64>>],
    y: &[f64],
    config: &BoostConfig,
) -> Result<BoostModel> {
    config.validate()?;
    let n = y.len();
    if n < 2 {
        return Err(Error::data("boosting needs at least two rows"));
    }
    let terms = build_terms(formula_terms, data, n)?;
    let widths: Vec<usize> = terms.iter().map(|t| t.width()).collect();
    let offsets: Vec<usize> = widths
        .iter()
        .scan(0, |acc, w| {
            let o = *acc;
            *acc += w;
            Some(o)
        })
        .collect();
    let total: usize = widths.iter().sum();
    let mut x = Matrix::zeros(n, total);
    for (t, (term, cols)) in terms.iter().zip(data).enumerate() {
        let (b, _) = term_block(term, cols, n);
        for i in 0..n {
            x.row_mut(i)[offsets[t]..offsets[t] + widths[t]].copy_from_slice(b.row(i));
        }
    }
    let gram = x.gram();
    let offset = y.iter().sum::<f64>() / n as f64;
    let yc: Vec<f64> = y.iter().map(|v| v - offset).collect();
    let mut g = x.tr_matvec(&yc);
    let mut rss: f64 = yc.iter().map(|v| v * v).sum();

    let block = |m: &Matrix<f64>, a: usize, b: usize| {
        let mut out = Matrix::zeros(widths[a], widths[b]);
        for i in 0..widths[a] {
            for j in 0..widths[b] {
                out[(i, j)] = m[(offsets[a] + i, offsets[b] + j)];
            }
        }
        out
    };
    let mut lambdas = Vec::with_capacity(terms.len());
    let mut solvers = Vec::with_capacity(terms.len());
    let mut diag = Vec::with_capacity(terms.len());
    for (t, term) in terms.iter().enumerate() {
        let raw = block(&gram, t, t);
        let learner = |gt: &Matrix<f64>| -> Result<(f64, Cholesky<f64>)> {
            let s = learner_penalty(term, gt, config.df);
            let lambda = lambda_for_df(gt, &s, config.df.min(widths[t] as f64))?;
            Ok((lambda, Cholesky::new(&gt.add(&s.scale(lambda))?)?))
        };
        // collinear null spaces get the same tiny ridge as the bank fits
        let (lambda, chol) = learner(&raw)
            .or_else(|_| {
                let mut gt = raw.clone();
                let jitter = RIDGE * gt.trace() / widths[t] as f64;
                for i in 0..widths[t] {
                    gt[(i, i)] += jitter;
                }
                learner(&gt)
            })
            .map_err(|e| Error::numerical(format!("learner `{}`: {e}", term.label)))?;
        lambdas.push(lambda);
        solvers.push(chol);
        diag.push(raw);
    }

    let mut coefficients: Vec<Vec<f64>> = widths.iter().map(|&w| vec![0.0; w]).collect();
    let mut selected = Vec::with_capacity(config.steps);
    let mut train_rss = Vec::with_capacity(config.steps);
    for _ in 0..config.steps {
        let mut best: Option<(usize, f64, Vec<f64>)> = None;
        for t in 0..terms.len() {
            let gt = &g[offsets[t]..offsets[t] + widths[t]];
            let b = solvers[t].solve(gt);
            let red = 2.0 * dot(&b, gt) - diag[t].quadratic_form(&b);
            if best.as_ref().is_none_or(|(_, r, _)| red > *r) {
                best = Some((t, red, b));
            }
        }
        let Some((k, _, b)) = best else { break };
        let delta: Vec<f64> = b.iter().map(|v| config.shrinkage * v).collect();
        let gk = g[offsets[k]..offsets[k] + widths[k]].to_vec();
        rss -= 2.0 * dot(&delta, &gk) - diag[k].quadratic_form(&delta);
        for (c, d) in coefficients[k].iter_mut().zip(&delta) {
            *c += d;
        }
        for (i, gi) in g.iter_mut().enumerate() {
            let row = gram.row(i);
            *gi -= dot(&row[offsets[k]..offsets[k] + widths[k]], &delta);
        }
        selected.push(k);
        train_rss.push(rss.max(0.0));
    }
    Ok(BoostModel { offset, terms, lambdas, coefficients, selected, train_rss })
}

impl BoostModel {
    /// Predictions at rows given as per-term variable columns.
    pub fn predict(&self, data: &[Vec<Vec<f64>>], n: usize) -> Vec<f64> {
        let mut out = vec![self.offset; n];
        for ((term, cols), beta) in self.terms.iter().zip(data).zip(&self.coefficients) {
            let (b, _) = term_block(term, cols, n);
            for (i, o) in out.iter_mut().enumerate() {
                *o += dot(b.row(i), beta);
            }
        }
        out
    }
}

/// One boosted model per half-hour, on the rows a GAM bank would use.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoostBank {
    pub formula: Formula,
    pub config: BoostConfig,
    pub models: Vec<BoostModel>,
    pub window: Window,
}

pub fn fit_gam_boost(
    design: &SeriesFrame,
    formula: &Formula,
    window: &Window,
    config: &BoostConfig,
) -> Result<BoostBank> {
    let ycol = design.column(&formula.response)?;
    let models = (0..HALF_HOURS)
        .into_par_iter()
        .map(|h| {
            let rows = complete_rows(design, formula, window, h)?;
            let data = gather(design, formula, &rows)?;
            let y: Vec<f64> = rows.iter().map(|&k| ycol[k].unwrap_or(f64::NAN)).collect();
            boost_model(&formula.terms, &data, &y, config).map_err(|e| Error::data(format!("half-hour {h}: {e}")))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(BoostBank { formula: formula.clone(), config: *config, models, window: *window })
}

pub fn predict_boost(bank: &BoostBank, design: &SeriesFrame) -> Result<Column> {
    let grid = design.grid();
    let vars = bank.formula.variables();
    let cols = vars.iter().map(|v| design.column(v)).collect::<Result<Vec<_>>>()?;
    let mut out = vec![None; design.len()];
    for (h, model) in bank.models.iter().enumerate() {
        let rows: Vec<usize> = (0..design.len())
            .filter(|&k| grid.half_hour_of(k) == h && cols.iter().all(|c| c[k].is_some_and(f64::is_finite)))
            .collect();
        if rows.is_empty() {
            continue;
        }
        let data = gather(design, &bank.formula, &rows)?;
        for (k, p) in rows.iter().zip(model.predict(&data, rows.len())) {
            out[*k] = Some(p);
        }
    }
    Ok(out)
}
