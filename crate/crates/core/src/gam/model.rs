use serde::{Deserialize, Serialize};

use super::bspline::SplineBasis;
use super::formula::Term;
use super::pls::Reduced;
use crate::error::{Error, Result};
use crate::linalg::{dot, Matrix};

/// Marginal of a tensor smooth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Marginal {
    Spline(SplineBasis),
    /// Two hat functions on `[lo, hi]`; extrapolates linearly.
    Linear {
        lo: f64,
        hi: f64,
    },
}

impl Marginal {
    fn dim(&self) -> usize {
        match self {
            Marginal::Spline(b) => b.dim(),
            Marginal::Linear { .. } => 2,
        }
    }

    fn eval(&self, x: f64, out: &mut [f64]) -> bool {
        match self {
            Marginal::Spline(b) => b.eval_into(x, out),
            Marginal::Linear { lo, hi } => {
                let u = (x - lo) / (hi - lo);
                out[0] = 1.0 - u;
                out[1] = u;
                false
            }
        }
    }

    fn difference(&self) -> Matrix<f64> {
        match self {
            Marginal::Spline(b) => b.difference_matrix(),
            Marginal::Linear { .. } => Matrix::zeros(0, 2),
        }
    }
}

/// How one formula term maps raw columns to its block of design columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum TermBasis {
    Linear {
        var: String,
    },
    /// Kept level pairs; the reference pair contributes nothing.
    Interaction {
        a: String,
        b: String,
        levels: Vec<(i64, i64)>,
    },
    Lag {
        var: String,
        by: String,
        levels: Vec<i64>,
    },
    Smooth {
        var: String,
        basis: SplineBasis,
    },
    Tensor {
        var1: String,
        var2: String,
        m1: Marginal,
        m2: Marginal,
    },
}

/// A fitted term: its basis, the training column means used for centring,
/// and whether the last basis column was dropped for identifiability.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TermDesign {
    pub label: String,
    pub basis: TermBasis,
    pub means: Vec<f64>,
    pub drop_last: bool,
}

fn level(v: f64) -> i64 {
    v.round() as i64
}

impl TermBasis {
    /// Sets the basis up from the training values of the term's variables.
    pub fn from_term(term: &Term, cols: &[Vec<f64>]) -> Result<Self> {
        let range = |x: &[f64]| -> (f64, f64) {
            x.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)))
        };
        Ok(match term {
            Term::Linear(var) => TermBasis::Linear { var: var.clone() },
            Term::Interaction(a, b) => {
                let mut levels: Vec<(i64, i64)> =
                    cols[0].iter().zip(&cols[1]).map(|(&x, &y)| (level(x), level(y))).collect();
                levels.sort_unstable();
                levels.dedup();
                if !levels.is_empty() {
                    levels.remove(0);
                }
                TermBasis::Interaction { a: a.clone(), b: b.clone(), levels }
            }
            Term::Lag { var, by } => {
                let mut levels: Vec<i64> = cols[1].iter().map(|&v| level(v)).collect();
                levels.sort_unstable();
                levels.dedup();
                TermBasis::Lag { var: var.clone(), by: by.clone(), levels }
            }
            Term::Smooth { var, dim, cyclic } => {
                let (lo, hi) = range(&cols[0]);
                let basis = if *cyclic {
                    // variables living in [0, 1] (time of year) wrap on the unit period
                    let (lo, hi) = if lo >= 0.0 && hi <= 1.0 { (0.0, 1.0) } else { (lo, hi) };
                    SplineBasis::cyclic(lo, hi, *dim)?
                } else {
                    SplineBasis::uniform(lo, hi, (*dim).max(4))?
                };
                TermBasis::Smooth { var: var.clone(), basis }
            }
            Term::Tensor { var1, var2, dim, linear_first } => {
                let (lo1, hi1) = range(&cols[0]);
                let (lo2, hi2) = range(&cols[1]);
                let m1 = if *linear_first {
                    let hi1 = if hi1 > lo1 { hi1 } else { lo1 + 1.0 };
                    Marginal::Linear { lo: lo1, hi: hi1 }
                } else {
                    Marginal::Spline(SplineBasis::uniform(lo1, hi1, (*dim).max(4))?)
                };
                let m2 = Marginal::Spline(SplineBasis::uniform(lo2, hi2, (*dim).max(4))?);
                TermBasis::Tensor { var1: var1.clone(), var2: var2.clone(), m1, m2 }
            }
        })
    }

    pub fn variables(&self) -> Vec<&str> {
        match self {
            TermBasis::Linear { var } | TermBasis::Smooth { var, .. } => vec![var],
            TermBasis::Interaction { a, b, .. } => vec![a, b],
            TermBasis::Lag { var, by, .. } => vec![var, by],
            TermBasis::Tensor { var1, var2, .. } => vec![var1, var2],
        }
    }

    /// Width before any column is dropped.
    pub fn raw_width(&self) -> usize {
        match self {
            TermBasis::Linear { .. } => 1,
            TermBasis::Interaction { levels, .. } => levels.len(),
            TermBasis::Lag { levels, .. } => levels.len(),
            TermBasis::Smooth { basis, .. } => basis.dim(),
            TermBasis::Tensor { m1, m2, .. } => m1.dim() * m2.dim(),
        }
    }

    fn spline_like(&self) -> bool {
        matches!(self, TermBasis::Smooth { .. } | TermBasis::Tensor { .. })
    }

    /// Raw (uncentred) basis row at the given variable values; returns the
    /// number of clamped inputs.
    pub fn eval(&self, vals: &[f64], out: &mut [f64]) -> usize {
        out.iter_mut().for_each(|v| *v = 0.0);
        match self {
            TermBasis::Linear { .. } => {
                out[0] = vals[0];
                0
            }
            TermBasis::Interaction { levels, .. } => {
                let key = (level(vals[0]), level(vals[1]));
                if let Ok(i) = levels.binary_search(&key) {
                    out[i] = 1.0;
                }
                0
            }
            TermBasis::Lag { levels, .. } => {
                if let Ok(i) = levels.binary_search(&level(vals[1])) {
                    out[i] = vals[0];
                }
                0
            }
            TermBasis::Smooth { basis, .. } => basis.eval_into(vals[0], out) as usize,
            TermBasis::Tensor { m1, m2, .. } => {
                let (k1, k2) = (m1.dim(), m2.dim());
                let mut a = vec![0.0; k1];
                let mut b = vec![0.0; k2];
                let c = m1.eval(vals[0], &mut a) as usize + m2.eval(vals[1], &mut b) as usize;
                for i in 0..k1 {
                    for j in 0..k2 {
                        out[i * k2 + j] = a[i] * b[j];
                    }
                }
                c
            }
        }
    }

    /// Penalty roots over the raw block columns.
    pub fn raw_roots(&self) -> Vec<Matrix<f64>> {
        match self {
            TermBasis::Smooth { basis, .. } => vec![basis.difference_matrix()],
            TermBasis::Tensor { m1, m2, .. } => {
                let (k1, k2) = (m1.dim(), m2.dim());
                let mut out = Vec::new();
                let d1 = m1.difference();
                if d1.nrows() > 0 {
                    out.push(d1.kron(&Matrix::identity(k2)));
                }
                out.push(Matrix::identity(k1).kron(&m2.difference()));
                out
            }
            _ => Vec::new(),
        }
    }
}

impl TermDesign {
    pub fn width(&self) -> usize {
        self.basis.raw_width() - self.drop_last as usize
    }

    /// Centred block row; the dropped column is omitted.
    pub fn row(&self, vals: &[f64], scratch: &mut [f64], out: &mut [f64]) -> usize {
        let c = self.basis.eval(vals, scratch);
        for (j, o) in out.iter_mut().enumerate() {
            *o = scratch[j] - self.means[j];
        }
        c
    }

    /// Penalty roots restricted to the kept columns.
    pub fn roots(&self) -> Vec<Matrix<f64>> {
        let w = self.width();
        self.basis
            .raw_roots()
            .into_iter()
            .map(|r| {
                let mut m = Matrix::zeros(r.nrows(), w);
                for i in 0..r.nrows() {
                    m.row_mut(i).copy_from_slice(&r.row(i)[..w]);
                }
                m
            })
            .collect()
    }
}

/// One fitted additive model (one half-hour of the bank).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GamModel {
    pub half_hour: usize,
    pub terms: Vec<TermDesign>,
    /// Intercept followed by every term block.
    pub coefficients: Vec<f64>,
    /// Smoothing parameter of each penalty, in term order.
    pub lambdas: Vec<f64>,
    pub edf: f64,
    pub residual_variance: f64,
    pub rss: f64,
    pub n_obs: usize,
    /// Training standard deviation of each term's effect.
    pub effect_sd: Vec<f64>,
}

/// Options of the per-model fit.
#[derive(Debug, Clone, PartialEq)]
pub struct FitOptions {
    /// Candidate smoothing parameters relative to each penalty's scale.
    pub lambda_grid: Vec<f64>,
    /// Coordinate-wise GCV sweeps over the penalties.
    pub sweeps: usize,
    /// Ridge added to every non-intercept coefficient, relative to the mean
    /// diagonal of the cross-product; keeps overlapping null spaces solvable.
    pub ridge: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions { lambda_grid: super::pls::default_lambda_grid(), sweeps: 1, ridge: 1e-8 }
    }
}

struct Layout {
    offsets: Vec<usize>,
    p: usize,
}

fn layout(terms: &[TermDesign]) -> Layout {
    let mut offsets = Vec::with_capacity(terms.len());
    let mut p = 1;
    for t in terms {
        offsets.push(p);
        p += t.width();
    }
    Layout { offsets, p }
}

/// Builds the full design (intercept first) for rows given as per-variable columns.
fn design_matrix(terms: &[TermDesign], data: &[Vec<Vec<f64>>], n: usize) -> (Matrix<f64>, usize) {
    let lay = layout(terms);
    let mut x = Matrix::zeros(n, lay.p);
    let mut clamped = 0;
    for (t, (term, cols)) in terms.iter().zip(data).enumerate() {
        let mut scratch = vec![0.0; term.basis.raw_width()];
        let mut block = vec![0.0; term.width()];
        let mut vals = vec![0.0; cols.len()];
        for i in 0..n {
            for (v, c) in vals.iter_mut().zip(cols) {
                *v = c[i];
            }
            clamped += term.row(&vals, &mut scratch, &mut block);
            x.row_mut(i)[lay.offsets[t]..lay.offsets[t] + block.len()].copy_from_slice(&block);
        }
    }
    for i in 0..n {
        x[(i, 0)] = 1.0;
    }
    (x, clamped)
}

/// Sets up every term from its training columns: basis, centring means
/// over the `n` rows and the identifiability drop.
pub fn build_terms(formula_terms: &[Term], data: &[Vec<Vec<f64>>], n: usize) -> Result<Vec<TermDesign>> {
    let mut terms = Vec::with_capacity(formula_terms.len());
    for (term, cols) in formula_terms.iter().zip(data) {
        let basis = TermBasis::from_term(term, cols)?;
        let raw = basis.raw_width();
        let mut scratch = vec![0.0; raw];
        let mut sums = vec![0.0; raw];
        let mut vals = vec![0.0; cols.len()];
        for i in 0..n {
            for (v, c) in vals.iter_mut().zip(cols) {
                *v = c[i];
            }
            basis.eval(&vals, &mut scratch);
            for (s, v) in sums.iter_mut().zip(&scratch) {
                *s += v;
            }
        }
        let drop_last = basis.spline_like() && raw > 1;
        let means = sums.iter().map(|s| s / n as f64).collect();
        terms.push(TermDesign { label: term.to_string(), basis, means, drop_last });
    }
    Ok(terms)
}

/// Centred design block of one term over `n` rows, plus clamped inputs.
pub fn term_block(term: &TermDesign, cols: &[Vec<f64>], n: usize) -> (Matrix<f64>, usize) {
    let mut x = Matrix::zeros(n, term.width());
    let mut scratch = vec![0.0; term.basis.raw_width()];
    let mut vals = vec![0.0; cols.len()];
    let mut clamped = 0;
    for i in 0..n {
        for (v, c) in vals.iter_mut().zip(cols) {
            *v = c[i];
        }
        let mut row = vec![0.0; term.width()];
        clamped += term.row(&vals, &mut scratch, &mut row);
        x.row_mut(i).copy_from_slice(&row);
    }
    (x, clamped)
}

/// Fits one additive model. `data[t]` holds the training columns of the
/// variables of term `t`; all columns have `y.len()` complete entries.
pub fn fit_model(
    half_hour: usize,
    formula_terms: &[Term],
    data: &[Vec<Vec<f64>>],
    y: &[f64],
    options: &FitOptions,
) -> Result<GamModel> {
    let n = y.len();
    let terms = build_terms(formula_terms, data, n)?;
    let lay = layout(&terms);
    if n < lay.p {
        return Err(Error::data(format!("half-hour {half_hour}: {n} rows for {} coefficients", lay.p)));
    }
    let (x, _) = design_matrix(&terms, data, n);
    let reduced = Reduced::new(&x, y)?;

    // penalties embedded in the full coefficient space, scaled to their block
    let col_ss: Vec<f64> = (0..lay.p).map(|j| (0..n).map(|i| x[(i, j)] * x[(i, j)]).sum()).collect();
    let mut roots: Vec<(Matrix<f64>, f64)> = Vec::new();
    for (t, term) in terms.iter().enumerate() {
        let off = lay.offsets[t];
        let w = term.width();
        for r in term.roots() {
            let mut full = Matrix::zeros(r.nrows(), lay.p);
            for i in 0..r.nrows() {
                full.row_mut(i)[off..off + w].copy_from_slice(r.row(i));
            }
            let pen_tr: f64 = r.as_slice().iter().map(|v| v * v).sum();
            let blk_tr: f64 = col_ss[off..off + w].iter().sum();
            let scale = if pen_tr > 0.0 && blk_tr > 0.0 { blk_tr / pen_tr } else { 1.0 };
            roots.push((full, scale));
        }
    }
    let mean_diag = col_ss[1..].iter().sum::<f64>() / (lay.p - 1).max(1) as f64;
    let mut ridge = Matrix::zeros(lay.p - 1, lay.p);
    for j in 1..lay.p {
        ridge[(j - 1, j)] = 1.0;
    }
    let ridge_weight = options.ridge * mean_diag.max(1e-300);

    let grid = &options.lambda_grid;
    if grid.is_empty() {
        return Err(Error::usage("empty smoothing-parameter grid"));
    }
    let mut rel: Vec<f64> = vec![grid[grid.len() / 2]; roots.len()];
    let solve = |rel: &[f64]| {
        let mut list: Vec<(&Matrix<f64>, f64)> = roots.iter().zip(rel).map(|((m, s), r)| (m, r * s)).collect();
        if lay.p > 1 && ridge_weight > 0.0 {
            list.push((&ridge, ridge_weight));
        }
        reduced.solve(&list)
    };
    let mut sorted = grid.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    for _ in 0..options.sweeps {
        for j in 0..roots.len() {
            let mut best: Option<(f64, f64)> = None;
            for &cand in &sorted {
                let mut trial = rel.clone();
                trial[j] = cand;
                let g = solve(&trial)?.gcv;
                if best.is_none_or(|(_, bg)| g < bg) {
                    best = Some((cand, g));
                }
            }
            rel[j] = best.expect("nonempty grid").0;
        }
    }
    let fit = solve(&rel)?;
    let lambdas = roots.iter().zip(&rel).map(|((_, s), r)| r * s).collect();

    let mut model = GamModel {
        half_hour,
        terms,
        coefficients: fit.beta,
        lambdas,
        edf: fit.edf,
        residual_variance: fit.rss / (n as f64 - fit.edf).max(1.0),
        rss: fit.rss,
        n_obs: n,
        effect_sd: Vec::new(),
    };
    let effects = model.effects_matrix(&x);
    model.effect_sd = (0..model.terms.len())
        .map(|t| {
            let col: Vec<f64> = (0..n).map(|i| effects[(i, t)]).collect();
            let m = col.iter().sum::<f64>() / n as f64;
            (col.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n as f64 - 1.0).max(1.0)).sqrt()
        })
        .collect();
    Ok(model)
}

impl GamModel {
    pub fn intercept(&self) -> f64 {
        self.coefficients[0]
    }

    /// Number of coefficients including the intercept.
    pub fn n_coefficients(&self) -> usize {
        self.coefficients.len()
    }

    fn effects_matrix(&self, x: &Matrix<f64>) -> Matrix<f64> {
        let lay = layout(&self.terms);
        let mut out = Matrix::zeros(x.nrows(), self.terms.len());
        for i in 0..x.nrows() {
            let row = x.row(i);
            for (t, term) in self.terms.iter().enumerate() {
                let r = lay.offsets[t]..lay.offsets[t] + term.width();
                out[(i, t)] = dot(&row[r.clone()], &self.coefficients[r]);
            }
        }
        out
    }

    /// Per-term effects at rows given as per-term variable columns, plus the
    /// number of inputs clamped into a knot range.
    pub fn effects(&self, data: &[Vec<Vec<f64>>], n: usize) -> (Matrix<f64>, usize) {
        let (x, clamped) = design_matrix(&self.terms, data, n);
        (self.effects_matrix(&x), clamped)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gam::formula::parse_formula;

    fn columns_for(terms: &[Term], vars: &[(&str, Vec<f64>)]) -> Vec<Vec<Vec<f64>>> {
        terms
            .iter()
            .map(|t| t.variables().iter().map(|v| vars.iter().find(|(n, _)| n == v).unwrap().1.clone()).collect())
            .collect()
    }

    #[test]
    fn interaction_drops_the_reference_level() {
        let f = parse_formula("y ~ a:b").unwrap();
        let a: Vec<f64> = (0..40).map(|i| (i % 4) as f64).collect();
        let b: Vec<f64> = (0..40).map(|i| (i / 20) as f64).collect();
        let y: Vec<f64> = a.iter().zip(&b).map(|(a, b)| a * 2.0 + b * 10.0).collect();
        let data = columns_for(&f.terms, &[("a", a), ("b", b)]);
        let m = fit_model(0, &f.terms, &data, &y, &FitOptions::default()).unwrap();
        assert_eq!(m.terms[0].width(), 7);
        let (eff, _) = m.effects(&data, 40);
        for i in 0..40 {
            assert!((m.intercept() + eff[(i, 0)] - y[i]).abs() < 1e-6);
        }
    }

    #[test]
    fn smooth_effects_are_centred() {
        let f = parse_formula("y ~ s(x, k=8) + te(u, v, k=4) + s(c, k=6, cyclic)").unwrap();
        let n = 300;
        let x: Vec<f64> = (0..n).map(|i| ((i * 37) % n) as f64 / n as f64).collect();
        let u: Vec<f64> = (0..n).map(|i| ((i * 11) % 17) as f64).collect();
        let v: Vec<f64> = (0..n).map(|i| ((i * 7) % 23) as f64 * 0.5).collect();
        let c: Vec<f64> = (0..n).map(|i| i as f64 / n as f64).collect();
        let y: Vec<f64> = (0..n).map(|i| (5.0 * x[i]).sin() + 0.1 * u[i] * v[i] / 10.0 + (6.28 * c[i]).cos()).collect();
        let data = columns_for(&f.terms, &[("x", x), ("u", u), ("v", v), ("c", c)]);
        let m = fit_model(3, &f.terms, &data, &y, &FitOptions::default()).unwrap();
        let (eff, _) = m.effects(&data, n);
        for t in 0..3 {
            let s: f64 = (0..n).map(|i| eff[(i, t)]).sum();
            assert!(s.abs() < 1e-8, "term {t}: {s}");
        }
        assert!(m.lambdas.len() == 4);
        assert!(m.edf > 1.0 && m.edf < m.n_coefficients() as f64 + 1e-9);
    }

    #[test]
    fn overlapping_null_spaces_are_solved() {
        // linear time and the linear-marginal tensor both contain time
        let f = parse_formula("y ~ time + te(time, temp, k=4, lin1)").unwrap();
        let n = 200;
        let time: Vec<f64> = (0..n).map(|i| 20.0 + i as f64 / 365.0).collect();
        let temp: Vec<f64> = (0..n).map(|i| 10.0 + 8.0 * (i as f64 / 9.0).sin()).collect();
        let y: Vec<f64> = (0..n).map(|i| 3.0 * time[i] - 0.2 * temp[i]).collect();
        let data = columns_for(&f.terms, &[("time", time), ("temp", temp)]);
        let m = fit_model(0, &f.terms, &data, &y, &FitOptions::default()).unwrap();
        assert!(m.residual_variance < 1e-4, "{}", m.residual_variance);
    }
}
