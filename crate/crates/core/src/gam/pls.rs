use crate::error::{Error, Result};
use crate::linalg::{dot, psd_root, solve_upper_transpose, Matrix, Qr};
use crate::real::Real;

/// Relative pivot tolerance below which a penalized system counts as singular.
const RANK_TOL: f64 = 1e-11;

/// Minimizer of `‖y − Xβ‖² + λ βᵀPβ`, computed by QR of `[X; √λ L]` with
/// `P = LᵀL`.
pub fn fit_penalized<T: Real>(design: &Matrix<T>, penalty: &Matrix<T>, lambda: T, y: &[T]) -> Result<Vec<T>> {
    if design.nrows() != y.len() {
        return Err(Error::usage(format!("design has {} rows, response has {}", design.nrows(), y.len())));
    }
    if penalty.nrows() != design.ncols() || penalty.ncols() != design.ncols() {
        return Err(Error::usage("penalty dimension does not match the design"));
    }
    if !(lambda >= T::zero()) {
        return Err(Error::usage("smoothing parameter must be nonnegative"));
    }
    let root = psd_root(penalty)?;
    let reduced = Reduced::new(design, y)?;
    Ok(reduced.solve(&[(&root, lambda)])?.beta)
}

/// Generalized cross-validation choice of λ over `grid`; ties go to the smaller λ.
pub fn select_lambda<T: Real>(design: &Matrix<T>, penalty: &Matrix<T>, y: &[T], grid: &[T]) -> Result<T> {
    if grid.is_empty() {
        return Err(Error::usage("empty smoothing-parameter grid"));
    }
    let root = psd_root(penalty)?;
    let reduced = Reduced::new(design, y)?;
    let mut sorted = grid.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    let mut best: Option<(T, T)> = None;
    for &lam in &sorted {
        let fit = reduced.solve(&[(&root, lam)])?;
        if best.is_none_or(|(_, g)| fit.gcv < g) {
            best = Some((lam, fit.gcv));
        }
    }
    Ok(best.expect("nonempty grid").0)
}

/// The default smoothing grid: 13 points log-spaced over `1e-4 ..= 1e8`.
pub fn default_lambda_grid() -> Vec<f64> {
    (-4..=8).map(|e| 10f64.powi(e)).collect()
}

/// Result of one penalized solve.
#[derive(Debug, Clone)]
pub struct PenalizedFit<T> {
    pub beta: Vec<T>,
    pub rss: T,
    pub edf: T,
    pub gcv: T,
}

/// A least-squares problem compressed to `X = Q₀R₀`, `f = Q₀ᵀy`, so that
/// repeated solves for different penalties cost `O(p³)` each.
#[derive(Debug, Clone)]
pub struct Reduced<T> {
    r0: Matrix<T>,
    f: Vec<T>,
    /// `‖y‖² − ‖f‖²`, the part of the RSS no coefficient can explain.
    rss_floor: T,
    n: usize,
}

impl<T: Real> Reduced<T> {
    pub fn new(design: &Matrix<T>, y: &[T]) -> Result<Self> {
        let (n, p) = (design.nrows(), design.ncols());
        if n != y.len() {
            return Err(Error::usage("design and response lengths differ"));
        }
        if n < p {
            return Err(Error::data(format!("{n} rows cannot identify {p} coefficients")));
        }
        if y.iter().any(|v| !v.is_finite()) || design.as_slice().iter().any(|v| !v.is_finite()) {
            return Err(Error::data("non-finite value in the design or response"));
        }
        let qr = Qr::new(design)?;
        let qty = qr.apply_qt(y);
        let f = qty[..p].to_vec();
        let rss_floor = qty[p..].iter().map(|&v| v * v).sum::<T>();
        Ok(Reduced { r0: qr.r().clone(), f, rss_floor, n })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn p(&self) -> usize {
        self.r0.ncols()
    }

    pub fn r0(&self) -> &Matrix<T> {
        &self.r0
    }

    /// Solves with the penalty `Σ λ_j L_jᵀL_j`, each root spanning all `p` columns.
    pub fn solve(&self, roots: &[(&Matrix<T>, T)]) -> Result<PenalizedFit<T>> {
        let p = self.p();
        let extra: usize = roots.iter().filter(|(_, l)| *l > T::zero()).map(|(r, _)| r.nrows()).sum();
        let mut stacked = Matrix::zeros(p + extra, p);
        for i in 0..p {
            stacked.row_mut(i).copy_from_slice(self.r0.row(i));
        }
        let mut at = p;
        for (root, lam) in roots {
            if root.ncols() != p {
                return Err(Error::usage("penalty root does not span the coefficient vector"));
            }
            if *lam > T::zero() {
                let s = lam.sqrt();
                for i in 0..root.nrows() {
                    for (dst, &v) in stacked.row_mut(at).iter_mut().zip(root.row(i)) {
                        *dst = s * v;
                    }
                    at += 1;
                }
            }
        }
        let qr = Qr::new(&stacked)?;
        qr.check_rank(T::lit(RANK_TOL))?;
        let mut rhs = self.f.clone();
        rhs.resize(p + extra, T::zero());
        let beta = qr.solve_least_squares(&rhs)?;
        let fitted = self.r0.matvec(&beta);
        let resid: Vec<T> = self.f.iter().zip(&fitted).map(|(&a, &b)| a - b).collect();
        let rss = self.rss_floor + dot(&resid, &resid);
        // edf = tr(X (XᵀX + S)⁻¹ Xᵀ) = ‖R₀ R₁⁻¹‖²_F
        let r1 = qr.r();
        let mut edf = T::zero();
        for i in 0..p {
            let z = solve_upper_transpose(r1, self.r0.row(i))?;
            edf += dot(&z, &z);
        }
        let n = T::from_usize_lossy(self.n);
        let denom = n - edf;
        let gcv = if denom > T::zero() { n * rss / (denom * denom) } else { T::infinity() };
        Ok(PenalizedFit { beta, rss, edf, gcv })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gam::bspline::{bspline_design, SplineBasis};
    use crate::linalg::Cholesky;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn spline_problem(n: usize, dim: usize, seed: u64, noise: f64) -> (Vec<f64>, Matrix<f64>, Matrix<f64>, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<f64> = (0..n).map(|i| i as f64 / (n - 1) as f64).collect();
        let b = SplineBasis::uniform(0.0, 1.0, dim).unwrap();
        let design = bspline_design(&x, &b);
        let y = x.iter().map(|&t| (6.0 * t).sin() + noise * rng.sample::<f64, _>(StandardNormal)).collect();
        (x, design, b.penalty(), y)
    }

    fn objective(x: &Matrix<f64>, p: &Matrix<f64>, lam: f64, y: &[f64], b: &[f64]) -> f64 {
        let r: Vec<f64> = x.matvec(b).iter().zip(y).map(|(f, y)| y - f).collect();
        dot(&r, &r) + lam * p.quadratic_form(b)
    }

    #[test]
    fn zero_lambda_is_ols() {
        let (_, x, p, y) = spline_problem(80, 8, 1, 0.2);
        let beta = fit_penalized(&x, &p, 0.0, &y).unwrap();
        // normal equations oracle
        let ch = Cholesky::new(&x.gram()).unwrap();
        let ols = ch.solve(&x.tr_matvec(&y));
        for (a, b) in beta.iter().zip(&ols) {
            assert!((a - b).abs() < 1e-8);
        }
    }

    #[test]
    fn huge_lambda_gives_the_best_line() {
        let (xs, x, p, y) = spline_problem(120, 10, 2, 0.3);
        let beta = fit_penalized(&x, &p, 1e12, &y).unwrap();
        let fit = x.matvec(&beta);
        // closed-form simple regression oracle
        let n = xs.len() as f64;
        let mx = xs.iter().sum::<f64>() / n;
        let my = y.iter().sum::<f64>() / n;
        let sxy: f64 = xs.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum();
        let sxx: f64 = xs.iter().map(|a| (a - mx).powi(2)).sum();
        let slope = sxy / sxx;
        for (xi, fi) in xs.iter().zip(&fit) {
            assert!((fi - (my + slope * (xi - mx))).abs() < 1e-3);
        }
    }

    #[test]
    fn symmetric_data_gives_symmetric_coefficients() {
        let n = 101;
        let x: Vec<f64> = (0..n).map(|i| -1.0 + 2.0 * i as f64 / (n - 1) as f64).collect();
        let b = SplineBasis::uniform(-1.0, 1.0, 9).unwrap();
        let design = bspline_design(&x, &b);
        let y: Vec<f64> = x.iter().map(|t| t * t + (3.0 * t).cos()).collect();
        let beta = fit_penalized(&design, &b.penalty(), 0.5, &y).unwrap();
        for j in 0..9 {
            assert!((beta[j] - beta[8 - j]).abs() < 1e-9);
        }
    }

    #[test]
    fn solution_is_stationary_and_locally_optimal() {
        let (_, x, p, y) = spline_problem(150, 12, 3, 0.5);
        let lam = 3.7;
        let beta = fit_penalized(&x, &p, lam, &y).unwrap();
        // gradient 2Xᵀ(Xβ − y) + 2λPβ
        let r: Vec<f64> = x.matvec(&beta).iter().zip(&y).map(|(f, y)| f - y).collect();
        let g1 = x.tr_matvec(&r);
        let g2 = p.matvec(&beta);
        let grad: Vec<f64> = g1.iter().zip(&g2).map(|(a, b)| 2.0 * a + 2.0 * lam * b).collect();
        assert!(dot(&grad, &grad).sqrt() < 1e-6 * (1.0 + dot(&y, &y).sqrt()));
        let base = objective(&x, &p, lam, &y, &beta);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let dir: Vec<f64> = (0..beta.len()).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
            let norm = dot(&dir, &dir).sqrt();
            let moved: Vec<f64> = beta.iter().zip(&dir).map(|(b, d)| b + 1e-3 * d / norm).collect();
            assert!(objective(&x, &p, lam, &y, &moved) >= base);
        }
    }

    #[test]
    fn unpenalized_collinearity_is_reported() {
        let mut x = Matrix::zeros(10, 2);
        for i in 0..10 {
            x[(i, 0)] = i as f64;
            x[(i, 1)] = 2.0 * i as f64;
        }
        let e = fit_penalized(&x, &Matrix::zeros(2, 2), 0.0, &[1.0; 10]).unwrap_err();
        assert!(e.to_string().contains("condition"), "{e}");
        // a penalty on the overlap restores uniqueness
        assert!(fit_penalized(&x, &Matrix::identity(2), 1.0, &[1.0; 10]).is_ok());
    }

    #[test]
    fn gcv_prefers_heavy_smoothing_on_noise() {
        // plain GCV reaches the top of the grid on roughly two thirds of null
        // samples; it must never come close to interpolating them
        let grid = default_lambda_grid();
        let (mut top, mut rough) = (0, 0);
        for seed in 0..40 {
            let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
            let n = 200;
            let x: Vec<f64> = (0..n).map(|i| i as f64 / (n - 1) as f64).collect();
            let b = SplineBasis::uniform(0.0, 1.0, 10).unwrap();
            let y: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
            let lam = select_lambda(&bspline_design(&x, &b), &b.penalty(), &y, &grid).unwrap();
            if lam == *grid.last().unwrap() {
                top += 1;
            }
            if lam <= 1e-2 {
                rough += 1;
            }
        }
        assert!(top >= 22, "{top}/40 at the top of the grid");
        assert!(rough <= 2, "{rough}/40 nearly unpenalized");
    }

    #[test]
    fn gcv_on_noiseless_target_beats_noise_floor() {
        let (_, x, p, _) = spline_problem(200, 12, 4, 0.0);
        let y: Vec<f64> = (0..200).map(|i| (6.0 * i as f64 / 199.0).sin()).collect();
        let lam = select_lambda(&x, &p, &y, &default_lambda_grid()).unwrap();
        let beta = fit_penalized(&x, &p, lam, &y).unwrap();
        let rss: f64 = x.matvec(&beta).iter().zip(&y).map(|(f, y)| (f - y).powi(2)).sum();
        // noise floor of a sigma = 0.01 perturbation
        assert!(rss < 200.0 * 1e-4, "rss {rss} at lambda {lam}");
    }

    #[test]
    fn single_point_grid() {
        let (_, x, p, y) = spline_problem(50, 6, 5, 0.1);
        assert_eq!(select_lambda(&x, &p, &y, &[42.0]).unwrap(), 42.0);
        assert!(select_lambda(&x, &p, &y, &[]).is_err());
    }

    #[test]
    fn edf_limits() {
        let (_, x, p, y) = spline_problem(60, 8, 6, 0.1);
        let root = psd_root(&p).unwrap();
        let red = Reduced::new(&x, &y).unwrap();
        let free = red.solve(&[(&root, 0.0)]).unwrap();
        assert!((free.edf - 8.0).abs() < 1e-8);
        let stiff = red.solve(&[(&root, 1e12)]).unwrap();
        assert!((stiff.edf - 2.0).abs() < 1e-3);
    }
}
