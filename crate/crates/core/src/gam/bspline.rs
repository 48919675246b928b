use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::real::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BasisKind {
    CubicBSpline,
    CyclicCubicBSpline,
}

/// Cubic spline basis. For the open kind `knots` is the full extended knot
/// vector (`dim + 4` entries) and the domain is `[knots[3], knots[dim]]`; for
/// the cyclic kind `knots` holds the `dim + 1` breakpoints of one period.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplineBasis {
    kind: BasisKind,
    knots: Vec<f64>,
}

pub const DEGREE: usize = 3;

impl SplineBasis {
    pub fn new(kind: BasisKind, knots: Vec<f64>) -> Result<Self> {
        let min = match kind {
            BasisKind::CubicBSpline => DEGREE + 2,
            BasisKind::CyclicCubicBSpline => 4,
        };
        if knots.len() < min {
            return Err(Error::usage(format!("spline basis needs at least {min} knots, got {}", knots.len())));
        }
        if knots.windows(2).any(|w| !(w[1] > w[0])) || knots.iter().any(|k| !k.is_finite()) {
            return Err(Error::usage("knots must be finite and strictly increasing"));
        }
        Ok(SplineBasis { kind, knots })
    }

    /// Open cubic basis of dimension `dim` with equally spaced knots covering `[lo, hi]`.
    pub fn uniform(lo: f64, hi: f64, dim: usize) -> Result<Self> {
        if dim < 4 {
            return Err(Error::usage(format!("cubic basis dimension {dim} below 4")));
        }
        let (lo, hi) = widen(lo, hi);
        let h = (hi - lo) / (dim - 3) as f64;
        let mut knots: Vec<f64> = (0..dim + 4).map(|j| lo + (j as f64 - 3.0) * h).collect();
        // exact endpoints so training extremes never count as clamped
        knots[3] = lo;
        knots[dim] = hi;
        SplineBasis::new(BasisKind::CubicBSpline, knots)
    }

    /// Periodic cubic basis of dimension `dim` on the period `[lo, hi)`.
    pub fn cyclic(lo: f64, hi: f64, dim: usize) -> Result<Self> {
        if dim < 3 {
            return Err(Error::usage(format!("cyclic basis dimension {dim} below 3")));
        }
        let (lo, hi) = widen(lo, hi);
        let h = (hi - lo) / dim as f64;
        let mut knots: Vec<f64> = (0..=dim).map(|j| lo + j as f64 * h).collect();
        knots[dim] = hi;
        SplineBasis::new(BasisKind::CyclicCubicBSpline, knots)
    }

    pub fn kind(&self) -> BasisKind {
        self.kind
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn dim(&self) -> usize {
        match self.kind {
            BasisKind::CubicBSpline => self.knots.len() - DEGREE - 1,
            BasisKind::CyclicCubicBSpline => self.knots.len() - 1,
        }
    }

    pub fn domain(&self) -> (f64, f64) {
        match self.kind {
            BasisKind::CubicBSpline => (self.knots[DEGREE], self.knots[self.knots.len() - DEGREE - 1]),
            BasisKind::CyclicCubicBSpline => (self.knots[0], self.knots[self.knots.len() - 1]),
        }
    }

    /// Writes the basis values at `x` into `out` (length `dim`) and reports
    /// whether `x` had to be clamped into the domain.
    pub fn eval_into(&self, x: f64, out: &mut [f64]) -> bool {
        out.iter_mut().for_each(|v| *v = 0.0);
        match self.kind {
            BasisKind::CubicBSpline => self.eval_open(x, out),
            BasisKind::CyclicCubicBSpline => {
                self.eval_cyclic(x, out);
                false
            }
        }
    }

    fn eval_open(&self, x: f64, out: &mut [f64]) -> bool {
        let t = &self.knots;
        let (lo, hi) = self.domain();
        let clamped = !(lo..=hi).contains(&x);
        let x = x.clamp(lo, hi);
        let dim = self.dim();
        // knot span i with t[i] <= x < t[i+1], the last span closed on the right
        let mut i = DEGREE;
        while i < dim - 1 && x >= t[i + 1] {
            i += 1;
        }
        // de Boor's triangular scheme for the DEGREE+1 nonzero functions
        let mut n = [0.0; DEGREE + 1];
        let mut left = [0.0; DEGREE + 1];
        let mut right = [0.0; DEGREE + 1];
        n[0] = 1.0;
        for j in 1..=DEGREE {
            left[j] = x - t[i + 1 - j];
            right[j] = t[i + j] - x;
            let mut saved = 0.0;
            for r in 0..j {
                let temp = n[r] / (right[r + 1] + left[j - r]);
                n[r] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            n[j] = saved;
        }
        for (r, v) in n.iter().enumerate() {
            out[i - DEGREE + r] = *v;
        }
        clamped
    }

    fn eval_cyclic(&self, x: f64, out: &mut [f64]) {
        let dim = self.dim();
        let (lo, hi) = self.domain();
        let h = (hi - lo) / dim as f64;
        let u = ((x - lo) / h).rem_euclid(dim as f64);
        let cell = (u.floor() as usize).min(dim - 1);
        let s = u - cell as f64;
        let pieces = [
            (1.0 - s).powi(3) / 6.0,
            (3.0 * s.powi(3) - 6.0 * s * s + 4.0) / 6.0,
            (-3.0 * s.powi(3) + 3.0 * s * s + 3.0 * s + 1.0) / 6.0,
            s.powi(3) / 6.0,
        ];
        for (r, v) in pieces.iter().enumerate() {
            out[(cell + dim + r - 3) % dim] += v;
        }
    }

    /// Second-order difference matrix `D`; the penalty is `DᵀD`. Circulant
    /// for the cyclic kind.
    pub fn difference_matrix(&self) -> Matrix<f64> {
        let k = self.dim();
        match self.kind {
            BasisKind::CubicBSpline => {
                let mut d = Matrix::zeros(k - 2, k);
                for r in 0..k - 2 {
                    d[(r, r)] = 1.0;
                    d[(r, r + 1)] = -2.0;
                    d[(r, r + 2)] = 1.0;
                }
                d
            }
            BasisKind::CyclicCubicBSpline => {
                let mut d = Matrix::zeros(k, k);
                for r in 0..k {
                    d[(r, (r + k - 1) % k)] += 1.0;
                    d[(r, r)] -= 2.0;
                    d[(r, (r + 1) % k)] += 1.0;
                }
                d
            }
        }
    }

    pub fn penalty(&self) -> Matrix<f64> {
        self.difference_matrix().gram()
    }
}

fn widen(lo: f64, hi: f64) -> (f64, f64) {
    if hi > lo {
        (lo, hi)
    } else {
        (lo - 0.5, lo + 0.5)
    }
}

/// Design matrix of `basis` at `x`; open-basis values outside the domain are
/// clamped to it with a warning.
pub fn bspline_design<T: Real>(x: &[T], basis: &SplineBasis) -> Matrix<T> {
    let k = basis.dim();
    let mut m = Matrix::zeros(x.len(), k);
    let mut row = vec![0.0; k];
    let mut clamped = 0usize;
    for (i, &xi) in x.iter().enumerate() {
        if basis.eval_into(xi.to_f64_lossy(), &mut row) {
            clamped += 1;
        }
        for (dst, &v) in m.row_mut(i).iter_mut().zip(&row) {
            *dst = T::lit(v);
        }
    }
    if clamped > 0 {
        let (lo, hi) = basis.domain();
        log::warn!("{clamped} value(s) outside the knot range [{lo}, {hi}] were clamped");
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    // textbook recursion, half-open spans
    fn cox_de_boor(t: &[f64], i: usize, p: usize, x: f64) -> f64 {
        if p == 0 {
            return if t[i] <= x && x < t[i + 1] { 1.0 } else { 0.0 };
        }
        let mut v = 0.0;
        if t[i + p] > t[i] {
            v += (x - t[i]) / (t[i + p] - t[i]) * cox_de_boor(t, i, p - 1, x);
        }
        if t[i + p + 1] > t[i + 1] {
            v += (t[i + p + 1] - x) / (t[i + p + 1] - t[i + 1]) * cox_de_boor(t, i + 1, p - 1, x);
        }
        v
    }

    #[test]
    fn matches_recursion_at_knots_and_between() {
        let knots = vec![-1.0, -0.4, 0.0, 0.3, 0.45, 0.9, 1.3, 1.5, 2.2, 2.6];
        let b = SplineBasis::new(BasisKind::CubicBSpline, knots.clone()).unwrap();
        let (lo, hi) = b.domain();
        let mut xs: Vec<f64> = knots[3..6].to_vec();
        xs.extend((0..17).map(|j| lo + (hi - lo) * j as f64 / 17.0));
        let mut row = vec![0.0; b.dim()];
        for &x in &xs {
            b.eval_into(x, &mut row);
            for (j, &v) in row.iter().enumerate() {
                assert!((v - cox_de_boor(&knots, j, 3, x)).abs() < 1e-12, "x={x} j={j}");
            }
        }
    }

    proptest! {
        #[test]
        fn partition_of_unity(u in 0.0f64..=1.0, dim in 4usize..25) {
            let b = SplineBasis::uniform(-3.0, 7.0, dim).unwrap();
            let mut row = vec![0.0; dim];
            b.eval_into(-3.0 + 10.0 * u, &mut row);
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(row.iter().all(|&v| v >= -1e-15));
        }

        #[test]
        fn cyclic_partition_of_unity(u in -2.0f64..3.0, dim in 3usize..30) {
            let b = SplineBasis::cyclic(0.0, 1.0, dim).unwrap();
            let mut row = vec![0.0; dim];
            b.eval_into(u, &mut row);
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn cyclic_rows_wrap() {
        let b = SplineBasis::cyclic(0.0, 1.0, 20).unwrap();
        let m = bspline_design(&[0.0f64, 1.0, 0.25, 1.25], &b);
        for j in 0..20 {
            assert!((m[(0, j)] - m[(1, j)]).abs() < 1e-12);
            assert!((m[(2, j)] - m[(3, j)]).abs() < 1e-12);
        }
    }

    #[test]
    fn cyclic_derivatives_match_across_the_seam() {
        // finite differences of a generic periodic combination
        let b = SplineBasis::cyclic(0.0, 1.0, 8).unwrap();
        let coef = [0.3, -1.2, 2.0, 0.7, -0.4, 1.1, 0.0, -2.5];
        let f = |x: f64| {
            let mut r = vec![0.0; 8];
            b.eval_into(x, &mut r);
            r.iter().zip(&coef).map(|(a, c)| a * c).sum::<f64>()
        };
        let h = 1e-4;
        let d1 = |x: f64| (f(x + h) - f(x - h)) / (2.0 * h);
        let d2 = |x: f64| (f(x + h) - 2.0 * f(x) + f(x - h)) / (h * h);
        assert!((f(1.0 - 1e-12) - f(0.0)).abs() < 1e-9);
        assert!((d1(1.0) - d1(0.0)).abs() < 1e-6);
        assert!((d2(1.0) - d2(0.0)).abs() < 1e-3);
    }

    #[test]
    fn too_few_knots() {
        assert!(SplineBasis::new(BasisKind::CubicBSpline, vec![0.0, 1.0, 2.0, 3.0]).is_err());
        assert!(SplineBasis::new(BasisKind::CubicBSpline, vec![0.0, 1.0, 2.0, 3.0, 4.0]).is_ok());
    }

    #[test]
    fn out_of_range_values_are_clamped() {
        let b = SplineBasis::uniform(0.0, 1.0, 6).unwrap();
        let m = bspline_design(&[1.0f64, 5.0, 0.0, -3.0], &b);
        for j in 0..6 {
            assert_eq!(m[(0, j)], m[(1, j)]);
            assert_eq!(m[(2, j)], m[(3, j)]);
        }
    }

    #[test]
    fn penalty_null_spaces() {
        let open = SplineBasis::uniform(0.0, 1.0, 7).unwrap();
        let line: Vec<f64> = (0..7).map(|j| 2.0 - 0.5 * j as f64).collect();
        assert!(open.difference_matrix().matvec(&line).iter().all(|v| v.abs() < 1e-14));
        let cyc = SplineBasis::cyclic(0.0, 1.0, 7).unwrap();
        assert!(cyc.difference_matrix().matvec(&[3.0; 7]).iter().all(|v| v.abs() < 1e-14));
        assert!(cyc.difference_matrix().matvec(&line).iter().any(|v| v.abs() > 1.0));
    }

    #[test]
    fn single_precision_design() {
        let b = SplineBasis::uniform(0.0, 1.0, 5).unwrap();
        let m = bspline_design(&[0.3f32, 0.8], &b);
        let s: f32 = m.row(0).iter().sum();
        assert!((s - 1.0).abs() < 1e-6);
    }
}
