use crate::error::{Error, Result};

/// Mid-ranks starting at 1.
pub(crate) fn mid_ranks(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut r = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        let mid = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            r[k] = mid;
        }
        i = j + 1;
    }
    r
}

struct Fenwick {
    t: Vec<f64>,
}

impl Fenwick {
    fn new(n: usize) -> Self {
        Fenwick { t: vec![0.0; n + 1] }
    }

    fn add(&mut self, i: usize, v: f64) {
        let mut i = i + 1;
        while i < self.t.len() {
            self.t[i] += v;
            i += i & i.wrapping_neg();
        }
    }

    /// Sum over positions `< i`.
    fn prefix(&self, i: usize) -> f64 {
        let mut i = i;
        let mut s = 0.0;
        while i > 0 {
            s += self.t[i];
            i -= i & i.wrapping_neg();
        }
        s
    }
}

/// Bivariate ranks `Q_i = 1 + Σ_{j≠i} c_ij` with `c = 1` when both
/// coordinates are smaller, `½` when one ties and the other is smaller, `¼`
/// when both tie.
fn bivariate_ranks(x: &[f64], y: &[f64]) -> Vec<f64> {
    let n = x.len();
    let mut ys: Vec<f64> = y.to_vec();
    ys.sort_by(f64::total_cmp);
    ys.dedup();
    let yr: Vec<usize> = y.iter().map(|v| ys.partition_point(|u| u < v)).collect();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]).then(yr[a].cmp(&yr[b])));
    let mut tree = Fenwick::new(ys.len());
    let mut q = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        // group idx[i..=j] shares x and is sorted by y
        let group = &idx[i..=j];
        let mut g = 0;
        while g < group.len() {
            let mut h = g;
            while h + 1 < group.len() && yr[group[h + 1]] == yr[group[g]] {
                h += 1;
            }
            let r = yr[group[g]];
            let below = tree.prefix(r);
            let equal_y = tree.prefix(r + 1) - below;
            let same_x_lower_y = g as f64;
            let both_equal = (h - g) as f64;
            let val = 1.0 + below + 0.5 * (equal_y + same_x_lower_y) + 0.25 * both_equal;
            for &k in &group[g..=h] {
                q[k] = val;
            }
            g = h + 1;
        }
        for &k in group {
            tree.add(yr[k], 1.0);
        }
        i = j + 1;
    }
    q
}

/// Hoeffding's D on the conventional scale (about `[-0.5, 1]`), from
/// mid-ranks and bivariate ranks in `O(n log n)`.
pub fn hoeffding_d(x: &[f64], y: &[f64]) -> Result<f64> {
    let n = x.len();
    if y.len() != n {
        return Err(Error::usage("Hoeffding's D needs paired samples"));
    }
    if n < 5 {
        return Err(Error::data("Hoeffding's D needs at least five points"));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::data("non-finite sample"));
    }
    let r = mid_ranks(x);
    let s = mid_ranks(y);
    let q = bivariate_ranks(x, y);
    let (mut d1, mut d2, mut d3) = (0.0, 0.0, 0.0);
    for i in 0..n {
        d1 += (q[i] - 1.0) * (q[i] - 2.0);
        d2 += (r[i] - 1.0) * (r[i] - 2.0) * (s[i] - 1.0) * (s[i] - 2.0);
        d3 += (r[i] - 2.0) * (s[i] - 2.0) * (q[i] - 1.0);
    }
    let nf = n as f64;
    Ok(30.0 * ((nf - 2.0) * (nf - 3.0) * d1 + d2 - 2.0 * (nf - 2.0) * d3)
        / (nf * (nf - 1.0) * (nf - 2.0) * (nf - 3.0) * (nf - 4.0)))
}
