use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TreeConfig {
    pub max_depth: usize,
    pub min_leaf: usize,
    /// Features drawn at each split; `None` means all of them.
    pub mtry: Option<usize>,
}

impl Default for TreeConfig {
    fn default() -> Self {
        TreeConfig { max_depth: 6, min_leaf: 5, mtry: None }
    }
}

/// Node of a regression tree; children are indices into [`Tree::nodes`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum TreeNode {
    Leaf { value: f64, count: usize },
    Split { feature: usize, threshold: f64, left: usize, right: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<TreeNode>,
}

impl Tree {
    /// Rows with `x[feature] <= threshold` go left.
    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut k = 0;
        loop {
            match &self.nodes[k] {
                TreeNode::Leaf { value, .. } => return *value,
                TreeNode::Split { feature, threshold, left, right } => {
                    k = if x[*feature] <= *threshold { *left } else { *right };
                }
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[TreeNode], k: usize) -> usize {
            match &nodes[k] {
                TreeNode::Leaf { .. } => 0,
                TreeNode::Split { left, right, .. } => 1 + walk(nodes, *left).max(walk(nodes, *right)),
            }
        }
        walk(&self.nodes, 0)
    }

    pub fn leaves(&self) -> impl Iterator<Item = (f64, usize)> + '_ {
        self.nodes.iter().filter_map(|n| match n {
            TreeNode::Leaf { value, count } => Some((*value, *count)),
            _ => None,
        })
    }
}

/// Row order of every feature, ascending by value then by row.
pub(crate) fn presort(x: &Matrix<f64>) -> Vec<Vec<u32>> {
    (0..x.ncols())
        .map(|f| {
            let mut idx: Vec<u32> = (0..x.nrows() as u32).collect();
            idx.sort_by(|&a, &b| x[(a as usize, f)].total_cmp(&x[(b as usize, f)]));
            idx
        })
        .collect()
}

pub(crate) fn check_inputs(x: &Matrix<f64>, y: &[f64]) -> Result<()> {
    if x.nrows() != y.len() {
        return Err(Error::usage(format!("{} feature rows for {} targets", x.nrows(), y.len())));
    }
    if x.nrows() < 2 {
        return Err(Error::usage("a tree needs at least two rows"));
    }
    if x.ncols() == 0 {
        return Err(Error::usage("a tree needs at least one feature"));
    }
    if x.as_slice().iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::data("non-finite tree input"));
    }
    Ok(())
}

/// Greedy variance-reduction tree. Ties between candidate splits go to
/// the lower feature index, then the lower threshold.
pub fn fit_tree<R: Rng>(x: &Matrix<f64>, y: &[f64], config: &TreeConfig, rng: &mut R) -> Result<Tree> {
    check_inputs(x, y)?;
    Ok(fit_weighted(x, y, &vec![1; y.len()], &presort(x), config, rng))
}

#[derive(Clone, Copy, Default)]
struct Stats {
    w: f64,
    s: f64,
    ss: f64,
}

impl Stats {
    fn add(&mut self, w: f64, y: f64) {
        self.w += w;
        self.s += w * y;
        self.ss += w * y * y;
    }

    fn sse(&self) -> f64 {
        if self.w > 0.0 {
            (self.ss - self.s * self.s / self.w).max(0.0)
        } else {
            0.0
        }
    }
}

struct Open {
    node: usize,
    stats: Stats,
    features: Vec<bool>,
    best: Option<(f64, usize, f64)>,
}

const OFF: u32 = u32::MAX;

/// Tree on a resample given as integer row weights.
pub(crate) fn fit_weighted<R: Rng>(
    x: &Matrix<f64>,
    y: &[f64],
    weights: &[u32],
    order: &[Vec<u32>],
    config: &TreeConfig,
    rng: &mut R,
) -> Tree {
    let (n, p) = (x.nrows(), x.ncols());
    let mtry = config.mtry.unwrap_or(p).clamp(1, p);
    let min_leaf = config.min_leaf.max(1) as f64;
    let mut nodes = vec![TreeNode::Leaf { value: 0.0, count: 0 }];
    let mut slot = vec![OFF; n];
    let mut root = Stats::default();
    for i in 0..n {
        if weights[i] > 0 {
            slot[i] = 0;
            root.add(weights[i] as f64, y[i]);
        }
    }
    let mut open = vec![Open { node: 0, stats: root, features: Vec::new(), best: None }];
    for depth in 0..=config.max_depth {
        // close nodes that cannot or need not split
        let mut next_open = Vec::new();
        let mut remap = vec![OFF; open.len()];
        for (j, o) in open.into_iter().enumerate() {
            let splittable = depth < config.max_depth
                && o.stats.w >= 2.0 * min_leaf
                && o.stats.sse() > 1e-12 * o.stats.ss.max(f64::MIN_POSITIVE);
            if splittable {
                remap[j] = next_open.len() as u32;
                next_open.push(o);
            } else {
                nodes[o.node] = leaf(&o.stats);
            }
        }
        open = next_open;
        for s in slot.iter_mut() {
            if *s != OFF {
                *s = remap[*s as usize];
            }
        }
        if open.is_empty() {
            break;
        }
        for o in open.iter_mut() {
            let mut f = vec![false; p];
            for k in sample(rng, p, mtry) {
                f[k] = true;
            }
            o.features = f;
        }
        // one ordered scan per feature serves every open node
        let mut left = vec![Stats::default(); open.len()];
        let mut last = vec![f64::NAN; open.len()];
        for f in 0..p {
            if !open.iter().any(|o| o.features[f]) {
                continue;
            }
            left.iter_mut().for_each(|s| *s = Stats::default());
            for &i in &order[f] {
                let i = i as usize;
                let j = slot[i];
                if j == OFF || !open[j as usize].features[f] {
                    continue;
                }
                let j = j as usize;
                let v = x[(i, f)];
                let l = left[j];
                if l.w >= min_leaf && v > last[j] {
                    let total = open[j].stats;
                    let rw = total.w - l.w;
                    if rw >= min_leaf {
                        let rs = total.s - l.s;
                        let gain = l.s * l.s / l.w + rs * rs / rw - total.s * total.s / total.w;
                        if open[j].best.is_none_or(|(g, _, _)| gain > g) {
                            let mid = last[j] + (v - last[j]) / 2.0;
                            let thr = if mid < v { mid } else { last[j] };
                            open[j].best = Some((gain, f, thr));
                        }
                    }
                }
                left[j].add(weights[i] as f64, y[i]);
                last[j] = v;
            }
        }
        // split or close
        let mut children: Vec<Option<(usize, usize, usize, f64)>> = Vec::with_capacity(open.len());
        let mut next = Vec::new();
        for o in &open {
            match o.best {
                Some((gain, f, thr)) if gain > 1e-10 * o.stats.sse() => {
                    let (l, r) = (nodes.len(), nodes.len() + 1);
                    nodes.push(TreeNode::Leaf { value: 0.0, count: 0 });
                    nodes.push(TreeNode::Leaf { value: 0.0, count: 0 });
                    nodes[o.node] = TreeNode::Split { feature: f, threshold: thr, left: l, right: r };
                    children.push(Some((next.len(), f, next.len() + 1, thr)));
                    next.push(Open { node: l, stats: Stats::default(), features: Vec::new(), best: None });
                    next.push(Open { node: r, stats: Stats::default(), features: Vec::new(), best: None });
                }
                _ => {
                    nodes[o.node] = leaf(&o.stats);
                    children.push(None);
                }
            }
        }
        for i in 0..n {
            let j = slot[i];
            if j == OFF {
                continue;
            }
            slot[i] = match children[j as usize] {
                Some((l, f, r, thr)) => {
                    let c = if x[(i, f)] <= thr { l } else { r };
                    next[c].stats.add(weights[i] as f64, y[i]);
                    c as u32
                }
                None => OFF,
            };
        }
        open = next;
    }
    Tree { nodes }
}

fn leaf(s: &Stats) -> TreeNode {
    TreeNode::Leaf { value: if s.w > 0.0 { s.s / s.w } else { 0.0 }, count: s.w as usize }
}
