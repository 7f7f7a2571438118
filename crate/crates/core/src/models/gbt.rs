//! Gradient-boosted regression trees for squared-error loss with exact greedy
//! splits and second-order leaf weights `w = -G / (H + lambda)`.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GbtParams {
    pub n_rounds: usize,
    pub learning_rate: f64,
    pub max_depth: usize,
    pub min_leaf: usize,
    /// L2 penalty on leaf values.
    pub reg_lambda: f64,
    /// Minimum loss reduction for a split.
    pub reg_gamma: f64,
}

impl Default for GbtParams {
    fn default() -> Self {
        Self {
            n_rounds: 100,
            learning_rate: 0.1,
            max_depth: 4,
            min_leaf: 20,
            reg_lambda: 1.0,
            reg_gamma: 0.0,
        }
    }
}

impl GbtParams {
    pub fn validate(&self) -> Result<()> {
        if self.n_rounds == 0 {
            return Err(Error::Config("n_rounds must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate <= 1.0) {
            return Err(Error::Config(format!("learning_rate must be in (0, 1], got {}", self.learning_rate)));
        }
        if self.min_leaf == 0 {
            return Err(Error::Config("min_leaf must be >= 1".into()));
        }
        if !(self.reg_lambda >= 0.0 && self.reg_gamma >= 0.0) {
            return Err(Error::Config("reg_lambda and reg_gamma must be >= 0".into()));
        }
        Ok(())
    }
}

/// Flat tree node. A split sends `x[feature] <= threshold` to `left`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Node {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        value: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    /// Root at index 0.
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn predict(&self, row: &[f64]) -> f64 {
        let mut k = 0;
        loop {
            match &self.nodes[k] {
                Node::Leaf { value } => return *value,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => k = if row[*feature] <= *threshold { *left } else { *right },
            }
        }
    }

    fn n_splits(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, Node::Split { .. })).count()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoostedEnsemble {
    pub trees: Vec<Tree>,
    pub learning_rate: f64,
    pub max_depth: usize,
    pub min_leaf: usize,
    pub n_rounds: usize,
    pub reg_lambda: f64,
    pub reg_gamma: f64,
    pub base_score: f64,
    pub n_features: usize,
    /// Training MSE before the first tree and after each one.
    pub train_mse: Vec<f64>,
}

impl BoostedEnsemble {
    pub fn predict_row(&self, row: &[f64]) -> f64 {
        self.base_score + self.learning_rate * self.trees.iter().map(|t| t.predict(row)).sum::<f64>()
    }

    pub fn predict(&self, x: &DMatrix<f64>) -> Result<Vec<f64>> {
        if x.ncols() != self.n_features {
            return Err(Error::InvalidInput(format!(
                "design has {} columns, ensemble expects {}",
                x.ncols(),
                self.n_features
            )));
        }
        let rows = row_major(x);
        Ok(rows.par_chunks(self.n_features.max(1)).map(|r| self.predict_row(r)).take(x.nrows()).collect())
    }

    /// Number of splits on each feature across all trees.
    pub fn split_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_features];
        for t in &self.trees {
            for n in &t.nodes {
                if let Node::Split { feature, .. } = n {
                    counts[*feature] += 1;
                }
            }
        }
        counts
    }
}

fn row_major(x: &DMatrix<f64>) -> Vec<f64> {
    let mut out = Vec::with_capacity(x.len());
    for i in 0..x.nrows() {
        out.extend(x.row(i).iter());
    }
    if x.ncols() == 0 {
        out.resize(x.nrows(), 0.0);
    }
    out
}

#[derive(Debug, Clone, Copy)]
struct Candidate {
    gain: f64,
    feature: usize,
    threshold: f64,
}

fn better(a: Option<Candidate>, b: Option<Candidate>) -> Option<Candidate> {
    match (a, b) {
        (Some(a), Some(b)) => {
            if b.gain > a.gain || (b.gain == a.gain && b.feature < a.feature) {
                Some(b)
            } else {
                Some(a)
            }
        }
        (a, None) => a,
        (None, b) => b,
    }
}

fn midpoint(a: f64, b: f64) -> f64 {
    let t = (a + b) / 2.0;
    if t >= b || t < a { a } else { t }
}

struct Grower<'a> {
    x: &'a DMatrix<f64>,
    /// Per feature, sample indices sorted by value (stable, so ties keep index order).
    order: &'a [Vec<usize>],
    params: &'a GbtParams,
}

impl Grower<'_> {
    fn score(&self, g: f64, h: f64) -> f64 {
        g * g / (h + self.params.reg_lambda)
    }

    /// Grow one tree level by level on gradients `grad` (hessians are 1).
    fn grow(&self, grad: &[f64]) -> Tree {
        let n = grad.len();
        let lambda = self.params.reg_lambda;
        let mut nodes: Vec<Node> = Vec::new();
        // Open leaves of the current level: (node index, G, H).
        let mut node_of = vec![0usize; n];
        let g_total: f64 = grad.iter().sum();
        nodes.push(Node::Leaf {
            value: -g_total / (n as f64 + lambda),
        });
        let mut frontier: Vec<(usize, f64, f64)> = vec![(0, g_total, n as f64)];
        for _depth in 0..self.params.max_depth {
            if frontier.is_empty() {
                break;
            }
            // slot of each open node, usize::MAX for closed ones
            let mut slot = vec![usize::MAX; nodes.len()];
            for (s, (k, _, _)) in frontier.iter().enumerate() {
                slot[*k] = s;
            }
            let best: Vec<Option<Candidate>> = (0..self.x.ncols())
                .into_par_iter()
                .map(|f| self.scan_feature(f, grad, &node_of, &slot, &frontier))
                .reduce(
                    || vec![None; frontier.len()],
                    |a, b| a.into_iter().zip(b).map(|(a, b)| better(a, b)).collect(),
                );
            let mut next = Vec::new();
            let mut child_of: Vec<Option<(usize, usize, usize, f64)>> = vec![None; frontier.len()];
            for (s, cand) in best.into_iter().enumerate() {
                let Some(c) = cand else { continue };
                let k = frontier[s].0;
                let (l, r) = (nodes.len(), nodes.len() + 1);
                nodes.push(Node::Leaf { value: 0.0 });
                nodes.push(Node::Leaf { value: 0.0 });
                nodes[k] = Node::Split {
                    feature: c.feature,
                    threshold: c.threshold,
                    left: l,
                    right: r,
                };
                child_of[s] = Some((l, r, c.feature, c.threshold));
            }
            if child_of.iter().all(Option::is_none) {
                break;
            }
            let mut stats = vec![(0.0, 0.0); nodes.len()];
            for i in 0..n {
                let k = node_of[i];
                if slot.get(k).copied().unwrap_or(usize::MAX) == usize::MAX {
                    continue;
                }
                if let Some((l, r, f, t)) = child_of[slot[k]] {
                    let c = if self.x[(i, f)] <= t { l } else { r };
                    node_of[i] = c;
                    stats[c].0 += grad[i];
                    stats[c].1 += 1.0;
                }
            }
            for (l, r, _, _) in child_of.iter().flatten() {
                for &c in &[*l, *r] {
                    let (g, h) = stats[c];
                    nodes[c] = Node::Leaf { value: -g / (h + lambda) };
                    next.push((c, g, h));
                }
            }
            frontier = next;
        }
        Tree { nodes }
    }

    fn scan_feature(
        &self,
        f: usize,
        grad: &[f64],
        node_of: &[usize],
        slot: &[usize],
        frontier: &[(usize, f64, f64)],
    ) -> Vec<Option<Candidate>> {
        let m = frontier.len();
        let min_leaf = self.params.min_leaf as f64;
        let mut gl = vec![0.0; m];
        let mut hl = vec![0.0; m];
        let mut last = vec![f64::NAN; m];
        let mut best: Vec<Option<Candidate>> = vec![None; m];
        for &i in &self.order[f] {
            let s = slot.get(node_of[i]).copied().unwrap_or(usize::MAX);
            if s == usize::MAX {
                continue;
            }
            let v = self.x[(i, f)];
            if hl[s] > 0.0 && v > last[s] {
                let (g, h) = (frontier[s].1, frontier[s].2);
                let hr = h - hl[s];
                if hl[s] >= min_leaf && hr >= min_leaf {
                    let gain = 0.5 * (self.score(gl[s], hl[s]) + self.score(g - gl[s], hr) - self.score(g, h))
                        - self.params.reg_gamma;
                    if gain > 0.0 && best[s].is_none_or(|b| gain > b.gain) {
                        best[s] = Some(Candidate {
                            gain,
                            feature: f,
                            threshold: midpoint(last[s], v),
                        });
                    }
                }
            }
            gl[s] += grad[i];
            hl[s] += 1.0;
            last[s] = v;
        }
        best
    }
}

fn mse(y: &[f64], pred: &[f64]) -> f64 {
    y.iter().zip(pred).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / y.len() as f64
}

/// Fit a boosted ensemble. Growth stops early once a round finds no split.
pub fn fit_gbt(x: &DMatrix<f64>, y: &[f64], params: &GbtParams) -> Result<BoostedEnsemble> {
    params.validate()?;
    if x.nrows() != y.len() || y.is_empty() {
        return Err(Error::InvalidInput(format!("{} rows but {} targets", x.nrows(), y.len())));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("design or target contains non-finite values".into()));
    }
    let n = y.len();
    let base_score = y.iter().sum::<f64>() / n as f64;
    let mut pred = vec![base_score; n];
    let mut train_mse = vec![mse(y, &pred)];
    let order: Vec<Vec<usize>> = (0..x.ncols())
        .into_par_iter()
        .map(|f| {
            let mut idx: Vec<usize> = (0..n).collect();
            idx.sort_by(|&a, &b| x[(a, f)].total_cmp(&x[(b, f)]));
            idx
        })
        .collect();
    let grower = Grower {
        x,
        order: &order,
        params,
    };
    let rows = row_major(x);
    let width = x.ncols().max(1);
    let mut trees = Vec::new();
    for _ in 0..params.n_rounds {
        let grad: Vec<f64> = pred.iter().zip(y).map(|(p, t)| p - t).collect();
        let tree = grower.grow(&grad);
        if tree.n_splits() == 0 {
            break;
        }
        for (p, row) in pred.iter_mut().zip(rows.chunks(width)) {
            *p += params.learning_rate * tree.predict(row);
        }
        train_mse.push(mse(y, &pred));
        trees.push(tree);
    }
    Ok(BoostedEnsemble {
        trees,
        learning_rate: params.learning_rate,
        max_depth: params.max_depth,
        min_leaf: params.min_leaf,
        n_rounds: params.n_rounds,
        reg_lambda: params.reg_lambda,
        reg_gamma: params.reg_gamma,
        base_score,
        n_features: x.ncols(),
        train_mse,
    })
}
