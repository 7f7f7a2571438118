//! Stock grouping for the clustered scheme: trailing-window correlation matrix,
//! PCA embedding truncated by cumulative explained variance, then K-means++.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorrelationBasis {
    /// Per-bin traded volume.
    Volume,
    /// Standardized feature columns concatenated into one series per stock.
    Features,
}

impl std::str::FromStr for CorrelationBasis {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "volume" => Ok(Self::Volume),
            "features" => Ok(Self::Features),
            _ => Err(Error::Config(format!("unknown correlation basis `{s}` (volume|features)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClusterConfig {
    pub basis: CorrelationBasis,
    pub window_days: usize,
    pub evr_threshold: f64,
    pub k: usize,
    pub restarts: usize,
    pub seed: u64,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        Self {
            basis: CorrelationBasis::Volume,
            window_days: 10,
            evr_threshold: 0.8,
            k: 50,
            restarts: 10,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterModel {
    pub basis: CorrelationBasis,
    pub window_days: usize,
    pub stocks: Vec<String>,
    pub correlation: Vec<Vec<f64>>,
    pub evr_threshold: f64,
    pub evr: Vec<f64>,
    pub n_components: usize,
    pub embedding: Vec<Vec<f64>>,
    pub k: usize,
    /// Cluster id per stock (same order as `stocks`), labelled by first appearance.
    pub assignments: Vec<usize>,
    pub wcss: f64,
    pub seed: u64,
}

impl ClusterModel {
    pub fn cluster_of(&self, stock: &str) -> Option<usize> {
        self.stocks.iter().position(|s| s == stock).map(|i| self.assignments[i])
    }

    pub fn members(&self, cluster: usize) -> Vec<&str> {
        self.stocks
            .iter()
            .zip(&self.assignments)
            .filter(|(_, c)| **c == cluster)
            .map(|(s, _)| s.as_str())
            .collect()
    }

    pub fn n_clusters(&self) -> usize {
        self.assignments.iter().max().map_or(0, |m| m + 1)
    }
}

/// Pearson correlation between every pair of series; diagonal set to exactly 1.
pub fn correlation_matrix(series: &[Vec<f64>], names: &[String]) -> Result<DMatrix<f64>> {
    let n = series.len();
    if names.len() != n {
        return Err(Error::InvalidInput("one name per series required".into()));
    }
    let len = series.first().map_or(0, Vec::len);
    if len < 2 || series.iter().any(|s| s.len() != len) {
        return Err(Error::InvalidInput("series must share a length of at least 2".into()));
    }
    let mut z = Vec::with_capacity(n);
    for (s, name) in series.iter().zip(names) {
        let m = s.iter().sum::<f64>() / len as f64;
        let ss = s.iter().map(|v| (v - m).powi(2)).sum::<f64>().sqrt();
        if !(ss > 1e-12 * (1.0 + m.abs()) * (len as f64).sqrt()) {
            return Err(Error::InvalidInput(format!("series for `{name}` is constant over the window")));
        }
        z.push(s.iter().map(|v| (v - m) / ss).collect::<Vec<f64>>());
    }
    let mut c = DMatrix::identity(n, n);
    for i in 0..n {
        for j in i + 1..n {
            let r = z[i].iter().zip(&z[j]).map(|(a, b)| a * b).sum::<f64>().clamp(-1.0, 1.0);
            c[(i, j)] = r;
            c[(j, i)] = r;
        }
    }
    Ok(c)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    /// N x M, eigenvectors scaled by the square root of their eigenvalues.
    pub points: Vec<Vec<f64>>,
    pub eigenvalues: Vec<f64>,
    pub evr: Vec<f64>,
    pub n_components: usize,
}

/// Smallest `m` whose cumulative explained variance reaches `threshold`.
pub fn select_components(evr: &[f64], threshold: f64) -> usize {
    let mut cum = 0.0;
    for (m, v) in evr.iter().enumerate() {
        cum += v;
        // Tolerance for the cumulative sum landing a rounding error below 1.
        if cum >= threshold - 1e-12 {
            return m + 1;
        }
    }
    evr.len()
}

pub fn pca_embed(correlation: &DMatrix<f64>, evr_threshold: f64) -> Result<Embedding> {
    if !(evr_threshold > 0.0 && evr_threshold <= 1.0) {
        return Err(Error::Config(format!("EVR threshold must be in (0, 1], got {evr_threshold}")));
    }
    let n = correlation.nrows();
    if n == 0 || correlation.ncols() != n {
        return Err(Error::InvalidInput("correlation matrix must be square and non-empty".into()));
    }
    let eig = SymmetricEigen::new(correlation.clone());
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let mut eigenvalues = Vec::with_capacity(n);
    for &k in &order {
        let l = eig.eigenvalues[k];
        if l < -1e-8 {
            return Err(Error::Numerical(format!("matrix is not positive semidefinite (eigenvalue {l:.3e})")));
        }
        eigenvalues.push(l.max(0.0));
    }
    let total: f64 = eigenvalues.iter().sum();
    if !(total > 0.0) {
        return Err(Error::Numerical("matrix has zero trace".into()));
    }
    let evr: Vec<f64> = eigenvalues.iter().map(|l| l / total).collect();
    let m = select_components(&evr, evr_threshold);
    let points = (0..n)
        .map(|i| (0..m).map(|c| eig.eigenvectors[(i, order[c])] * eigenvalues[c].sqrt()).collect())
        .collect();
    Ok(Embedding {
        points,
        eigenvalues,
        evr,
        n_components: m,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    pub assignments: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    pub wcss: f64,
    /// WCSS after each assignment step of the winning restart.
    pub wcss_trace: Vec<f64>,
    pub restart: usize,
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

fn nearest(p: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, cen) in centroids.iter().enumerate() {
        let d = dist2(p, cen);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn seed_centroids(points: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = points.len();
    let mut chosen = vec![rng.random_range(0..n)];
    let mut d2: Vec<f64> = points.iter().map(|p| dist2(p, &points[chosen[0]])).collect();
    while chosen.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut u = rng.random_range(0.0..total);
            let mut pick = n - 1;
            for (i, d) in d2.iter().enumerate() {
                if u < *d {
                    pick = i;
                    break;
                }
                u -= d;
            }
            // Round-off can land on a zero-weight point; take the farthest instead.
            if d2[pick] == 0.0 {
                pick = (0..n).max_by(|&a, &b| d2[a].total_cmp(&d2[b]).then(b.cmp(&a))).expect("n > 0");
            }
            pick
        } else {
            // Remaining points coincide with chosen ones; take the first unused index.
            (0..n).find(|i| !chosen.contains(i)).expect("k <= n")
        };
        chosen.push(next);
        for (i, p) in points.iter().enumerate() {
            d2[i] = d2[i].min(dist2(p, &points[next]));
        }
    }
    chosen.into_iter().map(|i| points[i].clone()).collect()
}

fn lloyd(points: &[Vec<f64>], mut centroids: Vec<Vec<f64>>, restart: usize) -> KMeansResult {
    let n = points.len();
    let k = centroids.len();
    let dim = points[0].len();
    let mut assignments: Vec<usize> = points.iter().map(|p| nearest(p, &centroids).0).collect();
    let mut wcss_trace = Vec::new();
    for _ in 0..300 {
        // Re-seed empty clusters at the point farthest from its centroid.
        loop {
            let mut sizes = vec![0usize; k];
            assignments.iter().for_each(|&c| sizes[c] += 1);
            let Some(empty) = sizes.iter().position(|&s| s == 0) else { break };
            let far = (0..n)
                .filter(|&i| sizes[assignments[i]] > 1)
                .max_by(|&a, &b| {
                    dist2(&points[a], &centroids[assignments[a]])
                        .total_cmp(&dist2(&points[b], &centroids[assignments[b]]))
                        .then(b.cmp(&a))
                })
                .expect("k <= n leaves a cluster with two members");
            centroids[empty] = points[far].clone();
            assignments[far] = empty;
        }
        for (c, cen) in centroids.iter_mut().enumerate() {
            let members: Vec<&Vec<f64>> = (0..n).filter(|&i| assignments[i] == c).map(|i| &points[i]).collect();
            for d in 0..dim {
                cen[d] = members.iter().map(|p| p[d]).sum::<f64>() / members.len() as f64;
            }
        }
        let next: Vec<usize> = points
            .iter()
            .enumerate()
            .map(|(i, p)| {
                // Keep the current cluster on distance ties so the fixed point is reached.
                let (c, d) = nearest(p, &centroids);
                if dist2(p, &centroids[assignments[i]]) <= d { assignments[i] } else { c }
            })
            .collect();
        let wcss: f64 = points.iter().zip(&next).map(|(p, &c)| dist2(p, &centroids[c])).sum();
        wcss_trace.push(wcss);
        let stable = next == assignments;
        assignments = next;
        if stable {
            break;
        }
    }
    let wcss = *wcss_trace.last().expect("at least one iteration");
    KMeansResult {
        assignments,
        centroids,
        wcss,
        wcss_trace,
        restart,
    }
}

/// Relabel clusters in order of first appearance.
fn canonical(assignments: &[usize]) -> Vec<usize> {
    let mut map = std::collections::HashMap::new();
    assignments
        .iter()
        .map(|c| {
            let next = map.len();
            *map.entry(*c).or_insert(next)
        })
        .collect()
}

/// K-means++ seeding plus Lloyd iterations, best of `restarts` by WCSS (ties to the
/// lowest restart index). Restarts run in parallel on independent RNG streams.
pub fn kmeanspp(points: &[Vec<f64>], k: usize, seed: u64, restarts: usize) -> Result<KMeansResult> {
    let n = points.len();
    if k == 0 || k > n {
        return Err(Error::InvalidInput(format!("k must be in 1..={n}, got {k}")));
    }
    if restarts == 0 {
        return Err(Error::Config("restarts must be >= 1".into()));
    }
    let dim = points[0].len();
    if points.iter().any(|p| p.len() != dim || p.iter().any(|v| !v.is_finite())) {
        return Err(Error::InvalidInput("points must share a dimension and be finite".into()));
    }
    let results: Vec<KMeansResult> = (0..restarts)
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(r as u64);
            lloyd(points, seed_centroids(points, k, &mut rng), r)
        })
        .collect();
    let mut best = results
        .into_iter()
        .reduce(|a, b| if b.wcss < a.wcss { b } else { a })
        .expect("restarts >= 1");
    let relabel = canonical(&best.assignments);
    let mut centroids = vec![Vec::new(); k];
    for (old, new) in best.assignments.iter().zip(&relabel) {
        centroids[*new] = best.centroids[*old].clone();
    }
    best.assignments = relabel;
    best.centroids = centroids;
    Ok(best)
}

/// Full pipeline on per-stock series (all of equal length).
pub fn cluster_stocks(stocks: &[String], series: &[Vec<f64>], config: &ClusterConfig) -> Result<ClusterModel> {
    let corr = correlation_matrix(series, stocks)?;
    let emb = pca_embed(&corr, config.evr_threshold)?;
    let k = config.k.min(stocks.len());
    if k < config.k {
        log::warn!("requested {} clusters for {} stocks; using {k}", config.k, stocks.len());
    }
    let km = kmeanspp(&emb.points, k, config.seed, config.restarts)?;
    Ok(ClusterModel {
        basis: config.basis,
        window_days: config.window_days,
        stocks: stocks.to_vec(),
        correlation: corr.row_iter().map(|r| r.iter().copied().collect()).collect(),
        evr_threshold: config.evr_threshold,
        evr: emb.evr,
        n_components: emb.n_components,
        embedding: emb.points,
        k,
        assignments: km.assignments,
        wcss: km.wcss,
        seed: config.seed,
    })
}
