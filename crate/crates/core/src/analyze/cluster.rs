use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::math;
use crate::prelude::*;

/// Default single-linkage cut on points normalized to unit extent.
pub const CLUSTER_THRESHOLD: f64 = 0.01;

/// Flat clustering of the nodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterResult {
    /// Dense labels `0..n_clusters`, numbered by first appearance.
    pub labels: Vec<usize>,
    pub n_clusters: usize,
    /// Accuracy against the true types after optimal label matching, when known.
    pub accuracy: Option<f64>,
    /// Nodes in clusters holding less than 1% of the nodes.
    pub outliers: usize,
}

impl ClusterResult {
    fn from_labels(labels: Vec<usize>) -> Self {
        let n_clusters = labels.iter().max().map_or(0, |m| m + 1);
        let mut sizes = vec![0usize; n_clusters];
        labels.iter().for_each(|&l| sizes[l] += 1);
        let small = 0.01 * labels.len() as f64;
        let outliers = sizes.iter().filter(|&&s| (s as f64) < small).sum();
        ClusterResult {
            labels,
            n_clusters,
            accuracy: None,
            outliers,
        }
    }

    pub fn with_truth(mut self, truth: &[usize]) -> Self {
        self.accuracy = Some(classification_accuracy(&self.labels, truth));
        self
    }

    /// Clusters holding at least 1% of the nodes.
    pub fn major_clusters(&self) -> usize {
        let mut sizes = vec![0usize; self.n_clusters];
        self.labels.iter().for_each(|&l| sizes[l] += 1);
        let small = 0.01 * self.labels.len() as f64;
        sizes.iter().filter(|&&s| s as f64 >= small).count()
    }
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    math::sqrt(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum())
}

/// Agglomerative single-linkage clustering, cut at `threshold`: two points share a
/// cluster iff a chain of points with consecutive distances `<= threshold` joins them.
///
/// Uses the minimum spanning tree (Prim, `O(n^2)`), whose edges are exactly the
/// single-linkage merges.
pub fn hier_cluster(points: &[Vec<f64>], threshold: f64) -> ClusterResult {
    let n = points.len();
    if n < 2 {
        return ClusterResult::from_labels(vec![0; n]);
    }
    let mut in_tree = vec![false; n];
    let mut best = vec![f64::INFINITY; n];
    let mut parent = vec![usize::MAX; n];
    let mut uf = UnionFind::new(n);
    best[0] = 0.0;
    for _ in 0..n {
        let mut u = usize::MAX;
        for v in 0..n {
            if !in_tree[v] && (u == usize::MAX || best[v] < best[u]) {
                u = v;
            }
        }
        in_tree[u] = true;
        if parent[u] != usize::MAX && best[u] <= threshold {
            uf.union(u, parent[u]);
        }
        for v in 0..n {
            if !in_tree[v] {
                let d = dist(&points[u], &points[v]);
                if d < best[v] {
                    best[v] = d;
                    parent[v] = u;
                }
            }
        }
    }
    let mut map = vec![usize::MAX; n];
    let mut next = 0;
    let labels = (0..n)
        .map(|i| {
            let r = uf.find(i);
            if map[r] == usize::MAX {
                map[r] = next;
                next += 1;
            }
            map[r]
        })
        .collect();
    ClusterResult::from_labels(labels)
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.parent[ra.max(rb)] = ra.min(rb);
        }
    }
}

/// Rescales points so the larger side of their bounding box is 1.
pub fn normalize_extent(points: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let Some(first) = points.first() else { return Vec::new() };
    let dim = first.len();
    let mut lo = vec![f64::INFINITY; dim];
    let mut hi = vec![f64::NEG_INFINITY; dim];
    for p in points {
        for k in 0..dim {
            lo[k] = lo[k].min(p[k]);
            hi[k] = hi[k].max(p[k]);
        }
    }
    let extent = (0..dim).map(|k| hi[k] - lo[k]).fold(0.0, f64::max);
    let s = if extent > 0.0 { 1.0 / extent } else { 1.0 };
    points
        .iter()
        .map(|p| (0..dim).map(|k| (p[k] - lo[k]) * s).collect())
        .collect()
}

/// Fraction of nodes correctly labeled under the best one-to-one matching of
/// predicted to true labels. Unmatched predicted labels count as wrong.
pub fn classification_accuracy(labels: &[usize], truth: &[usize]) -> f64 {
    assert_eq!(labels.len(), truth.len(), "label vectors differ in length");
    if labels.is_empty() {
        return 1.0;
    }
    let kp = labels.iter().max().map_or(0, |m| m + 1);
    let kt = truth.iter().max().map_or(0, |m| m + 1);
    let k = kp.max(kt);
    let mut confusion = vec![vec![0.0; k]; k];
    for (&p, &t) in labels.iter().zip(truth) {
        confusion[p][t] += 1.0;
    }
    let cost: Vec<Vec<f64>> = confusion.iter().map(|r| r.iter().map(|c| -c).collect()).collect();
    let assign = hungarian(&cost);
    let matched: f64 = assign.iter().enumerate().map(|(p, &t)| confusion[p][t]).sum();
    matched / labels.len() as f64
}

/// Minimum-cost perfect assignment on a square cost matrix; `result[row] = column`.
pub fn hungarian(cost: &[Vec<f64>]) -> Vec<usize> {
    let n = cost.len();
    // Potentials formulation with 1-based sentinel column 0.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut result = vec![0; n];
    for j in 1..=n {
        if p[j] > 0 {
            result[p[j] - 1] = j - 1;
        }
    }
    result
}

/// Projection of row vectors onto their top two principal components after
/// standardizing each column. Each component's largest-magnitude loading is positive.
pub fn project_profiles(rows: &[Vec<f64>]) -> Vec<[f64; 2]> {
    let n = rows.len();
    if n == 0 {
        return Vec::new();
    }
    let d = rows[0].len();
    let mut x = DMatrix::<f64>::zeros(n, d);
    for k in 0..d {
        let mean = rows.iter().map(|r| r[k]).sum::<f64>() / n as f64;
        let var = rows.iter().map(|r| (r[k] - mean) * (r[k] - mean)).sum::<f64>() / n as f64;
        let sd = math::sqrt(var);
        for (i, r) in rows.iter().enumerate() {
            // Constant columns carry no information and are left at zero.
            x[(i, k)] = if sd > 1e-12 * (1.0 + mean.abs()) { (r[k] - mean) / sd } else { 0.0 };
        }
    }
    let cov = x.transpose() * &x;
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let mut out = vec![[0.0; 2]; n];
    for (c, &k) in order.iter().take(2).enumerate() {
        if eig.eigenvalues[k] <= 1e-12 {
            continue;
        }
        let mut w = eig.eigenvectors.column(k).into_owned();
        let imax = (0..d).max_by(|&a, &b| w[a].abs().total_cmp(&w[b].abs())).unwrap_or(0);
        if w[imax] < 0.0 {
            w = -w;
        }
        let proj = &x * w;
        for i in 0..n {
            out[i][c] = proj[i];
        }
    }
    out
}

/// Single-linkage clusters of 2-D points normalized to unit extent.
pub fn cluster_points(points: &[[f64; 2]], threshold: f64) -> ClusterResult {
    let rows: Vec<Vec<f64>> = points.iter().map(|p| p.to_vec()).collect();
    hier_cluster(&normalize_extent(&rows), threshold)
}
