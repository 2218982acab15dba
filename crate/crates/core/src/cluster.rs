//! Hard cluster assignment, Silhouette scoring, and 2-D projection of
//! latent points.

use thiserror::Error;

use crate::rng::Rng;
use crate::tensor::Tensor;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ClusterError {
    #[error("empty probability vector")]
    EmptyProbs,
    #[error("fewer than two non-empty clusters")]
    SingleCluster,
    #[error("need at least {need} points, got {got}")]
    TooFewPoints { need: usize, got: usize },
    #[error("assignment {index} outside 0..{clusters}")]
    BadAssignment { index: usize, clusters: usize },
    #[error("{points} points but {assignments} assignments")]
    LengthMismatch { points: usize, assignments: usize },
}

/// Latent points (`M x D`, row-major) with their cluster labels.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentBatch {
    pub points: Tensor,
    pub assignments: Vec<usize>,
    pub n_clusters: usize,
}

impl LatentBatch {
    pub fn new(points: Tensor, assignments: Vec<usize>, n_clusters: usize) -> Result<Self, ClusterError> {
        let (m, _) = points.matrix_dims();
        if m != assignments.len() {
            return Err(ClusterError::LengthMismatch {
                points: m,
                assignments: assignments.len(),
            });
        }
        if let Some(&bad) = assignments.iter().find(|&&a| a >= n_clusters) {
            return Err(ClusterError::BadAssignment {
                index: bad,
                clusters: n_clusters,
            });
        }
        Ok(Self {
            points,
            assignments,
            n_clusters,
        })
    }

    pub fn len(&self) -> usize {
        self.assignments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assignments.is_empty()
    }

    pub fn sizes(&self) -> Vec<usize> {
        cluster_sizes(&self.assignments, self.n_clusters)
    }
}

pub fn cluster_sizes(assignments: &[usize], n: usize) -> Vec<usize> {
    let mut sizes = vec![0; n];
    assignments.iter().for_each(|&a| sizes[a] += 1);
    sizes
}

#[derive(Clone, Debug, PartialEq)]
pub struct SilhouetteReport {
    pub per_point: Vec<f64>,
    pub mean: f64,
    pub sizes: Vec<usize>,
}

/// Index of the most probable cluster; ties go to the lowest index.
pub fn assign_cluster(probs: &[f64]) -> Result<usize, ClusterError> {
    if probs.is_empty() {
        return Err(ClusterError::EmptyProbs);
    }
    Ok(crate::model::argmax(probs))
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Pairwise Euclidean distances between rows, computed once.
#[derive(Clone, Debug, PartialEq)]
pub struct DistanceMatrix {
    m: usize,
    dist: Vec<f64>,
}

impl DistanceMatrix {
    pub fn new(points: &Tensor) -> Self {
        let (m, d) = points.matrix_dims();
        let data = points.data();
        let row = |i: usize| &data[i * d..(i + 1) * d];
        let mut dist = vec![0.0; m * m];
        for i in 0..m {
            for j in i + 1..m {
                let v = euclidean(row(i), row(j));
                dist[i * m + j] = v;
                dist[j * m + i] = v;
            }
        }
        Self { m, dist }
    }

    pub fn len(&self) -> usize {
        self.m
    }

    pub fn is_empty(&self) -> bool {
        self.m == 0
    }

    /// Silhouette report for a labelling of the same rows.
    pub fn silhouette(&self, assignments: &[usize], n_clusters: usize) -> Result<SilhouetteReport, ClusterError> {
        let m = self.m;
        if assignments.len() != m {
            return Err(ClusterError::LengthMismatch {
                points: m,
                assignments: assignments.len(),
            });
        }
        if m < 2 {
            return Err(ClusterError::TooFewPoints { need: 2, got: m });
        }
        if let Some(&bad) = assignments.iter().find(|&&a| a >= n_clusters) {
            return Err(ClusterError::BadAssignment {
                index: bad,
                clusters: n_clusters,
            });
        }
        let sizes = cluster_sizes(assignments, n_clusters);
        if sizes.iter().filter(|&&s| s > 0).count() < 2 {
            return Err(ClusterError::SingleCluster);
        }
        let mut sums = vec![0.0; n_clusters];
        let mut per_point = Vec::with_capacity(m);
        for i in 0..m {
            sums.iter_mut().for_each(|s| *s = 0.0);
            let row = &self.dist[i * m..(i + 1) * m];
            for (j, &dij) in row.iter().enumerate() {
                if j != i {
                    sums[assignments[j]] += dij;
                }
            }
            let own = assignments[i];
            if sizes[own] == 1 {
                per_point.push(0.0);
                continue;
            }
            let a = sums[own] / (sizes[own] - 1) as f64;
            let b = (0..n_clusters)
                .filter(|&c| c != own && sizes[c] > 0)
                .map(|c| sums[c] / sizes[c] as f64)
                .fold(f64::INFINITY, f64::min);
            let denom = a.max(b);
            per_point.push(if denom == 0.0 { 0.0 } else { (b - a) / denom });
        }
        let mean = per_point.iter().sum::<f64>() / m as f64;
        Ok(SilhouetteReport { per_point, mean, sizes })
    }
}

/// Mean Silhouette coefficient under Euclidean distance.
///
/// `a(i)` is the mean distance to the rest of `i`'s cluster, `b(i)` the
/// smallest mean distance to another non-empty cluster, and
/// `s(i) = (b - a) / max(a, b)`. Points in singleton clusters, and points
/// with `max(a, b) == 0`, score 0.
pub fn silhouette_score(batch: &LatentBatch) -> Result<SilhouetteReport, ClusterError> {
    let m = batch.len();
    if m < 2 {
        return Err(ClusterError::TooFewPoints { need: 2, got: m });
    }
    if batch.sizes().iter().filter(|&&s| s > 0).count() < 2 {
        return Err(ClusterError::SingleCluster);
    }
    DistanceMatrix::new(&batch.points).silhouette(&batch.assignments, batch.n_clusters)
}

/// Fixed seeded subsample of up to `cap` indices from `0..n`, in ascending order.
pub fn subsample_indices(n: usize, cap: usize, seed: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    if n <= cap {
        return idx;
    }
    Rng::new(seed).shuffle(&mut idx);
    idx.truncate(cap);
    idx.sort_unstable();
    idx
}

/// Two unit-variance Gaussian blobs whose centers sit `separation` apart
/// along a random direction through the origin. Returns the points
/// (`per_blob * 2` rows, first blob first) and the true labels.
pub fn two_blobs(seed: u64, per_blob: usize, dim: usize, separation: f64) -> (Tensor, Vec<usize>) {
    let mut rng = Rng::new(seed);
    let mut dir: Vec<f64> = (0..dim).map(|_| rng.normal()).collect();
    let norm = dir.iter().map(|x| x * x).sum::<f64>().sqrt();
    dir.iter_mut().for_each(|x| *x /= norm);
    let mut data = Vec::with_capacity(2 * per_blob * dim);
    let mut labels = Vec::with_capacity(2 * per_blob);
    for (label, side) in [(0, -0.5), (1, 0.5)] {
        for _ in 0..per_blob {
            data.extend(dir.iter().map(|d| side * separation * d + rng.normal()));
            labels.push(label);
        }
    }
    (Tensor::new(vec![2 * per_blob, dim], data).unwrap(), labels)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Projection {
    /// `M x 2`
    pub coords: Tensor,
    /// Set when the data had no variance to project.
    pub degenerate: bool,
}

const PCA_TOL: f64 = 1e-9;
const PCA_MAX_ITERS: usize = 1000;

/// Projects mean-centered rows onto the two leading covariance eigenvectors.
///
/// Eigenvectors come from power iteration with deflation. Each component's
/// sign is fixed so that its largest-magnitude coordinate is positive.
pub fn pca_project_2d(points: &Tensor) -> Result<Projection, ClusterError> {
    let (m, d) = points.matrix_dims();
    if m < 2 {
        return Err(ClusterError::TooFewPoints { need: 2, got: m });
    }
    let data = points.data();
    let mut mean = vec![0.0; d];
    for i in 0..m {
        for j in 0..d {
            mean[j] += data[i * d + j];
        }
    }
    mean.iter_mut().for_each(|v| *v /= m as f64);
    let centered: Vec<f64> = (0..m * d).map(|ij| data[ij] - mean[ij % d]).collect();

    let mut cov = vec![0.0; d * d];
    for i in 0..m {
        let r = &centered[i * d..(i + 1) * d];
        for a in 0..d {
            for b in a..d {
                cov[a * d + b] += r[a] * r[b];
            }
        }
    }
    for a in 0..d {
        for b in a..d {
            let v = cov[a * d + b] / (m - 1) as f64;
            cov[a * d + b] = v;
            cov[b * d + a] = v;
        }
    }

    let trace: f64 = (0..d).map(|a| cov[a * d + a]).sum();
    let mut coords = vec![0.0; m * 2];
    if trace <= f64::EPSILON {
        return Ok(Projection {
            coords: Tensor::new(vec![m, 2], coords).unwrap(),
            degenerate: true,
        });
    }

    for comp in 0..2.min(d) {
        let (lambda, v) = power_iteration(&cov, d, comp);
        if lambda <= trace * 1e-15 {
            break;
        }
        for i in 0..m {
            let r = &centered[i * d..(i + 1) * d];
            coords[i * 2 + comp] = r.iter().zip(&v).map(|(x, y)| x * y).sum();
        }
        // Deflate.
        for a in 0..d {
            for b in 0..d {
                cov[a * d + b] -= lambda * v[a] * v[b];
            }
        }
    }
    Ok(Projection {
        coords: Tensor::new(vec![m, 2], coords).unwrap(),
        degenerate: false,
    })
}

fn power_iteration(cov: &[f64], d: usize, salt: usize) -> (f64, Vec<f64>) {
    // Deterministic, non-axis-aligned start.
    let mut v: Vec<f64> = (0..d).map(|i| 1.0 + ((i + 1) * (salt + 2)) as f64 * 0.1).collect();
    normalize(&mut v);
    let mut lambda = 0.0;
    for _ in 0..PCA_MAX_ITERS {
        let mut w = vec![0.0; d];
        for a in 0..d {
            w[a] = (0..d).map(|b| cov[a * d + b] * v[b]).sum();
        }
        let norm = normalize(&mut w);
        if norm == 0.0 {
            return (0.0, v);
        }
        let delta = v.iter().zip(&w).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        v = w;
        lambda = norm;
        if delta < PCA_TOL {
            break;
        }
    }
    let pivot = v
        .iter()
        .enumerate()
        .fold(0, |best, (i, x)| if x.abs() > v[best].abs() { i } else { best });
    if v[pivot] < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
    }
    (lambda, v)
}

fn normalize(v: &mut [f64]) -> f64 {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    n
}
