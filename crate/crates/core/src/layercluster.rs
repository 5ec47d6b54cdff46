//! Spectral clustering of layers and partition-quality measures.

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::simmetrics::SimilarityMatrix;

const RESTARTS: usize = 10;
const MAX_ITERS: usize = 300;
const TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterReport {
    pub k: usize,
    pub assignment: Vec<usize>,
    pub conductance: Vec<f64>,
    pub affinity: Array2<f64>,
}

impl ClusterReport {
    pub fn members(&self, cluster: usize) -> Vec<usize> {
        (0..self.assignment.len())
            .filter(|&i| self.assignment[i] == cluster)
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConsistencySummary {
    pub ari_mean: f64,
    pub ari_std: f64,
    pub conductance_mean: f64,
    pub conductance_std: f64,
}

/// Maps a score matrix onto non-negative weights: off-diagonal entries are
/// min-max scaled to [0, 1] and the diagonal is zeroed.
pub fn to_affinity(mat: &SimilarityMatrix) -> Result<Array2<f64>> {
    let v = &mat.values;
    let n = v.nrows();
    check_square(v.view())?;
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            if v[(i, j)] != v[(j, i)] {
                return Err(Error::MatrixMismatch(format!(
                    "entry ({i}, {j}) is not symmetric"
                )));
            }
            lo = lo.min(v[(i, j)]);
            hi = hi.max(v[(i, j)]);
        }
    }
    if hi.is_nan() || lo.is_nan() || hi <= lo {
        return Err(Error::Degenerate("off-diagonal scores are constant".into()));
    }
    Ok(Array2::from_shape_fn((n, n), |(i, j)| {
        if i == j {
            0.0
        } else {
            (v[(i, j)] - lo) / (hi - lo)
        }
    }))
}

fn check_square(a: ArrayView2<'_, f64>) -> Result<()> {
    if a.nrows() != a.ncols() || a.nrows() == 0 {
        return Err(Error::MatrixMismatch(format!(
            "expected a non-empty square matrix, got {:?}",
            a.dim()
        )));
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteInput);
    }
    Ok(())
}

fn check_affinity(a: ArrayView2<'_, f64>) -> Result<()> {
    check_square(a)?;
    let n = a.nrows();
    for i in 0..n {
        for j in 0..n {
            if a[(i, j)] < 0.0 {
                return Err(Error::MatrixMismatch(format!(
                    "negative affinity at ({i}, {j})"
                )));
            }
            if a[(i, j)] != a[(j, i)] {
                return Err(Error::MatrixMismatch(format!(
                    "entry ({i}, {j}) is not symmetric"
                )));
            }
        }
    }
    Ok(())
}

/// Normalized-cut spectral clustering into `k` groups. Cluster ids are
/// numbered in order of each cluster's smallest member.
pub fn spectral_cluster(
    affinity: ArrayView2<'_, f64>,
    k: usize,
    seed: u64,
) -> Result<ClusterReport> {
    check_affinity(affinity)?;
    let n = affinity.nrows();
    if k < 2 || k > n {
        return Err(Error::InvalidClusterRequest(format!(
            "k = {k} with {n} layers"
        )));
    }
    let degree: Vec<f64> = affinity.outer_iter().map(|row| row.sum()).collect();
    if let Some(i) = degree.iter().position(|&d| d <= 0.0) {
        return Err(Error::ZeroDegree(i));
    }

    let assignment = if k == n {
        (0..n).collect()
    } else {
        let embedding = spectral_embedding(affinity, &degree, k);
        canonical_labels(&kmeans(&embedding, k, seed))
    };

    let mut report = ClusterReport {
        k,
        assignment,
        conductance: Vec::with_capacity(k),
        affinity: affinity.to_owned(),
    };
    for c in 0..k {
        let phi = conductance(affinity, &report.members(c))?;
        report.conductance.push(phi);
    }
    Ok(report)
}

/// Rows of the `k` eigenvectors of the symmetric normalized Laplacian with
/// the smallest eigenvalues, each row scaled to unit length.
fn spectral_embedding(affinity: ArrayView2<'_, f64>, degree: &[f64], k: usize) -> Vec<Vec<f64>> {
    let n = affinity.nrows();
    let inv_sqrt: Vec<f64> = degree.iter().map(|d| 1.0 / d.sqrt()).collect();
    let laplacian = DMatrix::from_fn(n, n, |i, j| {
        let off = affinity[(i, j)] * inv_sqrt[i] * inv_sqrt[j];
        if i == j {
            1.0 - off
        } else {
            -off
        }
    });
    let eig = SymmetricEigen::new(laplacian);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[a]
            .total_cmp(&eig.eigenvalues[b])
            .then(a.cmp(&b))
    });

    (0..n)
        .map(|i| {
            let mut row: Vec<f64> = order[..k]
                .iter()
                .map(|&c| eig.eigenvectors[(i, c)])
                .collect();
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 0.0 {
                row.iter_mut().for_each(|v| *v /= norm);
            }
            row
        })
        .collect()
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(point: &[f64], centers: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, center) in centers.iter().enumerate() {
        let d = sq_dist(point, center);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

/// Best of several seeded k-means++ runs by within-cluster sum of squares.
pub(crate) fn kmeans(points: &[Vec<f64>], k: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<(f64, Vec<usize>)> = None;
    for _ in 0..RESTARTS {
        let centers = plus_plus_init(points, k, &mut rng);
        let (inertia, labels) = lloyd(points, centers);
        if best.as_ref().is_none_or(|(b, _)| inertia < *b) {
            best = Some((inertia, labels));
        }
    }
    best.expect("at least one restart").1
}

fn plus_plus_init(points: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = points.len();
    let mut centers = vec![points[rng.random_range(0..n)].clone()];
    while centers.len() < k {
        let dists: Vec<f64> = points.iter().map(|p| nearest(p, &centers).1).collect();
        let total: f64 = dists.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = n - 1;
            for (i, d) in dists.iter().enumerate() {
                if *d > 0.0 && target < *d {
                    chosen = i;
                    break;
                }
                target -= d;
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        centers.push(points[pick].clone());
    }
    centers
}

fn lloyd(points: &[Vec<f64>], mut centers: Vec<Vec<f64>>) -> (f64, Vec<usize>) {
    let k = centers.len();
    let dim = points[0].len();
    let mut labels = vec![0; points.len()];
    for _ in 0..MAX_ITERS {
        for (p, label) in points.iter().zip(labels.iter_mut()) {
            *label = nearest(p, &centers).0;
        }
        repair_empty(points, &centers, &mut labels, k);

        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &l) in points.iter().zip(&labels) {
            counts[l] += 1;
            sums[l].iter_mut().zip(p).for_each(|(s, v)| *s += v);
        }
        let mut shift: f64 = 0.0;
        for c in 0..k {
            let updated: Vec<f64> = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            shift = shift.max(sq_dist(&updated, &centers[c]).sqrt());
            centers[c] = updated;
        }
        if shift <= TOLERANCE {
            break;
        }
    }
    for (p, label) in points.iter().zip(labels.iter_mut()) {
        *label = nearest(p, &centers).0;
    }
    repair_empty(points, &centers, &mut labels, k);
    let inertia = points
        .iter()
        .zip(&labels)
        .map(|(p, &l)| sq_dist(p, &centers[l]))
        .sum();
    (inertia, labels)
}

/// Gives every empty cluster the point lying farthest from its own center,
/// taken from a cluster that can spare it.
fn repair_empty(points: &[Vec<f64>], centers: &[Vec<f64>], labels: &mut [usize], k: usize) {
    let mut counts = vec![0usize; k];
    for &l in labels.iter() {
        counts[l] += 1;
    }
    for c in 0..k {
        if counts[c] > 0 {
            continue;
        }
        let donor = (0..points.len())
            .filter(|&i| counts[labels[i]] > 1)
            .max_by(|&a, &b| {
                let da = sq_dist(&points[a], &centers[labels[a]]);
                let db = sq_dist(&points[b], &centers[labels[b]]);
                da.total_cmp(&db).then(b.cmp(&a))
            })
            .expect("k <= number of points");
        counts[labels[donor]] -= 1;
        labels[donor] = c;
        counts[c] = 1;
    }
}

/// Renumbers clusters by first appearance.
pub fn canonical_labels(labels: &[usize]) -> Vec<usize> {
    let mut map = std::collections::HashMap::new();
    labels
        .iter()
        .map(|&l| {
            let next = map.len();
            *map.entry(l).or_insert(next)
        })
        .collect()
}

/// Cut weight over the smaller of the two volumes.
pub fn conductance(affinity: ArrayView2<'_, f64>, members: &[usize]) -> Result<f64> {
    let n = affinity.nrows();
    let mut inside = vec![false; n];
    for &m in members {
        if m >= n {
            return Err(Error::InvalidMembers(format!(
                "node {m} out of range for {n} nodes"
            )));
        }
        inside[m] = true;
    }
    let size = inside.iter().filter(|&&b| b).count();
    if size == 0 || size == n {
        return Err(Error::InvalidMembers(
            "member set must be a non-empty proper subset".into(),
        ));
    }
    let (mut cut, mut vol_in, mut vol_out) = (0.0, 0.0, 0.0);
    for i in 0..n {
        let row = affinity.row(i);
        let degree: f64 = row.sum();
        if inside[i] {
            vol_in += degree;
            cut += (0..n).filter(|&j| !inside[j]).map(|j| row[j]).sum::<f64>();
        } else {
            vol_out += degree;
        }
    }
    let denom = f64::min(vol_in, vol_out);
    if denom <= 0.0 {
        return Err(Error::Degenerate(
            "zero volume on one side of the cut".into(),
        ));
    }
    Ok(cut / denom)
}

fn choose2(x: usize) -> f64 {
    (x * x.saturating_sub(1)) as f64 / 2.0
}

/// Hubert-Arabie adjusted Rand index. Two partitions that are both trivial
/// (all singletons, or one block) agree perfectly and score 1.
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch(a.len(), b.len()));
    }
    let (ca, cb) = (canonical_labels(a), canonical_labels(b));
    let ka = ca.iter().max().map_or(0, |m| m + 1);
    let kb = cb.iter().max().map_or(0, |m| m + 1);
    let mut table = vec![vec![0usize; kb]; ka];
    for (&x, &y) in ca.iter().zip(&cb) {
        table[x][y] += 1;
    }
    let index: f64 = table.iter().flatten().map(|&c| choose2(c)).sum();
    let rows: f64 = table.iter().map(|r| choose2(r.iter().sum())).sum();
    let cols: f64 = (0..kb)
        .map(|j| choose2(table.iter().map(|r| r[j]).sum()))
        .sum();
    let pairs = choose2(a.len());
    if pairs == 0.0 {
        return Ok(1.0);
    }
    let expected = rows * cols / pairs;
    let max_index = (rows + cols) / 2.0;
    if max_index == expected {
        return Ok(1.0);
    }
    Ok((index - expected) / (max_index - expected))
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Pairwise ARI and pooled conductance statistics (population standard
/// deviations) across per-sample clusterings.
pub fn consistency_report(reports: &[ClusterReport]) -> Result<ConsistencySummary> {
    if reports.len() < 2 {
        return Err(Error::Inconsistent("need at least two reports".into()));
    }
    let (len, k) = (reports[0].assignment.len(), reports[0].k);
    if let Some(r) = reports
        .iter()
        .find(|r| r.assignment.len() != len || r.k != k)
    {
        return Err(Error::Inconsistent(format!(
            "report with {} layers and k = {} vs {len} layers and k = {k}",
            r.assignment.len(),
            r.k
        )));
    }
    let mut aris = Vec::new();
    for i in 0..reports.len() {
        for j in (i + 1)..reports.len() {
            aris.push(adjusted_rand_index(
                &reports[i].assignment,
                &reports[j].assignment,
            )?);
        }
    }
    let pooled: Vec<f64> = reports
        .iter()
        .flat_map(|r| r.conductance.iter().copied())
        .collect();
    let (ari_mean, ari_std) = mean_std(&aris);
    let (conductance_mean, conductance_std) = mean_std(&pooled);
    Ok(ConsistencySummary {
        ari_mean,
        ari_std,
        conductance_mean,
        conductance_std,
    })
}
