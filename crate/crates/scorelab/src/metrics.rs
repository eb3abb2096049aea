//! Distribution-distance and memorization metrics: Gaussian-kernel maximum
//! mean discrepancy (unbiased U-statistic), nearest-training-point
//! statistics, and maximum-likelihood Gaussian fits.

use crate::{Error, Result};
use serde::Serialize;

/// MMD estimate between two samples. The unbiased U-statistic for the
/// squared discrepancy can dip below zero for close distributions; the
/// reported `value` is the square root of the floored estimate, with
/// `floored` recording that the raw estimate was negative.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct MmdReport {
    /// `sqrt(max(squared_raw, 0))`.
    pub value: f64,
    /// Unbiased estimate of the squared discrepancy, before flooring.
    pub squared_raw: f64,
    pub floored: bool,
    pub bandwidth: f64,
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn kernel(sq_dist: f64, bandwidth: f64) -> f64 {
    (-sq_dist / (2.0 * bandwidth * bandwidth)).exp()
}

fn check_samples(x: &[Vec<f64>], y: &[Vec<f64>]) -> Result<usize> {
    let dim = match x.first() {
        Some(row) => row.len(),
        None => return Err(Error::EmptyInput),
    };
    if y.is_empty() {
        return Err(Error::EmptyInput);
    }
    for row in x.iter().chain(y.iter()) {
        if row.len() != dim {
            return Err(Error::DimensionMismatch { expected: dim, got: row.len() });
        }
    }
    Ok(dim)
}

/// Unbiased U-statistic estimate of the squared MMD under the kernel
/// `k(x, y) = exp(-|x - y|^2 / (2 bandwidth^2))`, reported through its
/// floored square root. Both samples need at least two rows.
pub fn mmd_gaussian(x: &[Vec<f64>], y: &[Vec<f64>], bandwidth: f64) -> Result<MmdReport> {
    check_samples(x, y)?;
    if !(bandwidth > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "kernel bandwidth must be positive, got {bandwidth}"
        )));
    }
    let (nx, ny) = (x.len(), y.len());
    if nx < 2 || ny < 2 {
        return Err(Error::InsufficientSample { need: 2, got: nx.min(ny) });
    }
    let mut within_x = 0.0;
    for i in 0..nx {
        for j in (i + 1)..nx {
            within_x += kernel(squared_distance(&x[i], &x[j]), bandwidth);
        }
    }
    let mut within_y = 0.0;
    for i in 0..ny {
        for j in (i + 1)..ny {
            within_y += kernel(squared_distance(&y[i], &y[j]), bandwidth);
        }
    }
    let mut cross = 0.0;
    for xi in x {
        for yj in y {
            cross += kernel(squared_distance(xi, yj), bandwidth);
        }
    }
    let squared_raw = 2.0 * within_x / (nx as f64 * (nx - 1) as f64)
        + 2.0 * within_y / (ny as f64 * (ny - 1) as f64)
        - 2.0 * cross / (nx as f64 * ny as f64);
    Ok(MmdReport {
        value: squared_raw.max(0.0).sqrt(),
        squared_raw,
        floored: squared_raw < 0.0,
        bandwidth,
    })
}

/// Summary of distances from each sample row to its nearest training row
/// (brute force over all pairs).
#[derive(Debug, Clone, Serialize)]
pub struct DistanceSummary {
    pub mean: f64,
    pub median: f64,
    pub max: f64,
    /// Equal-width histogram over `[0, max]`.
    pub histogram_edges: Vec<f64>,
    pub histogram_counts: Vec<usize>,
    /// Per-sample nearest distances, sorted ascending.
    pub distances: Vec<f64>,
}

const HISTOGRAM_BINS: usize = 16;

pub fn nearest_train_distance(samples: &[Vec<f64>], train: &[Vec<f64>]) -> Result<DistanceSummary> {
    check_samples(samples, train)?;
    let mut distances: Vec<f64> = samples
        .iter()
        .map(|s| {
            train
                .iter()
                .map(|t| squared_distance(s, t))
                .fold(f64::INFINITY, f64::min)
                .sqrt()
        })
        .collect();
    distances.sort_by(f64::total_cmp);
    let n = distances.len();
    let mean = distances.iter().sum::<f64>() / n as f64;
    let median = if n % 2 == 1 {
        distances[n / 2]
    } else {
        0.5 * (distances[n / 2 - 1] + distances[n / 2])
    };
    let max = *distances.last().expect("non-empty");
    let width = if max > 0.0 { max / HISTOGRAM_BINS as f64 } else { 1.0 };
    let histogram_edges: Vec<f64> = (0..=HISTOGRAM_BINS).map(|k| k as f64 * width).collect();
    let mut histogram_counts = vec![0usize; HISTOGRAM_BINS];
    for &d in &distances {
        let bin = ((d / width) as usize).min(HISTOGRAM_BINS - 1);
        histogram_counts[bin] += 1;
    }
    Ok(DistanceSummary { mean, median, max, histogram_edges, histogram_counts, distances })
}

/// Mean Euclidean distance over all unordered row pairs. Needs two rows.
pub fn mean_pairwise_distance(rows: &[Vec<f64>]) -> Result<f64> {
    if rows.len() < 2 {
        return Err(Error::InsufficientSample { need: 2, got: rows.len() });
    }
    check_samples(rows, rows)?;
    let mut total = 0.0;
    let mut count = 0usize;
    for i in 0..rows.len() {
        for j in (i + 1)..rows.len() {
            total += squared_distance(&rows[i], &rows[j]).sqrt();
            count += 1;
        }
    }
    Ok(total / count as f64)
}

/// Maximum-likelihood Gaussian fit: sample mean and `1/n`-normalized
/// covariance. `degenerate` flags a covariance without full support
/// (fewer rows than dimensions, or numerically singular).
#[derive(Debug, Clone, Serialize)]
pub struct GaussianFit {
    pub mean: Vec<f64>,
    /// Row-major `d x d` covariance with the `1/n` convention.
    pub covariance: Vec<Vec<f64>>,
    pub degenerate: bool,
}

pub fn gaussian_fit(rows: &[Vec<f64>]) -> Result<GaussianFit> {
    check_samples(rows, rows)?;
    let n = rows.len();
    let d = rows[0].len();
    let mut mean = vec![0.0; d];
    for row in rows {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    for m in mean.iter_mut() {
        *m /= n as f64;
    }
    let mut covariance = vec![vec![0.0; d]; d];
    for row in rows {
        for a in 0..d {
            let da = row[a] - mean[a];
            for b in a..d {
                covariance[a][b] += da * (row[b] - mean[b]);
            }
        }
    }
    for a in 0..d {
        for b in a..d {
            covariance[a][b] /= n as f64;
            covariance[b][a] = covariance[a][b];
        }
    }
    let matrix = nalgebra::DMatrix::from_fn(d, d, |i, j| covariance[i][j]);
    let degenerate = n <= d || matrix.cholesky().is_none();
    Ok(GaussianFit { mean, covariance, degenerate })
}
