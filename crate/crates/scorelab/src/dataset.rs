//! Finite training datasets on the line, with the spacing statistics the
//! theory is phrased in: minimal gap `delta = min_i (x_{i+1} - x_i)` and
//! range `x_n - x_1`. Multi-dimensional sample matrices for the diffusion
//! experiments are plain row collections produced by [`sample_gaussian`].

use crate::rng;
use crate::{Error, Result};
use rand_distr::{Distribution, Normal};
use std::fmt::Write as _;
use std::path::Path;

/// Sorted set of distinct finite points `x_1 < x_2 < ... < x_n`, `n >= 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    points: Vec<f64>,
}

impl Dataset {
    /// Sort and validate a point set. Rejects empty input, non-finite
    /// values, and exact duplicates (the minimal-gap statistics the bounds
    /// depend on would degenerate to zero).
    pub fn from_points(mut points: Vec<f64>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::EmptyInput);
        }
        for &p in &points {
            if !p.is_finite() {
                return Err(Error::NonFinite(p));
            }
        }
        points.sort_by(f64::total_cmp);
        for w in points.windows(2) {
            if w[0] == w[1] {
                return Err(Error::DuplicatePoint(w[0]));
            }
        }
        Ok(Dataset { points })
    }

    /// `n` points spaced exactly `delta` apart, starting at `start`.
    pub fn equispaced(n: usize, start: f64, delta: f64) -> Result<Self> {
        if n == 0 {
            return Err(Error::EmptyInput);
        }
        if !(delta > 0.0) || !start.is_finite() || !delta.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "equispaced needs finite start and delta > 0, got start={start}, delta={delta}"
            )));
        }
        Ok(Dataset {
            points: (0..n).map(|i| start + i as f64 * delta).collect(),
        })
    }

    /// `n` sorted draws from `N(0, std^2)`. Duplicate draws would be
    /// rejected; with continuous draws this does not occur in practice.
    pub fn from_gaussian(n: usize, std: f64, seed: u64) -> Result<Self> {
        let rows = sample_gaussian(n, 1, std, seed)?;
        Dataset::from_points(rows.into_iter().map(|r| r[0]).collect())
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn n(&self) -> usize {
        self.points.len()
    }

    pub fn min(&self) -> f64 {
        self.points[0]
    }

    pub fn max(&self) -> f64 {
        *self.points.last().expect("non-empty by construction")
    }

    /// Range `x_n - x_1` (zero for a single point).
    pub fn range(&self) -> f64 {
        self.max() - self.min()
    }

    /// Minimal consecutive gap; `None` when only one point exists.
    pub fn delta(&self) -> Option<f64> {
        self.points
            .windows(2)
            .map(|w| w[1] - w[0])
            .min_by(f64::total_cmp)
    }

    /// Write one point per line.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = String::new();
        for p in &self.points {
            writeln!(text, "{p}").expect("string write");
        }
        std::fs::write(path, text)?;
        Ok(())
    }

    /// Read one point per line, ignoring blank lines and `#` comments.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut points = Vec::new();
        for (idx, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let v: f64 = line
                .parse()
                .map_err(|e| Error::Parse(format!("{}:{}: {e}", path.display(), idx + 1)))?;
            points.push(v);
        }
        Dataset::from_points(points)
    }
}

/// `n` rows of `dim` i.i.d. `N(0, std^2)` coordinates, reproducible from the
/// seed alone.
pub fn sample_gaussian(n: usize, dim: usize, std: f64, seed: u64) -> Result<Vec<Vec<f64>>> {
    if n == 0 || dim == 0 {
        return Err(Error::EmptyInput);
    }
    if !(std > 0.0) || !std.is_finite() {
        return Err(Error::InvalidParameter(format!("std must be positive and finite, got {std}")));
    }
    let normal = Normal::new(0.0, std).expect("validated std");
    let mut rng = rng::stream(seed);
    Ok((0..n)
        .map(|_| (0..dim).map(|_| normal.sample(&mut rng)).collect())
        .collect())
}

/// Write rows as comma-separated values, one row per line.
pub fn save_matrix(rows: &[Vec<f64>], path: &Path) -> Result<()> {
    let mut text = String::new();
    for row in rows {
        let line: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
        writeln!(text, "{}", line.join(",")).expect("string write");
    }
    std::fs::write(path, text)?;
    Ok(())
}

/// Read comma-separated rows; all rows must share one width.
pub fn load_matrix(path: &Path) -> Result<Vec<Vec<f64>>> {
    let text = std::fs::read_to_string(path)?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let row: std::result::Result<Vec<f64>, _> =
            line.split(',').map(|c| c.trim().parse::<f64>()).collect();
        let row = row.map_err(|e| Error::Parse(format!("{}:{}: {e}", path.display(), idx + 1)))?;
        if let Some(first) = rows.first() {
            if row.len() != first.len() {
                return Err(Error::DimensionMismatch { expected: first.len(), got: row.len() });
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::EmptyInput);
    }
    Ok(rows)
}
