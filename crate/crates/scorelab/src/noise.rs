//! Noise levels and the variance-preserving Ornstein-Uhlenbeck schedule
//! `mu(t) = e^{-t}`, `sigma(t) = sqrt(1 - e^{-2t})`, for which
//! `mu^2 + sigma^2 = 1` identically. Free `(mu, sigma)` pairs off that curve
//! are allowed wherever a single smoothing level is studied in isolation.

use crate::dataset::Dataset;
use crate::{Error, Result};
use serde::Serialize;

/// One smoothing level `Y = mu*x + sigma*Z`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NoiseLevel {
    mu: f64,
    sigma: f64,
    /// The diffusion time this level was derived from, when it came off the
    /// schedule rather than from a free pair.
    time: Option<f64>,
}

impl NoiseLevel {
    /// Free pair. Requires `mu in (0, 1]` and `sigma in (0, 1)`.
    pub fn new(mu: f64, sigma: f64) -> Result<Self> {
        if !(mu > 0.0 && mu <= 1.0) || !(sigma > 0.0 && sigma < 1.0) {
            return Err(Error::InvalidNoiseLevel { mu, sigma });
        }
        Ok(NoiseLevel { mu, sigma, time: None })
    }

    /// Point on the schedule at time `t > 0`.
    pub fn from_time(t: f64) -> Result<Self> {
        if !(t > 0.0) || !t.is_finite() {
            return Err(Error::NonPositiveTime(t));
        }
        let mu = (-t).exp();
        let sigma = (1.0 - (-2.0 * t).exp()).sqrt();
        Ok(NoiseLevel { mu, sigma, time: Some(t) })
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    /// Schedule time this level was derived from, if any.
    pub fn time(&self) -> Option<f64> {
        self.time
    }

    /// `sigma^2`, the smoothing variance.
    pub fn var(&self) -> f64 {
        self.sigma * self.sigma
    }
}

/// Equally spaced time grid `t_k = t_min + k (t_max - t_min)/(steps - 1)`,
/// inclusive of both endpoints.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TimeGrid {
    pub t_min: f64,
    pub t_max: f64,
    pub times: Vec<f64>,
}

impl TimeGrid {
    pub fn new(t_min: f64, t_max: f64, steps: usize) -> Result<Self> {
        if !(t_min > 0.0) {
            return Err(Error::NonPositiveTime(t_min));
        }
        if !(t_max > t_min) || steps < 2 {
            return Err(Error::InvalidParameter(format!(
                "time grid needs t_max > t_min > 0 and steps >= 2, got [{t_min}, {t_max}] x {steps}"
            )));
        }
        let h = (t_max - t_min) / (steps - 1) as f64;
        let mut times: Vec<f64> = (0..steps).map(|k| t_min + k as f64 * h).collect();
        // Guard the last entry against rounding drift so t_max is hit exactly.
        *times.last_mut().expect("steps >= 2") = t_max;
        Ok(TimeGrid { t_min, t_max, times })
    }

    pub fn steps(&self) -> usize {
        self.times.len()
    }

    pub fn level(&self, k: usize) -> Result<NoiseLevel> {
        let t = *self.times.get(k).ok_or(Error::IndexOutOfRange {
            index: k,
            min: 0,
            max: self.times.len() - 1,
        })?;
        NoiseLevel::from_time(t)
    }
}

/// One inequality of a premise set: `lhs`, `rhs`, and whether it holds in
/// the direction stated by `description`.
#[derive(Debug, Clone, Serialize)]
pub struct ConditionCheck {
    pub description: String,
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
}

/// The three small-noise premises the sharp lower bounds assume, evaluated
/// on a concrete `(dataset, noise level)` pair:
/// `16 n^3 exp(-mu^2 delta^2 / (4 sigma^2)) <= 1`, `delta >= 2 sigma / mu`,
/// and `delta >= 8 sigma / mu`. A singleton dataset has no gap, so every
/// check is reported as failing.
pub fn small_noise_condition(ds: &Dataset, nl: NoiseLevel) -> Vec<ConditionCheck> {
    let n = ds.n() as f64;
    let (mu, sigma) = (nl.mu(), nl.sigma());
    match ds.delta() {
        Some(delta) => {
            let decay = 16.0 * n.powi(3) * (-mu * mu * delta * delta / (4.0 * sigma * sigma)).exp();
            vec![
                ConditionCheck {
                    description: "16 n^3 exp(-mu^2 delta^2/(4 sigma^2)) <= 1".into(),
                    lhs: decay,
                    rhs: 1.0,
                    holds: decay <= 1.0,
                },
                ConditionCheck {
                    description: "delta >= 2 sigma/mu".into(),
                    lhs: delta,
                    rhs: 2.0 * sigma / mu,
                    holds: delta >= 2.0 * sigma / mu,
                },
                ConditionCheck {
                    description: "delta >= 8 sigma/mu".into(),
                    lhs: delta,
                    rhs: 8.0 * sigma / mu,
                    holds: delta >= 8.0 * sigma / mu,
                },
            ]
        }
        None => vec![ConditionCheck {
            description: "minimal gap defined (n >= 2)".into(),
            lhs: f64::NAN,
            rhs: f64::NAN,
            holds: false,
        }],
    }
}
