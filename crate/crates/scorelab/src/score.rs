//! The empirical optimal score and its derivatives.
//!
//! For data `x_1 < ... < x_n` smoothed to `Y = mu*x_I + sigma*Z` (uniform
//! atom index `I`, standard normal `Z`), the minimizer of the semi-empirical
//! risk is the score of the smoothed empirical measure:
//!
//! ```text
//! s*(y)   = (-y + mu E[W])/sigma^2
//! s*'(y)  = (-1 + (mu^2/sigma^2) V[W])/sigma^2
//! s*''(y) = (mu^3/sigma^6) E[(W - E W)^3]
//! ```
//!
//! where `W = W(y)` is the posterior atom: it takes value `x_i` with the
//! softmax probability `alpha_i(y) ~ exp(-(y - mu x_i)^2 / (2 sigma^2))`.
//! Everything here reduces to weighted moments of that atom law, computed in
//! the log domain so that `sigma` down to 1e-3 and evaluation points up to
//! `1e6 * sigma` stay finite.

use crate::dataset::Dataset;
use crate::noise::NoiseLevel;
use crate::quadrature::GaussHermite;
use crate::rng;
use crate::{Error, Result};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

/// Posterior atom probabilities at one evaluation point.
#[derive(Debug, Clone)]
pub struct SoftmaxWeights {
    pub y: f64,
    pub alphas: Vec<f64>,
}

/// Central moments of the posterior atom law at one evaluation point.
#[derive(Debug, Clone, Copy)]
pub struct AtomMoments {
    pub mean: f64,
    pub var: f64,
    pub third_central: f64,
}

/// Softmax weights `alpha_i(y)`, max-subtracted before exponentiation.
pub fn softmax_weights(ds: &Dataset, nl: NoiseLevel, y: f64) -> SoftmaxWeights {
    let (mu, s2) = (nl.mu(), nl.var());
    let pts = ds.points();
    let mut exponents: Vec<f64> = pts
        .iter()
        .map(|&x| {
            let d = y - mu * x;
            -d * d / (2.0 * s2)
        })
        .collect();
    let max = exponents.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    for e in exponents.iter_mut() {
        *e = (*e - max).exp();
        z += *e;
    }
    for e in exponents.iter_mut() {
        *e /= z;
    }
    SoftmaxWeights { y, alphas: exponents }
}

/// First three central moments of the atom law, allocation-free.
pub fn atom_moments(ds: &Dataset, nl: NoiseLevel, y: f64) -> AtomMoments {
    let (mu, s2) = (nl.mu(), nl.var());
    let pts = ds.points();
    let mut max = f64::NEG_INFINITY;
    for &x in pts {
        let d = y - mu * x;
        max = max.max(-d * d / (2.0 * s2));
    }
    let (mut z, mut m1) = (0.0, 0.0);
    for &x in pts {
        let d = y - mu * x;
        let w = (-d * d / (2.0 * s2) - max).exp();
        z += w;
        m1 += w * x;
    }
    let mean = m1 / z;
    let (mut v, mut t) = (0.0, 0.0);
    for &x in pts {
        let d = y - mu * x;
        let w = (-d * d / (2.0 * s2) - max).exp() / z;
        let c = x - mean;
        v += w * c * c;
        t += w * c * c * c;
    }
    AtomMoments { mean, var: v, third_central: t }
}

/// `s*(y)`: score of the smoothed empirical measure.
pub fn optimal(ds: &Dataset, nl: NoiseLevel, y: f64) -> f64 {
    let m = atom_moments(ds, nl, y);
    (-y + nl.mu() * m.mean) / nl.var()
}

/// Posterior mean deviation `E[W(y)] - x[anchor]`, accumulated from atom
/// differences so the result keeps full relative accuracy even when it is
/// exponentially small. Subtracting `x[anchor]` from `atom_moments(..).mean`
/// would lose everything below one ulp of the coordinates.
pub fn posterior_deviation(ds: &Dataset, nl: NoiseLevel, y: f64, anchor: usize) -> f64 {
    let (mu, s2) = (nl.mu(), nl.var());
    let pts = ds.points();
    let x0 = pts[anchor];
    let mut max = f64::NEG_INFINITY;
    for &x in pts {
        let d = y - mu * x;
        max = max.max(-d * d / (2.0 * s2));
    }
    let (mut z, mut dev) = (0.0, 0.0);
    for &x in pts {
        let d = y - mu * x;
        let w = (-d * d / (2.0 * s2) - max).exp();
        z += w;
        dev += w * (x - x0);
    }
    dev / z
}

/// `s*'(y)` via the posterior variance.
pub fn optimal_d1(ds: &Dataset, nl: NoiseLevel, y: f64) -> f64 {
    let m = atom_moments(ds, nl, y);
    let s2 = nl.var();
    (-1.0 + nl.mu() * nl.mu() * m.var / s2) / s2
}

/// `s*''(y)` via the posterior third central moment.
pub fn optimal_d2(ds: &Dataset, nl: NoiseLevel, y: f64) -> f64 {
    let m = atom_moments(ds, nl, y);
    let s2 = nl.var();
    nl.mu().powi(3) * m.third_central / (s2 * s2 * s2)
}

/// Monte-Carlo estimate of a risk-type expectation, with its standard error.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct RiskEstimate {
    pub estimate: f64,
    pub std_error: f64,
    pub samples: usize,
}

/// `R_n(s*)` estimated by Monte Carlo, next to the analytic small-noise
/// upper bound `(4 mu^2 (x_n - x_1)^2 / sigma^4) exp(-mu^2 delta^2/(32 sigma^2))`.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct OptimalRiskReport {
    pub mc: RiskEstimate,
    pub analytic_bound: f64,
}

/// Risk of `s*` by Monte Carlo over `(atom, noise)` draws.
pub fn optimal_risk_mc(
    ds: &Dataset,
    nl: NoiseLevel,
    mc_samples: usize,
    seed: u64,
) -> Result<OptimalRiskReport> {
    if mc_samples < 100 {
        return Err(Error::InsufficientSample { need: 100, got: mc_samples });
    }
    let mut rng = rng::stream(seed);
    let (mu, sigma) = (nl.mu(), nl.sigma());
    let s2 = nl.var();
    let pts = ds.points();
    let (mut sum, mut sumsq) = (0.0, 0.0);
    for _ in 0..mc_samples {
        let i = rng.random_range(0..pts.len());
        let z: f64 = StandardNormal.sample(&mut rng);
        let y = mu * pts[i] + sigma * z;
        // The residual of s* against atom i reduces algebraically to
        // mu (E[W(y)] - x_i) / sigma^2; evaluating it in that form avoids the
        // catastrophic cancellation of s*(y) against (y - mu x_i)/sigma^2,
        // whose rounding noise would swamp exponentially small risks.
        let g = mu * posterior_deviation(ds, nl, y, i) / s2;
        let g2 = g * g;
        sum += g2;
        sumsq += g2 * g2;
    }
    let nf = mc_samples as f64;
    let mean = sum / nf;
    let var = ((sumsq / nf - mean * mean).max(0.0)) / (nf - 1.0);
    Ok(OptimalRiskReport {
        mc: RiskEstimate { estimate: mean, std_error: var.sqrt(), samples: mc_samples },
        analytic_bound: optimal_risk_analytic_bound(ds, nl),
    })
}

/// The small-noise analytic upper bound on `R_n(s*)`; zero for a singleton
/// dataset where `s*` is exact.
pub fn optimal_risk_analytic_bound(ds: &Dataset, nl: NoiseLevel) -> f64 {
    let range = ds.range();
    if range == 0.0 {
        return 0.0;
    }
    let delta = ds.delta().expect("range > 0 implies n >= 2");
    let (mu, sigma) = (nl.mu(), nl.sigma());
    4.0 * mu * mu * range * range / sigma.powi(4)
        * (-mu * mu * delta * delta / (32.0 * sigma * sigma)).exp()
}

/// Risk of `s*` by per-atom Gauss-Hermite quadrature. The integrand is
/// smooth in `y`, so moderate orders converge quickly at moderate `sigma`.
pub fn optimal_risk_quadrature(ds: &Dataset, nl: NoiseLevel, order: usize) -> Result<f64> {
    let gh = GaussHermite::cached(order)?;
    let (mu, sigma) = (nl.mu(), nl.sigma());
    let s2 = nl.var();
    let pts = ds.points();
    let mut acc = 0.0;
    for (i, &x) in pts.iter().enumerate() {
        acc += gh.gaussian_expectation(mu * x, sigma, |y| {
            let g = mu * posterior_deviation(ds, nl, y, i) / s2;
            g * g
        });
    }
    Ok(acc / pts.len() as f64)
}

/// Explicit bound on the total curvature of `s*` and the pointwise envelope
/// it comes from:
///
/// ```text
/// integral |s*''|  <=  leading * (mu^2 * span + 2 (n-1) sigma^2 / delta),
///     leading = 4 mu^2 (x_n - x_1)^3 / sigma^6,
///     span   = (x_n)_+ - (x_1)_-,
/// |s*''(y)| <= amplitude * exp(-|y| * rate)
///     for y >= upper_start or y <= lower_start.
/// ```
///
/// `clip_constant = max(1, 2 sigma^6 * integral_bound)` sizes the safe outer
/// weight clip `A = clip_constant / sigma^6` for score networks.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct CurvatureTail {
    pub integral_bound: f64,
    pub leading: f64,
    pub envelope_amplitude: f64,
    pub envelope_rate: f64,
    pub upper_start: f64,
    pub lower_start: f64,
    pub clip_constant: f64,
}

/// Tail certificate for the curvature of `s*`. Needs `n >= 2`.
pub fn curvature_tail_bound(ds: &Dataset, nl: NoiseLevel) -> Result<CurvatureTail> {
    let delta = ds.delta().ok_or(Error::InsufficientSample { need: 2, got: ds.n() })?;
    let mu = nl.mu();
    let s2 = nl.var();
    let n = ds.n() as f64;
    let range = ds.range();
    let span = ds.max().max(0.0) - ds.min().min(0.0);
    let leading = 4.0 * mu * mu * range.powi(3) / s2.powi(3);
    let integral_bound = leading * (mu * mu * span + 2.0 * (n - 1.0) * s2 / delta);
    Ok(CurvatureTail {
        integral_bound,
        leading,
        envelope_amplitude: 2.0 * mu.powi(3) * (n - 1.0) * range.powi(3) / s2.powi(3),
        envelope_rate: mu * delta / (2.0 * s2),
        upper_start: 2.0 * mu * ds.max().max(0.0),
        lower_start: 2.0 * mu * ds.min().min(0.0),
        clip_constant: (2.0 * s2.powi(3) * integral_bound).max(1.0),
    })
}

/// The safe outer-weight clip `A = clip_constant / sigma^6`.
pub fn safe_clip_bound(ds: &Dataset, nl: NoiseLevel) -> Result<f64> {
    Ok(curvature_tail_bound(ds, nl)?.clip_constant / nl.var().powi(3))
}
