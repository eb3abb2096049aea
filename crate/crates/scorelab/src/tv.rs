//! Weighted total variation of a score's first derivative.
//!
//! The regularity functional is `integral |s''(y)| pi(y) dy` with the
//! center-favoring weight `pi` of [`crate::weight`]. Two evaluators:
//!
//! - For the analytic optimal score, adaptive Simpson refinement per data
//!   interval. `|s*''|` concentrates in lobes of width `~ sigma^2/(mu gap)`
//!   around the scaled midpoints, so each interval is pre-split at the
//!   midpoint and one lobe-width to either side before refinement.
//! - For a ReLU net, `s'` jumps only at the kinks, so the integral is the
//!   exact finite sum `sum_l |w2_l|/m * pi(tau_l)`.
//!
//! The weight vanishes outside the data hull `[mu x_1, mu x_n]` by
//! definition, so integrating over the hull captures the whole functional:
//! neither evaluator discards any mass, and both report a truncation error
//! of exactly zero.

use crate::dataset::Dataset;
use crate::net::TwoLayerNet;
use crate::noise::NoiseLevel;
use crate::quadrature::refining_simpson;
use crate::score;
use crate::weight::PiEvaluator;
use crate::{Error, Result};
use serde::Serialize;

/// Default relative refinement tolerance for the analytic evaluator.
pub const DEFAULT_TV_REL_TOL: f64 = 1e-4;

/// How a total-variation value was computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum TvMethod {
    Quadrature,
    KinkSum,
}

/// A weighted total-variation evaluation.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct TvReport {
    pub value: f64,
    /// Integrand mass outside the evaluation window. Identically 0 for both
    /// evaluators: the weight vanishes outside the data hull, so the hull
    /// captures the whole integral, and the kink sum covers every kink.
    pub truncation_error_bound: f64,
    pub method: TvMethod,
}

/// `integral |s*''| pi` by per-interval adaptive Simpson.
pub fn tv_of_sstar(ds: &Dataset, nl: NoiseLevel, rel_tol: f64) -> Result<TvReport> {
    let delta = ds.delta().ok_or(Error::InsufficientSample { need: 2, got: ds.n() })?;
    let pi = PiEvaluator::new(ds, nl);
    let mut integrand = |y: f64| score::optimal_d2(ds, nl, y).abs() * pi.pi(y);

    // Assemble refinement pieces: each data interval split at the midpoint
    // and +/- 3 transition widths around it (clipped to the interval). The
    // weight is zero outside the hull, so the intervals cover everything.
    let lobe = 3.0 * nl.var() / (nl.mu() * delta);
    let mut pieces: Vec<(f64, f64)> = Vec::new();
    let pts = ds.points();
    for w in pts.windows(2) {
        let (a, b) = (nl.mu() * w[0], nl.mu() * w[1]);
        let mid = 0.5 * (a + b);
        let mut cuts = vec![a];
        for c in [mid - lobe, mid, mid + lobe] {
            if c > *cuts.last().unwrap() && c < b {
                cuts.push(c);
            }
        }
        cuts.push(b);
        for pair in cuts.windows(2) {
            pieces.push((pair[0], pair[1]));
        }
    }

    // Coarse pass fixes the absolute scale so that nearly-zero pieces are
    // allowed to converge absolutely rather than chasing relative accuracy
    // of numerical noise.
    let mut coarse = 0.0;
    for &(a, b) in &pieces {
        coarse += fixed_simpson(&mut integrand, a, b, 32);
    }
    let floor = rel_tol * coarse.max(f64::MIN_POSITIVE) / pieces.len() as f64;

    let mut total = 0.0;
    let mut all_converged = true;
    for &(a, b) in &pieces {
        let (value, converged) = refining_simpson(&mut integrand, a, b, rel_tol, floor, 14);
        total += value;
        all_converged &= converged;
    }
    if !all_converged {
        return Err(Error::NonConvergentQuadrature { partial: total });
    }
    Ok(TvReport {
        value: total,
        truncation_error_bound: 0.0,
        method: TvMethod::Quadrature,
    })
}

fn fixed_simpson(f: &mut impl FnMut(f64) -> f64, a: f64, b: f64, panels: usize) -> f64 {
    let h = (b - a) / panels as f64;
    if h <= 0.0 {
        return 0.0;
    }
    let mut acc = f(a) + f(b);
    for k in 1..panels {
        let w = if k % 2 == 0 { 2.0 } else { 4.0 };
        acc += w * f(a + h * k as f64);
    }
    acc * h / 3.0
}

/// `integral |s_theta''| pi` as the exact sum over kinks.
pub fn tv_of_net(net: &TwoLayerNet, pi: &PiEvaluator) -> Result<TvReport> {
    let mut total = 0.0;
    for kink in net.kinks()? {
        if kink.mass != 0.0 {
            total += kink.mass.abs() * pi.pi(kink.location);
        }
    }
    Ok(TvReport {
        value: total,
        truncation_error_bound: 0.0,
        method: TvMethod::KinkSum,
    })
}

/// The small-noise analytic lower bound on `tv_of_sstar`, valid whenever
/// `16 n^3 exp(-mu^2 delta^2 / (4 sigma^2)) <= 1`.
pub fn sstar_tv_lower_bound(ds: &Dataset, nl: NoiseLevel) -> Result<f64> {
    let delta = ds.delta().ok_or(Error::InsufficientSample { need: 2, got: ds.n() })?;
    let (mu, sigma) = (nl.mu(), nl.sigma());
    Ok(mu.powi(3) * ds.n() as f64 * delta.powi(3) / (4096.0 * sigma.powi(4)))
}

/// The premise gating [`sstar_tv_lower_bound`].
pub fn sstar_tv_premise(ds: &Dataset, nl: NoiseLevel) -> Result<bool> {
    let delta = ds.delta().ok_or(Error::InsufficientSample { need: 2, got: ds.n() })?;
    let n = ds.n() as f64;
    let e = (-nl.mu() * nl.mu() * delta * delta / (4.0 * nl.var())).exp();
    Ok(16.0 * n * n * n * e <= 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::Mode;
    use crate::rng;
    use rand::Rng;

    #[test]
    fn smooth_score_has_tiny_total_variation() {
        // sigma much larger than the gap: the posterior barely reacts to y,
        // so |s*''| is far below its global pointwise bound.
        let ds = Dataset::from_points(vec![0.0, 0.1]).unwrap();
        let nl = NoiseLevel::new(0.6, 0.8).unwrap();
        let report = tv_of_sstar(&ds, nl, DEFAULT_TV_REL_TOL).unwrap();
        let range = nl.mu() * ds.range();
        let pointwise = nl.mu().powi(3) * ds.range().powi(3) / nl.var().powi(3);
        let crude = pointwise * range * range; // sup |s*''| * sup pi * length
        assert!(report.value >= 0.0);
        assert!(report.value < crude, "{} !< {crude}", report.value);
        assert_eq!(report.truncation_error_bound, 0.0);
    }

    #[test]
    fn symmetric_pair_integrand_is_even() {
        let ds = Dataset::from_points(vec![-1.0, 1.0]).unwrap();
        let nl = NoiseLevel::new(0.9, 0.4).unwrap();
        let pi = PiEvaluator::new(&ds, nl);
        let d2_mid = score::optimal_d2(&ds, nl, 0.0);
        assert!(d2_mid.abs() < 1e-12, "{d2_mid}");
        for y in [0.1, 0.35, 0.7] {
            let left = score::optimal_d2(&ds, nl, -y).abs() * pi.pi(-y);
            let right = score::optimal_d2(&ds, nl, y).abs() * pi.pi(y);
            assert!((left - right).abs() <= 1e-10 * right.abs().max(1e-15));
        }
    }

    #[test]
    fn analytic_tv_is_translation_invariant() {
        let base = Dataset::from_gaussian(6, 1.0, 5).unwrap();
        let shifted =
            Dataset::from_points(base.points().iter().map(|x| x + 3.25).collect()).unwrap();
        let nl = NoiseLevel::new(0.85, 0.3).unwrap();
        let a = tv_of_sstar(&base, nl, 1e-5).unwrap().value;
        let b = tv_of_sstar(&shifted, nl, 1e-5).unwrap().value;
        assert!((a - b).abs() <= 1e-3 * a.abs(), "{a} vs {b}");
    }

    #[test]
    fn net_tv_zero_cases() {
        let ds = Dataset::from_points(vec![0.0, 1.0]).unwrap();
        let nl = NoiseLevel::new(1.0, 0.3).unwrap();
        let pi = PiEvaluator::new(&ds, nl);

        let silent = TwoLayerNet::from_parts(
            Mode::Theory,
            1,
            vec![1.0, -1.0],
            vec![0.0, 0.0],
            vec![0.3, 0.4],
            1.0,
        )
        .unwrap();
        assert_eq!(tv_of_net(&silent, &pi).unwrap().value, 0.0);

        // Kinks far outside [mu x_1, mu x_n]: pi kills every term.
        let outside = TwoLayerNet::from_parts(
            Mode::Theory,
            1,
            vec![1.0, 1.0],
            vec![2.0, -1.0],
            vec![50.0, 90.0],
            5.0,
        )
        .unwrap();
        assert_eq!(tv_of_net(&outside, &pi).unwrap().value, 0.0);
    }

    #[test]
    fn net_tv_matches_finite_difference_jump_pairing() {
        let ds = Dataset::from_points(vec![-0.5, 0.4, 1.3]).unwrap();
        let nl = NoiseLevel::new(0.9, 0.25).unwrap();
        let pi = PiEvaluator::new(&ds, nl);
        let mut net = TwoLayerNet::init(3, 4.0, 8, Mode::Theory, 1).unwrap();
        let mut r = rng::stream(91);
        for b in net.b_mut() {
            *b = r.random_range(-1.0..1.0);
        }
        let report = tv_of_net(&net, &pi).unwrap();

        // Independent pairing: measure each derivative jump by finite
        // differences and weigh it by pi at the jump.
        let eps = 1e-7;
        let mut oracle = 0.0;
        for k in net.kinks().unwrap() {
            let t = k.location;
            let right = (net.forward(t + 2.0 * eps) - net.forward(t + eps)) / eps;
            let left = (net.forward(t - eps) - net.forward(t - 2.0 * eps)) / eps;
            oracle += (right - left).abs() * pi.pi(t);
        }
        assert!(
            (report.value - oracle).abs() <= 1e-6 * oracle.abs().max(1e-12),
            "kink sum {} vs fd pairing {oracle}",
            report.value
        );
    }

    #[test]
    fn net_tv_is_positively_homogeneous_in_outer_weights() {
        let ds = Dataset::from_points(vec![-1.0, 0.0, 1.0]).unwrap();
        let nl = NoiseLevel::new(0.8, 0.3).unwrap();
        let pi = PiEvaluator::new(&ds, nl);
        let net = TwoLayerNet::from_parts(
            Mode::Theory,
            1,
            vec![1.0, -1.0, 1.0],
            vec![0.7, -1.1, 0.4],
            vec![0.2, 0.1, -0.5],
            10.0,
        )
        .unwrap();
        let mut scaled = net.clone();
        for w in scaled.w2_mut() {
            *w *= 3.0;
        }
        let a = tv_of_net(&net, &pi).unwrap().value;
        let b = tv_of_net(&scaled, &pi).unwrap().value;
        assert!((b - 3.0 * a).abs() < 1e-12 * b.abs().max(1e-15));
    }

    #[test]
    fn small_noise_lower_bound_premise_and_value() {
        let ds = Dataset::equispaced(20, 0.0, 1.0).unwrap();
        let tight = NoiseLevel::new(1.0, 0.05).unwrap();
        assert!(sstar_tv_premise(&ds, tight).unwrap());
        let loose = NoiseLevel::new(1.0, 0.5).unwrap();
        assert!(!sstar_tv_premise(&ds, loose).unwrap());
        let bound = sstar_tv_lower_bound(&ds, tight).unwrap();
        assert!((bound - 20.0 / (4096.0 * 0.05f64.powi(4))).abs() < 1e-9 * bound);
    }

    #[test]
    fn analytic_tv_exceeds_small_noise_bound() {
        let ds = Dataset::equispaced(20, 0.0, 1.0).unwrap();
        let nl = NoiseLevel::new(1.0, 0.05).unwrap();
        assert!(sstar_tv_premise(&ds, nl).unwrap());
        let tv = tv_of_sstar(&ds, nl, DEFAULT_TV_REL_TOL).unwrap().value;
        let bound = sstar_tv_lower_bound(&ds, nl).unwrap();
        assert!(tv >= bound, "tv {tv} < bound {bound}");
    }
}
