//! The center-favoring weight function used by the weighted total variation.
//!
//! For a uniform draw `U` from the dataset and scaled atoms `z_i = mu x_i`,
//!
//! ```text
//! pi_minus(u) = P(mu U < u)^2 * E[u - mu U | mu U < u]
//! pi_plus(u)  = P(mu U > u)^2 * E[mu U - u | mu U > u]
//! pi(y)       = E_{xi ~ N(0, sigma^2)} [ min(pi_minus, pi_plus)(y - xi) ]
//!               for y in [mu x_1, mu x_n], and 0 outside that interval.
//! ```
//!
//! Between consecutive scaled atoms both one-sided pieces are affine in `u`
//! (coefficients come from prefix sums over the sorted atoms), so their
//! pointwise minimum is affine on at most two sub-intervals per gap, and the
//! Gaussian expectation has a closed form in normal cdf/pdf terms. `pi` is
//! therefore evaluated exactly up to rounding — which matters, because the
//! raw minimum jumps at interior atoms and defeats generic quadrature. The
//! weight is cut off to zero outside the data hull, grows toward the center,
//! and is bounded by `mu (x_n - x_1)` everywhere.

use crate::dataset::Dataset;
use crate::noise::NoiseLevel;
use crate::quadrature::{normal_pdf, normal_prob};
use crate::{Error, Result};

/// One affine piece `slope * (u - anchor)` of the raw weight on `[lo, hi]`.
#[derive(Debug, Clone, Copy)]
struct Segment {
    lo: f64,
    hi: f64,
    slope: f64,
    anchor: f64,
}

impl Segment {
    /// Integral of `slope * (u - anchor)` against the `N(y, sigma^2)` density
    /// over `[lo, hi]`. The affine factor is re-anchored at `y`, so large
    /// atom coordinates never cancel against each other.
    fn gaussian_integral(&self, y: f64, sigma: f64) -> f64 {
        let alpha = (self.lo - y) / sigma;
        let beta = (self.hi - y) / sigma;
        let mass = normal_prob(alpha, beta);
        let dphi = normal_pdf(alpha) - normal_pdf(beta);
        // The integrand is nonnegative on every stored piece; clamp away the
        // odd negative ulp from differencing near-equal terms.
        (self.slope * ((y - self.anchor) * mass + sigma * dphi)).max(0.0)
    }
}

/// Evaluator for the smoothed weight over one dataset and noise level.
#[derive(Debug, Clone)]
pub struct PiEvaluator {
    /// Sorted scaled atoms `mu * x_i`.
    scaled: Vec<f64>,
    /// `prefix[k]` = sum of the first `k` scaled atoms.
    prefix: Vec<f64>,
    /// Affine pieces of `min(pi_minus, pi_plus)` between consecutive atoms.
    segments: Vec<Segment>,
    mu: f64,
    sigma: f64,
    range: f64,
    delta: Option<f64>,
}

impl PiEvaluator {
    pub fn new(ds: &Dataset, nl: NoiseLevel) -> Self {
        let scaled: Vec<f64> = ds.points().iter().map(|&x| nl.mu() * x).collect();
        let n = scaled.len();
        let mut prefix = Vec::with_capacity(n + 1);
        prefix.push(0.0);
        let mut acc = 0.0;
        for &z in &scaled {
            acc += z;
            prefix.push(acc);
        }
        let nf = n as f64;
        let total = prefix[n];
        let mut segments = Vec::with_capacity(2 * n.saturating_sub(1));
        for j in 0..n.saturating_sub(1) {
            let (lo, hi) = (scaled[j], scaled[j + 1]);
            let below = (j + 1) as f64;
            let above = (n - j - 1) as f64;
            let c_minus = (below / nf) * (below / nf);
            let anchor_minus = prefix[j + 1] / below;
            let c_plus = (above / nf) * (above / nf);
            let anchor_plus = (total - prefix[j + 1]) / above;
            // Between these two atoms, pi_minus = c_minus (u - anchor_minus)
            // rises and pi_plus = c_plus (anchor_plus - u) falls, so their
            // minimum switches from the rising to the falling piece at the
            // single crossing point (clamped to the gap).
            let cross = (c_minus * anchor_minus + c_plus * anchor_plus) / (c_minus + c_plus);
            if cross <= lo {
                segments.push(Segment { lo, hi, slope: -c_plus, anchor: anchor_plus });
            } else if cross >= hi {
                segments.push(Segment { lo, hi, slope: c_minus, anchor: anchor_minus });
            } else {
                segments.push(Segment { lo, hi: cross, slope: c_minus, anchor: anchor_minus });
                segments.push(Segment { lo: cross, hi, slope: -c_plus, anchor: anchor_plus });
            }
        }
        Self {
            scaled,
            prefix,
            segments,
            mu: nl.mu(),
            sigma: nl.sigma(),
            range: ds.range(),
            delta: ds.delta(),
        }
    }

    pub fn n(&self) -> usize {
        self.scaled.len()
    }

    /// Convex hull `[mu x_1, mu x_n]` of the scaled atoms; the weight is
    /// defined to be zero outside this interval.
    pub fn support(&self) -> (f64, f64) {
        (self.scaled[0], *self.scaled.last().unwrap())
    }

    /// Global upper bound `mu (x_n - x_1)`.
    pub fn upper_bound(&self) -> f64 {
        self.mu * self.range
    }

    /// `pi_minus` as an exact finite sum; the conditioning event `mu U < y`
    /// is strict, so the bound atom itself never counts.
    pub fn pi_minus(&self, y: f64) -> f64 {
        let k = self.scaled.partition_point(|&z| z < y);
        if k == 0 {
            return 0.0;
        }
        let frac = k as f64 / self.n() as f64;
        frac * frac * (y - self.prefix[k] / k as f64)
    }

    /// `pi_plus`, mirror image of [`pi_minus`](Self::pi_minus).
    pub fn pi_plus(&self, y: f64) -> f64 {
        let below_or_eq = self.scaled.partition_point(|&z| z <= y);
        let k = self.n() - below_or_eq;
        if k == 0 {
            return 0.0;
        }
        let above_sum = self.prefix[self.n()] - self.prefix[below_or_eq];
        let frac = k as f64 / self.n() as f64;
        frac * frac * (above_sum / k as f64 - y)
    }

    /// The smaller of the two one-sided weights, before smoothing.
    pub fn pi_raw(&self, y: f64) -> f64 {
        self.pi_plus(y).min(self.pi_minus(y))
    }

    /// The smoothed weight `pi(y)`: zero outside the data hull by definition,
    /// and inside it the Gaussian expectation of the raw minimum, summed in
    /// closed form over the affine pieces. Exact up to rounding.
    pub fn pi(&self, y: f64) -> f64 {
        let (lo, hi) = self.support();
        if y < lo || y > hi {
            return 0.0;
        }
        self.segments
            .iter()
            .map(|s| s.gaussian_integral(y, self.sigma))
            .sum()
    }

    /// Analytic lower bound for `pi` on the interval `[mu x_i, mu x_{i+1}]`
    /// (`i` is 1-based, `1 <= i <= n-1`), in terms of the minimal gap.
    /// Boundary intervals get 0; large `sigma` can make the bound negative,
    /// which is valid but vacuous.
    pub fn lower_bound_on_interval(&self, i: usize) -> Result<f64> {
        let n = self.n();
        if n < 2 {
            return Err(Error::InsufficientSample { need: 2, got: n });
        }
        if i < 1 || i > n - 1 {
            return Err(Error::IndexOutOfRange { index: i, min: 1, max: n - 1 });
        }
        let delta = self.delta.expect("n >= 2 has a minimal gap");
        let nf = n as f64;
        let (i, n) = (i as f64, nf);
        let left = i * i * (i - 1.0) / 2.0;
        let right = (n - i) * (n - i) * (n - i - 1.0) / 2.0;
        let damping = 0.5
            - (-self.mu * self.mu * delta * delta / (2.0 * self.sigma * self.sigma)).exp();
        Ok(self.mu / (nf * nf) * damping * left.min(right) * delta)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::normal_cdf;
    use crate::rng;
    use rand_distr::{Distribution, Normal};

    fn evaluator(points: &[f64], mu: f64, sigma: f64) -> PiEvaluator {
        let ds = Dataset::from_points(points.to_vec()).unwrap();
        PiEvaluator::new(&ds, NoiseLevel::new(mu, sigma).unwrap())
    }

    #[test]
    fn two_point_midpoint_is_symmetric() {
        let ev = evaluator(&[0.0, 1.0], 1.0, 0.3);
        assert_eq!(ev.pi_minus(0.5), 0.125);
        assert_eq!(ev.pi_plus(0.5), 0.125);
    }

    #[test]
    fn one_sided_weights_vanish_with_empty_event() {
        let ev = evaluator(&[0.0, 1.0, 2.5], 0.8, 0.3);
        // Strictly below the smallest scaled atom there is nothing to
        // condition on; exactly at an atom the strict inequality drops it.
        assert_eq!(ev.pi_minus(0.0), 0.0);
        assert_eq!(ev.pi_minus(-3.0), 0.0);
        assert_eq!(ev.pi_plus(0.8 * 2.5), 0.0);
        assert_eq!(ev.pi_plus(9.0), 0.0);
    }

    #[test]
    fn one_sided_weights_match_atom_enumeration() {
        let ds = Dataset::from_gaussian(7, 1.0, 11).unwrap();
        let nl = NoiseLevel::new(0.85, 0.4).unwrap();
        let ev = PiEvaluator::new(&ds, nl);
        let n = ds.n() as f64;
        for y in [-1.4, -0.2, 0.05, 0.9, 1.7] {
            // Brute force over the uniform atom draw.
            let below: Vec<f64> = ds
                .points()
                .iter()
                .map(|&x| nl.mu() * x)
                .filter(|&z| z < y)
                .collect();
            let above: Vec<f64> = ds
                .points()
                .iter()
                .map(|&x| nl.mu() * x)
                .filter(|&z| z > y)
                .collect();
            let want_minus = if below.is_empty() {
                0.0
            } else {
                let p = below.len() as f64 / n;
                p * p * (y - below.iter().sum::<f64>() / below.len() as f64)
            };
            let want_plus = if above.is_empty() {
                0.0
            } else {
                let p = above.len() as f64 / n;
                p * p * (above.iter().sum::<f64>() / above.len() as f64 - y)
            };
            assert!((ev.pi_minus(y) - want_minus).abs() < 1e-14, "y={y}");
            assert!((ev.pi_plus(y) - want_plus).abs() < 1e-14, "y={y}");
        }
    }

    #[test]
    fn smoothed_weight_vanishes_outside_the_hull() {
        let sigma = 0.25;
        let ev = evaluator(&[-1.0, 0.0, 2.0], 0.9, sigma);
        let (lo, hi) = ev.support();
        // Exactly zero for any point beyond the scaled data hull, however
        // close, while points on and just inside the ends stay nonnegative
        // (the convolution itself is positive there, the cutoff is what
        // forces zero outside).
        assert_eq!(ev.pi(lo - 1e-9), 0.0);
        assert_eq!(ev.pi(hi + 1e-9), 0.0);
        assert_eq!(ev.pi(lo - 5.0), 0.0);
        assert_eq!(ev.pi(hi + 5.0), 0.0);
        assert!(ev.pi(lo) > 0.0);
        assert!(ev.pi(hi) > 0.0);
        assert!(ev.pi(lo + 1e-9) > 0.0);
        assert!(ev.pi(hi - 1e-9) > 0.0);
    }

    #[test]
    fn two_point_weight_matches_hand_integral() {
        // Atoms {0, 1} at mu = 1: the raw minimum is min(u, 1 - u)/4 on the
        // hull and 0 outside, so at the midpoint
        //   pi(1/2) = E[(1/2 - |xi|)_+]/4
        //           = [ (1/2) P(|xi| <= 1/2) - 2 sigma (phi(0) - phi(h)) ]/4
        // with h = 1/(2 sigma) in standard units.
        let sigma = 0.3;
        let ev = evaluator(&[0.0, 1.0], 1.0, sigma);
        let h = 0.5 / sigma;
        let want = (0.5 * (2.0 * normal_cdf(h) - 1.0)
            - 2.0 * sigma * (normal_pdf(0.0) - normal_pdf(h)))
            / 4.0;
        let got = ev.pi(0.5);
        assert!((got - want).abs() < 1e-13 * want, "{got} vs {want}");
        // Off the midpoint, integrate the two affine pieces by hand.
        for y in [0.1, 0.37, 0.62, 0.94] {
            let piece = |a: f64, b: f64, rising: bool| {
                let alpha = (a - y) / sigma;
                let beta = (b - y) / sigma;
                let mass = normal_prob(alpha, beta);
                let mean = y * mass + sigma * (normal_pdf(alpha) - normal_pdf(beta));
                if rising { mean } else { mass - mean }
            };
            let want = (piece(0.0, 0.5, true) + piece(0.5, 1.0, false)) / 4.0;
            let got = ev.pi(y);
            assert!((got - want).abs() < 1e-13 * want.max(1e-300), "y={y}: {got} vs {want}");
        }
        // Past the hull the definition overrides the convolution.
        assert_eq!(ev.pi(1.3), 0.0);
        assert_eq!(ev.pi(-0.3), 0.0);
    }

    #[test]
    fn smoothed_weight_respects_global_bounds() {
        let ev = evaluator(&[-1.2, -0.3, 0.4, 0.9, 2.1], 0.8, 0.35);
        let (lo, hi) = ev.support();
        for k in 0..=200 {
            let y = lo + (hi - lo) * k as f64 / 200.0;
            let p = ev.pi(y);
            assert!(p >= 0.0, "pi({y}) = {p}");
            assert!(p <= ev.upper_bound() + 1e-12, "pi({y}) = {p}");
        }
    }

    #[test]
    fn closed_form_matches_monte_carlo() {
        let ds = Dataset::from_gaussian(5, 1.0, 17).unwrap();
        let nl = NoiseLevel::new(0.9, 0.3).unwrap();
        let ev = PiEvaluator::new(&ds, nl);
        let (lo, hi) = ev.support();
        let y = 0.35 * lo + 0.65 * hi;
        let noise = Normal::new(0.0, nl.sigma()).unwrap();
        let mut rng = rng::stream(23);
        let n_draws = 1_000_000;
        let (mut sum, mut sumsq) = (0.0, 0.0);
        for _ in 0..n_draws {
            let xi = noise.sample(&mut rng);
            let v = ev.pi_raw(y - xi);
            sum += v;
            sumsq += v * v;
        }
        let mean = sum / n_draws as f64;
        let se = ((sumsq / n_draws as f64 - mean * mean) / (n_draws as f64 - 1.0)).sqrt();
        let exact = ev.pi(y);
        assert!(
            (exact - mean).abs() <= 3.0 * se,
            "closed form {exact} vs mc {mean} +/- {se}"
        );
    }

    #[test]
    fn interval_lower_bound_edges_and_symmetry() {
        let ds = Dataset::equispaced(12, 0.0, 1.0).unwrap();
        let nl = NoiseLevel::new(1.0, 0.05).unwrap();
        let ev = PiEvaluator::new(&ds, nl);
        assert_eq!(ev.lower_bound_on_interval(1).unwrap(), 0.0);
        assert_eq!(ev.lower_bound_on_interval(11).unwrap(), 0.0);
        for i in 1..=11usize {
            let a = ev.lower_bound_on_interval(i).unwrap();
            let b = ev.lower_bound_on_interval(12 - i).unwrap();
            assert!((a - b).abs() < 1e-15, "i={i}: {a} vs {b}");
        }
        assert!(matches!(
            ev.lower_bound_on_interval(0),
            Err(Error::IndexOutOfRange { .. })
        ));
        assert!(matches!(
            ev.lower_bound_on_interval(12),
            Err(Error::IndexOutOfRange { .. })
        ));
    }

    #[test]
    fn central_interval_bound_holds_on_grid() {
        let ds = Dataset::equispaced(20, 0.0, 1.0).unwrap();
        let nl = NoiseLevel::new(1.0, 0.05).unwrap();
        let ev = PiEvaluator::new(&ds, nl);
        let bound = ev.lower_bound_on_interval(10).unwrap();
        assert!(bound > 0.0);
        let (lo, hi) = (nl.mu() * 9.0, nl.mu() * 10.0);
        let min_pi = (0..=100)
            .map(|k| ev.pi(lo + (hi - lo) * k as f64 / 100.0))
            .fold(f64::INFINITY, f64::min);
        assert!(min_pi >= bound, "grid min {min_pi} < bound {bound}");
    }

    #[test]
    fn reflection_of_dataset_reflects_weight() {
        let pts = [-0.9, -0.1, 0.7, 1.8];
        let c = 0.45; // arbitrary reflection center
        let mirrored: Vec<f64> = pts.iter().rev().map(|&x| 2.0 * c - x).collect();
        let a = evaluator(&pts, 0.8, 0.3);
        let b = evaluator(&mirrored, 0.8, 0.3);
        for y in [-0.5, 0.0, 0.4, 1.0, 1.3] {
            let mirrored_y = 2.0 * 0.8 * c - y;
            assert!(
                (a.pi(y) - b.pi(mirrored_y)).abs() < 1e-12,
                "y={y}: {} vs {}",
                a.pi(y),
                b.pi(mirrored_y)
            );
        }
    }
}
