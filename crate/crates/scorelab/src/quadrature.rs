//! Shared integration kernels: Gauss-Hermite rules, truncated Gaussian
//! moments, and a refining Simpson integrator for kinked integrands.

use crate::{Error, Result};
use nalgebra::DMatrix;
use statrs::function::erf::erfc;
use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

const SQRT_PI: f64 = 1.772_453_850_905_516;
const SQRT_2: f64 = core::f64::consts::SQRT_2;
const INV_SQRT_TWO_PI: f64 = 0.398_942_280_401_432_7;

/// Gauss-Hermite rule in physicists' convention:
/// `integral e^{-x^2} f(x) dx ~= sum_k w_k f(x_k)`, exact for polynomials of
/// degree `2*order - 1`.
#[derive(Debug, Clone)]
pub struct GaussHermite {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussHermite {
    /// Build the rule by the Golub-Welsch procedure: eigenvalues of the
    /// symmetric tridiagonal Jacobi matrix are the nodes, and the squared
    /// first eigenvector components (times the total mass sqrt(pi)) are the
    /// weights.
    pub fn new(order: usize) -> Result<Self> {
        if order == 0 {
            return Err(Error::InvalidParameter("quadrature order must be >= 1".into()));
        }
        let mut jacobi = DMatrix::<f64>::zeros(order, order);
        for k in 1..order {
            let beta = (k as f64 / 2.0).sqrt();
            jacobi[(k - 1, k)] = beta;
            jacobi[(k, k - 1)] = beta;
        }
        let eig = nalgebra::SymmetricEigen::new(jacobi);
        let mut pairs: Vec<(f64, f64)> = (0..order)
            .map(|i| {
                let v0 = eig.eigenvectors[(0, i)];
                (eig.eigenvalues[i], SQRT_PI * v0 * v0)
            })
            .collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        Ok(GaussHermite {
            nodes: pairs.iter().map(|p| p.0).collect(),
            weights: pairs.iter().map(|p| p.1).collect(),
        })
    }

    /// Shared, memoized rule. Rules are immutable once built.
    pub fn cached(order: usize) -> Result<Arc<GaussHermite>> {
        static CACHE: OnceLock<Mutex<HashMap<usize, Arc<GaussHermite>>>> = OnceLock::new();
        let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
        let mut guard = cache.lock().expect("quadrature cache poisoned");
        if let Some(rule) = guard.get(&order) {
            return Ok(rule.clone());
        }
        let rule = Arc::new(GaussHermite::new(order)?);
        guard.insert(order, rule.clone());
        Ok(rule)
    }

    /// `E[g(Y)]` for `Y ~ N(mean, sd^2)` via the substitution `y = mean + sqrt(2) sd x`.
    pub fn gaussian_expectation(&self, mean: f64, sd: f64, mut g: impl FnMut(f64) -> f64) -> f64 {
        let mut acc = 0.0;
        for (&x, &w) in self.nodes.iter().zip(&self.weights) {
            acc += w * g(mean + SQRT_2 * sd * x);
        }
        acc / SQRT_PI
    }
}

/// Standard normal density.
pub fn normal_pdf(z: f64) -> f64 {
    INV_SQRT_TWO_PI * (-0.5 * z * z).exp()
}

/// Standard normal CDF via erfc, accurate in both tails.
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / SQRT_2)
}

/// `P(alpha <= Z <= beta)` for standard normal `Z`, evaluated so that two
/// same-side tail arguments do not cancel catastrophically.
pub fn normal_prob(alpha: f64, beta: f64) -> f64 {
    if alpha >= 0.0 {
        0.5 * (erfc(alpha / SQRT_2) - erfc(beta / SQRT_2))
    } else if beta <= 0.0 {
        0.5 * (erfc(-beta / SQRT_2) - erfc(-alpha / SQRT_2))
    } else {
        normal_cdf(beta) - normal_cdf(alpha)
    }
}

/// Truncated Gaussian moments over `[lo, hi]` (either end may be infinite):
/// returns `[Z0, Z1, Z2]` with `Zk = E[Y^k 1{lo <= Y <= hi}]` for
/// `Y ~ N(mean, sd^2)`. These make integrals of piecewise polynomials of
/// degree <= 2 against a Gaussian exact up to rounding.
pub fn truncated_moments(mean: f64, sd: f64, lo: f64, hi: f64) -> [f64; 3] {
    debug_assert!(sd > 0.0);
    if lo >= hi {
        return [0.0, 0.0, 0.0];
    }
    let alpha = (lo - mean) / sd;
    let beta = (hi - mean) / sd;
    let pa = if alpha.is_finite() { normal_pdf(alpha) } else { 0.0 };
    let pb = if beta.is_finite() { normal_pdf(beta) } else { 0.0 };
    let apa = if alpha.is_finite() { alpha * pa } else { 0.0 };
    let bpb = if beta.is_finite() { beta * pb } else { 0.0 };
    let z0 = normal_prob(alpha, beta);
    let z1 = mean * z0 + sd * (pa - pb);
    let z2 = mean * mean * z0 + 2.0 * mean * sd * (pa - pb) + sd * sd * (z0 + apa - bpb);
    [z0, z1, z2]
}

/// Composite-Simpson integration refined by interval halving until two
/// successive refinements agree to `rel_tol` relative (with an absolute
/// floor supplied by the caller, so segments that are negligible against a
/// larger total are not over-refined).
///
/// Returns the last estimate and whether the stopping criterion was met
/// within `max_doublings` rounds.
pub fn refining_simpson(
    f: &mut impl FnMut(f64) -> f64,
    a: f64,
    b: f64,
    rel_tol: f64,
    abs_floor: f64,
    max_doublings: usize,
) -> (f64, bool) {
    debug_assert!(a.is_finite() && b.is_finite());
    if a >= b {
        return (0.0, true);
    }
    // Start from 8 panels so narrow interior features are seen before the
    // first convergence test.
    let mut panels = 8usize;
    let h = (b - a) / panels as f64;
    let mut evals: Vec<f64> = (0..=panels).map(|i| f(a + i as f64 * h)).collect();
    let simpson = |vals: &[f64], h: f64| -> f64 {
        let n = vals.len() - 1;
        let mut acc = vals[0] + vals[n];
        for (i, v) in vals.iter().enumerate().take(n).skip(1) {
            acc += if i % 2 == 1 { 4.0 * v } else { 2.0 * v };
        }
        acc * h / 3.0
    };
    let mut prev = simpson(&evals, h);
    for _ in 0..max_doublings {
        panels *= 2;
        let h = (b - a) / panels as f64;
        let mut next_evals = Vec::with_capacity(panels + 1);
        for (i, &v) in evals.iter().enumerate() {
            next_evals.push(v);
            if i < evals.len() - 1 {
                next_evals.push(f(a + (2 * i + 1) as f64 * h));
            }
        }
        evals = next_evals;
        let cur = simpson(&evals, h);
        if (cur - prev).abs() <= rel_tol * cur.abs().max(abs_floor) {
            return (cur, true);
        }
        prev = cur;
    }
    (prev, false)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hermite_order_5_matches_reference_values() {
        let gh = GaussHermite::new(5).unwrap();
        let nodes = [
            -2.020182870456086,
            -0.9585724646138185,
            0.0,
            0.9585724646138185,
            2.020182870456086,
        ];
        let weights = [
            0.019953242059045913,
            0.3936193231522412,
            0.9453087204829419,
            0.3936193231522412,
            0.019953242059045913,
        ];
        for i in 0..5 {
            assert!((gh.nodes[i] - nodes[i]).abs() < 1e-12, "node {i}");
            assert!((gh.weights[i] - weights[i]).abs() < 1e-12, "weight {i}");
        }
    }

    #[test]
    fn hermite_integrates_even_monomials_exactly() {
        // integral e^{-x^2} x^{2k} dx = sqrt(pi) * (2k-1)!! / 2^k
        for order in [8usize, 32, 64, 128] {
            let gh = GaussHermite::new(order).unwrap();
            let moments = [
                SQRT_PI,
                SQRT_PI / 2.0,
                SQRT_PI * 3.0 / 4.0,
                SQRT_PI * 15.0 / 8.0,
            ];
            for (k, want) in moments.iter().enumerate() {
                let got: f64 = gh
                    .nodes
                    .iter()
                    .zip(&gh.weights)
                    .map(|(&x, &w)| w * x.powi(2 * k as i32))
                    .sum();
                assert!(
                    (got - want).abs() < 1e-10 * want,
                    "order {order} moment {k}: {got} vs {want}"
                );
            }
        }
    }

    #[test]
    fn gaussian_expectation_exact_for_cubics() {
        let gh = GaussHermite::new(16).unwrap();
        // E[(Y - 1)^3 + 2 Y] for Y ~ N(3, 4): E[(Y-1)^3] with Y-1 ~ N(2,4):
        // 2^3 + 3*2*4 = 32; plus 2*3 = 6 -> 38.
        let got = gh.gaussian_expectation(3.0, 2.0, |y| (y - 1.0).powi(3) + 2.0 * y);
        assert!((got - 38.0).abs() < 1e-10, "{got}");
    }

    #[test]
    fn truncated_moments_match_dense_simpson() {
        let (mean, sd, lo, hi) = (0.5, 0.8, -1.0, 2.0);
        let want = truncated_moments(mean, sd, lo, hi);
        // Dense-grid oracle.
        let n = 200_000;
        let h = (hi - lo) / n as f64;
        let mut got = [0.0f64; 3];
        for k in 0..3 {
            let g = |y: f64| y.powi(k as i32) * normal_pdf((y - mean) / sd) / sd;
            let mut acc = g(lo) + g(hi);
            for i in 1..n {
                let y = lo + i as f64 * h;
                acc += if i % 2 == 1 { 4.0 * g(y) } else { 2.0 * g(y) };
            }
            got[k] = acc * h / 3.0;
        }
        for k in 0..3 {
            assert!((want[k] - got[k]).abs() < 1e-10, "moment {k}: {} vs {}", want[k], got[k]);
        }
    }

    #[test]
    fn truncated_moments_full_line_recover_gaussian_moments() {
        let m = truncated_moments(-0.7, 1.3, f64::NEG_INFINITY, f64::INFINITY);
        assert!((m[0] - 1.0).abs() < 1e-14);
        assert!((m[1] - -0.7).abs() < 1e-14);
        assert!((m[2] - (0.49 + 1.69)).abs() < 1e-13);
    }

    #[test]
    fn truncated_moments_far_tail_is_nonnegative_and_small() {
        let m = truncated_moments(0.0, 1.0, 9.0, 10.0);
        assert!(m[0] > 0.0 && m[0] < 1e-17);
        assert!(m[1] > 0.0);
    }

    #[test]
    fn refining_simpson_integrates_smooth_function() {
        let mut f = |x: f64| (x * x).sin() + 2.0;
        let (val, ok) = refining_simpson(&mut f, 0.0, 2.0, 1e-10, 1e-300, 24);
        assert!(ok);
        // Reference from a very fine fixed grid.
        let n = 1 << 20;
        let h = 2.0 / n as f64;
        let mut acc = f(0.0) + f(2.0);
        for i in 1..n {
            acc += if i % 2 == 1 { 4.0 * f(i as f64 * h) } else { 2.0 * f(i as f64 * h) };
        }
        let want = acc * h / 3.0;
        assert!((val - want).abs() < 1e-9, "{val} vs {want}");
    }
}
