//! Exact risk Hessian for theory-mode nets, and its largest eigenvalue.
//!
//! With parameters ordered `(w2_0..w2_{m-1}, b_0..b_{m-1})`, the Hessian of
//! the risk splits into three exactly computable terms:
//!
//! 1. **Tangent-kernel term** `(2/n) sum_i E[grad s (grad s)^T]`. On each
//!    segment between kinks the parameter gradient is affine in `y`,
//!    `g(y) = a_S + y c_S`, so each atom-segment cell contributes the rank-2
//!    combination `a a^T Z0 + (a c^T + c a^T) Z1 + c c^T Z2` of truncated
//!    Gaussian moments.
//! 2. **Cross term**: `d^2 s / d w2_l d b_l = (1/m) 1{active}` gives
//!    `t_l = (2/(n m)) sum_i E[f_i(Y); neuron l active]` at the two
//!    `(w2_l, b_l)` off-diagonal positions.
//! 3. **Boundary term**: the activation indicator's dependence on `b_l`
//!    differentiates to a point mass at the kink, adding
//!    `d_l = (2/(n m)) w2_l sum_i f_i(tau_l) N(tau_l; mu x_i, sigma^2)`
//!    on the `(b_l, b_l)` diagonal. This distributional piece is exactly
//!    what finite differences of the exact risk must reproduce — the
//!    decisive correctness test.
//!
//! Small problems are assembled densely (exactly symmetric by
//! construction); large ones use a matrix-free operator whose products cost
//! `O(m)` after an `O(n m)` setup, via suffix sums over the segment walk.

use crate::dataset::Dataset;
use crate::net::TwoLayerNet;
use crate::noise::NoiseLevel;
use crate::quadrature::normal_pdf;
use crate::risk::{MomentTable, SegmentWalk};
use crate::{Error, Result};
use nalgebra::{DMatrix, DVector};
use serde::Serialize;

/// Dense assembly is used when the parameter count `2m` is at most this.
pub const DENSE_LIMIT: usize = 512;

/// Default power-iteration controls.
pub const DEFAULT_TOL: f64 = 1e-6;
pub const DEFAULT_MAX_ITERS: usize = 20_000;

/// Which terms an operator carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Terms {
    /// All three Hessian terms with the `2/n` scale.
    Full,
    /// Only the tangent-kernel expectation with the `1/n` scale.
    NtkOnly,
}

/// Matrix-free exact Hessian (or NTK) operator.
#[derive(Debug, Clone)]
pub struct ExactHessian {
    m: usize,
    n: usize,
    ntk_scale: f64,
    /// Neuron index per sorted kink position.
    order: Vec<usize>,
    /// Activation toggle per sorted kink: +1 activates, -1 deactivates.
    toggle: Vec<f64>,
    /// Per-kink sparse gradient increments (coords `l` and `m + l`).
    da_w2: Vec<f64>,
    da_b: Vec<f64>,
    dc_w2: Vec<f64>,
    /// Neurons active on the leftmost segment.
    initial_active: Vec<usize>,
    /// Atom-summed truncated moments per segment.
    m0: Vec<f64>,
    m1: Vec<f64>,
    m2: Vec<f64>,
    /// Net parameters (copied; the operator outlives borrows).
    w1: Vec<f64>,
    w2: Vec<f64>,
    b: Vec<f64>,
    /// Cross-term entries per neuron (zero for NTK-only).
    t: Vec<f64>,
    /// Boundary diagonal entries per neuron (zero for NTK-only).
    d: Vec<f64>,
    /// Active-segment range per neuron.
    active: Vec<(usize, usize)>,
}

impl ExactHessian {
    /// Full Hessian operator.
    pub fn full(net: &TwoLayerNet, ds: &Dataset, nl: NoiseLevel) -> Result<Self> {
        Self::build(net, ds, nl, Terms::Full)
    }

    /// Tangent-kernel term alone, scaled `(1/n) sum_i E[g g^T]`.
    pub fn ntk_only(net: &TwoLayerNet, ds: &Dataset, nl: NoiseLevel) -> Result<Self> {
        Self::build(net, ds, nl, Terms::NtkOnly)
    }

    fn build(net: &TwoLayerNet, ds: &Dataset, nl: NoiseLevel, terms: Terms) -> Result<Self> {
        let walk = SegmentWalk::new(net)?;
        let table = MomentTable::new(&walk, ds, nl);
        let m = net.m();
        let n = ds.n();
        let segs = walk.segments();
        let s2 = nl.var();
        let inv_m = 1.0 / m as f64;

        let mut m0 = vec![0.0; segs];
        let mut m1 = vec![0.0; segs];
        let mut m2 = vec![0.0; segs];
        // Atom-summed residual moments per segment, for the cross term.
        let mut q0 = vec![0.0; segs];
        for i in 0..n {
            let shift = nl.mu() * ds.points()[i] / s2;
            for seg in 0..segs {
                let [z0, z1, z2] = table.at(i, seg);
                m0[seg] += z0;
                m1[seg] += z1;
                m2[seg] += z2;
                let u = walk.seg_const[seg] - shift;
                let v = walk.seg_slope[seg] + 1.0 / s2;
                q0[seg] += u * z0 + v * z1;
            }
        }

        let (t, d) = match terms {
            Terms::NtkOnly => (vec![0.0; m], vec![0.0; m]),
            Terms::Full => {
                let mut c0 = vec![0.0; segs + 1];
                for seg in 0..segs {
                    c0[seg + 1] = c0[seg] + q0[seg];
                }
                let scale = 2.0 / (n as f64 * m as f64);
                let mut t = vec![0.0; m];
                let mut d = vec![0.0; m];
                for l in 0..m {
                    let (first, last) = walk.active[l];
                    t[l] = scale * (c0[last + 1] - c0[first]);
                    let tau = -net.b()[l] / net.w1()[l];
                    let s_at_tau = net.forward(tau);
                    let mut boundary = 0.0;
                    for &x in ds.points() {
                        let mean = nl.mu() * x;
                        let f = s_at_tau + (tau - mean) / s2;
                        boundary +=
                            f * normal_pdf((tau - mean) / nl.sigma()) / nl.sigma();
                    }
                    d[l] = scale * net.w2()[l] * boundary;
                }
                (t, d)
            }
        };

        let mut toggle = Vec::with_capacity(m);
        let mut da_w2 = Vec::with_capacity(m);
        let mut da_b = Vec::with_capacity(m);
        let mut dc_w2 = Vec::with_capacity(m);
        for &l in &walk.order {
            let s = if net.w1()[l] > 0.0 { 1.0 } else { -1.0 };
            toggle.push(s);
            da_w2.push(s * net.b()[l] * inv_m);
            da_b.push(s * net.w2()[l] * inv_m);
            dc_w2.push(s * net.w1()[l] * inv_m);
        }
        let initial_active = (0..m).filter(|&l| net.w1()[l] < 0.0).collect();

        Ok(Self {
            m,
            n,
            ntk_scale: match terms {
                Terms::Full => 2.0 / n as f64,
                Terms::NtkOnly => 1.0 / n as f64,
            },
            order: walk.order.clone(),
            toggle,
            da_w2,
            da_b,
            dc_w2,
            initial_active,
            m0,
            m1,
            m2,
            w1: net.w1().to_vec(),
            w2: net.w2().to_vec(),
            b: net.b().to_vec(),
            t,
            d,
            active: walk.active,
        })
    }

    pub fn dim(&self) -> usize {
        2 * self.m
    }

    /// `w = H v` in `O(m)` per product.
    pub fn apply(&self, v: &[f64], out: &mut [f64]) {
        let m = self.m;
        let segs = self.m0.len();
        let inv_m = 1.0 / m as f64;
        debug_assert_eq!(v.len(), 2 * m);
        debug_assert_eq!(out.len(), 2 * m);
        out.fill(0.0);

        // Walk p_S = a_S . v and q_S = c_S . v across segments, recording
        // alpha_S = M0 p + M1 q and beta_S = M1 p + M2 q.
        let (mut p, mut q) = (0.0, 0.0);
        for &l in &self.initial_active {
            p += (self.b[l] * v[l] + self.w2[l] * v[m + l]) * inv_m;
            q += self.w1[l] * v[l] * inv_m;
        }
        let mut alpha = vec![0.0; segs];
        let mut beta = vec![0.0; segs];
        for seg in 0..segs {
            alpha[seg] = self.m0[seg] * p + self.m1[seg] * q;
            beta[seg] = self.m1[seg] * p + self.m2[seg] * q;
            if seg + 1 < segs {
                let l = self.order[seg];
                p += self.da_w2[seg] * v[l] + self.da_b[seg] * v[m + l];
                q += self.dc_w2[seg] * v[l];
            }
        }
        // Suffix sums: sum of alpha over segments > kink position.
        let mut suf_a = vec![0.0; segs + 1];
        let mut suf_b = vec![0.0; segs + 1];
        for seg in (0..segs).rev() {
            suf_a[seg] = suf_a[seg + 1] + alpha[seg];
            suf_b[seg] = suf_b[seg + 1] + beta[seg];
        }
        // out = (sum alpha) a_0 + (sum beta) c_0 + per-kink increments.
        for &l in &self.initial_active {
            out[l] += suf_a[0] * self.b[l] * inv_m + suf_b[0] * self.w1[l] * inv_m;
            out[m + l] += suf_a[0] * self.w2[l] * inv_m;
        }
        for j in 0..m {
            let l = self.order[j];
            out[l] += self.da_w2[j] * suf_a[j + 1] + self.dc_w2[j] * suf_b[j + 1];
            out[m + l] += self.da_b[j] * suf_a[j + 1];
        }
        for w in out.iter_mut() {
            *w *= self.ntk_scale;
        }
        // Cross and boundary terms.
        for l in 0..m {
            out[l] += self.t[l] * v[m + l];
            out[m + l] += self.t[l] * v[l] + self.d[l] * v[m + l];
        }
    }

    /// Upper bound on the spectral norm: the tangent-kernel term is
    /// positive semidefinite so its trace dominates its largest eigenvalue;
    /// the cross term is a direct sum of antidiagonal 2x2 blocks with norm
    /// `max |t_l|`; the boundary term is diagonal.
    pub fn norm_upper_bound(&self) -> f64 {
        let inv_m2 = 1.0 / (self.m as f64 * self.m as f64);
        // Prefix sums of the segment moments for contiguous range sums.
        let segs = self.m0.len();
        let mut c0 = vec![0.0; segs + 1];
        let mut c1 = vec![0.0; segs + 1];
        let mut c2 = vec![0.0; segs + 1];
        for seg in 0..segs {
            c0[seg + 1] = c0[seg] + self.m0[seg];
            c1[seg + 1] = c1[seg] + self.m1[seg];
            c2[seg + 1] = c2[seg] + self.m2[seg];
        }
        let mut trace = 0.0;
        for l in 0..self.m {
            let (first, last) = self.active[l];
            let r0 = c0[last + 1] - c0[first];
            let r1 = c1[last + 1] - c1[first];
            let r2 = c2[last + 1] - c2[first];
            // w2-block diagonal: (b + w1 y)^2; b-block diagonal: w2^2.
            trace += inv_m2
                * ((self.b[l] * self.b[l] * r0
                    + 2.0 * self.b[l] * self.w1[l] * r1
                    + self.w1[l] * self.w1[l] * r2)
                    + self.w2[l] * self.w2[l] * r0);
        }
        let t_norm = self.t.iter().fold(0.0f64, |a, x| a.max(x.abs()));
        let d_norm = self.d.iter().fold(0.0f64, |a, x| a.max(x.abs()));
        self.ntk_scale * trace + t_norm + d_norm
    }

    /// Dense materialization by applying to basis vectors (cross-checks).
    pub fn to_dense(&self) -> DMatrix<f64> {
        let dim = self.dim();
        let mut h = DMatrix::zeros(dim, dim);
        let mut v = vec![0.0; dim];
        let mut out = vec![0.0; dim];
        for j in 0..dim {
            v[j] = 1.0;
            self.apply(&v, &mut out);
            for i in 0..dim {
                h[(i, j)] = out[i];
            }
            v[j] = 0.0;
        }
        h
    }

    pub fn cross_entries(&self) -> &[f64] {
        &self.t
    }
    pub fn boundary_entries(&self) -> &[f64] {
        &self.d
    }
    pub fn atoms(&self) -> usize {
        self.n
    }
}

/// Dense exact Hessian, symmetric entry-by-entry by construction.
pub fn assemble_dense(net: &TwoLayerNet, ds: &Dataset, nl: NoiseLevel) -> Result<DMatrix<f64>> {
    let op = ExactHessian::full(net, ds, nl)?;
    let m = net.m();
    let segs = op.m0.len();
    let inv_m = 1.0 / m as f64;
    let dim = 2 * m;
    let mut h = DMatrix::zeros(dim, dim);

    // Active neuron set per segment, walked left to right.
    let mut active = vec![false; m];
    for &l in &op.initial_active {
        active[l] = true;
    }
    for seg in 0..segs {
        let (m0, m1, m2) = (op.m0[seg], op.m1[seg], op.m2[seg]);
        if m0 != 0.0 || m1 != 0.0 || m2 != 0.0 {
            let live: Vec<usize> = (0..m).filter(|&l| active[l]).collect();
            for (pos, &j) in live.iter().enumerate() {
                let (aj_w2, cj_w2, aj_b) = (op.b[j] * inv_m, op.w1[j] * inv_m, op.w2[j] * inv_m);
                for &k in &live[pos..] {
                    let (ak_w2, ck_w2, ak_b) =
                        (op.b[k] * inv_m, op.w1[k] * inv_m, op.w2[k] * inv_m);
                    // (w2_j, w2_k)
                    let ww = op.ntk_scale
                        * (aj_w2 * ak_w2 * m0
                            + (aj_w2 * ck_w2 + cj_w2 * ak_w2) * m1
                            + cj_w2 * ck_w2 * m2);
                    h[(j, k)] += ww;
                    if j != k {
                        h[(k, j)] += ww;
                    }
                    // (b_j, b_k)
                    let bb = op.ntk_scale * (aj_b * ak_b * m0);
                    h[(m + j, m + k)] += bb;
                    if j != k {
                        h[(m + k, m + j)] += bb;
                    }
                    // (w2_j, b_k) and (w2_k, b_j)
                    let wb = op.ntk_scale * (aj_w2 * ak_b * m0 + cj_w2 * ak_b * m1);
                    h[(j, m + k)] += wb;
                    h[(m + k, j)] += wb;
                    if j != k {
                        let bw = op.ntk_scale * (ak_w2 * aj_b * m0 + ck_w2 * aj_b * m1);
                        h[(k, m + j)] += bw;
                        h[(m + j, k)] += bw;
                    }
                }
            }
        }
        if seg + 1 < segs {
            let l = op.order[seg];
            active[l] = op.toggle[seg] > 0.0;
        }
    }
    for l in 0..m {
        h[(l, m + l)] += op.t[l];
        h[(m + l, l)] += op.t[l];
        h[(m + l, m + l)] += op.d[l];
    }
    Ok(h)
}

/// Either representation behind one spectral interface.
pub enum HessianHandle {
    Dense(DMatrix<f64>),
    Free(ExactHessian),
}

impl HessianHandle {
    /// Picks dense assembly up to [`DENSE_LIMIT`] parameters, matrix-free
    /// beyond.
    pub fn for_net(net: &TwoLayerNet, ds: &Dataset, nl: NoiseLevel) -> Result<Self> {
        if 2 * net.m() <= DENSE_LIMIT {
            Ok(HessianHandle::Dense(assemble_dense(net, ds, nl)?))
        } else {
            Ok(HessianHandle::Free(ExactHessian::full(net, ds, nl)?))
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            HessianHandle::Dense(h) => h.nrows(),
            HessianHandle::Free(op) => op.dim(),
        }
    }

    pub fn apply(&self, v: &[f64], out: &mut [f64]) {
        match self {
            HessianHandle::Dense(h) => {
                let vv = DVector::from_column_slice(v);
                let prod = h * vv;
                out.copy_from_slice(prod.as_slice());
            }
            HessianHandle::Free(op) => op.apply(v, out),
        }
    }

    /// Spectral-radius upper bound used as the power-iteration shift:
    /// Gershgorin row sums for dense matrices, the component-wise norm
    /// bound for the matrix-free operator.
    pub fn shift(&self) -> f64 {
        match self {
            HessianHandle::Dense(h) => {
                let mut best = 0.0f64;
                for i in 0..h.nrows() {
                    let mut row = 0.0;
                    for j in 0..h.ncols() {
                        row += h[(i, j)].abs();
                    }
                    best = best.max(row);
                }
                best
            }
            HessianHandle::Free(op) => op.norm_upper_bound(),
        }
    }
}

/// Largest eigenvalue by power iteration on the shifted operator
/// `H + c I`, with `c` an upper bound on the spectral radius so that the
/// dominant eigenvalue of the shifted operator is `lambda_max(H) + c`.
pub fn lambda_max(op: &HessianHandle, tol: f64, max_iters: usize) -> Result<f64> {
    let dim = op.dim();
    let c = op.shift();
    // Deterministic, sign-varied start vector with full support.
    let mut v: Vec<f64> = (0..dim)
        .map(|i| if i % 2 == 0 { 1.0 } else { -0.5 } + 1.0 / (i + 1) as f64)
        .collect();
    normalize(&mut v);
    let mut hv = vec![0.0; dim];
    let mut rayleigh = f64::NAN;
    for iter in 0..max_iters {
        op.apply(&v, &mut hv);
        let r: f64 = v.iter().zip(&hv).map(|(a, b)| a * b).sum();
        // Shifted iterate: w = H v + c v.
        for (w, x) in hv.iter_mut().zip(&v) {
            *w += c * x;
        }
        let norm = hv.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Ok(0.0); // H = -cI or zero operator; Rayleigh is exact.
        }
        for (dst, src) in v.iter_mut().zip(&hv) {
            *dst = src / norm;
        }
        if iter > 0 && (r - rayleigh).abs() <= tol * r.abs().max(1e-30) {
            return Ok(r);
        }
        rayleigh = r;
    }
    Err(Error::NoConvergence { iters: max_iters, last: rayleigh })
}

fn normalize(v: &mut [f64]) {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    for x in v.iter_mut() {
        *x /= norm;
    }
}

/// Spectral summary of a net's risk landscape at a point.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct HessianReport {
    pub lambda_max: f64,
    /// Largest eigenvalue of `(1/n) sum_i E[g g^T]` (tangent kernel).
    pub ntk_term_lambda_max: f64,
    /// Spectral norms of the three Hessian summands.
    pub ntk_component_norm: f64,
    pub cross_component_norm: f64,
    pub boundary_component_norm: f64,
    /// `2/(m eta)`; `None` when no learning rate was supplied.
    pub stability_bound: Option<f64>,
    /// Necessary condition `lambda_max <= 2/(m eta)` — not a stability
    /// proof.
    pub is_stable_necessary: Option<bool>,
    /// Outer weights strictly inside the clip box (relative margin 1e-6).
    pub interior_flag: bool,
}

/// Full spectral report; `eta = None` skips the stability comparison.
pub fn stability_report(
    net: &TwoLayerNet,
    ds: &Dataset,
    nl: NoiseLevel,
    eta: Option<f64>,
) -> Result<HessianReport> {
    let handle = HessianHandle::for_net(net, ds, nl)?;
    let lam = lambda_max(&handle, DEFAULT_TOL, DEFAULT_MAX_ITERS)?;
    let ntk = HessianHandle::Free(ExactHessian::ntk_only(net, ds, nl)?);
    let ntk_lam = lambda_max(&ntk, DEFAULT_TOL, DEFAULT_MAX_ITERS)?;
    let full = ExactHessian::full(net, ds, nl)?;
    let cross = full.cross_entries().iter().fold(0.0f64, |a, x| a.max(x.abs()));
    let boundary = full
        .boundary_entries()
        .iter()
        .fold(0.0f64, |a, x| a.max(x.abs()));
    let stability_bound = eta.map(|e| 2.0 / (net.m() as f64 * e));
    Ok(HessianReport {
        lambda_max: lam,
        ntk_term_lambda_max: ntk_lam,
        // The Hessian's tangent-kernel summand carries scale 2/n = twice
        // the reported kernel eigenvalue.
        ntk_component_norm: 2.0 * ntk_lam,
        cross_component_norm: cross,
        boundary_component_norm: boundary,
        stability_bound,
        is_stable_necessary: stability_bound.map(|b| lam <= b),
        interior_flag: net.is_interior(1e-6),
    })
}

/// Both sides of the kernel-eigenvalue lower bound
/// `lambda_max((1/n) sum E[g g^T]) >= (2/m) TV(s_theta)`.
pub fn ntk_tv_sides(
    net: &TwoLayerNet,
    ds: &Dataset,
    nl: NoiseLevel,
) -> Result<(f64, f64)> {
    let ntk = HessianHandle::Free(ExactHessian::ntk_only(net, ds, nl)?);
    let lhs = lambda_max(&ntk, DEFAULT_TOL, DEFAULT_MAX_ITERS)?;
    let pi = crate::weight::PiEvaluator::new(ds, nl);
    let tv = crate::tv::tv_of_net(net, &pi)?;
    Ok((lhs, 2.0 / net.m() as f64 * tv.value))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::Mode;
    use crate::risk::risk_exact;
    use crate::rng;
    use rand::Rng;

    fn random_instance(seed: u64, m: usize, n: usize) -> (TwoLayerNet, Dataset, NoiseLevel) {
        let mut net = TwoLayerNet::init(m, 50.0, seed, Mode::Theory, 1).unwrap();
        let mut r = rng::stream(seed ^ 0x5151);
        for b in net.b_mut() {
            *b = r.random_range(-1.2..1.2);
        }
        let ds = Dataset::from_gaussian(n, 1.0, seed ^ 0x99).unwrap();
        (net, ds, NoiseLevel::new(0.9, 0.35).unwrap())
    }

    #[test]
    fn power_iteration_on_reference_operators() {
        let diag = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 2.0, 3.0]));
        let lam = lambda_max(&HessianHandle::Dense(diag), 1e-10, 10_000).unwrap();
        assert!((lam - 3.0).abs() < 1e-8);

        let v = DVector::from_vec(vec![0.5, -1.0, 2.0, 0.25]);
        let rank1 = &v * v.transpose();
        let lam = lambda_max(&HessianHandle::Dense(rank1), 1e-10, 10_000).unwrap();
        assert!((lam - v.norm_squared()).abs() < 1e-8 * v.norm_squared());

        // Random symmetric vs a dense eigensolver.
        let mut r = rng::stream(77);
        let mut a = DMatrix::from_fn(10, 10, |_, _| r.random_range(-1.0..1.0));
        a = (&a + a.transpose()) * 0.5;
        let want = a
            .clone()
            .symmetric_eigen()
            .eigenvalues
            .iter()
            .cloned()
            .fold(f64::NEG_INFINITY, f64::max);
        let lam = lambda_max(&HessianHandle::Dense(a), 1e-10, 20_000).unwrap();
        assert!((lam - want).abs() <= 1e-6 * want.abs().max(1.0), "{lam} vs {want}");
    }

    #[test]
    fn dense_assembly_is_exactly_symmetric() {
        let (net, ds, nl) = random_instance(5, 6, 4);
        let h = assemble_dense(&net, &ds, nl).unwrap();
        for i in 0..h.nrows() {
            for j in 0..h.ncols() {
                assert_eq!(h[(i, j)], h[(j, i)], "({i},{j})");
            }
        }
    }

    #[test]
    fn matrix_free_matches_dense_assembly() {
        let (net, ds, nl) = random_instance(9, 16, 5);
        let dense = assemble_dense(&net, &ds, nl).unwrap();
        let free = ExactHessian::full(&net, &ds, nl).unwrap().to_dense();
        let scale = dense.amax();
        for i in 0..dense.nrows() {
            for j in 0..dense.ncols() {
                assert!(
                    (dense[(i, j)] - free[(i, j)]).abs() <= 1e-11 * scale,
                    "({i},{j}): {} vs {}",
                    dense[(i, j)],
                    free[(i, j)]
                );
            }
        }
    }

    #[test]
    fn closed_form_matches_finite_difference_hessian() {
        // The decisive validation: includes the boundary term.
        let (mut net, ds, nl) = random_instance(13, 2, 3);
        // Keep kinks several FD steps away from every scaled atom.
        let step = 1e-4;
        let mut r = rng::stream(4242);
        loop {
            let clear = net.kinks().unwrap().iter().all(|k| {
                ds.points()
                    .iter()
                    .all(|&x| (k.location - nl.mu() * x).abs() > 10.0 * step)
            });
            if clear {
                break;
            }
            for b in net.b_mut() {
                *b = r.random_range(-1.0..1.0);
            }
        }
        let h = assemble_dense(&net, &ds, nl).unwrap();
        let dim = 2 * net.m();
        let mut fd = DMatrix::zeros(dim, dim);
        let perturb = |j: usize, amount: f64, base: &TwoLayerNet| {
            let mut net = base.clone();
            if j < net.m() {
                net.w2_mut()[j] += amount;
            } else {
                let idx = j - net.m();
                net.b_mut()[idx] += amount;
            }
            net
        };
        for j in 0..dim {
            for k in 0..dim {
                let pp = risk_exact(&perturb(k, step, &perturb(j, step, &net)), &ds, nl).unwrap();
                let pm = risk_exact(&perturb(k, -step, &perturb(j, step, &net)), &ds, nl).unwrap();
                let mp = risk_exact(&perturb(k, step, &perturb(j, -step, &net)), &ds, nl).unwrap();
                let mm =
                    risk_exact(&perturb(k, -step, &perturb(j, -step, &net)), &ds, nl).unwrap();
                fd[(j, k)] = (pp - pm - mp + mm) / (4.0 * step * step);
            }
        }
        let diff_norm = (h.clone() - &fd)
            .symmetric_eigen()
            .eigenvalues
            .iter()
            .fold(0.0f64, |a, &x| a.max(x.abs()));
        let h_norm = h
            .symmetric_eigen()
            .eigenvalues
            .iter()
            .fold(0.0f64, |a, &x| a.max(x.abs()));
        assert!(
            diff_norm <= 1e-3 * h_norm,
            "spectral mismatch: {diff_norm} vs scale {h_norm}"
        );
    }

    #[test]
    fn distant_kink_suppresses_boundary_term() {
        let ds = Dataset::from_points(vec![0.5]).unwrap();
        let nl = NoiseLevel::new(1.0, 0.1).unwrap();
        // Kink at tau = 1.5 = mu x + 10 sigma.
        let net = TwoLayerNet::from_parts(
            Mode::Theory,
            1,
            vec![1.0],
            vec![2.0],
            vec![-1.5],
            10.0,
        )
        .unwrap();
        let op = ExactHessian::full(&net, &ds, nl).unwrap();
        assert!(op.boundary_entries()[0].abs() < 1e-18);
    }

    #[test]
    fn spectral_triangle_inequality_on_components() {
        let (net, ds, nl) = random_instance(21, 12, 6);
        let report = stability_report(&net, &ds, nl, None).unwrap();
        assert!(
            report.lambda_max
                >= report.ntk_component_norm
                    - report.cross_component_norm
                    - report.boundary_component_norm
                    - 1e-9 * report.lambda_max.abs().max(1.0)
        );
        assert!(report.lambda_max.is_finite());
        assert!(report.ntk_term_lambda_max >= -1e-12);
    }

    #[test]
    fn kernel_eigenvalue_dominates_scaled_net_tv() {
        for seed in [3u64, 14, 15, 92, 65] {
            let (net, ds, nl) = random_instance(seed, 8, 5);
            let (lhs, rhs) = ntk_tv_sides(&net, &ds, nl).unwrap();
            assert!(
                lhs >= rhs - 1e-9 * rhs.abs().max(1e-12),
                "seed {seed}: {lhs} < {rhs}"
            );
        }
    }

    #[test]
    fn stability_report_thresholds() {
        let (net, ds, nl) = random_instance(33, 4, 3);
        let tiny_eta = stability_report(&net, &ds, nl, Some(1e-12)).unwrap();
        assert_eq!(tiny_eta.is_stable_necessary, Some(true));
        let report = stability_report(&net, &ds, nl, Some(0.1)).unwrap();
        let dense = assemble_dense(&net, &ds, nl).unwrap();
        let oracle = dense
            .symmetric_eigen()
            .eigenvalues
            .iter()
            .cloned()
            .fold(f64::NEG_INFINITY, f64::max);
        assert!(
            (report.lambda_max - oracle).abs() <= 1e-5 * oracle.abs().max(1.0),
            "{} vs {oracle}",
            report.lambda_max
        );
    }

    #[test]
    fn shift_dominates_spectrum() {
        let (net, ds, nl) = random_instance(41, 10, 4);
        let free = ExactHessian::full(&net, &ds, nl).unwrap();
        let bound = free.norm_upper_bound();
        let dense = free.to_dense();
        let spectral = dense
            .symmetric_eigen()
            .eigenvalues
            .iter()
            .fold(0.0f64, |a, &x| a.max(x.abs()));
        assert!(bound >= spectral, "bound {bound} < spectral norm {spectral}");
    }
}
