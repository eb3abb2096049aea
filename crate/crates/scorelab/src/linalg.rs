//! Tight inner-loop helpers for the trainers: fixed-lane reductions,
//! in-place accumulation over contiguous slices, and packed-lane load/store
//! wrappers. Four independent accumulator lanes break the floating-point
//! dependency chain so the loops vectorize; results differ from a naive
//! left-to-right sum only in summation order.

use wide::f64x4;

/// Unaligned four-lane load from `s[i..i + 4]`.
#[inline(always)]
pub(crate) fn load4(s: &[f64], i: usize) -> f64x4 {
    f64x4::from(<[f64; 4]>::try_from(&s[i..i + 4]).unwrap())
}

/// Unaligned four-lane store to `s[i..i + 4]`.
#[inline(always)]
pub(crate) fn store4(s: &mut [f64], i: usize, v: f64x4) {
    s[i..i + 4].copy_from_slice(&v.to_array());
}

/// Pairwise lane fold, matching the reduction order of [`dot`] and [`sum`].
#[inline(always)]
pub(crate) fn fold4(v: f64x4) -> f64 {
    let q = v.to_array();
    (q[0] + q[1]) + (q[2] + q[3])
}

/// Dot product `sum_i a[i] * b[i]` over slices of equal length.
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let split = a.len() - a.len() % 4;
    let (ac, at) = a.split_at(split);
    let (bc, bt) = b.split_at(split);
    let mut lanes = [0.0f64; 4];
    for (qa, qb) in ac.chunks_exact(4).zip(bc.chunks_exact(4)) {
        lanes[0] += qa[0] * qb[0];
        lanes[1] += qa[1] * qb[1];
        lanes[2] += qa[2] * qb[2];
        lanes[3] += qa[3] * qb[3];
    }
    let mut tail = 0.0;
    for (x, y) in at.iter().zip(bt) {
        tail += x * y;
    }
    (lanes[0] + lanes[1]) + (lanes[2] + lanes[3]) + tail
}

/// Plain sum of a slice.
pub(crate) fn sum(a: &[f64]) -> f64 {
    let split = a.len() - a.len() % 4;
    let (ac, at) = a.split_at(split);
    let mut lanes = [0.0f64; 4];
    for q in ac.chunks_exact(4) {
        lanes[0] += q[0];
        lanes[1] += q[1];
        lanes[2] += q[2];
        lanes[3] += q[3];
    }
    let mut tail = 0.0;
    for x in at {
        tail += x;
    }
    (lanes[0] + lanes[1]) + (lanes[2] + lanes[3]) + tail
}

/// In-place `y += a * x` over slices of equal length.
pub(crate) fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    debug_assert_eq!(y.len(), x.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}
