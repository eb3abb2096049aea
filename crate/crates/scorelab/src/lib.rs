//! Numerical laboratory for denoising score matching on finite datasets.
//!
//! Data are `n` points smoothed by a Gaussian noise channel `Y = mu*x + sigma*Z`.
//! The semi-empirical risk of a score candidate `s` is
//!
//! ```text
//! R_n(s) = (1/n) sum_i E[ (s(Y_i) + (Y_i - mu*x_i)/sigma^2)^2 ],   Y_i ~ N(mu*x_i, sigma^2)
//! ```
//!
//! whose pointwise minimizer is the empirical optimal score `s*` — the score of
//! the smoothed empirical measure, the object a perfectly trained model would
//! memorize. This crate provides:
//!
//! - [`dataset`], [`noise`]: datasets with spacing statistics and the
//!   Ornstein-Uhlenbeck noise schedule `(mu, sigma) = (e^{-t}, sqrt(1 - e^{-2t}))`.
//! - [`score`]: `s*`, its first two derivatives via softmax moments of the data,
//!   its risk, and explicit curvature tail bounds.
//! - [`weight`]: the interval weight function `pi` under which total variation
//!   of score derivatives is measured, with explicit lower/upper bounds.
//! - [`tv`]: weighted total variation `TV_pi(s') = integral |s''| pi` by adaptive
//!   quadrature for `s*` and by exact kink sums for ReLU networks.
//! - [`net`], [`risk`]: two-layer ReLU score models, exact piecewise-Gaussian
//!   risk evaluation, stochastic gradients, and (S)GD training loops.
//! - [`hessian`]: the closed-form risk Hessian at a network (Gauss-Newton,
//!   activation-boundary, and curvature-jump terms), extreme eigenvalues, and
//!   linear-stability reports for SGD.
//! - [`bounds`]: one verifier per proved inequality relating risk, weighted TV,
//!   Hessian sharpness, and learning rate, each returning a premise-checked
//!   [`bounds::BoundReport`].
//! - [`diffusion`], [`metrics`]: reverse-SDE samplers driven by trained
//!   time-conditioned networks or analytic scores, plus MMD / nearest-neighbour
//!   / Gaussian-fit diagnostics of memorization.
//!
//! All stochastic operations take explicit `u64` seeds and are reproducible
//! bit-for-bit; see [`rng`].

pub mod bounds;
pub mod dataset;
pub mod diffusion;
pub mod hessian;
mod linalg;
pub mod metrics;
pub mod net;
pub mod noise;
pub mod quadrature;
pub mod risk;
pub mod rng;
pub mod score;
pub mod tv;
pub mod weight;

mod error;

pub use error::{Error, Result};
