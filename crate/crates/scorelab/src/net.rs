//! Two-layer ReLU score models.
//!
//! The analysis class is one-dimensional with fixed inner signs:
//!
//! ```text
//! s_theta(y) = (1/m) sum_l w2_l relu(w1_l y + b_l),   w1_l in {-1, +1},
//! ```
//!
//! trained over `(w2, b)` with `|w2_l| <= A` enforced by projection. The
//! `standard` mode keeps the same layout but draws Gaussian inner weights
//! (variance `1/dim`) for multi-input experiment nets.
//!
//! `s_theta` is continuous piecewise-linear; its derivative jumps by
//! `w2_l |w1_l| / m` at the kink `tau_l = -b_l / w1_l`, which is the entire
//! second derivative in the distributional sense — the total-variation and
//! Hessian modules build on exactly that bookkeeping.

use crate::rng;
use crate::{Error, Result};
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

/// Weight layout contract: `Theory` fixes inner weights in `{-1, +1}` and
/// trains only `(w2, b)`; `Standard` draws Gaussian inner weights and trains
/// everything.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Theory,
    Standard,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Theory => "theory",
            Mode::Standard => "standard",
        })
    }
}

impl FromStr for Mode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "theory" => Ok(Mode::Theory),
            "standard" => Ok(Mode::Standard),
            other => Err(Error::Parse(format!("unknown mode `{other}`"))),
        }
    }
}

/// A scalar-output two-layer ReLU network of width `m` over `dim` inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoLayerNet {
    m: usize,
    dim: usize,
    mode: Mode,
    /// Inner weights, `dim` entries per neuron, neuron-major.
    w1: Vec<f64>,
    /// Outer weights, one per neuron.
    w2: Vec<f64>,
    /// Biases, one per neuron.
    b: Vec<f64>,
    /// Projection bound on `|w2_l|`.
    a_clip: f64,
}

/// Gradient of `s_theta(y)` in the trainable parameters of a 1-D net.
#[derive(Debug, Clone)]
pub struct ParamGradient {
    pub d_w2: Vec<f64>,
    pub d_b: Vec<f64>,
}

/// A breakpoint of a theory-mode net: `s_theta'` jumps by `mass` at
/// `location`.
#[derive(Debug, Clone, Copy)]
pub struct Kink {
    pub location: f64,
    pub mass: f64,
}

impl TwoLayerNet {
    /// Random initialization. Theory mode (1-D only): inner weights uniform
    /// `{-1, +1}`, biases zero, outer weights standard normal clipped to
    /// `[-A, A]`. Standard mode: inner weights `N(0, 1/dim)`, biases zero,
    /// outer weights standard normal.
    pub fn init(m: usize, a_clip: f64, seed: u64, mode: Mode, dim: usize) -> Result<Self> {
        if m == 0 {
            return Err(Error::InvalidParameter("width m must be >= 1".into()));
        }
        if dim == 0 {
            return Err(Error::InvalidParameter("dim must be >= 1".into()));
        }
        if !(a_clip > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "clip bound must be positive, got {a_clip}"
            )));
        }
        if mode == Mode::Theory && dim != 1 {
            return Err(Error::InvalidParameter(
                "theory mode is one-dimensional".into(),
            ));
        }
        let mut rng = rng::stream(seed);
        let w1 = match mode {
            Mode::Theory => (0..m)
                .map(|_| if rng.random_bool(0.5) { 1.0 } else { -1.0 })
                .collect(),
            Mode::Standard => {
                let inner = Normal::new(0.0, (1.0 / dim as f64).sqrt()).expect("valid sd");
                (0..m * dim).map(|_| inner.sample(&mut rng)).collect()
            }
        };
        let mut w2: Vec<f64> = (0..m).map(|_| StandardNormal.sample(&mut rng)).collect();
        if mode == Mode::Theory {
            for w in &mut w2 {
                *w = w.clamp(-a_clip, a_clip);
            }
        }
        Ok(Self { m, dim, mode, w1, w2, b: vec![0.0; m], a_clip })
    }

    /// Builds a net from explicit parameters (tests, checkpoints, oracles).
    pub fn from_parts(
        mode: Mode,
        dim: usize,
        w1: Vec<f64>,
        w2: Vec<f64>,
        b: Vec<f64>,
        a_clip: f64,
    ) -> Result<Self> {
        let m = w2.len();
        if m == 0 || b.len() != m || w1.len() != m * dim {
            return Err(Error::DimensionMismatch { expected: m * dim.max(1), got: w1.len() });
        }
        if !(a_clip > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "clip bound must be positive, got {a_clip}"
            )));
        }
        if mode == Mode::Theory && (dim != 1 || w1.iter().any(|w| w.abs() != 1.0)) {
            return Err(Error::NotTheoryMode);
        }
        Ok(Self { m, dim, mode, w1, w2, b, a_clip })
    }

    pub fn m(&self) -> usize {
        self.m
    }
    pub fn dim(&self) -> usize {
        self.dim
    }
    pub fn mode(&self) -> Mode {
        self.mode
    }
    pub fn clip(&self) -> f64 {
        self.a_clip
    }
    pub fn w1(&self) -> &[f64] {
        &self.w1
    }
    pub fn w2(&self) -> &[f64] {
        &self.w2
    }
    pub fn b(&self) -> &[f64] {
        &self.b
    }
    /// Trainable views; the trainer is the single writer.
    pub fn w2_mut(&mut self) -> &mut [f64] {
        &mut self.w2
    }
    pub fn b_mut(&mut self) -> &mut [f64] {
        &mut self.b
    }
    pub fn w1_mut(&mut self) -> &mut [f64] {
        &mut self.w1
    }

    /// `s_theta(y)` for 1-D nets.
    pub fn forward(&self, y: f64) -> f64 {
        assert_eq!(self.dim, 1, "scalar forward needs a 1-D net");
        let mut acc = 0.0;
        for l in 0..self.m {
            let pre = self.w1[l] * y + self.b[l];
            if pre > 0.0 {
                acc += self.w2[l] * pre;
            }
        }
        acc / self.m as f64
    }

    /// `s_theta(x)` for any input dimension.
    pub fn forward_vec(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, got: x.len() });
        }
        let mut acc = 0.0;
        for l in 0..self.m {
            let row = &self.w1[l * self.dim..(l + 1) * self.dim];
            let pre: f64 = row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + self.b[l];
            if pre > 0.0 {
                acc += self.w2[l] * pre;
            }
        }
        Ok(acc / self.m as f64)
    }

    /// Gradient of `s_theta(y)` in `(w2, b)` for 1-D nets; the activation
    /// indicator is `>= 0` (bit-exact contract shared with the Hessian).
    pub fn grad_params(&self, y: f64) -> ParamGradient {
        assert_eq!(self.dim, 1, "parameter gradient needs a 1-D net");
        let inv_m = 1.0 / self.m as f64;
        let mut d_w2 = vec![0.0; self.m];
        let mut d_b = vec![0.0; self.m];
        for l in 0..self.m {
            let pre = self.w1[l] * y + self.b[l];
            if pre >= 0.0 {
                d_w2[l] = inv_m * pre.max(0.0);
                d_b[l] = inv_m * self.w2[l];
            }
        }
        ParamGradient { d_w2, d_b }
    }

    /// Kink locations `tau_l = -b_l / w1_l` and the signed jumps of
    /// `s_theta'` across them, `w2_l |w1_l| / m`. Theory mode only.
    pub fn kinks(&self) -> Result<Vec<Kink>> {
        if self.mode != Mode::Theory || self.w1.iter().any(|w| w.abs() != 1.0) {
            return Err(Error::NotTheoryMode);
        }
        let inv_m = 1.0 / self.m as f64;
        Ok((0..self.m)
            .map(|l| Kink {
                location: -self.b[l] / self.w1[l],
                mass: self.w2[l] * inv_m,
            })
            .collect())
    }

    /// Projects the outer weights back onto `[-A, A]`.
    pub fn clip_outer(&mut self) {
        for w in &mut self.w2 {
            *w = w.clamp(-self.a_clip, self.a_clip);
        }
    }

    pub fn max_abs_outer(&self) -> f64 {
        self.w2.iter().fold(0.0, |acc, w| acc.max(w.abs()))
    }

    /// Whether the outer weights sit strictly inside the constraint set with
    /// the given relative margin (`max |w2| < A (1 - margin)`).
    pub fn is_interior(&self, margin: f64) -> bool {
        self.max_abs_outer() < self.a_clip * (1.0 - margin)
    }

    /// Writes a plain-text checkpoint: `# key = value` headers followed by
    /// one `w1...,w2,b` row per neuron.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        out.push_str("# two-layer relu score model\n");
        out.push_str(&format!("# m = {}\n", self.m));
        out.push_str(&format!("# dim = {}\n", self.dim));
        out.push_str(&format!("# mode = {}\n", self.mode));
        out.push_str(&format!("# a_clip = {:?}\n", self.a_clip));
        for l in 0..self.m {
            for j in 0..self.dim {
                out.push_str(&format!("{:?},", self.w1[l * self.dim + j]));
            }
            out.push_str(&format!("{:?},{:?}\n", self.w2[l], self.b[l]));
        }
        std::fs::write(path, out)?;
        Ok(())
    }

    /// Reads a checkpoint written by [`save`](Self::save).
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut m = None;
        let mut dim = None;
        let mut mode = None;
        let mut a_clip = None;
        let mut rows: Vec<Vec<f64>> = Vec::new();
        for (idx, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('#') {
                if let Some((key, value)) = rest.split_once('=') {
                    let (key, value) = (key.trim(), value.trim());
                    match key {
                        "m" => m = Some(parse_field(key, value)?),
                        "dim" => dim = Some(parse_field(key, value)?),
                        "mode" => mode = Some(Mode::from_str(value)?),
                        "a_clip" => a_clip = Some(parse_field(key, value)?),
                        _ => {}
                    }
                }
                continue;
            }
            let row: Vec<f64> = line
                .split(',')
                .map(|tok| {
                    tok.trim()
                        .parse::<f64>()
                        .map_err(|e| Error::Parse(format!("line {}: {e}", idx + 1)))
                })
                .collect::<Result<_>>()?;
            rows.push(row);
        }
        let m: usize = m.ok_or_else(|| Error::Parse("missing `m` header".into()))?;
        let dim: usize = dim.ok_or_else(|| Error::Parse("missing `dim` header".into()))?;
        let mode = mode.ok_or_else(|| Error::Parse("missing `mode` header".into()))?;
        let a_clip: f64 = a_clip.ok_or_else(|| Error::Parse("missing `a_clip` header".into()))?;
        if rows.len() != m {
            return Err(Error::DimensionMismatch { expected: m, got: rows.len() });
        }
        let mut w1 = Vec::with_capacity(m * dim);
        let mut w2 = Vec::with_capacity(m);
        let mut b = Vec::with_capacity(m);
        for row in rows {
            if row.len() != dim + 2 {
                return Err(Error::DimensionMismatch { expected: dim + 2, got: row.len() });
            }
            w1.extend_from_slice(&row[..dim]);
            w2.push(row[dim]);
            b.push(row[dim + 1]);
        }
        Self::from_parts(mode, dim, w1, w2, b, a_clip)
    }
}

fn parse_field<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: fmt::Display,
{
    value
        .parse()
        .map_err(|e| Error::Parse(format!("header `{key}`: {e}")))
}
