//! One verifier per proved inequality of the theory, each returning a
//! premise-checked [`BoundReport`]: the hypotheses with both sides and a
//! pass flag, and — only when every hypothesis holds — the conclusion with
//! both sides, an error bar for estimated quantities, and a verdict.
//!
//! The collection doubles as a falsification harness: on any instance whose
//! premises hold, a failing conclusion indicates an implementation bug (or a
//! genuine counterexample). Premise failures yield a `Vacuous` verdict and
//! no conclusion is asserted. Internal numerical failures (quadrature or
//! eigensolver non-convergence) are reported as a failed premise
//! ("numerical evaluation converged") rather than an error.

use crate::dataset::Dataset;
use crate::hessian;
use crate::net::{Mode, TwoLayerNet};
use crate::noise::NoiseLevel;
use crate::risk;
use crate::rng;
use crate::score;
use crate::tv;
use crate::weight::PiEvaluator;
use crate::{Error, Result};
use rand::Rng;
use serde::Serialize;

/// Relative slack applied when comparing closed-form quantities, so exact
/// equality cases (tight bounds) pass despite floating-point rounding.
pub const CLOSED_FORM_REL_TOL: f64 = 1e-9;

/// Relative accuracy budget of the smoothed-weight evaluations entering
/// total-variation and envelope checks. The weight is a closed form; the
/// budget only absorbs rounding amplified by wide-coordinate datasets.
const PI_REL_ERROR: f64 = 1e-9;

/// Relative accuracy budget of iterative eigenvalue estimates.
const EIG_REL_ERROR: f64 = 3e-6;

/// Monte-Carlo seed used by verifiers that estimate a risk internally, kept
/// fixed so reports are reproducible byte-for-byte.
const INTERNAL_MC_SEED: u64 = 271_828_182_845;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Verdict {
    /// Conclusion holds with the error bar subtracted from its favorable side.
    Holds,
    /// Conclusion holds only somewhere inside the error bar.
    HoldsWithinErrorBars,
    /// A premise fails; nothing is asserted.
    Vacuous,
    /// Premises hold and the conclusion fails beyond the error bar.
    Fails,
}

#[derive(Debug, Clone, Serialize)]
pub struct Premise {
    pub description: String,
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct Conclusion {
    pub description: String,
    pub lhs: f64,
    pub rhs: f64,
    /// One-sided numerical uncertainty on the estimated side(s), already
    /// combined; 0 for fully closed-form checks.
    pub error_bar: f64,
    pub holds: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct BoundReport {
    pub name: String,
    pub instance: String,
    pub premises: Vec<Premise>,
    /// The worst-margin sub-check; `None` when the verdict is vacuous.
    pub conclusion: Option<Conclusion>,
    pub verdict: Verdict,
}

impl BoundReport {
    /// True exactly when premises held and the conclusion failed — the only
    /// state that should ever alarm.
    pub fn failed(&self) -> bool {
        self.verdict == Verdict::Fails
    }

    pub fn vacuous(&self) -> bool {
        self.verdict == Verdict::Vacuous
    }
}

fn badness(v: Verdict) -> u8 {
    match v {
        Verdict::Holds => 0,
        Verdict::HoldsWithinErrorBars => 1,
        Verdict::Vacuous => 2,
        Verdict::Fails => 3,
    }
}

/// Incremental report assembly: premises first, then any number of
/// inequality checks; the final report keeps the worst one.
struct Reporter {
    name: &'static str,
    instance: String,
    premises: Vec<Premise>,
    worst: Option<(Conclusion, Verdict, f64)>,
}

impl Reporter {
    fn new(name: &'static str, instance: String) -> Self {
        Reporter { name, instance, premises: Vec::new(), worst: None }
    }

    fn premise(&mut self, description: impl Into<String>, lhs: f64, rhs: f64, holds: bool) -> bool {
        self.premises.push(Premise { description: description.into(), lhs, rhs, holds });
        holds
    }

    /// Premise `lhs <= rhs` with the closed-form slack.
    fn premise_le(&mut self, description: impl Into<String>, lhs: f64, rhs: f64) -> bool {
        let slack = CLOSED_FORM_REL_TOL * lhs.abs().max(rhs.abs());
        self.premise(description, lhs, rhs, lhs <= rhs + slack)
    }

    fn premise_flag(&mut self, description: impl Into<String>, holds: bool) -> bool {
        self.premise(description, if holds { 1.0 } else { 0.0 }, 1.0, holds)
    }

    fn premises_hold(&self) -> bool {
        self.premises.iter().all(|p| p.holds)
    }

    /// Records an internal numerical failure as a failed premise.
    fn numerical_failure(&mut self, err: &Error) {
        self.premise(format!("numerical evaluation converged ({err})"), f64::NAN, f64::NAN, false);
    }

    fn record(&mut self, description: String, lhs: f64, rhs: f64, bar: f64, verdict: Verdict, margin: f64) {
        let concl = Conclusion {
            description,
            lhs,
            rhs,
            error_bar: bar,
            holds: verdict != Verdict::Fails,
        };
        let replace = match &self.worst {
            None => true,
            Some((_, v, m)) => {
                badness(verdict) > badness(*v)
                    || (badness(verdict) == badness(*v) && margin < *m)
            }
        };
        if replace {
            self.worst = Some((concl, verdict, margin));
        }
    }

    /// Check `lhs >= rhs`, with `bar` the one-sided uncertainty.
    fn check_ge(&mut self, description: impl Into<String>, lhs: f64, bar: f64, rhs: f64) {
        let slack = CLOSED_FORM_REL_TOL * lhs.abs().max(rhs.abs());
        let verdict = if lhs - bar >= rhs - slack {
            Verdict::Holds
        } else if lhs + bar >= rhs - slack {
            Verdict::HoldsWithinErrorBars
        } else {
            Verdict::Fails
        };
        let margin = (lhs - rhs) / lhs.abs().max(rhs.abs()).max(1.0);
        self.record(description.into(), lhs, rhs, bar, verdict, margin);
    }

    /// Check `lhs <= rhs`, with `bar` the one-sided uncertainty.
    fn check_le(&mut self, description: impl Into<String>, lhs: f64, bar: f64, rhs: f64) {
        let slack = CLOSED_FORM_REL_TOL * lhs.abs().max(rhs.abs());
        let verdict = if lhs + bar <= rhs + slack {
            Verdict::Holds
        } else if lhs - bar <= rhs + slack {
            Verdict::HoldsWithinErrorBars
        } else {
            Verdict::Fails
        };
        let margin = (rhs - lhs) / lhs.abs().max(rhs.abs()).max(1.0);
        self.record(description.into(), lhs, rhs, bar, verdict, margin);
    }

    fn vacuous(self) -> BoundReport {
        BoundReport {
            name: self.name.into(),
            instance: self.instance,
            premises: self.premises,
            conclusion: None,
            verdict: Verdict::Vacuous,
        }
    }

    fn finish(self) -> BoundReport {
        if !self.premises_hold() {
            return self.vacuous();
        }
        let (conclusion, verdict, _) =
            self.worst.expect("at least one check recorded when premises hold");
        BoundReport {
            name: self.name.into(),
            instance: self.instance,
            premises: self.premises,
            conclusion: Some(conclusion),
            verdict,
        }
    }
}

fn describe_instance(ds: &Dataset, nl: NoiseLevel) -> String {
    format!(
        "n={}, min_gap={:.6e}, mu={}, sigma={}",
        ds.n(),
        ds.delta().unwrap_or(f64::NAN),
        nl.mu(),
        nl.sigma()
    )
}

fn describe_net_instance(net: &TwoLayerNet, ds: &Dataset, nl: NoiseLevel) -> String {
    format!("{}, m={}, clip={}", describe_instance(ds, nl), net.m(), net.clip())
}

/// Shared small-noise scale `exp(-mu^2 gap^2 / (4 sigma^2))`.
fn collision_scale(delta: f64, nl: NoiseLevel) -> f64 {
    let r = nl.mu() * delta;
    (-r * r / (4.0 * nl.var())).exp()
}

/// Posterior-weight concentration: at the midpoint between adjacent scaled
/// atoms the posterior variance is at least `gap^2 / (2n)`, while within a
/// quarter-gap of a scaled atom both the mean deviation and the variance are
/// exponentially small in `(mu gap / sigma)^2`.
pub fn verify_midpoint_variance(ds: &Dataset, nl: NoiseLevel) -> BoundReport {
    let mut r = Reporter::new("posterior-weight-concentration", describe_instance(ds, nl));
    let n = ds.n();
    r.premise("dataset has at least two points", n as f64, 2.0, n >= 2);
    let delta = ds.delta().unwrap_or(f64::NAN);
    if n >= 2 {
        r.premise_le(
            "noise is below half the scaled minimum gap (2 sigma/mu <= gap)",
            2.0 * nl.sigma() / nl.mu(),
            delta,
        );
    }
    if !r.premises_hold() {
        return r.vacuous();
    }

    let pts = ds.points();
    let nf = n as f64;
    let (mu, _) = (nl.mu(), nl.sigma());
    for i in 0..n - 1 {
        let gap = pts[i + 1] - pts[i];
        let mid = mu * (pts[i] + pts[i + 1]) / 2.0;
        let v = score::atom_moments(ds, nl, mid).var;
        r.check_ge(
            format!("posterior variance at midpoint {i} >= local gap^2/(2n)"),
            v,
            0.0,
            gap * gap / (2.0 * nf),
        );
    }
    let e = collision_scale(delta, nl);
    let mean_bound = nf * delta * e;
    let var_bound = 4.0 * nf * nf * delta * delta * e;
    for (i, &x) in pts.iter().enumerate() {
        for off in [-0.25 * mu * delta, 0.0, 0.25 * mu * delta] {
            let y = mu * x + off;
            // The deviation is formed from atom differences: subtracting the
            // anchor from the absolute posterior mean would round away
            // everything below one ulp of the coordinates, and rounding noise
            // would dwarf the exponentially small envelope.
            let dev = score::posterior_deviation(ds, nl, y, i);
            r.check_le(
                format!("posterior mean near atom {i} stays within the collision envelope"),
                dev.abs(),
                0.0,
                mean_bound,
            );
            r.check_le(
                format!("posterior variance near atom {i} stays within the collision envelope"),
                score::atom_moments(ds, nl, y).var,
                0.0,
                var_bound,
            );
        }
    }
    r.finish()
}

/// Small-noise regularity of the optimal score: between each adjacent pair
/// of scaled atoms its derivative swings by at least the concentration gap,
/// and its risk is exponentially small.
pub fn verify_curvature_separation(
    ds: &Dataset,
    nl: NoiseLevel,
    mc_samples: usize,
) -> BoundReport {
    let mut r = Reporter::new("optimal-score-curvature-swing", describe_instance(ds, nl));
    let n = ds.n();
    r.premise("dataset has at least two points", n as f64, 2.0, n >= 2);
    let delta = ds.delta().unwrap_or(f64::NAN);
    if n >= 2 {
        r.premise_le(
            "noise is below half the scaled minimum gap (2 sigma/mu <= gap)",
            2.0 * nl.sigma() / nl.mu(),
            delta,
        );
    }
    if !r.premises_hold() {
        return r.vacuous();
    }

    let pts = ds.points();
    let nf = n as f64;
    let mu = nl.mu();
    let s2 = nl.var();
    let e = collision_scale(delta, nl);
    for i in 0..n - 1 {
        let gap = pts[i + 1] - pts[i];
        let mid = mu * (pts[i] + pts[i + 1]) / 2.0;
        let d_mid = score::optimal_d1(ds, nl, mid);
        let floor = (mu * mu / (s2 * s2))
            * (gap * gap / (2.0 * nf) - 4.0 * nf * nf * delta * delta * e);
        for y in [mu * pts[i], mu * pts[i + 1]] {
            let swing = (score::optimal_d1(ds, nl, y) - d_mid).abs();
            r.check_ge(
                format!("derivative swing across pair {i} exceeds the concentration gap"),
                swing,
                0.0,
                floor,
            );
        }
    }
    match score::optimal_risk_mc(ds, nl, mc_samples, INTERNAL_MC_SEED) {
        Ok(rep) => {
            r.check_le(
                "risk of the optimal score under its small-noise envelope",
                rep.mc.estimate,
                3.0 * rep.mc.std_error,
                rep.analytic_bound,
            );
        }
        Err(err) => {
            r.numerical_failure(&err);
            return r.vacuous();
        }
    }
    r.finish()
}

/// Weighted total variation of the optimal score's derivative grows like
/// `mu^3 n gap^3 / sigma^4` once atom collisions are exponentially unlikely.
pub fn verify_optimal_tv_lower(ds: &Dataset, nl: NoiseLevel) -> BoundReport {
    let mut r = Reporter::new("optimal-score-tv-floor", describe_instance(ds, nl));
    let n = ds.n();
    r.premise("dataset has at least two points", n as f64, 2.0, n >= 2);
    if n >= 2 {
        let delta = ds.delta().expect("two points have a gap");
        let nf = n as f64;
        let lhs = 16.0 * nf * nf * nf * collision_scale(delta, nl);
        r.premise_le("atom collisions are exponentially suppressed (16 n^3 e <= 1)", lhs, 1.0);
    }
    if !r.premises_hold() {
        return r.vacuous();
    }
    let floor = tv::sstar_tv_lower_bound(ds, nl).expect("n >= 2");
    match tv::tv_of_sstar(ds, nl, tv::DEFAULT_TV_REL_TOL) {
        Ok(rep) => {
            let bar = tv::DEFAULT_TV_REL_TOL * rep.value;
            r.check_ge(
                "weighted total variation of the optimal derivative above its floor",
                rep.value,
                bar,
                floor,
            );
            r.finish()
        }
        Err(err) => {
            r.numerical_failure(&err);
            r.vacuous()
        }
    }
}

/// The smoothed interval weight stays inside its closed-form envelope: above
/// the cumulative-gap floor on each inter-atom interval, and below
/// `mu * range` everywhere.
pub fn verify_weight_envelope(ds: &Dataset, nl: NoiseLevel) -> BoundReport {
    let mut r = Reporter::new("interval-weight-envelope", describe_instance(ds, nl));
    let n = ds.n();
    r.premise("dataset has at least two points", n as f64, 2.0, n >= 2);
    if !r.premises_hold() {
        return r.vacuous();
    }
    let ev = PiEvaluator::new(ds, nl);
    let pts = ds.points();
    let mu = nl.mu();
    let cap = ev.upper_bound();
    const GRID: usize = 17;
    for i in 1..n {
        let floor = ev.lower_bound_on_interval(i).expect("interior interval");
        let (a, b) = (mu * pts[i - 1], mu * pts[i]);
        for k in 0..GRID {
            let y = a + (b - a) * k as f64 / (GRID - 1) as f64;
            let p = ev.pi(y);
            r.check_ge(
                format!("interval weight on gap {i} above its cumulative-gap floor"),
                p,
                PI_REL_ERROR * p.abs(),
                floor,
            );
            // The evaluator averages quantities individually capped by the
            // range bound, so the cap holds exactly, not just within
            // quadrature error.
            r.check_le(format!("interval weight on gap {i} under the range cap"), p, 0.0, cap);
        }
    }
    for y in [
        mu * pts[0] - 2.0 * nl.sigma(),
        mu * pts[n - 1] + 2.0 * nl.sigma(),
        mu * (pts[0] + pts[n - 1]) / 2.0,
    ] {
        r.check_le("interval weight under the range cap off the grid", ev.pi(y), 0.0, cap);
    }
    r.finish()
}

/// The sharpness-budget upper bound on a network's weighted total variation:
/// `TV <= lambda_max * m/4 + sqrt(R)/2 + clip-term`, and, when a step size
/// is supplied under which the parameters are linearly stable, the same with
/// `lambda_max * m/4` replaced by `1/(2 eta)`.
pub fn verify_stable_tv_upper(
    net: &TwoLayerNet,
    ds: &Dataset,
    nl: NoiseLevel,
    eta: Option<f64>,
) -> BoundReport {
    let mut r = Reporter::new("stability-tv-budget", describe_net_instance(net, ds, nl));
    let a = net.clip();
    r.premise_flag(
        "network is in the sign-constrained class (unit inner weights)",
        net.mode() == Mode::Theory,
    );
    r.premise("outer-weight clip bound is finite", a, f64::MAX, a.is_finite());
    if r.premises_hold() {
        r.premise_le("outer weights respect the clip bound", net.max_abs_outer(), a);
    }
    if !r.premises_hold() {
        return r.vacuous();
    }

    let m = net.m() as f64;
    let lam = match hessian::HessianHandle::for_net(net, ds, nl)
        .and_then(|op| hessian::lambda_max(&op, hessian::DEFAULT_TOL, hessian::DEFAULT_MAX_ITERS))
    {
        Ok(l) => l,
        Err(err) => {
            r.numerical_failure(&err);
            return r.vacuous();
        }
    };
    let (tv_val, risk_val) = match tv::tv_of_net(net, &PiEvaluator::new(ds, nl))
        .and_then(|tv_rep| risk::risk_exact(net, ds, nl).map(|rv| (tv_rep.value, rv)))
    {
        Ok(pair) => pair,
        Err(err) => {
            r.numerical_failure(&err);
            return r.vacuous();
        }
    };
    let clip_term = a / (2.0 * std::f64::consts::PI).sqrt() / nl.sigma()
        * f64::max(
            (2.0 * ds.n() as f64 * risk_val).sqrt(),
            ((2.0 * std::f64::consts::PI * std::f64::consts::E).sqrt()
                * a
                * nl.sigma()
                * ds.n() as f64
                * risk_val)
                .cbrt(),
        );
    let base = risk_val.sqrt() / 2.0 + clip_term;
    let tv_bar = PI_REL_ERROR * tv_val;
    r.check_le(
        "total variation under the sharpness budget",
        tv_val,
        tv_bar + m / 4.0 * lam.abs() * EIG_REL_ERROR,
        m / 4.0 * lam + base,
    );
    if let Some(eta) = eta {
        let stable_cap = 2.0 / (m * eta);
        if lam <= stable_cap * (1.0 + 1e-3) {
            r.premise_le(
                "parameters are linearly stable at this step size (lambda_max <= 2/(m eta))",
                lam,
                stable_cap * (1.0 + 1e-3),
            );
            r.check_le(
                "total variation under the step-size budget",
                tv_val,
                tv_bar,
                1.0 / (2.0 * eta) + base,
            );
        }
    }
    r.finish()
}

/// Any sign-constrained network with risk in the memorization regime has
/// weighted total variation at least `mu n^2 gap / (2^11 sigma^2)`.
pub fn verify_low_risk_tv_lower(net: &TwoLayerNet, ds: &Dataset, nl: NoiseLevel) -> BoundReport {
    let mut r = Reporter::new("low-risk-tv-floor", describe_net_instance(net, ds, nl));
    let n = ds.n();
    r.premise_flag(
        "network is in the sign-constrained class (unit inner weights)",
        net.mode() == Mode::Theory,
    );
    r.premise("dataset has at least two points", n as f64, 2.0, n >= 2);
    if !r.premises_hold() {
        return r.vacuous();
    }
    let delta = ds.delta().expect("two points have a gap");
    let (mu, sigma) = (nl.mu(), nl.sigma());
    r.premise_le(
        "noise is below an eighth of the scaled minimum gap (8 sigma/mu <= gap)",
        8.0 * sigma / mu,
        delta,
    );
    let risk_val = match risk::risk_exact(net, ds, nl) {
        Ok(v) => v,
        Err(err) => {
            r.numerical_failure(&err);
            return r.vacuous();
        }
    };
    let nf = n as f64;
    r.premise_le(
        "risk is in the memorization regime (R <= 1/(16 n sigma^2))",
        risk_val,
        1.0 / (16.0 * nf * sigma * sigma),
    );
    if !r.premises_hold() {
        return r.vacuous();
    }
    match tv::tv_of_net(net, &PiEvaluator::new(ds, nl)) {
        Ok(rep) => {
            r.check_ge(
                "total variation above the low-risk floor",
                rep.value,
                PI_REL_ERROR * rep.value,
                mu * nf * nf * delta / (2048.0 * sigma * sigma),
            );
            r.finish()
        }
        Err(err) => {
            r.numerical_failure(&err);
            r.vacuous()
        }
    }
}

/// At a linearly stable local minimum trained with a large step size in the
/// small-noise regime, the excess risk over the optimal score is bounded
/// away from zero. The non-constructive noise threshold is replaced by the
/// explicit sub-conditions appearing in its derivation, each reported.
pub fn verify_excess_risk_lower(
    net: &TwoLayerNet,
    ds: &Dataset,
    nl: NoiseLevel,
    eta: f64,
) -> BoundReport {
    let mut r = Reporter::new("large-step-excess-risk-floor", describe_net_instance(net, ds, nl));
    let n = ds.n();
    let a = net.clip();
    r.premise_flag(
        "network is in the sign-constrained class (unit inner weights)",
        net.mode() == Mode::Theory,
    );
    r.premise("outer-weight clip bound is finite", a, f64::MAX, a.is_finite());
    r.premise("dataset has at least two points", n as f64, 2.0, n >= 2);
    if r.premises_hold() {
        r.premise_le("outer weights respect the clip bound", net.max_abs_outer(), a);
    }
    if !r.premises_hold() {
        return r.vacuous();
    }

    let delta = ds.delta().expect("two points have a gap");
    let (mu, sigma) = (nl.mu(), nl.sigma());
    let nf = n as f64;
    let range = ds.range();
    let pi = std::f64::consts::PI;
    let root_e = std::f64::consts::E.sqrt();

    r.premise_le("noise threshold 1: sigma <= mu gap / 8", sigma, mu * delta / 8.0);
    let lhs2 = (-mu * mu * delta * delta / (32.0 * sigma * sigma)).exp();
    let rhs2 = pi * nf.powi(5) * mu / (2f64.powi(38) * root_e * range * range * a.powi(4));
    r.premise_le(
        "noise threshold 2: collision scale below the floor-divided-by-range scale",
        lhs2,
        rhs2,
    );
    r.premise_le("noise threshold 3: sigma <= 1/n", sigma, 1.0 / nf);

    let risk_val = match risk::risk_exact(net, ds, nl) {
        Ok(v) => v,
        Err(err) => {
            r.numerical_failure(&err);
            return r.vacuous();
        }
    };
    r.premise_le(
        "noise threshold 4: sqrt(R)/2 within half the low-risk floor",
        risk_val.sqrt() / 2.0,
        mu * nf * nf * delta / (2f64.powi(13) * sigma * sigma),
    );

    let m = net.m() as f64;
    let lam = match hessian::HessianHandle::for_net(net, ds, nl)
        .and_then(|op| hessian::lambda_max(&op, hessian::DEFAULT_TOL, hessian::DEFAULT_MAX_ITERS))
    {
        Ok(l) => l,
        Err(err) => {
            r.numerical_failure(&err);
            return r.vacuous();
        }
    };
    r.premise_le(
        "parameters are linearly stable at this step size (lambda_max <= 2/(m eta))",
        lam,
        2.0 / (m * eta) * (1.0 + 1e-3),
    );
    let grad = match risk::risk_grad_exact(net, ds, nl) {
        Ok(g) => g,
        Err(err) => {
            r.numerical_failure(&err);
            return r.vacuous();
        }
    };
    let grad_norm = grad
        .d_w2
        .iter()
        .chain(grad.d_b.iter())
        .map(|g| g * g)
        .sum::<f64>()
        .sqrt();
    r.premise_le(
        "parameters are a critical point (gradient norm below 1e-3 (1 + R))",
        grad_norm,
        1e-3 * (1.0 + risk_val),
    );
    r.premise(
        "step size is in the large-step regime (eta > 2^12 sigma^2/(mu n^2 gap))",
        eta,
        2f64.powi(12) * sigma * sigma / (mu * nf * nf * delta),
        eta > 2f64.powi(12) * sigma * sigma / (mu * nf * nf * delta),
    );
    if !r.premises_hold() {
        return r.vacuous();
    }

    let optimal = match score::optimal_risk_quadrature(ds, nl, 96) {
        Ok(v) => v,
        Err(err) => {
            r.numerical_failure(&err);
            return r.vacuous();
        }
    };
    let floor = pi * nf.powi(5) * mu.powi(3) * delta.powi(3)
        / (2f64.powi(36) * root_e * a.powi(4) * sigma.powi(4));
    r.check_ge(
        "excess risk above the large-step floor",
        risk_val - optimal,
        1e-6 * optimal.abs(),
        floor,
    );
    r.finish()
}

/// The top eigenvalue of the tangent-kernel term of the risk Hessian
/// dominates `2/m` times the network's weighted total variation.
pub fn verify_kernel_tv_lower(net: &TwoLayerNet, ds: &Dataset, nl: NoiseLevel) -> BoundReport {
    let mut r = Reporter::new("kernel-eigenvalue-tv-floor", describe_net_instance(net, ds, nl));
    r.premise_flag(
        "network is in the sign-constrained class (unit inner weights)",
        net.mode() == Mode::Theory,
    );
    if !r.premises_hold() {
        return r.vacuous();
    }
    match hessian::ntk_tv_sides(net, ds, nl) {
        Ok((lam, scaled_tv)) => {
            r.check_ge(
                "kernel top eigenvalue above the scaled total variation",
                lam,
                lam.abs() * EIG_REL_ERROR + scaled_tv.abs() * PI_REL_ERROR,
                scaled_tv,
            );
            r.finish()
        }
        Err(err) => {
            r.numerical_failure(&err);
            r.vacuous()
        }
    }
}

/// Counts by verdict over a batch of reports.
#[derive(Debug, Clone, Copy, Default, Serialize)]
pub struct SuiteSummary {
    pub total: usize,
    pub holds: usize,
    pub holds_within_error_bars: usize,
    pub vacuous: usize,
    pub fails: usize,
}

pub fn suite_summary(reports: &[BoundReport]) -> SuiteSummary {
    let mut s = SuiteSummary { total: reports.len(), ..SuiteSummary::default() };
    for rep in reports {
        match rep.verdict {
            Verdict::Holds => s.holds += 1,
            Verdict::HoldsWithinErrorBars => s.holds_within_error_bars += 1,
            Verdict::Vacuous => s.vacuous += 1,
            Verdict::Fails => s.fails += 1,
        }
    }
    s
}

impl std::fmt::Display for SuiteSummary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{} reports: {} hold, {} hold within error bars, {} vacuous, {} fail",
            self.total, self.holds, self.holds_within_error_bars, self.vacuous, self.fails
        )
    }
}

pub fn non_vacuous_failures(reports: &[BoundReport]) -> Vec<&BoundReport> {
    reports.iter().filter(|r| r.failed()).collect()
}

/// Randomized falsification sweep: `instances` random problem instances with
/// the noise-to-gap ratio `sigma/(mu gap)` stratified log-uniformly over
/// `[1/100, 2]`, two thirds equispaced and one third rescaled Gaussian
/// datasets, and a random sign-constrained network per instance. Runs every
/// verifier that applies to arbitrary (non-trained) parameters.
pub fn randomized_suite(instances: usize, seed: u64) -> Result<Vec<BoundReport>> {
    const MC_SAMPLES: usize = 20_000;
    if instances == 0 {
        return Err(Error::EmptyInput);
    }
    let mut reports = Vec::with_capacity(instances * 7);
    for idx in 0..instances {
        let mut r = rng::substream_rng(seed, idx as u64);
        let frac = if instances == 1 { 0.5 } else { idx as f64 / (instances - 1) as f64 };
        let ratio = (0.01f64.ln() + frac * 200f64.ln()).exp();
        let sigma = r.random_range(0.02..0.6);
        let mu = r.random_range(0.5..1.0);
        let delta = sigma / (ratio * mu);
        let n = r.random_range(2..=24usize);
        let nl = NoiseLevel::new(mu, sigma)?;
        let ds = if idx % 3 != 2 {
            Dataset::equispaced(n, -(n as f64 - 1.0) * delta / 2.0, delta)?
        } else {
            let raw = Dataset::from_gaussian(n, 1.0, rng::substream(seed, 1000 + idx as u64))?;
            let scale = delta / raw.delta().expect("n >= 2");
            Dataset::from_points(raw.points().iter().map(|&p| p * scale).collect())?
        };

        let m = 2 * r.random_range(2..=16usize);
        let a: f64 = if idx % 2 == 0 { r.random_range(2.0..50.0) } else { 1e4 };
        let w2_span = a.min(20.0);
        let (lo, hi) = (nl.mu() * ds.min() - 1.0, nl.mu() * ds.max() + 1.0);
        let mut w1 = Vec::with_capacity(m);
        let mut w2 = Vec::with_capacity(m);
        let mut b = Vec::with_capacity(m);
        for _ in 0..m {
            let s: f64 = if r.random_bool(0.5) { 1.0 } else { -1.0 };
            let tau = r.random_range(lo..hi);
            w1.push(s);
            b.push(-s * tau);
            w2.push(r.random_range(-w2_span..w2_span));
        }
        let net = TwoLayerNet::from_parts(Mode::Theory, 1, w1, w2, b, a)?;
        let eta = r.random_range(1e-3..1.0);

        reports.push(verify_midpoint_variance(&ds, nl));
        reports.push(verify_curvature_separation(&ds, nl, MC_SAMPLES));
        reports.push(verify_optimal_tv_lower(&ds, nl));
        reports.push(verify_weight_envelope(&ds, nl));
        reports.push(verify_stable_tv_upper(&net, &ds, nl, Some(eta)));
        reports.push(verify_low_risk_tv_lower(&net, &ds, nl));
        reports.push(verify_kernel_tv_lower(&net, &ds, nl));
    }
    Ok(reports)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn acceptance_dataset() -> (Dataset, NoiseLevel) {
        let ds = Dataset::equispaced(20, 0.0, 1.0).unwrap();
        let nl = NoiseLevel::new(1.0, 0.02).unwrap();
        (ds, nl)
    }

    #[test]
    fn small_noise_instance_verifies_every_dataset_bound() {
        let (ds, nl) = acceptance_dataset();
        for report in [
            verify_midpoint_variance(&ds, nl),
            verify_curvature_separation(&ds, nl, 20_000),
            verify_optimal_tv_lower(&ds, nl),
            verify_weight_envelope(&ds, nl),
        ] {
            assert!(
                report.premises.iter().all(|p| p.holds),
                "{}: premise failed: {:?}",
                report.name,
                report.premises
            );
            assert!(
                matches!(report.verdict, Verdict::Holds | Verdict::HoldsWithinErrorBars),
                "{}: {:?}",
                report.name,
                report.conclusion
            );
            let c = report.conclusion.expect("non-vacuous report carries a conclusion");
            assert!(c.holds);
        }
    }

    #[test]
    fn big_noise_instance_is_vacuous_with_no_conclusion() {
        let ds = Dataset::equispaced(20, 0.0, 1.0).unwrap();
        let nl = NoiseLevel::new(1.0, 0.95).unwrap();
        for report in
            [verify_midpoint_variance(&ds, nl), verify_optimal_tv_lower(&ds, nl)]
        {
            assert_eq!(report.verdict, Verdict::Vacuous, "{}", report.name);
            assert!(report.conclusion.is_none());
            assert!(report.premises.iter().any(|p| !p.holds));
        }
    }

    #[test]
    fn two_point_midpoint_variance_is_tight() {
        let ds = Dataset::from_points(vec![0.0, 1.0]).unwrap();
        let nl = NoiseLevel::new(1.0, 0.3).unwrap();
        let v = score::atom_moments(&ds, nl, 0.5).var;
        assert!((v - 0.25).abs() < 1e-14, "midpoint variance {v}");
        let report = verify_midpoint_variance(&ds, nl);
        assert_eq!(report.verdict, Verdict::Holds);
        let c = report.conclusion.unwrap();
        // The worst margin is the tight midpoint bound itself.
        assert!((c.lhs - c.rhs).abs() <= 1e-12, "lhs {} rhs {}", c.lhs, c.rhs);
    }

    #[test]
    fn random_network_bounds_hold_without_step_size() {
        let ds = Dataset::from_gaussian(12, 1.0, 5).unwrap();
        let nl = NoiseLevel::new(0.9, 0.25).unwrap();
        let mut r = rng::substream_rng(17, 0);
        let m = 10;
        let mut w1 = Vec::new();
        let mut w2 = Vec::new();
        let mut b = Vec::new();
        for _ in 0..m {
            let s: f64 = if r.random_bool(0.5) { 1.0 } else { -1.0 };
            let tau: f64 = r.random_range(-2.0..2.0);
            w1.push(s);
            b.push(-s * tau);
            w2.push(r.random_range(-8.0..8.0));
        }
        let net = TwoLayerNet::from_parts(Mode::Theory, 1, w1, w2, b, 25.0).unwrap();
        let upper = verify_stable_tv_upper(&net, &ds, nl, None);
        assert!(
            matches!(upper.verdict, Verdict::Holds | Verdict::HoldsWithinErrorBars),
            "{:?}",
            upper
        );
        let kernel = verify_kernel_tv_lower(&net, &ds, nl);
        assert!(
            matches!(kernel.verdict, Verdict::Holds | Verdict::HoldsWithinErrorBars),
            "{:?}",
            kernel
        );
        // A random network is far from the memorization regime, so the
        // low-risk floor is vacuous here.
        let low = verify_low_risk_tv_lower(&net, &ds, nl);
        assert_eq!(low.verdict, Verdict::Vacuous);
    }

    #[test]
    fn weight_envelope_needs_no_noise_premise() {
        let ds = Dataset::from_gaussian(12, 1.0, 9).unwrap();
        let nl = NoiseLevel::new(0.7, 0.55).unwrap();
        let report = verify_weight_envelope(&ds, nl);
        assert!(
            matches!(report.verdict, Verdict::Holds | Verdict::HoldsWithinErrorBars),
            "{:?}",
            report.conclusion
        );
    }

    #[test]
    fn randomized_sweep_has_no_nonvacuous_failures() {
        let reports = randomized_suite(6, 20_260_818).unwrap();
        assert_eq!(reports.len(), 42);
        let summary = suite_summary(&reports);
        assert_eq!(summary.fails, 0, "failures: {:#?}", non_vacuous_failures(&reports));
        assert!(summary.holds > 0);
        // Reports must be serializable for the command-line consumers.
        let json = serde_json::to_string(&reports).unwrap();
        assert!(json.contains("posterior-weight-concentration"));
    }
}
