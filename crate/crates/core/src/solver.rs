//! Per-context objective, stationarity residual and fixed-point solver.
//!
//! With the GRPO penalty a stationary policy satisfies, for every output in
//! the reference support,
//!
//! ```text
//! (1 − (P(o|π) − Ē) / β) · π(o) = π_ref(o),      Ē = E_{o′∼π}[P(o′|π)]
//! ```
//!
//! so `π(o) = π_ref(o) / (1 − (P(o|π) − Ē)/β)`. With a direct KL penalty the
//! condition is the logarithmic pool `π ∝ π_ref · exp(P(·|π)/β)`.
//!
//! The solver iterates a damped map whose fixed points are exactly these
//! solutions. For the GRPO penalty the multiplier `Ē` is not taken from the
//! current iterate. It is chosen so the image is normalised, which keeps
//! every denominator positive along the path.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)] // float math on toolchains where core lacks it
use num_traits::Float;

use crate::divergence::{kl, kl0};
use crate::preference::{pairwise_preference, PreferenceMethod, PreferenceModel};
use crate::scenario::{ContextSpec, GroupSize, Hyperparams, Normalisation, Penalty};
use crate::simplex::sup_norm;
use crate::{Error, Result};

/// Penalty, normalisation and group size of a GRPO variant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Variant {
    /// Reference-policy penalty.
    pub penalty: Penalty,
    /// Reward normalisation.
    pub normalisation: Normalisation,
    /// Group size.
    pub group_size: GroupSize,
}

impl Variant {
    /// The variant of a hyperparameter set.
    pub fn of(hyper: &Hyperparams) -> Self {
        Variant {
            penalty: hyper.penalty,
            normalisation: hyper.normalisation,
            group_size: hyper.group_size,
        }
    }

    /// Hyperparameters for this variant at strength `beta`.
    pub fn with_beta(self, beta: f64) -> Hyperparams {
        Hyperparams {
            beta,
            group_size: self.group_size,
            penalty: self.penalty,
            normalisation: self.normalisation,
        }
    }
}

/// Settings for the damped fixed-point iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig {
    /// Weight of the new image in each step, in `(0, 1]`.
    pub damping: f64,
    /// Iteration cap.
    pub max_iterations: usize,
    /// Sup-norm tolerance on both the step and the stationarity residual.
    pub tolerance: f64,
    /// How group preferences are evaluated.
    pub preference_method: PreferenceMethod,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            damping: 0.5,
            max_iterations: 100_000,
            tolerance: 1e-10,
            preference_method: PreferenceMethod::Exact,
        }
    }
}

impl SolverConfig {
    /// Checks ranges.
    pub fn validate(&self) -> Result<()> {
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return Err(Error::Argument(format!("damping {} outside (0, 1]", self.damping)));
        }
        if !(self.tolerance > 0.0) {
            return Err(Error::Argument(format!("tolerance {} must be positive", self.tolerance)));
        }
        if self.max_iterations == 0 {
            return Err(Error::Argument("max_iterations must be positive".into()));
        }
        Ok(())
    }
}

/// Outcome of a fixed-point solve.
#[derive(Debug, Clone, PartialEq)]
pub struct SolveResult {
    /// Final policy (the best iterate if not converged).
    pub pi: Vec<f64>,
    /// Stationarity residual at `pi`.
    pub kkt_residual: f64,
    /// Iterations performed.
    pub iterations: usize,
    /// Whether both step and residual fell below the tolerance.
    pub converged: bool,
    /// Sup-norm change of each step.
    pub trace: Vec<f64>,
    /// `E_{o∼π}[P(o|π)]` at `pi`, which should vanish.
    pub mean_preference: f64,
}

fn model(ctx: &ContextSpec, hyper: &Hyperparams, method: PreferenceMethod) -> Result<PreferenceModel> {
    hyper.validate()?;
    PreferenceModel::new(ctx, hyper.group_size, hyper.normalisation, method)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `E_{o∼π}[P(o|π_old)] − β·penalty(π, π_ref; π_old)`, without clipping.
pub fn objective(pi: &[f64], pi_old: &[f64], ctx: &ContextSpec, hyper: &Hyperparams) -> Result<f64> {
    ctx.check_policy(pi)?;
    ctx.check_policy(pi_old)?;
    let m = model(ctx, hyper, PreferenceMethod::Exact)?;
    objective_with(&m, pi, pi_old, ctx, hyper)
}

pub(crate) fn objective_with(
    m: &PreferenceModel,
    pi: &[f64],
    pi_old: &[f64],
    ctx: &ContextSpec,
    hyper: &Hyperparams,
) -> Result<f64> {
    let p = m.evaluate(pi_old)?;
    Ok(dot(pi, &p) - hyper.beta * penalty(pi, pi_old, ctx, hyper.penalty)?)
}

pub(crate) fn penalty(pi: &[f64], pi_old: &[f64], ctx: &ContextSpec, which: Penalty) -> Result<f64> {
    let r = ctx.reference();
    match which {
        Penalty::Kl0 => kl0(pi, &r, pi_old),
        Penalty::DirectKl => kl(pi, &r),
    }
}

/// Stationarity residual of `pi`, in sup-norm over supported outputs.
pub fn kkt_residual(pi: &[f64], ctx: &ContextSpec, hyper: &Hyperparams) -> Result<f64> {
    ctx.check_policy(pi)?;
    let m = model(ctx, hyper, PreferenceMethod::Exact)?;
    let p = m.evaluate(pi)?;
    Ok(residual_from(pi, &p, ctx, hyper))
}

fn residual_from(pi: &[f64], p: &[f64], ctx: &ContextSpec, hyper: &Hyperparams) -> f64 {
    let r = ctx.reference();
    let beta = hyper.beta;
    match hyper.penalty {
        Penalty::Kl0 => {
            let mean = dot(pi, p);
            (0..pi.len())
                .filter(|&o| r[o] > 0.0)
                .map(|o| ((1.0 - (p[o] - mean) / beta) * pi[o] - r[o]).abs())
                .fold(0.0, f64::max)
        }
        Penalty::DirectKl => {
            let target = log_pool(&r, p, beta);
            sup_norm(pi, &target)
        }
    }
}

/// `π_ref · exp(score/β)`, normalised, with zero reference mass kept at 0.
fn log_pool(reference: &[f64], score: &[f64], beta: f64) -> Vec<f64> {
    let top = (0..reference.len())
        .filter(|&o| reference[o] > 0.0)
        .map(|o| score[o])
        .fold(f64::NEG_INFINITY, f64::max);
    let mut w: Vec<f64> = reference
        .iter()
        .zip(score)
        .map(|(&r, &s)| if r > 0.0 { r * ((s - top) / beta).exp() } else { 0.0 })
        .collect();
    let z: f64 = w.iter().sum();
    for x in w.iter_mut() {
        *x /= z;
    }
    w
}

/// Normalised image `π_ref(o)·β / (s + m − P(o))` where `m = max P` over the
/// support and `s > 0` is the unique value making the image sum to one.
fn grpo_image(reference: &[f64], p: &[f64], beta: f64) -> Vec<f64> {
    let support: Vec<usize> = (0..reference.len()).filter(|&o| reference[o] > 0.0).collect();
    let (mut top, mut low, mut top_ref) = (f64::NEG_INFINITY, f64::INFINITY, 0.0);
    for &o in &support {
        if p[o] > top {
            top = p[o];
            top_ref = reference[o];
        }
        low = low.min(p[o]);
    }
    if top == low {
        return reference.to_vec();
    }
    let gaps: Vec<f64> = support.iter().map(|&o| top - p[o]).collect();
    let f = |s: f64| -> (f64, f64) {
        let mut v = -1.0;
        let mut d = 0.0;
        for (k, &o) in support.iter().enumerate() {
            let q = reference[o] * beta / (s + gaps[k]);
            v += q;
            d -= q / (s + gaps[k]);
        }
        (v, d)
    };
    // f is convex and decreasing on s > 0 and f(top_ref·β) ≥ 0, so Newton from
    // the left end increases monotonically to the root.
    let mut s = top_ref * beta;
    for _ in 0..200 {
        let (v, d) = f(s);
        if v <= 0.0 {
            break;
        }
        let next = s - v / d;
        if !(next > s) || next == s {
            break;
        }
        s = next.min(beta);
    }
    let mut u = vec![0.0; reference.len()];
    for (k, &o) in support.iter().enumerate() {
        u[o] = reference[o] * beta / (s + gaps[k]);
    }
    let z: f64 = u.iter().sum();
    for x in u.iter_mut() {
        *x /= z;
    }
    u
}

/// Solves the stationarity condition starting from `π_ref`.
pub fn solve_stationary(ctx: &ContextSpec, hyper: &Hyperparams, cfg: &SolverConfig) -> Result<SolveResult> {
    solve_from(ctx, hyper, cfg, &ctx.reference())
}

/// Solves the stationarity condition starting from `init`.
pub fn solve_from(
    ctx: &ContextSpec,
    hyper: &Hyperparams,
    cfg: &SolverConfig,
    init: &[f64],
) -> Result<SolveResult> {
    cfg.validate()?;
    ctx.check_policy(init)?;
    let m = model(ctx, hyper, cfg.preference_method)?;
    let reference = ctx.reference();
    let beta = hyper.beta;
    iterate(cfg, init, |pi| {
        let p = m.evaluate(pi)?;
        let image = match hyper.penalty {
            Penalty::Kl0 => grpo_image(&reference, &p, beta),
            Penalty::DirectKl => log_pool(&reference, &p, beta),
        };
        Ok((image, residual_from(pi, &p, ctx, hyper), dot(pi, &p)))
    })
}

/// Damped iteration `π ← (1−d)π + d·image(π)`. `step` returns the image,
/// the residual at `π` and the mean preference at `π`.
fn iterate<F>(cfg: &SolverConfig, init: &[f64], mut step: F) -> Result<SolveResult>
where
    F: FnMut(&[f64]) -> Result<(Vec<f64>, f64, f64)>,
{
    let mut pi = init.to_vec();
    let mut trace = Vec::new();
    let mut best: Option<(Vec<f64>, f64, f64, usize)> = None;
    for t in 0..=cfg.max_iterations {
        let (image, residual, mean) = step(&pi)?;
        if !residual.is_finite() || image.iter().any(|x| !x.is_finite()) {
            return Err(Error::Diverged(format!("non-finite iterate at step {t}")));
        }
        let gap = sup_norm(&pi, &image);
        if residual <= cfg.tolerance && gap <= cfg.tolerance {
            return Ok(SolveResult {
                pi,
                kkt_residual: residual,
                iterations: t,
                converged: true,
                trace,
                mean_preference: mean,
            });
        }
        if best.as_ref().is_none_or(|b| residual < b.1) {
            best = Some((pi.clone(), residual, mean, t));
        }
        if t == cfg.max_iterations {
            break;
        }
        let next: Vec<f64> = pi
            .iter()
            .zip(&image)
            .map(|(a, b)| (1.0 - cfg.damping) * a + cfg.damping * b)
            .collect();
        trace.push(sup_norm(&pi, &next));
        pi = next;
    }
    let (pi, kkt_residual, mean_preference, _) = best.expect("at least one iterate");
    Ok(SolveResult {
        pi,
        kkt_residual,
        iterations: cfg.max_iterations,
        converged: false,
        trace,
        mean_preference,
    })
}

/// A stationary point found by [`solve_multistart`], with its value
/// `J(π | π) = −β·KL(π ‖ π_ref)` (the reward part vanishes there).
#[derive(Debug, Clone, PartialEq)]
pub struct Stationary {
    /// The solve that reached it.
    pub result: SolveResult,
    /// Objective value at the point.
    pub objective: f64,
}

/// Solves from `π_ref` and from each vertex-biased start `0.9·e_k + 0.1·π_ref`,
/// and returns the distinct converged limits by decreasing objective.
/// Non-converged runs are kept only if nothing converged.
pub fn solve_multistart(ctx: &ContextSpec, hyper: &Hyperparams, cfg: &SolverConfig) -> Result<Vec<Stationary>> {
    let reference = ctx.reference();
    let mut starts = vec![reference.clone()];
    for k in (0..ctx.len()).filter(|&k| reference[k] > 0.0) {
        let mut s: Vec<f64> = reference.iter().map(|r| 0.1 * r).collect();
        s[k] += 0.9;
        starts.push(s);
    }
    let m = model(ctx, hyper, PreferenceMethod::Exact)?;
    let separation = (1e3 * cfg.tolerance).max(1e-8);
    let mut found: Vec<Stationary> = Vec::new();
    for s in &starts {
        let result = solve_from(ctx, hyper, cfg, s)?;
        if found.iter().any(|f| sup_norm(&f.result.pi, &result.pi) <= separation) {
            continue;
        }
        let objective = objective_with(&m, &result.pi, &result.pi, ctx, hyper)?;
        found.push(Stationary { result, objective });
    }
    if found.iter().any(|f| f.result.converged) {
        found.retain(|f| f.result.converged);
    }
    found.sort_by(|a, b| b.objective.partial_cmp(&a.objective).unwrap_or(core::cmp::Ordering::Equal));
    Ok(found)
}

/// RLHF optimum `π ∝ π_ref · exp(r/β)` with `r` the expected reward.
pub fn rlhf_aggregate(ctx: &ContextSpec, beta: f64) -> Result<Vec<f64>> {
    if !(beta > 0.0) {
        return Err(Error::Argument(format!("beta {beta} must be positive")));
    }
    Ok(log_pool(&ctx.reference(), &ctx.mean_rewards(), beta))
}

/// NLHF equilibrium `π ∝ π_ref · exp(E_{o′∼π}[P(o ≻ o′)]/β)`, found by the
/// same damped iteration. The residual is the sup-norm distance to the pool.
pub fn nlhf_aggregate(ctx: &ContextSpec, beta: f64, cfg: &SolverConfig) -> Result<SolveResult> {
    if !(beta > 0.0) {
        return Err(Error::Argument(format!("beta {beta} must be positive")));
    }
    cfg.validate()?;
    let n = ctx.len();
    let mut pref = vec![0.0; n * n];
    for o in 0..n {
        for j in 0..n {
            pref[o * n + j] = pairwise_preference(o, j, ctx)?;
        }
    }
    let reference = ctx.reference();
    iterate(cfg, &reference, |pi| {
        let score: Vec<f64> = (0..n).map(|o| dot(&pref[o * n..(o + 1) * n], pi)).collect();
        let image = log_pool(&reference, &score, beta);
        let residual = sup_norm(pi, &image);
        Ok((image, residual, 0.0))
    })
}
