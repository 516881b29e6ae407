//! Brute-force stationary policies by best-response iteration.
//!
//! The best response to an old policy maximises the unclipped objective over
//! the simplex directly, by a barycentric grid or by projected gradient
//! ascent. Iterating best responses from `π_ref` gives a stationary policy
//! that does not depend on the solver's fixed-point map.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)] // float math on toolchains where core lacks it
use num_traits::Float;
use rand::Rng;

use crate::divergence::{kl0_grad, kl_grad};
use crate::preference::{PreferenceMethod, PreferenceModel};
use crate::scenario::{ContextSpec, GroupSize, Hyperparams, Normalisation, OutputSpec, Penalty, RewardSpec};
use crate::simplex::{project, sup_norm};
use crate::solver::{kkt_residual, penalty};
use crate::{Error, Result};

/// Largest number of outputs the grid method accepts.
pub const GRID_MAX_OUTPUTS: usize = 5;

/// Smallest grid resolution accepted on two-output contexts.
pub const GRID_MIN_BINARY_RESOLUTION: usize = 100;

/// How a best response is computed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OracleMethod {
    /// Exhaustive search over `{k/resolution}` lattice points of the simplex.
    Grid {
        /// Lattice denominator.
        resolution: usize,
    },
    /// Projected gradient ascent with an adaptive step.
    ProjectedAscent {
        /// Initial step size.
        step: f64,
        /// Iteration cap.
        iters: usize,
    },
}

/// Settings for best-response iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleConfig {
    /// Best-response method.
    pub method: OracleMethod,
    /// Cap on best-response rounds.
    pub outer_iterations: usize,
    /// Sup-norm tolerance between rounds.
    pub tolerance: f64,
    /// Weight `λ` of the best response in `π ← (1−λ)π + λ·BR(π)`. The plain
    /// iteration uses 1; smaller values damp cycles without moving fixed
    /// points.
    pub relaxation: f64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig {
            method: OracleMethod::ProjectedAscent {
                step: 0.1,
                iters: 20_000,
            },
            outer_iterations: 5_000,
            tolerance: 1e-9,
            relaxation: 1.0,
        }
    }
}

impl OracleConfig {
    fn validate(&self, ctx: &ContextSpec) -> Result<()> {
        match self.method {
            OracleMethod::Grid { resolution } => {
                if ctx.len() > GRID_MAX_OUTPUTS {
                    return Err(Error::Argument(format!(
                        "grid search supports at most {GRID_MAX_OUTPUTS} outputs, got {}",
                        ctx.len()
                    )));
                }
                if resolution == 0 || (ctx.len() == 2 && resolution < GRID_MIN_BINARY_RESOLUTION) {
                    return Err(Error::Argument(format!("grid resolution {resolution} too small")));
                }
            }
            OracleMethod::ProjectedAscent { step, iters } => {
                if !(step > 0.0) || iters == 0 {
                    return Err(Error::Argument("projected ascent needs step > 0 and iters > 0".into()));
                }
            }
        }
        if !(self.tolerance > 0.0) || self.outer_iterations == 0 {
            return Err(Error::Argument("oracle needs tolerance > 0 and outer_iterations > 0".into()));
        }
        if !(self.relaxation > 0.0 && self.relaxation <= 1.0) {
            return Err(Error::Argument(format!("relaxation {} outside (0, 1]", self.relaxation)));
        }
        Ok(())
    }
}

/// The objective against a fixed old policy, with its preferences cached.
struct Problem<'a> {
    ctx: &'a ContextSpec,
    reference: Vec<f64>,
    pi_old: &'a [f64],
    p: Vec<f64>,
    beta: f64,
    penalty: Penalty,
}

impl Problem<'_> {
    fn value(&self, pi: &[f64]) -> f64 {
        match penalty(pi, self.pi_old, self.ctx, self.penalty) {
            Ok(d) => pi.iter().zip(&self.p).map(|(a, b)| a * b).sum::<f64>() - self.beta * d,
            Err(_) => f64::NEG_INFINITY,
        }
    }

    /// `value(y) − value(x)` computed from differences, so that tiny
    /// improvements are not lost to cancellation.
    fn gain(&self, x: &[f64], y: &[f64]) -> f64 {
        let mut total = 0.0;
        for o in 0..x.len() {
            let d = y[o] - x[o];
            if d == 0.0 {
                continue;
            }
            let pen = match self.penalty {
                Penalty::Kl0 => {
                    let w = self.pi_old[o];
                    if w == 0.0 {
                        0.0
                    } else if y[o] <= 0.0 {
                        return f64::NEG_INFINITY;
                    } else {
                        // ρ_y − ρ_x − ln(ρ_y/ρ_x), with ρ = π_ref/π
                        w * (-self.reference[o] * d / (x[o] * y[o]) - (-d / y[o]).ln_1p())
                    }
                }
                Penalty::DirectKl => {
                    if y[o] == 0.0 {
                        -x[o] * (x[o] / self.reference[o]).ln()
                    } else if x[o] == 0.0 {
                        y[o] * (y[o] / self.reference[o]).ln()
                    } else {
                        d * (y[o] / self.reference[o]).ln() + x[o] * (d / x[o]).ln_1p()
                    }
                }
            };
            total += d * self.p[o] - self.beta * pen;
        }
        total
    }

    fn gradient(&self, pi: &[f64]) -> Option<Vec<f64>> {
        let g = match self.penalty {
            Penalty::Kl0 => kl0_grad(pi, &self.reference, self.pi_old).ok()?,
            Penalty::DirectKl => kl_grad(pi, &self.reference).ok()?,
        };
        Some(
            (0..pi.len())
                .map(|o| if self.reference[o] > 0.0 { self.p[o] - self.beta * g[o] } else { 0.0 })
                .collect(),
        )
    }
}

/// Maximiser of `objective(·, pi_old)` over the simplex restricted to the
/// reference support. The result is never worse than `pi_old` or `π_ref`.
pub fn best_response(pi_old: &[f64], ctx: &ContextSpec, hyper: &Hyperparams, cfg: &OracleConfig) -> Result<Vec<f64>> {
    cfg.validate(ctx)?;
    hyper.validate()?;
    ctx.check_policy(pi_old)?;
    let model = PreferenceModel::new(ctx, hyper.group_size, hyper.normalisation, PreferenceMethod::Exact)?;
    best_response_with(&model, pi_old, ctx, hyper, cfg)
}

fn best_response_with(
    model: &PreferenceModel,
    pi_old: &[f64],
    ctx: &ContextSpec,
    hyper: &Hyperparams,
    cfg: &OracleConfig,
) -> Result<Vec<f64>> {
    let problem = Problem {
        ctx,
        reference: ctx.reference(),
        pi_old,
        p: model.evaluate(pi_old)?,
        beta: hyper.beta,
        penalty: hyper.penalty,
    };
    let mut best = if problem.gain(pi_old, &problem.reference) > 0.0 {
        problem.reference.clone()
    } else {
        pi_old.to_vec()
    };
    match cfg.method {
        OracleMethod::Grid { resolution } => {
            let mut best_value = problem.value(&best);
            let support: Vec<usize> = (0..ctx.len()).filter(|&o| ctx.is_supported(o)).collect();
            let mut point = vec![0.0; ctx.len()];
            for_each_lattice_point(support.len(), resolution, |counts| {
                for (k, &o) in support.iter().enumerate() {
                    point[o] = counts[k] as f64 / resolution as f64;
                }
                let v = problem.value(&point);
                if v > best_value {
                    best_value = v;
                    best.copy_from_slice(&point);
                }
            });
            Ok(best)
        }
        OracleMethod::ProjectedAscent { step, iters } => Ok(ascend(&problem, best, step, iters)),
    }
}

fn ascend(problem: &Problem<'_>, start: Vec<f64>, step: f64, iters: usize) -> Vec<f64> {
    let mask: Vec<bool> = problem.reference.iter().map(|&r| r > 0.0).collect();
    let mut x = start;
    let mut eta = step;
    let Some(mut g) = problem.gradient(&x) else {
        return x;
    };
    let mut stalls = 0;
    for _ in 0..iters {
        let moved: Vec<f64> = x.iter().zip(&g).map(|(a, b)| a + eta * b).collect();
        let y = project(&moved, &mask);
        let change = sup_norm(&x, &y);
        if change == 0.0 {
            // the projected step is a no-op: either optimal or the step is
            // below resolution
            stalls += 1;
            if stalls > 60 {
                break;
            }
            eta *= 0.5;
            continue;
        }
        let gain = problem.gain(&x, &y);
        match problem.gradient(&y) {
            Some(gy) if gain >= 0.0 && gain.is_finite() => {
                x = y;
                g = gy;
                eta *= 1.5;
                stalls = 0;
                if change < 1e-15 {
                    break;
                }
            }
            _ => {
                eta *= 0.5;
                stalls += 1;
                if stalls > 200 {
                    break;
                }
            }
        }
    }
    x
}

/// Calls `f` with every vector of `n` nonnegative integers summing to `total`.
fn for_each_lattice_point<F: FnMut(&[usize])>(n: usize, total: usize, mut f: F) {
    let mut counts = vec![0usize; n];
    counts[0] = total;
    loop {
        f(&counts);
        let Some(i) = (0..n - 1).rev().find(|&i| counts[i] > 0) else {
            return;
        };
        counts[i] -= 1;
        let tail = counts[n - 1];
        counts[n - 1] = 0;
        counts[i + 1] = tail + 1;
    }
}

/// Outcome of best-response iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleResult {
    /// Final policy.
    pub pi: Vec<f64>,
    /// Sup-norm change of each round.
    pub trace: Vec<f64>,
    /// Whether the change and the stationarity residual fell below tolerance.
    pub converged: bool,
    /// Stationarity residual at `pi`.
    pub kkt_residual: f64,
    /// Period of a detected cycle of best responses.
    pub cycle_period: Option<usize>,
}

/// Longest cycle looked for.
const MAX_CYCLE: usize = 8;

/// Iterates `π ← (1−λ)π + λ·BR(π)` from `π_ref`.
///
/// Stops when a round changes `π` by at most the tolerance and the residual
/// is at most ten times the tolerance, or when the iterates revisit an
/// earlier point (a cycle), or after `outer_iterations` rounds.
pub fn oracle_stationary(ctx: &ContextSpec, hyper: &Hyperparams, cfg: &OracleConfig) -> Result<OracleResult> {
    cfg.validate(ctx)?;
    hyper.validate()?;
    let model = PreferenceModel::new(ctx, hyper.group_size, hyper.normalisation, PreferenceMethod::Exact)?;
    let mut pi = ctx.reference();
    let mut trace = Vec::new();
    let mut history: Vec<Vec<f64>> = Vec::new();
    for _ in 0..cfg.outer_iterations {
        let br = best_response_with(&model, &pi, ctx, hyper, cfg)?;
        let next: Vec<f64> = pi
            .iter()
            .zip(&br)
            .map(|(a, b)| (1.0 - cfg.relaxation) * a + cfg.relaxation * b)
            .collect();
        let delta = sup_norm(&pi, &next);
        trace.push(delta);
        if delta <= cfg.tolerance {
            let kkt = kkt_residual(&next, ctx, hyper)?;
            if kkt <= 10.0 * cfg.tolerance {
                return Ok(OracleResult {
                    pi: next,
                    trace,
                    converged: true,
                    kkt_residual: kkt,
                    cycle_period: None,
                });
            }
        } else if let Some(period) = (2..=MAX_CYCLE.min(history.len() + 1))
            .find(|&k| {
                // a true cycle repeats its step sizes; a damped oscillation shrinks them
                let t = trace.len() - 1;
                sup_norm(&history[history.len() + 1 - k], &next) <= cfg.tolerance
                    && t >= k
                    && trace[t] >= 0.9 * trace[t - k]
            })
        {
            return Ok(OracleResult {
                kkt_residual: kkt_residual(&next, ctx, hyper)?,
                pi: next,
                trace,
                converged: false,
                cycle_period: Some(period),
            });
        }
        history.push(pi);
        if history.len() > MAX_CYCLE {
            history.remove(0);
        }
        pi = next;
    }
    Ok(OracleResult {
        kkt_residual: kkt_residual(&pi, ctx, hyper)?,
        pi,
        trace,
        converged: false,
        cycle_period: None,
    })
}

/// A random small instance for oracle campaigns: 2 to 5 outputs, `G` in
/// {2, 3, 4}, deterministic, Bernoulli or mixed rewards, `β ∈ [0.1, 5]`,
/// reference mass at least 0.02 per output, GRPO penalty with
/// shift-and-scale normalisation.
pub fn random_case<R: Rng + ?Sized>(rng: &mut R) -> Result<(ContextSpec, Hyperparams)> {
    let n = rng.random_range(2..=5usize);
    let g = rng.random_range(2..=4usize);
    let kind = rng.random_range(0..3u8);
    let raw: Vec<f64> = (0..n).map(|_| 0.02 + rng.random::<f64>()).collect();
    let total: f64 = raw.iter().sum();
    let outputs = (0..n)
        .map(|i| {
            let bernoulli = match kind {
                0 => false,
                1 => true,
                _ => rng.random_bool(0.5),
            };
            let reward = if bernoulli {
                RewardSpec::Bernoulli(rng.random::<f64>())
            } else {
                RewardSpec::Deterministic(rng.random_range(-1.0..2.0))
            };
            OutputSpec::new(format!("o{i}"), raw[i] / total, reward)
        })
        .collect();
    let ctx = ContextSpec::new("q", 1.0, outputs)?;
    let beta = rng.random_range(0.1..=5.0);
    let hyper = Hyperparams {
        beta,
        group_size: GroupSize::Finite(g),
        penalty: Penalty::Kl0,
        normalisation: Normalisation::ShiftScale,
    };
    Ok((ctx, hyper))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::binary::{binary_g2, BinaryQuestion};
    use crate::solver::{objective, solve_stationary, SolverConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn grid(resolution: usize) -> OracleConfig {
        OracleConfig {
            method: OracleMethod::Grid { resolution },
            outer_iterations: 200,
            tolerance: 1e-12,
            relaxation: 1.0,
        }
    }

    #[test]
    fn ties_respond_with_reference() {
        let c = ContextSpec::from_parts(&[0.2, 0.3, 0.5], &[RewardSpec::Deterministic(1.0); 3]).unwrap();
        let h = Hyperparams::grpo(0.7, GroupSize::Finite(3));
        let br = best_response(&[0.5, 0.25, 0.25], &c, &h, &OracleConfig::default()).unwrap();
        assert!(sup_norm(&br, &c.reference()) < 1e-9);
        let r = oracle_stationary(&c, &h, &OracleConfig::default()).unwrap();
        assert!(r.converged);
        assert!(sup_norm(&r.pi, &c.reference()) < 1e-12);
    }

    #[test]
    fn heavy_penalty_stays_near_reference() {
        let c = ContextSpec::binary(0.3, 1.0, 0.0).unwrap();
        let h = Hyperparams::grpo(1e4, GroupSize::Finite(2));
        for cfg in [OracleConfig::default(), grid(1000)] {
            let br = best_response(&[0.6, 0.4], &c, &h, &cfg).unwrap();
            assert!((br[0] - 0.3).abs() < 1e-3);
        }
    }

    #[test]
    fn closed_form_is_its_own_best_response() {
        let c = ContextSpec::binary(0.2, 1.0, 0.0).unwrap();
        let h = Hyperparams::grpo(0.5, GroupSize::Finite(2));
        let a = binary_g2(&BinaryQuestion { pi_ref_a: 0.2, gamma: 1.0, beta: 0.5 }).unwrap();
        let old = [a, 1.0 - a];
        let br = best_response(&old, &c, &h, &grid(1000)).unwrap();
        assert!((br[0] - a).abs() <= 1.0 / 1000.0);
        let br = best_response(&old, &c, &h, &OracleConfig::default()).unwrap();
        assert!((br[0] - a).abs() <= 1e-9);
    }

    #[test]
    fn best_response_improves_objective() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let (c, h) = random_case(&mut rng).unwrap();
            let r = c.reference();
            let old: Vec<f64> = {
                let mut v: Vec<f64> = r.iter().map(|x| x + rng.random::<f64>() * 0.2).collect();
                let s: f64 = v.iter().sum();
                v.iter_mut().for_each(|x| *x /= s);
                v
            };
            let br = best_response(&old, &c, &h, &OracleConfig::default()).unwrap();
            let v = objective(&br, &old, &c, &h).unwrap();
            assert!(v >= objective(&old, &old, &c, &h).unwrap());
            assert!(v >= objective(&r, &old, &c, &h).unwrap());
        }
    }

    #[test]
    fn grid_oracle_matches_pair_closed_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let resolution = 400;
        for _ in 0..10 {
            let p = rng.random_range(0.05..0.95);
            let beta = rng.random_range(0.1..3.0);
            let c = ContextSpec::binary(p, 1.0, 0.0).unwrap();
            let h = Hyperparams::grpo(beta, GroupSize::Finite(2));
            let mut cfg = grid(resolution);
            cfg.tolerance = 1e-12;
            let r = oracle_stationary(&c, &h, &cfg).unwrap();
            let want = binary_g2(&BinaryQuestion { pi_ref_a: p, gamma: 1.0, beta }).unwrap();
            assert!((r.pi[0] - want).abs() <= 2.0 / resolution as f64, "p={p} beta={beta}: {} vs {want}", r.pi[0]);
        }
    }

    #[test]
    fn three_outputs_agree_with_solver() {
        let c = ContextSpec::from_parts(
            &[0.2, 0.3, 0.5],
            &[RewardSpec::Deterministic(1.0), RewardSpec::Deterministic(0.5), RewardSpec::Deterministic(0.0)],
        )
        .unwrap();
        let h = Hyperparams::grpo(1.0, GroupSize::Finite(3));
        let s = solve_stationary(&c, &h, &SolverConfig::default()).unwrap();
        let o = oracle_stationary(&c, &h, &OracleConfig::default()).unwrap();
        assert!(o.converged, "{:?}", o.cycle_period);
        assert!(sup_norm(&s.pi, &o.pi) < 1e-6);
        assert!(o.kkt_residual <= 10.0 * OracleConfig::default().tolerance);
    }

    #[test]
    fn grid_rejects_large_contexts() {
        let c = ContextSpec::from_parts(&[1.0 / 6.0; 6], &[RewardSpec::Deterministic(0.0); 6]).unwrap();
        let h = Hyperparams::grpo(1.0, GroupSize::Finite(2));
        assert!(best_response(&c.reference(), &c, &h, &grid(10)).is_err());
        let b = ContextSpec::binary(0.5, 1.0, 0.0).unwrap();
        assert!(best_response(&b.reference(), &b, &h, &grid(50)).is_err());
    }

    #[test]
    fn plain_iteration_can_cycle() {
        let c = ContextSpec::binary(0.05, 1.0, 0.0).unwrap();
        let h = Hyperparams::grpo(2.0, GroupSize::Finite(2));
        let r = oracle_stationary(&c, &h, &OracleConfig::default()).unwrap();
        assert!(!r.converged);
        assert_eq!(r.cycle_period, Some(2));
        let relaxed = OracleConfig { relaxation: 0.5, ..OracleConfig::default() };
        let r = oracle_stationary(&c, &h, &relaxed).unwrap();
        assert!(r.converged, "{:?} {:?} {}", r.pi, r.cycle_period, r.kkt_residual);
        let want = binary_g2(&BinaryQuestion { pi_ref_a: 0.05, gamma: 1.0, beta: 2.0 }).unwrap();
        assert!((r.pi[0] - want).abs() < 1e-8);
    }
}
