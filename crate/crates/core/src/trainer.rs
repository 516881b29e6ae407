//! Sampled tabular GRPO with clipping.
//!
//! Each context has its own logit vector. A step picks a context from the
//! context weights, freezes the current policy as `π_old`, samples groups of
//! `G` outputs with fresh reward draws, and ascends the clipped surrogate
//!
//! ```text
//! (1/G) Σ_i min(ratio_i·A_i, clip(ratio_i, 1−ε, 1+ε)·A_i) − β·D_i
//! ```
//!
//! in logit space, where `ratio_i = π(o_i)/π_old(o_i)` and `D_i` is the
//! per-sample penalty: `π_ref/π − ln(π_ref/π) − 1` for the GRPO penalty and
//! `ratio_i · ln(π(o_i)/π_ref(o_i))` for a direct KL penalty.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)] // float math on toolchains where core lacks it
use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::divergence::{kl0_grad, kl_grad};
use crate::preference::{advantages, PreferenceMethod, PreferenceModel};
use crate::scenario::{ContextSpec, GroupSize, Hyperparams, Normalisation, Penalty, PolicyTable, RewardSpec, Scenario};
use crate::simplex::{cumulative, sample_index, sup_norm};
use crate::{Error, Result};

/// Probabilities on the reference support below this abort a run.
pub const UNDERFLOW: f64 = 1e-12;

/// Trainer settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainerConfig {
    /// Clip range `ε`.
    pub epsilon: f64,
    /// Logit step size.
    pub learning_rate: f64,
    /// Number of `π_old` refreshes.
    pub steps: usize,
    /// Groups sampled per step.
    pub groups_per_step: usize,
    /// Gradient updates on each sampled batch before `π_old` is refreshed.
    pub inner_updates_per_old_policy: usize,
    /// RNG seed.
    pub seed: u64,
    /// Steps between checkpoints (0 keeps only the first and last).
    pub checkpoint_every: usize,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        TrainerConfig {
            epsilon: 0.2,
            learning_rate: 0.05,
            steps: 20_000,
            groups_per_step: 16,
            inner_updates_per_old_policy: 1,
            seed: 0,
            checkpoint_every: 1_000,
        }
    }
}

impl TrainerConfig {
    /// Checks ranges.
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) {
            return Err(Error::Argument(format!("epsilon {} must be positive", self.epsilon)));
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::Argument(format!(
                "learning_rate {} must be positive",
                self.learning_rate
            )));
        }
        if self.steps == 0 || self.groups_per_step == 0 || self.inner_updates_per_old_policy == 0 {
            return Err(Error::Argument(
                "steps, groups_per_step and inner_updates_per_old_policy must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Snapshot of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    /// Steps completed.
    pub step: usize,
    /// Policy of every context.
    pub policy: PolicyTable,
    /// Mean sampled surrogate objective since the previous checkpoint.
    pub objective_estimate: f64,
    /// Sup-norm distance to the supplied target, if any.
    pub target_distance: Option<f64>,
    /// Fraction of samples whose surrogate was clipped since the previous
    /// checkpoint.
    pub clipped_fraction: f64,
}

/// Checkpoints of a run in step order.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainTrace {
    /// Checkpoints, starting at step 0 and ending at the last step.
    pub checkpoints: Vec<Checkpoint>,
}

impl TrainTrace {
    /// The last checkpoint.
    pub fn last(&self) -> &Checkpoint {
        self.checkpoints.last().expect("a trace always has checkpoints")
    }
}

/// One sampled group.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledGroup {
    /// Output indices.
    pub outputs: Vec<usize>,
    /// Realised rewards.
    pub rewards: Vec<f64>,
    /// Group advantages.
    pub advantages: Vec<f64>,
}

/// Draws `g` outputs from `pi_old`, one reward per output, and normalises.
pub fn sample_group<R: Rng + ?Sized>(
    ctx: &ContextSpec,
    pi_old: &[f64],
    g: usize,
    mode: Normalisation,
    rng: &mut R,
) -> SampledGroup {
    let cdf = cumulative(pi_old);
    let outputs: Vec<usize> = (0..g).map(|_| sample_index(&cdf, rng.random::<f64>())).collect();
    let rewards: Vec<f64> = outputs
        .iter()
        .map(|&o| match ctx.outputs()[o].reward {
            RewardSpec::Deterministic(v) => v,
            RewardSpec::Bernoulli(p) => {
                if rng.random::<f64>() < p {
                    1.0
                } else {
                    0.0
                }
            }
        })
        .collect();
    let advantages = advantages(&rewards, mode);
    SampledGroup {
        outputs,
        rewards,
        advantages,
    }
}

/// Softmax of logits; `−∞` logits get probability 0.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let top = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut p: Vec<f64> = logits.iter().map(|&l| (l - top).exp()).collect();
    let z: f64 = p.iter().sum();
    p.iter_mut().for_each(|x| *x /= z);
    p
}

/// Per-group surrogate value, its logit gradient and the number of clipped
/// samples.
#[derive(Debug, Clone, PartialEq)]
pub struct SurrogateGradient {
    /// `(1/G) Σ_i [min(ratio·A, clip(ratio)·A) − β·D_i]`.
    pub value: f64,
    /// Gradient of `value` with respect to the logits.
    pub gradient: Vec<f64>,
    /// Samples on the flat side of the clip.
    pub clipped: usize,
}

/// Logit gradient of one group's surrogate at policy `pi`.
pub fn surrogate_gradient(
    group: &SampledGroup,
    pi: &[f64],
    pi_old: &[f64],
    reference: &[f64],
    beta: f64,
    penalty: Penalty,
    epsilon: f64,
) -> SurrogateGradient {
    let n = pi.len();
    let g = group.outputs.len() as f64;
    let mut gradient = vec![0.0; n];
    let mut value = 0.0;
    let mut clipped = 0;
    for (&o, &a) in group.outputs.iter().zip(&group.advantages) {
        let ratio = pi[o] / pi_old[o];
        let clipped_ratio = ratio.clamp(1.0 - epsilon, 1.0 + epsilon);
        value += (ratio * a).min(clipped_ratio * a);
        let is_clipped = (a > 0.0 && ratio > 1.0 + epsilon) || (a < 0.0 && ratio < 1.0 - epsilon);
        // coefficient c in c·(e_o − π)
        let mut c = 0.0;
        if is_clipped {
            clipped += 1;
        } else {
            c += ratio * a;
        }
        match penalty {
            Penalty::Kl0 => {
                let rho = reference[o] / pi[o];
                value -= beta * (rho - rho.ln() - 1.0);
                c -= beta * (1.0 - rho);
            }
            Penalty::DirectKl => {
                let log = (pi[o] / reference[o]).ln();
                value -= beta * ratio * log;
                c -= beta * ratio * (log + 1.0);
            }
        }
        for k in 0..n {
            gradient[k] -= c * pi[k];
        }
        gradient[o] += c;
    }
    gradient.iter_mut().for_each(|x| *x /= g);
    SurrogateGradient {
        value: value / g,
        gradient,
        clipped,
    }
}

/// Exact logit gradient of the unclipped objective `objective(π, π_old)`.
pub fn analytic_logit_gradient(pi: &[f64], pi_old: &[f64], ctx: &ContextSpec, hyper: &Hyperparams) -> Result<Vec<f64>> {
    ctx.check_policy(pi)?;
    ctx.check_policy(pi_old)?;
    hyper.validate()?;
    let p = PreferenceModel::new(ctx, hyper.group_size, hyper.normalisation, PreferenceMethod::Exact)?.evaluate(pi_old)?;
    let reference = ctx.reference();
    let pen = match hyper.penalty {
        Penalty::Kl0 => kl0_grad(pi, &reference, pi_old)?,
        Penalty::DirectKl => {
            // ∂/∂π of Σ π ln(π/π_ref) restricted to the support
            let mut g = vec![0.0; pi.len()];
            let support: Vec<f64> = (0..pi.len()).map(|o| if pi[o] > 0.0 { pi[o] } else { 1.0 }).collect();
            let r: Vec<f64> = (0..pi.len()).map(|o| if pi[o] > 0.0 { reference[o] } else { 1.0 }).collect();
            for (o, v) in kl_grad(&support, &r)?.into_iter().enumerate() {
                if pi[o] > 0.0 {
                    g[o] = v;
                }
            }
            g
        }
    };
    let d: Vec<f64> = (0..pi.len()).map(|o| p[o] - hyper.beta * pen[o]).collect();
    let mean: f64 = pi.iter().zip(&d).map(|(a, b)| a * b).sum();
    Ok((0..pi.len()).map(|k| pi[k] * (d[k] - mean)).collect())
}

/// Runs tabular GRPO from the reference policy.
///
/// Only finite group sizes can be sampled. The run is a deterministic
/// function of the scenario, the configuration and the seed.
pub fn train(scenario: &Scenario, cfg: &TrainerConfig, target: Option<&PolicyTable>) -> Result<TrainTrace> {
    cfg.validate()?;
    let hyper = scenario.hyper();
    hyper.validate()?;
    let GroupSize::Finite(g) = hyper.group_size else {
        return Err(Error::Argument("training needs a finite group size".into()));
    };
    if let Some(t) = target {
        crate::scenario::validate_policy(t, scenario)?;
    }
    let contexts = scenario.contexts();
    let weights: Vec<f64> = contexts.iter().map(|c| c.weight()).collect();
    let context_cdf = cumulative(&weights);
    let references: Vec<Vec<f64>> = contexts.iter().map(|c| c.reference()).collect();
    let mut logits: Vec<Vec<f64>> = references
        .iter()
        .map(|r| r.iter().map(|&p| if p > 0.0 { p.ln() } else { f64::NEG_INFINITY }).collect())
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let snapshot = |logits: &Vec<Vec<f64>>| PolicyTable::from_rows(logits.iter().map(|l| softmax(l)).collect());
    let distance = |table: &PolicyTable| {
        target.map(|t| {
            t.rows()
                .iter()
                .zip(table.rows())
                .map(|(a, b)| sup_norm(a, b))
                .fold(0.0, f64::max)
        })
    };
    let first = snapshot(&logits);
    let mut checkpoints = vec![Checkpoint {
        step: 0,
        target_distance: distance(&first),
        policy: first,
        objective_estimate: 0.0,
        clipped_fraction: 0.0,
    }];
    let (mut value_sum, mut value_count, mut clipped, mut samples) = (0.0, 0usize, 0usize, 0usize);
    let mut groups = Vec::with_capacity(cfg.groups_per_step);

    for step in 1..=cfg.steps {
        let q = if contexts.len() == 1 {
            0
        } else {
            sample_index(&context_cdf, rng.random::<f64>())
        };
        let ctx = &contexts[q];
        let pi_old = softmax(&logits[q]);
        groups.clear();
        for _ in 0..cfg.groups_per_step {
            groups.push(sample_group(ctx, &pi_old, g, hyper.normalisation, &mut rng));
        }
        for _ in 0..cfg.inner_updates_per_old_policy {
            let pi = softmax(&logits[q]);
            let mut total = vec![0.0; pi.len()];
            for group in &groups {
                let s = surrogate_gradient(group, &pi, &pi_old, &references[q], hyper.beta, hyper.penalty, cfg.epsilon);
                for (t, x) in total.iter_mut().zip(&s.gradient) {
                    *t += x;
                }
                value_sum += s.value;
                value_count += 1;
                clipped += s.clipped;
                samples += g;
            }
            let scale = cfg.learning_rate / cfg.groups_per_step as f64;
            for (l, x) in logits[q].iter_mut().zip(&total) {
                if l.is_finite() {
                    *l += scale * x;
                }
            }
            let pi = softmax(&logits[q]);
            if let Some(o) = (0..pi.len()).find(|&o| references[q][o] > 0.0 && !(pi[o] >= UNDERFLOW)) {
                return Err(Error::Diverged(format!(
                    "probability of output '{}' in context '{}' fell to {:e} at step {step}",
                    ctx.outputs()[o].id,
                    ctx.id(),
                    pi[o]
                )));
            }
        }
        let due = cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0;
        if due || step == cfg.steps {
            let table = snapshot(&logits);
            checkpoints.push(Checkpoint {
                step,
                target_distance: distance(&table),
                policy: table,
                objective_estimate: if value_count > 0 { value_sum / value_count as f64 } else { 0.0 },
                clipped_fraction: if samples > 0 { clipped as f64 / samples as f64 } else { 0.0 },
            });
            value_sum = 0.0;
            value_count = 0;
            clipped = 0;
            samples = 0;
        }
    }
    Ok(TrainTrace { checkpoints })
}
