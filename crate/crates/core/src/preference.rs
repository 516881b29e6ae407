//! Group-relative advantages and the preferences they induce.
//!
//! Sampling a group of `G` outputs from a policy `π′`, normalising their
//! rewards and reading off the advantage of the first slot gives the
//! group-relative preference `P_G(o | π′)` of an output `o`. For `G = 2` it
//! reduces to a signed pairwise comparison; as `G → ∞` it tends to the
//! reward z-score `(r(o) − E_π′[r]) / σ(π′)`.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)] // float math on toolchains where core lacks it
use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::scenario::{ContextSpec, GroupSize, Normalisation};
use crate::simplex::{cumulative, sample_index};
use crate::{Error, Result};

/// Largest group for which Bernoulli reward outcomes are enumerated.
pub const MAX_BERNOULLI_GROUP: usize = 20;

/// Largest number of companion multisets visited by exact enumeration.
pub const MAX_MULTISETS: u128 = 1_000_000;

/// Group advantages `A_i`.
///
/// `ShiftScale` gives `(r_i − mean) / std` with the population standard
/// deviation, and all zeros when every reward is equal. `ShiftOnly` gives
/// `r_i − mean`.
pub fn advantages(rewards: &[f64], mode: Normalisation) -> Vec<f64> {
    let c = Centring::of(rewards, mode);
    rewards.iter().map(|&r| c.advantage(r)).collect()
}

/// Advantage of the first reward only.
fn first_advantage(rewards: &[f64], mode: Normalisation) -> f64 {
    if rewards.is_empty() {
        return 0.0;
    }
    Centring::of(rewards, mode).advantage(rewards[0])
}

/// Group statistics computed on rewards shifted by the first one, which
/// keeps near-ties accurate: `r − pivot` is exact for close rewards.
struct Centring {
    pivot: f64,
    mean: f64,
    scale: f64,
}

impl Centring {
    fn of(rewards: &[f64], mode: Normalisation) -> Self {
        let Some(&pivot) = rewards.first() else {
            return Centring {
                pivot: 0.0,
                mean: 0.0,
                scale: 0.0,
            };
        };
        let g = rewards.len() as f64;
        let mean = rewards.iter().map(|r| r - pivot).sum::<f64>() / g;
        let scale = match mode {
            Normalisation::ShiftOnly => 1.0,
            // exact ties must give exactly zero, so detect them directly
            Normalisation::ShiftScale if rewards.iter().all(|&r| r == pivot) => 0.0,
            Normalisation::ShiftScale => {
                let var = rewards
                    .iter()
                    .map(|r| {
                        let d = r - pivot - mean;
                        d * d
                    })
                    .sum::<f64>()
                    / g;
                var.sqrt()
            }
        };
        Centring { pivot, mean, scale }
    }

    fn advantage(&self, r: f64) -> f64 {
        if self.scale == 0.0 {
            0.0
        } else {
            (r - self.pivot - self.mean) / self.scale
        }
    }
}

fn check_index(ctx: &ContextSpec, i: usize) -> Result<()> {
    if i >= ctx.len() {
        return Err(Error::Argument(format!(
            "output index {i} out of range for context '{}' with {} outputs",
            ctx.id(),
            ctx.len()
        )));
    }
    Ok(())
}

/// `P_G(o | o′_1, …, o′_{G−1})`: expected advantage of `o` in the group
/// `{o, others…}`, with one independent reward draw per slot.
///
/// Random (Bernoulli) rewards are handled by enumerating all joint reward
/// outcomes, so groups larger than [`MAX_BERNOULLI_GROUP`] containing a
/// random reward are rejected.
pub fn group_preference(
    o: usize,
    others: &[usize],
    ctx: &ContextSpec,
    mode: Normalisation,
) -> Result<f64> {
    check_index(ctx, o)?;
    for &j in others {
        check_index(ctx, j)?;
    }
    let mut eval = GroupEvaluator::new(others.len() + 1);
    eval.evaluate(o, others, ctx, mode)
}

/// Scratch space so repeated group evaluations do not allocate.
struct GroupEvaluator {
    rewards: Vec<f64>,
    random: Vec<(usize, f64)>,
}

impl GroupEvaluator {
    fn new(g: usize) -> Self {
        GroupEvaluator {
            rewards: Vec::with_capacity(g),
            random: Vec::with_capacity(g),
        }
    }

    fn evaluate(
        &mut self,
        o: usize,
        others: &[usize],
        ctx: &ContextSpec,
        mode: Normalisation,
    ) -> Result<f64> {
        let outputs = ctx.outputs();
        self.rewards.clear();
        self.random.clear();
        for (slot, &m) in core::iter::once(&o).chain(others).enumerate() {
            let reward = outputs[m].reward;
            if reward.is_random() {
                self.random.push((slot, reward.mean()));
                self.rewards.push(0.0);
            } else {
                self.rewards.push(reward.outcomes().0[0].0);
            }
        }
        if self.random.is_empty() {
            return Ok(first_advantage(&self.rewards, mode));
        }
        let g = self.rewards.len();
        if g > MAX_BERNOULLI_GROUP {
            return Err(Error::Enumeration {
                count: 1u128 << g.min(127),
                limit: 1u128 << MAX_BERNOULLI_GROUP,
            });
        }
        let mut total = 0.0;
        for mask in 0u32..(1u32 << self.random.len()) {
            let mut prob = 1.0;
            for (bit, &(slot, p)) in self.random.iter().enumerate() {
                if mask & (1 << bit) != 0 {
                    self.rewards[slot] = 1.0;
                    prob *= p;
                } else {
                    self.rewards[slot] = 0.0;
                    prob *= 1.0 - p;
                }
            }
            total += prob * first_advantage(&self.rewards, mode);
        }
        Ok(total)
    }
}

/// `P(o ≻ o′)`: probability that an independent reward draw for `o` strictly
/// exceeds one for `o′`. Ties count for neither side.
pub fn pairwise_preference(o: usize, o_prime: usize, ctx: &ContextSpec) -> Result<f64> {
    check_index(ctx, o)?;
    check_index(ctx, o_prime)?;
    let (a, na) = ctx.outputs()[o].reward.outcomes();
    let (b, nb) = ctx.outputs()[o_prime].reward.outcomes();
    let mut p = 0.0;
    for &(va, pa) in &a[..na] {
        for &(vb, pb) in &b[..nb] {
            if va > vb {
                p += pa * pb;
            }
        }
    }
    Ok(p)
}

/// Mean and standard deviation of the reward of an output drawn from `pi`,
/// including the randomness of Bernoulli rewards.
pub fn reward_moments(pi: &[f64], ctx: &ContextSpec) -> Result<(f64, f64)> {
    ctx.check_policy(pi)?;
    Ok(moments_unchecked(pi, ctx))
}

fn moments_unchecked(pi: &[f64], ctx: &ContextSpec) -> (f64, f64) {
    let means = ctx.mean_rewards();
    let variances: Vec<f64> = ctx.outputs().iter().map(|o| o.reward.variance()).collect();
    moments(pi, &means, &variances)
}

/// Mean and standard deviation of the mixture. A reward that is constant on
/// the support of `pi` gets a standard deviation of exactly zero, so ties
/// are not turned into rounding noise divided by rounding noise.
fn moments(pi: &[f64], means: &[f64], variances: &[f64]) -> (f64, f64) {
    let mut support = pi.iter().zip(means.iter().zip(variances)).filter(|(p, _)| **p > 0.0);
    if let Some((_, (&first, _))) = support.clone().next() {
        if support.all(|(_, (&m, &v))| v == 0.0 && m == first) {
            return (first, 0.0);
        }
    }
    let mean: f64 = pi.iter().zip(means).map(|(p, r)| p * r).sum();
    let var: f64 = pi
        .iter()
        .zip(means.iter().zip(variances))
        .map(|(p, (r, v))| p * (v + (r - mean) * (r - mean)))
        .sum();
    (mean, var.max(0.0).sqrt())
}

/// Large-group preference `(r(o) − E_π[r]) / σ(π)`, or 0 when `σ(π) = 0`.
pub fn limit_preference(o: usize, pi: &[f64], ctx: &ContextSpec) -> Result<f64> {
    check_index(ctx, o)?;
    let (mean, sd) = reward_moments(pi, ctx)?;
    Ok(if sd == 0.0 {
        0.0
    } else {
        (ctx.outputs()[o].reward.mean() - mean) / sd
    })
}

/// How an expected group preference is computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PreferenceMethod {
    /// Exact enumeration of companion multisets.
    Exact,
    /// Average over sampled companion sets, with an explicit seed.
    MonteCarlo {
        /// Number of sampled companion sets.
        samples: u64,
        /// RNG seed.
        seed: u64,
    },
}

/// Query for `P_G(o | π′)`.
#[derive(Debug, Clone, Copy)]
pub struct GroupPreferenceQuery<'a> {
    /// Target output index.
    pub output: usize,
    /// Policy the `G − 1` companions are drawn from.
    pub policy: &'a [f64],
    /// Group size `G ≥ 2`.
    pub group_size: usize,
    /// Exact or sampled evaluation.
    pub method: PreferenceMethod,
}

/// Value of an expected preference with its Monte Carlo standard error
/// (zero for exact evaluation).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PreferenceEstimate {
    /// Point estimate.
    pub value: f64,
    /// Standard error of the estimate.
    pub standard_error: f64,
}

/// Number of multisets of size `k` drawn from `n` kinds, `C(n + k − 1, k)`,
/// saturating at `u128::MAX`.
pub fn multiset_count(n: usize, k: usize) -> u128 {
    let mut c: u128 = 1;
    for i in 1..=k as u128 {
        // C(n-1+i, i) = C(n-1+i-1, i-1) * (n-1+i) / i
        c = match c.checked_mul(n as u128 - 1 + i) {
            Some(v) => v / i,
            None => return u128::MAX,
        };
    }
    c
}

/// Calls `f` with every count vector of length `n` summing to `k`.
fn for_each_multiset<F: FnMut(&[u32]) -> Result<()>>(n: usize, k: usize, mut f: F) -> Result<()> {
    let mut counts = vec![0u32; n];
    counts[0] = k as u32;
    loop {
        f(&counts)?;
        let Some(i) = (0..n - 1).rev().find(|&i| counts[i] > 0) else {
            return Ok(());
        };
        counts[i] -= 1;
        let tail = counts[n - 1];
        counts[n - 1] = 0;
        counts[i + 1] = tail + 1;
    }
}

fn ln_factorials(k: usize) -> Vec<f64> {
    let mut t = Vec::with_capacity(k + 1);
    let mut acc = 0.0;
    t.push(0.0);
    for i in 1..=k {
        acc += (i as f64).ln();
        t.push(acc);
    }
    t
}

/// Multinomial probability of `counts` under `pi`, from a log coefficient.
fn multiset_weight(ln_coef: f64, counts: &[u32], ln_pi: &[f64]) -> f64 {
    let mut s = ln_coef;
    for (&c, &lp) in counts.iter().zip(ln_pi) {
        if c > 0 {
            if lp == f64::NEG_INFINITY {
                return 0.0;
            }
            s += c as f64 * lp;
        }
    }
    s.exp()
}

fn expand(counts: &[u32], out: &mut Vec<usize>) {
    out.clear();
    for (i, &c) in counts.iter().enumerate() {
        for _ in 0..c {
            out.push(i);
        }
    }
}

fn guard_multisets(n: usize, k: usize) -> Result<()> {
    let count = multiset_count(n, k);
    if count > MAX_MULTISETS {
        return Err(Error::Enumeration {
            count,
            limit: MAX_MULTISETS,
        });
    }
    Ok(())
}

/// Expected group-relative preference `P_G(o | π′)`.
///
/// The exact method sums over multisets of companions with multinomial
/// weights; the Monte Carlo method draws companions i.i.d. from `π′` and
/// evaluates each sampled group exactly over reward outcomes.
pub fn expected_group_preference(
    q: &GroupPreferenceQuery<'_>,
    ctx: &ContextSpec,
    mode: Normalisation,
) -> Result<PreferenceEstimate> {
    check_index(ctx, q.output)?;
    ctx.check_policy(q.policy)?;
    if q.group_size < 2 {
        return Err(Error::Argument(format!("group_size {} < 2", q.group_size)));
    }
    let k = q.group_size - 1;
    match q.method {
        PreferenceMethod::Exact => {
            let n = ctx.len();
            guard_multisets(n, k)?;
            let lf = ln_factorials(k);
            let ln_pi: Vec<f64> = q.policy.iter().map(|p| p.ln()).collect();
            let mut eval = GroupEvaluator::new(q.group_size);
            let mut others = Vec::with_capacity(k);
            let mut value = 0.0;
            for_each_multiset(n, k, |counts| {
                let ln_coef = lf[k] - counts.iter().map(|&c| lf[c as usize]).sum::<f64>();
                let w = multiset_weight(ln_coef, counts, &ln_pi);
                if w > 0.0 {
                    expand(counts, &mut others);
                    value += w * eval.evaluate(q.output, &others, ctx, mode)?;
                }
                Ok(())
            })?;
            Ok(PreferenceEstimate {
                value,
                standard_error: 0.0,
            })
        }
        PreferenceMethod::MonteCarlo { samples, seed } => {
            if samples == 0 {
                return Err(Error::Argument("monte carlo needs at least one sample".into()));
            }
            sampled_preference(q.output, q.policy, ctx, q.group_size, mode, samples, seed)
        }
    }
}

fn sampled_preference(
    o: usize,
    pi: &[f64],
    ctx: &ContextSpec,
    group_size: usize,
    mode: Normalisation,
    samples: u64,
    seed: u64,
) -> Result<PreferenceEstimate> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cdf = cumulative(pi);
    let mut eval = GroupEvaluator::new(group_size);
    let mut others = vec![0usize; group_size - 1];
    // Welford running moments
    let (mut mean, mut m2) = (0.0, 0.0);
    for t in 1..=samples {
        for slot in others.iter_mut() {
            *slot = sample_index(&cdf, rng.random::<f64>());
        }
        let x = eval.evaluate(o, &others, ctx, mode)?;
        let d = x - mean;
        mean += d / t as f64;
        m2 += d * (x - mean);
    }
    let standard_error = if samples > 1 {
        (m2 / (samples - 1) as f64 / samples as f64).sqrt()
    } else {
        f64::INFINITY
    };
    Ok(PreferenceEstimate {
        value: mean,
        standard_error,
    })
}

/// `P_G(· | π)` for every output as a polynomial in `π`: the companion
/// multisets and group values are enumerated once, and each evaluation only
/// recomputes multinomial weights.
#[derive(Debug, Clone)]
pub struct PreferenceTable {
    n: usize,
    counts: Vec<u32>,
    ln_coef: Vec<f64>,
    // values[o * multisets + m]
    values: Vec<f64>,
}

impl PreferenceTable {
    /// Enumerates the table for a context, finite group size and
    /// normalisation.
    pub fn new(ctx: &ContextSpec, group_size: usize, mode: Normalisation) -> Result<Self> {
        if group_size < 2 {
            return Err(Error::Argument(format!("group_size {group_size} < 2")));
        }
        let n = ctx.len();
        let k = group_size - 1;
        guard_multisets(n, k)?;
        let lf = ln_factorials(k);
        let mut counts = Vec::new();
        let mut ln_coef = Vec::new();
        for_each_multiset(n, k, |c| {
            counts.extend_from_slice(c);
            ln_coef.push(lf[k] - c.iter().map(|&x| lf[x as usize]).sum::<f64>());
            Ok(())
        })?;
        let m = ln_coef.len();
        let mut values = vec![0.0; n * m];
        let mut eval = GroupEvaluator::new(group_size);
        let mut others = Vec::with_capacity(k);
        for j in 0..m {
            expand(&counts[j * n..(j + 1) * n], &mut others);
            for o in 0..n {
                values[o * m + j] = eval.evaluate(o, &others, ctx, mode)?;
            }
        }
        Ok(PreferenceTable {
            n,
            counts,
            ln_coef,
            values,
        })
    }

    /// `P_G(o | π)` for every output `o`.
    pub fn evaluate(&self, pi: &[f64]) -> Vec<f64> {
        let ln_pi: Vec<f64> = pi.iter().map(|p| p.ln()).collect();
        let m = self.ln_coef.len();
        let weights: Vec<f64> = (0..m)
            .map(|j| multiset_weight(self.ln_coef[j], &self.counts[j * self.n..(j + 1) * self.n], &ln_pi))
            .collect();
        (0..self.n)
            .map(|o| {
                self.values[o * m..(o + 1) * m]
                    .iter()
                    .zip(&weights)
                    .map(|(v, w)| v * w)
                    .sum()
            })
            .collect()
    }
}

/// The per-output preference map `π ↦ P(· | π)` for one context and one
/// group-size / normalisation combination.
#[derive(Debug, Clone)]
pub enum PreferenceModel {
    /// Exact finite-`G` polynomial.
    Table(PreferenceTable),
    /// Large-group limit: the reward z-score (shift-and-scale) or
    /// `r(o) − E_π[r]` (shift-only).
    Limit {
        /// Expected rewards.
        means: Vec<f64>,
        /// Reward variances.
        variances: Vec<f64>,
        /// Normalisation.
        normalisation: Normalisation,
    },
    /// Finite-`G` Monte Carlo estimate with a fixed seed, so repeated
    /// evaluations use common random numbers.
    Sampled {
        /// The context (owned copy).
        context: ContextSpec,
        /// Group size.
        group_size: usize,
        /// Normalisation.
        normalisation: Normalisation,
        /// Samples per output.
        samples: u64,
        /// Seed.
        seed: u64,
    },
}

impl PreferenceModel {
    /// Builds the model; exact finite-`G` models enumerate their table here.
    pub fn new(
        ctx: &ContextSpec,
        group_size: GroupSize,
        normalisation: Normalisation,
        method: PreferenceMethod,
    ) -> Result<Self> {
        match (group_size, method) {
            (GroupSize::Limit, _) => Ok(PreferenceModel::Limit {
                means: ctx.mean_rewards(),
                variances: ctx.outputs().iter().map(|o| o.reward.variance()).collect(),
                normalisation,
            }),
            (GroupSize::Finite(g), PreferenceMethod::Exact) => {
                Ok(PreferenceModel::Table(PreferenceTable::new(ctx, g, normalisation)?))
            }
            (GroupSize::Finite(g), PreferenceMethod::MonteCarlo { samples, seed }) => {
                if g < 2 || samples == 0 {
                    return Err(Error::Argument(format!(
                        "monte carlo needs group_size ≥ 2 and samples ≥ 1 (got {g}, {samples})"
                    )));
                }
                Ok(PreferenceModel::Sampled {
                    context: ctx.clone(),
                    group_size: g,
                    normalisation,
                    samples,
                    seed,
                })
            }
        }
    }

    /// `P(o | π)` for every output. `pi` is assumed to be a valid policy.
    pub fn evaluate(&self, pi: &[f64]) -> Result<Vec<f64>> {
        match self {
            PreferenceModel::Table(t) => Ok(t.evaluate(pi)),
            PreferenceModel::Limit {
                means,
                variances,
                normalisation,
            } => {
                let (mean, sd) = moments(pi, means, variances);
                Ok(match normalisation {
                    Normalisation::ShiftOnly => means.iter().map(|r| r - mean).collect(),
                    Normalisation::ShiftScale => means
                        .iter()
                        .map(|r| if sd == 0.0 { 0.0 } else { (r - mean) / sd })
                        .collect(),
                })
            }
            PreferenceModel::Sampled {
                context,
                group_size,
                normalisation,
                samples,
                seed,
            } => (0..context.len())
                .map(|o| {
                    sampled_preference(o, pi, context, *group_size, *normalisation, *samples, *seed)
                        .map(|e| e.value)
                })
                .collect(),
        }
    }
}
