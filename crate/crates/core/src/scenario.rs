//! Scenario model: contexts, outputs, rewards, hyperparameters and policies.
//!
//! Everything here is validated on construction and immutable afterwards.
//! Probability vectors that miss 1 by at most [`PROB_TOLERANCE`] are
//! renormalised once, so downstream code works with exact simplex points.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use crate::{Error, Result};

/// Largest accepted deviation of a probability vector's sum from 1.
pub const PROB_TOLERANCE: f64 = 1e-12;

/// Whether a vector summing to `sum` is off the simplex by more than the
/// rounding of its own summation. Skipping the rescale in that case keeps
/// loading idempotent.
fn needs_rescale(sum: f64, len: usize) -> bool {
    (sum - 1.0).abs() > len as f64 * f64::EPSILON
}

/// Reward of one output in one context.
///
/// Deterministic rewards may take any finite real value; Bernoulli rewards
/// are 1 with probability `p` and 0 otherwise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RewardSpec {
    /// Fixed reward value.
    Deterministic(f64),
    /// Reward 1 with probability `p`, else 0.
    Bernoulli(f64),
}

impl RewardSpec {
    /// Expected reward `r(o|q)`.
    pub fn mean(&self) -> f64 {
        match *self {
            RewardSpec::Deterministic(v) => v,
            RewardSpec::Bernoulli(p) => p,
        }
    }

    /// Variance of a single reward draw.
    pub fn variance(&self) -> f64 {
        match *self {
            RewardSpec::Deterministic(_) => 0.0,
            RewardSpec::Bernoulli(p) => p * (1.0 - p),
        }
    }

    /// True when a draw is random, i.e. a Bernoulli with `0 < p < 1`.
    pub fn is_random(&self) -> bool {
        matches!(*self, RewardSpec::Bernoulli(p) if p > 0.0 && p < 1.0)
    }

    /// Support of the reward distribution as `(value, probability)` pairs.
    /// Zero-probability atoms are omitted.
    pub fn outcomes(&self) -> ([(f64, f64); 2], usize) {
        match *self {
            RewardSpec::Deterministic(v) => ([(v, 1.0), (0.0, 0.0)], 1),
            RewardSpec::Bernoulli(p) if p <= 0.0 => ([(0.0, 1.0), (0.0, 0.0)], 1),
            RewardSpec::Bernoulli(p) if p >= 1.0 => ([(1.0, 1.0), (0.0, 0.0)], 1),
            RewardSpec::Bernoulli(p) => ([(1.0, p), (0.0, 1.0 - p)], 2),
        }
    }

    fn validate(&self) -> core::result::Result<(), String> {
        match *self {
            RewardSpec::Deterministic(v) if !v.is_finite() => {
                Err(format!("deterministic reward {v} is not finite"))
            }
            RewardSpec::Bernoulli(p) if !(0.0..=1.0).contains(&p) => {
                Err(format!("bernoulli p {p} outside [0, 1]"))
            }
            _ => Ok(()),
        }
    }
}

/// One candidate output of a context.
#[derive(Debug, Clone, PartialEq)]
pub struct OutputSpec {
    /// Output identifier, unique within its context.
    pub id: String,
    /// Reference probability `π_ref(o|q)`.
    pub ref_prob: f64,
    /// Reward distribution.
    pub reward: RewardSpec,
}

impl OutputSpec {
    /// Convenience constructor.
    pub fn new(id: impl Into<String>, ref_prob: f64, reward: RewardSpec) -> Self {
        OutputSpec {
            id: id.into(),
            ref_prob,
            reward,
        }
    }
}

/// A context (question) with its outputs and reference policy.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextSpec {
    id: String,
    weight: f64,
    outputs: Vec<OutputSpec>,
}

impl ContextSpec {
    /// Validates and builds a context. Reference probabilities within
    /// [`PROB_TOLERANCE`] of summing to one are renormalised.
    pub fn new(id: impl Into<String>, weight: f64, mut outputs: Vec<OutputSpec>) -> Result<Self> {
        let id = id.into();
        let bad = |msg: String| Error::Scenario(format!("context '{id}': {msg}"));
        if !(weight.is_finite() && weight >= 0.0) {
            return Err(bad(format!("weight {weight} must be a nonnegative number")));
        }
        if outputs.len() < 2 {
            return Err(bad(format!("needs at least two outputs, got {}", outputs.len())));
        }
        let mut seen = BTreeSet::new();
        for o in &outputs {
            if !seen.insert(o.id.as_str()) {
                return Err(bad(format!("duplicate output id '{}'", o.id)));
            }
            if !(0.0..=1.0).contains(&o.ref_prob) {
                return Err(bad(format!(
                    "output '{}': ref_prob {} outside [0, 1]",
                    o.id, o.ref_prob
                )));
            }
            o.reward
                .validate()
                .map_err(|m| bad(format!("output '{}': {m}", o.id)))?;
        }
        let sum: f64 = outputs.iter().map(|o| o.ref_prob).sum();
        if (sum - 1.0).abs() > PROB_TOLERANCE {
            return Err(bad(format!(
                "reference probabilities sum to {sum}, expected 1"
            )));
        }
        if needs_rescale(sum, outputs.len()) {
            for o in &mut outputs {
                o.ref_prob /= sum;
            }
        }
        Ok(ContextSpec {
            id,
            weight,
            outputs,
        })
    }

    /// Builds a unit-weight context with outputs named `o0, o1, …`.
    pub fn from_parts(ref_probs: &[f64], rewards: &[RewardSpec]) -> Result<Self> {
        if ref_probs.len() != rewards.len() {
            return Err(Error::Argument(format!(
                "{} reference probabilities for {} rewards",
                ref_probs.len(),
                rewards.len()
            )));
        }
        let outputs = ref_probs
            .iter()
            .zip(rewards)
            .enumerate()
            .map(|(i, (&p, &r))| OutputSpec::new(format!("o{i}"), p, r))
            .collect();
        ContextSpec::new("q", 1.0, outputs)
    }

    /// Binary context `{a, b}` with deterministic rewards.
    pub fn binary(pi_ref_a: f64, reward_a: f64, reward_b: f64) -> Result<Self> {
        ContextSpec::new(
            "q",
            1.0,
            alloc::vec![
                OutputSpec::new("a", pi_ref_a, RewardSpec::Deterministic(reward_a)),
                OutputSpec::new("b", 1.0 - pi_ref_a, RewardSpec::Deterministic(reward_b)),
            ],
        )
    }

    /// Context identifier.
    pub fn id(&self) -> &str {
        &self.id
    }

    /// Context weight `μ(q)` (normalised across the scenario).
    pub fn weight(&self) -> f64 {
        self.weight
    }

    /// Outputs in declaration order.
    pub fn outputs(&self) -> &[OutputSpec] {
        &self.outputs
    }

    /// Number of outputs.
    pub fn len(&self) -> usize {
        self.outputs.len()
    }

    /// Always false; contexts have at least two outputs.
    pub fn is_empty(&self) -> bool {
        self.outputs.is_empty()
    }

    /// Reference policy as a probability vector.
    pub fn reference(&self) -> Vec<f64> {
        self.outputs.iter().map(|o| o.ref_prob).collect()
    }

    /// Expected rewards `r(o|q)`.
    pub fn mean_rewards(&self) -> Vec<f64> {
        self.outputs.iter().map(|o| o.reward.mean()).collect()
    }

    /// Whether output `i` lies in the support of the reference policy.
    /// Outputs outside it are kept but pinned to zero mass by every solver.
    pub fn is_supported(&self, i: usize) -> bool {
        self.outputs[i].ref_prob > 0.0
    }

    /// Position of the output with the given id.
    pub fn index_of(&self, output_id: &str) -> Option<usize> {
        self.outputs.iter().position(|o| o.id == output_id)
    }

    /// Checks that `pi` is a distribution over this context's outputs whose
    /// support lies inside the reference support. Never renormalises.
    pub fn check_policy(&self, pi: &[f64]) -> Result<()> {
        let bad = |msg: String| Error::Policy(format!("context '{}': {msg}", self.id));
        if pi.len() != self.outputs.len() {
            return Err(bad(format!(
                "{} probabilities for {} outputs",
                pi.len(),
                self.outputs.len()
            )));
        }
        for (o, &p) in self.outputs.iter().zip(pi) {
            if !(p.is_finite() && p >= 0.0) {
                return Err(bad(format!("output '{}': probability {p} is negative or not finite", o.id)));
            }
            if p > 0.0 && o.ref_prob == 0.0 {
                return Err(bad(format!(
                    "output '{}': mass {p} outside the reference support",
                    o.id
                )));
            }
        }
        let sum: f64 = pi.iter().sum();
        if (sum - 1.0).abs() > PROB_TOLERANCE {
            return Err(bad(format!("probabilities sum to {sum}, expected 1")));
        }
        Ok(())
    }

    /// Copy of this context with a different reference policy.
    pub fn with_reference(&self, ref_probs: &[f64]) -> Result<Self> {
        let outputs = self
            .outputs
            .iter()
            .zip(ref_probs)
            .map(|(o, &p)| OutputSpec::new(o.id.clone(), p, o.reward))
            .collect();
        ContextSpec::new(self.id.clone(), self.weight, outputs)
    }

    pub(crate) fn set_weight(&mut self, weight: f64) {
        self.weight = weight;
    }
}

/// Group size `G`, or the large-group limit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GroupSize {
    /// A finite group of at least two outputs.
    Finite(usize),
    /// The limit `G → ∞`.
    Limit,
}

impl fmt::Display for GroupSize {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GroupSize::Finite(g) => write!(f, "{g}"),
            GroupSize::Limit => f.write_str("limit"),
        }
    }
}

/// Reference-policy penalty.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Penalty {
    /// The GRPO penalty, an expectation under the old policy of
    /// `π_ref/π − log(π_ref/π) − 1`.
    Kl0,
    /// Importance-weighted variant whose expectation is `KL(π ‖ π_ref)`.
    DirectKl,
}

impl Penalty {
    /// Name used in files and on the command line.
    pub fn as_str(&self) -> &'static str {
        match self {
            Penalty::Kl0 => "kl0",
            Penalty::DirectKl => "direct_kl",
        }
    }
}

/// Reward normalisation inside a group.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Normalisation {
    /// Subtract the group mean and divide by the group standard deviation.
    ShiftScale,
    /// Subtract the group mean only.
    ShiftOnly,
}

impl Normalisation {
    /// Name used in files and on the command line.
    pub fn as_str(&self) -> &'static str {
        match self {
            Normalisation::ShiftScale => "shift_scale",
            Normalisation::ShiftOnly => "shift_only",
        }
    }
}

/// Training hyperparameters that shape the stationary policy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hyperparams {
    /// Penalty weight `β > 0`.
    pub beta: f64,
    /// Group size.
    pub group_size: GroupSize,
    /// Reference-policy penalty.
    pub penalty: Penalty,
    /// Advantage normalisation.
    pub normalisation: Normalisation,
}

impl Hyperparams {
    /// Standard GRPO (KL₀ penalty, shift-and-scale advantages).
    pub fn grpo(beta: f64, group_size: GroupSize) -> Self {
        Hyperparams {
            beta,
            group_size,
            penalty: Penalty::Kl0,
            normalisation: Normalisation::ShiftScale,
        }
    }

    /// Checks `β > 0` and `G ≥ 2`.
    pub fn validate(&self) -> Result<()> {
        if !(self.beta.is_finite() && self.beta > 0.0) {
            return Err(Error::Scenario(format!("beta {} must be positive", self.beta)));
        }
        if let GroupSize::Finite(g) = self.group_size {
            if g < 2 {
                return Err(Error::Scenario(format!("group_size {g} < 2")));
            }
        }
        Ok(())
    }

    /// Same hyperparameters with a different `β`.
    pub fn with_beta(self, beta: f64) -> Self {
        Hyperparams { beta, ..self }
    }
}

/// A validated scenario: contexts with weights `μ(q)` plus hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    contexts: Vec<ContextSpec>,
    hyper: Hyperparams,
}

impl Scenario {
    /// Validates and builds a scenario. Context weights within
    /// [`PROB_TOLERANCE`] of summing to one are renormalised.
    pub fn new(mut contexts: Vec<ContextSpec>, hyper: Hyperparams) -> Result<Self> {
        hyper.validate()?;
        if contexts.is_empty() {
            return Err(Error::Scenario("needs at least one context".into()));
        }
        let mut seen = BTreeSet::new();
        for c in &contexts {
            if !seen.insert(c.id.as_str()) {
                return Err(Error::Scenario(format!("duplicate context id '{}'", c.id)));
            }
        }
        let sum: f64 = contexts.iter().map(|c| c.weight).sum();
        if (sum - 1.0).abs() > PROB_TOLERANCE {
            return Err(Error::Scenario(format!(
                "context weights sum to {sum}, expected 1"
            )));
        }
        if needs_rescale(sum, contexts.len()) {
            for c in &mut contexts {
                let w = c.weight / sum;
                c.set_weight(w);
            }
        }
        Ok(Scenario { contexts, hyper })
    }

    /// Contexts in declaration order.
    pub fn contexts(&self) -> &[ContextSpec] {
        &self.contexts
    }

    /// Hyperparameters.
    pub fn hyper(&self) -> &Hyperparams {
        &self.hyper
    }

    /// Context by id.
    pub fn context(&self, id: &str) -> Option<&ContextSpec> {
        self.contexts.iter().find(|c| c.id == id)
    }

    /// Same contexts with different hyperparameters.
    pub fn with_hyper(&self, hyper: Hyperparams) -> Result<Self> {
        hyper.validate()?;
        Ok(Scenario {
            contexts: self.contexts.clone(),
            hyper,
        })
    }
}

/// One distribution over outputs per context, aligned with
/// [`Scenario::contexts`].
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyTable {
    rows: Vec<Vec<f64>>,
}

impl PolicyTable {
    /// Wraps per-context rows without checking them; see [`validate_policy`].
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Self {
        PolicyTable { rows }
    }

    /// The reference policy of a scenario.
    pub fn reference(s: &Scenario) -> Self {
        PolicyTable {
            rows: s.contexts.iter().map(ContextSpec::reference).collect(),
        }
    }

    /// Distribution for the `i`-th context.
    pub fn row(&self, i: usize) -> &[f64] {
        &self.rows[i]
    }

    /// All rows.
    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    /// Largest absolute difference over all entries; infinite when the
    /// shapes differ.
    pub fn sup_distance(&self, other: &PolicyTable) -> f64 {
        if self.rows.len() != other.rows.len() {
            return f64::INFINITY;
        }
        let mut d: f64 = 0.0;
        for (a, b) in self.rows.iter().zip(&other.rows) {
            if a.len() != b.len() {
                return f64::INFINITY;
            }
            d = d.max(crate::simplex::sup_norm(a, b));
        }
        d
    }
}

/// Succeeds iff every row of `pi` is a distribution supported inside the
/// reference support of the matching context. Reports the first violation.
pub fn validate_policy(pi: &PolicyTable, s: &Scenario) -> Result<()> {
    if pi.rows.len() != s.contexts.len() {
        return Err(Error::Policy(format!(
            "{} policy rows for {} contexts",
            pi.rows.len(),
            s.contexts.len()
        )));
    }
    for (row, ctx) in pi.rows.iter().zip(&s.contexts) {
        ctx.check_policy(row)?;
    }
    Ok(())
}
