//! JSON documents: scenarios, trainer configurations and sweep specs.
//!
//! All readers are strict: unknown keys are rejected so typos surface as
//! errors instead of silently falling back to defaults.

use std::fs;
use std::path::{Path, PathBuf};

use prefagg_core::trainer::TrainerConfig;
use prefagg_core::{
    ContextSpec, GroupSize, Hyperparams, Normalisation, OutputSpec, Penalty, RewardSpec, Scenario,
};
use serde::de::{self, Deserializer};
use serde::ser::Serializer;
use serde::{Deserialize, Serialize};

/// Failure to read or validate a document.
#[derive(Debug, thiserror::Error)]
pub enum DocumentError {
    /// The file could not be read.
    #[error("cannot read {}: {source}", path.display())]
    Io {
        /// File that failed.
        path: PathBuf,
        /// Underlying error.
        source: std::io::Error,
    },
    /// The text is not a well-formed document.
    #[error("parse error: {0}")]
    Parse(#[from] serde_json::Error),
    /// The document parsed but violates an invariant.
    #[error("validation error: {0}")]
    Invalid(#[from] prefagg_core::Error),
    /// A sweep spec violates an invariant.
    #[error("validation error: {0}")]
    Sweep(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
enum RewardDoc {
    Deterministic { value: f64 },
    Bernoulli { p: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct OutputDoc {
    id: String,
    ref_prob: f64,
    reward: RewardDoc,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ContextDoc {
    id: String,
    weight: f64,
    outputs: Vec<OutputDoc>,
}

/// `group_size` is either an integer or the string `"limit"`.
#[derive(Debug, Clone, Copy, PartialEq)]
struct GroupSizeDoc(GroupSize);

impl Serialize for GroupSizeDoc {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self.0 {
            GroupSize::Finite(g) => s.serialize_u64(g as u64),
            GroupSize::Limit => s.serialize_str("limit"),
        }
    }
}

impl<'de> Deserialize<'de> for GroupSizeDoc {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Int(u64),
            Text(String),
        }
        match Raw::deserialize(d).map_err(|_| {
            de::Error::custom("group_size must be a nonnegative integer or \"limit\"")
        })? {
            Raw::Int(g) => Ok(GroupSizeDoc(GroupSize::Finite(g as usize))),
            Raw::Text(t) if t == "limit" => Ok(GroupSizeDoc(GroupSize::Limit)),
            Raw::Text(t) => Err(de::Error::custom(format!(
                "group_size must be an integer or \"limit\", got \"{t}\""
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum PenaltyDoc {
    Kl0,
    DirectKl,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum NormalisationDoc {
    ShiftScale,
    ShiftOnly,
}

impl From<PenaltyDoc> for Penalty {
    fn from(p: PenaltyDoc) -> Self {
        match p {
            PenaltyDoc::Kl0 => Penalty::Kl0,
            PenaltyDoc::DirectKl => Penalty::DirectKl,
        }
    }
}

impl From<Penalty> for PenaltyDoc {
    fn from(p: Penalty) -> Self {
        match p {
            Penalty::Kl0 => PenaltyDoc::Kl0,
            Penalty::DirectKl => PenaltyDoc::DirectKl,
        }
    }
}

impl From<NormalisationDoc> for Normalisation {
    fn from(n: NormalisationDoc) -> Self {
        match n {
            NormalisationDoc::ShiftScale => Normalisation::ShiftScale,
            NormalisationDoc::ShiftOnly => Normalisation::ShiftOnly,
        }
    }
}

impl From<Normalisation> for NormalisationDoc {
    fn from(n: Normalisation) -> Self {
        match n {
            Normalisation::ShiftScale => NormalisationDoc::ShiftScale,
            Normalisation::ShiftOnly => NormalisationDoc::ShiftOnly,
        }
    }
}

fn default_penalty() -> PenaltyDoc {
    PenaltyDoc::Kl0
}

fn default_normalisation() -> NormalisationDoc {
    NormalisationDoc::ShiftScale
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct HyperDoc {
    beta: f64,
    group_size: GroupSizeDoc,
    #[serde(default = "default_penalty")]
    penalty: PenaltyDoc,
    #[serde(default = "default_normalisation")]
    normalisation: NormalisationDoc,
}

impl HyperDoc {
    fn to_hyper(self) -> Hyperparams {
        Hyperparams {
            beta: self.beta,
            group_size: self.group_size.0,
            penalty: self.penalty.into(),
            normalisation: self.normalisation.into(),
        }
    }

    fn from_hyper(h: &Hyperparams) -> Self {
        HyperDoc {
            beta: h.beta,
            group_size: GroupSizeDoc(h.group_size),
            penalty: h.penalty.into(),
            normalisation: h.normalisation.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioDoc {
    contexts: Vec<ContextDoc>,
    hyper: HyperDoc,
}

fn read(path: &Path) -> Result<String, DocumentError> {
    fs::read_to_string(path).map_err(|source| DocumentError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Parses and validates a scenario document.
pub fn load_scenario(text: &str) -> Result<Scenario, DocumentError> {
    let doc: ScenarioDoc = serde_json::from_str(text)?;
    let mut contexts = Vec::with_capacity(doc.contexts.len());
    for c in doc.contexts {
        let outputs = c
            .outputs
            .into_iter()
            .map(|o| {
                let reward = match o.reward {
                    RewardDoc::Deterministic { value } => RewardSpec::Deterministic(value),
                    RewardDoc::Bernoulli { p } => RewardSpec::Bernoulli(p),
                };
                OutputSpec::new(o.id, o.ref_prob, reward)
            })
            .collect();
        contexts.push(ContextSpec::new(c.id, c.weight, outputs)?);
    }
    Ok(Scenario::new(contexts, doc.hyper.to_hyper())?)
}

/// Reads a scenario file.
pub fn read_scenario(path: &Path) -> Result<Scenario, DocumentError> {
    load_scenario(&read(path)?)
}

/// Pretty JSON for a scenario; [`load_scenario`] inverts it.
pub fn scenario_to_json(s: &Scenario) -> String {
    let doc = ScenarioDoc {
        contexts: s
            .contexts()
            .iter()
            .map(|c| ContextDoc {
                id: c.id().to_string(),
                weight: c.weight(),
                outputs: c
                    .outputs()
                    .iter()
                    .map(|o| OutputDoc {
                        id: o.id.clone(),
                        ref_prob: o.ref_prob,
                        reward: match o.reward {
                            RewardSpec::Deterministic(value) => RewardDoc::Deterministic { value },
                            RewardSpec::Bernoulli(p) => RewardDoc::Bernoulli { p },
                        },
                    })
                    .collect(),
            })
            .collect(),
        hyper: HyperDoc::from_hyper(s.hyper()),
    };
    serde_json::to_string_pretty(&doc).expect("scenario documents always serialise")
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct TrainerDoc {
    epsilon: f64,
    learning_rate: f64,
    steps: usize,
    groups_per_step: usize,
    inner_updates_per_old_policy: usize,
    seed: u64,
    checkpoint_every: usize,
}

impl Default for TrainerDoc {
    fn default() -> Self {
        let c = TrainerConfig::default();
        TrainerDoc {
            epsilon: c.epsilon,
            learning_rate: c.learning_rate,
            steps: c.steps,
            groups_per_step: c.groups_per_step,
            inner_updates_per_old_policy: c.inner_updates_per_old_policy,
            seed: c.seed,
            checkpoint_every: c.checkpoint_every,
        }
    }
}

/// Parses a trainer configuration. Missing keys take their defaults.
pub fn load_trainer_config(text: &str) -> Result<TrainerConfig, DocumentError> {
    let d: TrainerDoc = serde_json::from_str(text)?;
    let cfg = TrainerConfig {
        epsilon: d.epsilon,
        learning_rate: d.learning_rate,
        steps: d.steps,
        groups_per_step: d.groups_per_step,
        inner_updates_per_old_policy: d.inner_updates_per_old_policy,
        seed: d.seed,
        checkpoint_every: d.checkpoint_every,
    };
    cfg.validate()?;
    Ok(cfg)
}

/// Reads a trainer configuration file.
pub fn read_trainer_config(path: &Path) -> Result<TrainerConfig, DocumentError> {
    load_trainer_config(&read(path)?)
}

/// Variable swept along the horizontal axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    /// Reference mass of the preferred answer.
    PiRefA,
    /// Penalty strength.
    Beta,
}

/// One curve: the parameters held fixed along the axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Curve {
    /// Penalty strength; required when sweeping `pi_ref_a`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    /// Confidence margin, default 1.
    #[serde(default = "one")]
    pub gamma: f64,
    /// Reference mass; required when sweeping `beta`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pi_ref_a: Option<f64>,
}

fn one() -> f64 {
    1.0
}

/// Objective variant of a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VariantDoc {
    #[serde(default = "default_penalty")]
    penalty: PenaltyDoc,
    #[serde(default = "default_normalisation")]
    normalisation: NormalisationDoc,
    group_size: GroupSizeDoc,
}

impl VariantDoc {
    /// Builds the variant description.
    pub fn new(penalty: Penalty, normalisation: Normalisation, group_size: GroupSize) -> Self {
        VariantDoc {
            penalty: penalty.into(),
            normalisation: normalisation.into(),
            group_size: GroupSizeDoc(group_size),
        }
    }

    /// Hyperparameters at strength `beta`.
    pub fn hyper(&self, beta: f64) -> Hyperparams {
        Hyperparams {
            beta,
            group_size: self.group_size.0,
            penalty: self.penalty.into(),
            normalisation: self.normalisation.into(),
        }
    }

    /// Short label such as `kl0/shift_scale/G=2`.
    pub fn label(&self) -> String {
        let h = self.hyper(1.0);
        format!(
            "{}/{}/G={}",
            h.penalty.as_str(),
            h.normalisation.as_str(),
            h.group_size
        )
    }
}

/// A parameter sweep: one row per grid point per curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    /// Swept variable.
    pub axis: Axis,
    /// Grid values, strictly increasing.
    pub grid: Vec<f64>,
    /// Fixed parameters of each curve.
    pub curves: Vec<Curve>,
    /// Objective variant.
    pub variant: VariantDoc,
}

impl SweepSpec {
    /// Checks the grid and that every curve fixes the non-swept parameters.
    pub fn validate(&self) -> Result<(), DocumentError> {
        let bad = |m: String| Err(DocumentError::Sweep(m));
        if self.grid.is_empty() {
            return bad("sweep grid is empty".into());
        }
        if self.curves.is_empty() {
            return bad("sweep needs at least one curve".into());
        }
        if let Some(w) = self.grid.windows(2).find(|w| !(w[0] < w[1])) {
            return bad(format!("grid is not strictly increasing at {} -> {}", w[0], w[1]));
        }
        for &x in &self.grid {
            let ok = match self.axis {
                Axis::PiRefA => (0.0..=1.0).contains(&x),
                Axis::Beta => x > 0.0 && x.is_finite(),
            };
            if !ok {
                return bad(format!("grid value {x} outside the axis domain"));
            }
        }
        let h = self.variant.hyper(1.0);
        if let GroupSize::Finite(g) = h.group_size {
            if g < 2 {
                return bad(format!("group_size {g} < 2"));
            }
        }
        for (i, c) in self.curves.iter().enumerate() {
            if !(c.gamma.is_finite() && (-1.0..=1.0).contains(&c.gamma)) {
                return bad(format!("curve {i}: gamma {} outside [-1, 1]", c.gamma));
            }
            match self.axis {
                Axis::PiRefA => match c.beta {
                    Some(b) if b > 0.0 && b.is_finite() => {}
                    Some(b) => return bad(format!("curve {i}: beta {b} must be positive")),
                    None => return bad(format!("curve {i}: beta is required when sweeping pi_ref_a")),
                },
                Axis::Beta => match c.pi_ref_a {
                    Some(p) if (0.0..=1.0).contains(&p) => {}
                    Some(p) => return bad(format!("curve {i}: pi_ref_a {p} outside [0, 1]")),
                    None => return bad(format!("curve {i}: pi_ref_a is required when sweeping beta")),
                },
            }
        }
        Ok(())
    }
}

/// Parses and validates a sweep spec.
pub fn load_sweep_spec(text: &str) -> Result<SweepSpec, DocumentError> {
    let spec: SweepSpec = serde_json::from_str(text)?;
    spec.validate()?;
    Ok(spec)
}

/// Reads a sweep spec file.
pub fn read_sweep_spec(path: &Path) -> Result<SweepSpec, DocumentError> {
    load_sweep_spec(&read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    const BINARY: &str = r#"{
        "contexts": [{"id": "q", "weight": 1.0, "outputs": [
            {"id": "a", "ref_prob": 0.3, "reward": {"kind": "deterministic", "value": 1.0}},
            {"id": "b", "ref_prob": 0.7, "reward": {"kind": "deterministic", "value": 0.0}}
        ]}],
        "hyper": {"beta": 0.04, "group_size": 2, "penalty": "kl0", "normalisation": "shift_scale"}
    }"#;

    #[test]
    fn binary_document_loads() {
        let s = load_scenario(BINARY).unwrap();
        assert_eq!(s.contexts().len(), 1);
        assert_eq!(s.contexts()[0].len(), 2);
        assert_eq!(s.hyper().group_size, GroupSize::Finite(2));
        assert_eq!(s.hyper().beta, 0.04);
    }

    #[test]
    fn bad_sum_is_reported() {
        let text = BINARY.replace("0.3", "0.5").replace("0.7", "0.6");
        let e = load_scenario(&text).unwrap_err();
        assert!(matches!(e, DocumentError::Invalid(_)));
        assert!(e.to_string().contains("probabilities sum to 1.1"), "{e}");
    }

    #[test]
    fn limit_group_size() {
        let text = BINARY.replace("\"group_size\": 2", "\"group_size\": \"limit\"");
        assert_eq!(load_scenario(&text).unwrap().hyper().group_size, GroupSize::Limit);
    }

    #[test]
    fn small_group_rejected() {
        let text = BINARY.replace("\"group_size\": 2", "\"group_size\": 1");
        let e = load_scenario(&text).unwrap_err();
        assert!(e.to_string().contains("group_size 1 < 2"), "{e}");
    }

    #[test]
    fn unknown_keys_rejected() {
        let text = BINARY.replace("\"weight\"", "\"wieght\"");
        assert!(matches!(load_scenario(&text), Err(DocumentError::Parse(_))));
        let text = BINARY.replace("\"value\": 0.0", "\"value\": 0.0, \"p\": 0.5");
        assert!(matches!(load_scenario(&text), Err(DocumentError::Parse(_))));
        let text = BINARY.replace("\"kind\": \"deterministic\", \"value\": 1.0", "\"kind\": \"gaussian\"");
        assert!(matches!(load_scenario(&text), Err(DocumentError::Parse(_))));
    }

    #[test]
    fn serialise_round_trips() {
        let s = load_scenario(BINARY).unwrap();
        assert_eq!(load_scenario(&scenario_to_json(&s)).unwrap(), s);
    }

    #[test]
    fn trainer_defaults_and_strictness() {
        let c = load_trainer_config(r#"{"seed": 7, "steps": 10}"#).unwrap();
        assert_eq!(c.seed, 7);
        assert_eq!(c.steps, 10);
        assert_eq!(c.epsilon, TrainerConfig::default().epsilon);
        assert!(load_trainer_config(r#"{"sead": 7}"#).is_err());
        assert!(matches!(
            load_trainer_config(r#"{"learning_rate": -1}"#),
            Err(DocumentError::Invalid(_))
        ));
    }

    #[test]
    fn sweep_spec_checks_grid() {
        let ok = r#"{"axis": "pi_ref_a", "grid": [0, 0.5, 1], "curves": [{"beta": 0.1, "gamma": 1.0}],
                     "variant": {"penalty": "kl0", "normalisation": "shift_scale", "group_size": 2}}"#;
        let spec = load_sweep_spec(ok).unwrap();
        assert_eq!(spec.variant.label(), "kl0/shift_scale/G=2");
        assert!(load_sweep_spec(&ok.replace("[0, 0.5, 1]", "[0, 1, 0.5]")).is_err());
        assert!(load_sweep_spec(&ok.replace("[0, 0.5, 1]", "[0, 1.5]")).is_err());
        assert!(load_sweep_spec(&ok.replace("{\"beta\": 0.1, \"gamma\": 1.0}", "{\"gamma\": 1.0}")).is_err());
    }
}
