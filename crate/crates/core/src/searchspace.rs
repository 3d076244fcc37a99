//! Ordered discrete search space and the mapping between action-index
//! sequences and model configurations.

use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpaceError {
    #[error("search space must contain at least one parameter")]
    Empty,
    #[error("parameter `{0}` has no choices")]
    NoChoices(String),
    #[error("parameter `{param}` lists choice `{label}` more than once")]
    DuplicateLabel { param: String, label: String },
    #[error("parameter name `{0}` is used more than once")]
    DuplicateParam(String),
    #[error("expected {expected} actions, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("index {index} out of range for parameter `{param}`")]
    IndexOutOfRange { param: String, index: usize },
    #[error("value `{value}` is not a choice of parameter `{param}`")]
    UnknownChoice { param: String, value: String },
    #[error("configuration lacks parameter `{0}`")]
    MissingParam(String),
    #[error("parameter `{param}` has the wrong value kind: {value}")]
    WrongKind { param: String, value: String },
}

/// A single choice value. Integers stand for counts (layers, nodes,
/// iterations); reals are unitless scalars such as learning rates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ChoiceValue {
    Bool(bool),
    Int(i64),
    Real(f64),
    Label(String),
}

impl ChoiceValue {
    pub fn label(&self) -> String {
        match self {
            ChoiceValue::Bool(b) => if *b { "True" } else { "False" }.to_string(),
            ChoiceValue::Int(i) => i.to_string(),
            ChoiceValue::Real(r) => format!("{r}"),
            ChoiceValue::Label(s) => s.clone(),
        }
    }

    pub fn as_f64(&self) -> Option<f64> {
        match self {
            ChoiceValue::Int(i) => Some(*i as f64),
            ChoiceValue::Real(r) => Some(*r),
            _ => None,
        }
    }

    fn matches(&self, other: &ChoiceValue) -> bool {
        match (self, other) {
            (ChoiceValue::Int(a), ChoiceValue::Real(b)) | (ChoiceValue::Real(b), ChoiceValue::Int(a)) => {
                (*a as f64) == *b
            }
            _ => self == other,
        }
    }
}

impl fmt::Display for ChoiceValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

impl From<&str> for ChoiceValue {
    fn from(s: &str) -> Self {
        ChoiceValue::Label(s.to_string())
    }
}

impl From<bool> for ChoiceValue {
    fn from(b: bool) -> Self {
        ChoiceValue::Bool(b)
    }
}

impl From<i64> for ChoiceValue {
    fn from(i: i64) -> Self {
        ChoiceValue::Int(i)
    }
}

impl From<f64> for ChoiceValue {
    fn from(r: f64) -> Self {
        ChoiceValue::Real(r)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    pub choices: Vec<ChoiceValue>,
}

impl ParamSpec {
    pub fn new(name: impl Into<String>, choices: Vec<ChoiceValue>) -> Self {
        Self { name: name.into(), choices }
    }

    pub fn len(&self) -> usize {
        self.choices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.choices.is_empty()
    }

    pub fn position(&self, value: &ChoiceValue) -> Option<usize> {
        self.choices.iter().position(|c| c.matches(value))
    }
}

/// Canonical parameter names used by [`ModelConfig`].
pub mod names {
    pub const EMBEDDING: &str = "embedding";
    pub const EMBEDDING_TRAINABLE: &str = "embedding_trainable";
    pub const N_LAYERS: &str = "n_layers";
    pub const N_NODES: &str = "n_nodes";
    pub const LEARNING_RATE: &str = "learning_rate";
    pub const TRAIN_ITERATIONS: &str = "train_iterations";
    pub const L2_WEIGHT: &str = "l2_weight";

    pub const ALL: [&str; 7] = [
        EMBEDDING,
        EMBEDDING_TRAINABLE,
        N_LAYERS,
        N_NODES,
        LEARNING_RATE,
        TRAIN_ITERATIONS,
        L2_WEIGHT,
    ];
}

/// Word-embedding table labels, in menu order.
pub const EMBEDDING_LABELS: [&str; 6] = [
    "Spanish",
    "German",
    "Japanese",
    "English-small",
    "English-big",
    "English-wiki",
];

/// An ordered, immutable list of discrete parameters.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SearchSpace {
    params: Vec<ParamSpec>,
}

impl SearchSpace {
    pub fn new(params: Vec<ParamSpec>) -> Result<Self, SpaceError> {
        if params.is_empty() {
            return Err(SpaceError::Empty);
        }
        for (i, p) in params.iter().enumerate() {
            if p.choices.is_empty() {
                return Err(SpaceError::NoChoices(p.name.clone()));
            }
            if params[..i].iter().any(|q| q.name == p.name) {
                return Err(SpaceError::DuplicateParam(p.name.clone()));
            }
            let labels: Vec<String> = p.choices.iter().map(ChoiceValue::label).collect();
            for (j, l) in labels.iter().enumerate() {
                if labels[..j].contains(l) {
                    return Err(SpaceError::DuplicateLabel {
                        param: p.name.clone(),
                        label: l.clone(),
                    });
                }
            }
        }
        Ok(Self { params })
    }

    /// The seven-parameter text-classification menu.
    pub fn table1() -> Self {
        use ChoiceValue::*;
        let params = vec![
            ParamSpec::new(names::EMBEDDING, EMBEDDING_LABELS.iter().map(|&l| l.into()).collect()),
            ParamSpec::new(names::EMBEDDING_TRAINABLE, vec![Bool(true), Bool(false)]),
            ParamSpec::new(names::N_LAYERS, [1, 2, 3, 5, 10].map(Int).to_vec()),
            ParamSpec::new(names::N_NODES, [5, 10, 50, 100].map(Int).to_vec()),
            ParamSpec::new(names::LEARNING_RATE, [0.001, 0.01, 0.05, 0.1].map(Real).to_vec()),
            ParamSpec::new(names::TRAIN_ITERATIONS, [5000, 10000, 15000, 20000].map(Int).to_vec()),
            ParamSpec::new(names::L2_WEIGHT, [0.0, 0.0001, 0.001, 0.01].map(Real).to_vec()),
        ];
        Self::new(params).expect("table space is valid")
    }

    pub fn params(&self) -> &[ParamSpec] {
        &self.params
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn choice_counts(&self) -> Vec<usize> {
        self.params.iter().map(ParamSpec::len).collect()
    }

    pub fn param_index(&self, name: &str) -> Option<usize> {
        self.params.iter().position(|p| p.name == name)
    }

    pub fn cardinality(&self) -> u64 {
        self.params.iter().map(|p| p.len() as u64).product()
    }

    pub fn validate_actions(&self, actions: &[usize]) -> Result<(), SpaceError> {
        if actions.len() != self.params.len() {
            return Err(SpaceError::LengthMismatch { expected: self.params.len(), got: actions.len() });
        }
        for (p, &a) in self.params.iter().zip(actions) {
            if a >= p.len() {
                return Err(SpaceError::IndexOutOfRange { param: p.name.clone(), index: a });
            }
        }
        Ok(())
    }

    pub fn decode(&self, actions: &[usize]) -> Result<Configuration, SpaceError> {
        self.validate_actions(actions)?;
        let values = self
            .params
            .iter()
            .zip(actions)
            .map(|(p, &a)| (p.name.clone(), p.choices[a].clone()))
            .collect();
        Ok(Configuration { values })
    }

    pub fn encode(&self, config: &Configuration) -> Result<Vec<usize>, SpaceError> {
        self.params
            .iter()
            .map(|p| {
                let v = config.get(&p.name).ok_or_else(|| SpaceError::MissingParam(p.name.clone()))?;
                p.position(v).ok_or_else(|| SpaceError::UnknownChoice {
                    param: p.name.clone(),
                    value: v.label(),
                })
            })
            .collect()
    }

    /// Encodes a typed config; every parameter of the space must be one of
    /// the seven canonical names.
    pub fn encode_model(&self, config: &ModelConfig) -> Result<Vec<usize>, SpaceError> {
        self.encode(&config.to_configuration())
    }

    /// Lexicographic rank of an action sequence (last parameter fastest).
    pub fn rank(&self, actions: &[usize]) -> Result<u64, SpaceError> {
        self.validate_actions(actions)?;
        Ok(self
            .params
            .iter()
            .zip(actions)
            .fold(0u64, |acc, (p, &a)| acc * p.len() as u64 + a as u64))
    }

    pub fn unrank(&self, mut index: u64) -> Option<Vec<usize>> {
        if index >= self.cardinality() {
            return None;
        }
        let mut out = vec![0; self.params.len()];
        for (slot, p) in out.iter_mut().zip(&self.params).rev() {
            let n = p.len() as u64;
            *slot = (index % n) as usize;
            index /= n;
        }
        Some(out)
    }

    /// All action sequences in lexicographic order.
    pub fn enumerate(&self) -> Enumerate<'_> {
        Enumerate { space: self, next: Some(vec![0; self.params.len()]) }
    }

    /// Stable identifier over parameter names and choice counts.
    pub fn fingerprint(&self) -> u64 {
        let mut h = Sha256::new();
        for p in &self.params {
            h.update((p.name.len() as u64).to_le_bytes());
            h.update(p.name.as_bytes());
            h.update((p.len() as u64).to_le_bytes());
        }
        let digest = h.finalize();
        u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
    }
}

pub struct Enumerate<'a> {
    space: &'a SearchSpace,
    next: Option<Vec<usize>>,
}

impl Iterator for Enumerate<'_> {
    type Item = Vec<usize>;

    fn next(&mut self) -> Option<Vec<usize>> {
        let current = self.next.take()?;
        let mut succ = current.clone();
        for i in (0..succ.len()).rev() {
            succ[i] += 1;
            if succ[i] < self.space.params[i].len() {
                self.next = Some(succ);
                break;
            }
            succ[i] = 0;
        }
        Some(current)
    }
}

/// One decoded value per parameter, in space order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Configuration {
    pub values: Vec<(String, ChoiceValue)>,
}

impl Configuration {
    pub fn get(&self, name: &str) -> Option<&ChoiceValue> {
        self.values.iter().find(|(n, _)| n == name).map(|(_, v)| v)
    }

    pub fn to_model_config(&self) -> Result<ModelConfig, SpaceError> {
        ModelConfig::from_configuration(self)
    }
}

impl fmt::Display for Configuration {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.values.iter().map(|(n, v)| format!("{n}={v}")).collect();
        f.write_str(&parts.join(" "))
    }
}

/// Typed child-model configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub embedding_choice: String,
    pub embedding_trainable: bool,
    pub n_layers: usize,
    pub n_nodes: usize,
    pub learning_rate: f64,
    pub train_iterations: u64,
    pub l2_weight: f64,
}

impl ModelConfig {
    pub fn from_configuration(config: &Configuration) -> Result<Self, SpaceError> {
        let get = |name: &str| config.get(name).ok_or_else(|| SpaceError::MissingParam(name.to_string()));
        let wrong = |name: &str, v: &ChoiceValue| SpaceError::WrongKind { param: name.to_string(), value: v.label() };
        let count = |name: &str| -> Result<i64, SpaceError> {
            match get(name)? {
                ChoiceValue::Int(i) if *i >= 0 => Ok(*i),
                v => Err(wrong(name, v)),
            }
        };
        let real = |name: &str| -> Result<f64, SpaceError> {
            let v = get(name)?;
            v.as_f64().ok_or_else(|| wrong(name, v))
        };
        let embedding_choice = match get(names::EMBEDDING)? {
            ChoiceValue::Label(s) => s.clone(),
            v => return Err(wrong(names::EMBEDDING, v)),
        };
        let embedding_trainable = match get(names::EMBEDDING_TRAINABLE)? {
            ChoiceValue::Bool(b) => *b,
            v => return Err(wrong(names::EMBEDDING_TRAINABLE, v)),
        };
        Ok(Self {
            embedding_choice,
            embedding_trainable,
            n_layers: count(names::N_LAYERS)? as usize,
            n_nodes: count(names::N_NODES)? as usize,
            learning_rate: real(names::LEARNING_RATE)?,
            train_iterations: count(names::TRAIN_ITERATIONS)? as u64,
            l2_weight: real(names::L2_WEIGHT)?,
        })
    }

    pub fn to_configuration(&self) -> Configuration {
        Configuration {
            values: vec![
                (names::EMBEDDING.into(), ChoiceValue::Label(self.embedding_choice.clone())),
                (names::EMBEDDING_TRAINABLE.into(), ChoiceValue::Bool(self.embedding_trainable)),
                (names::N_LAYERS.into(), ChoiceValue::Int(self.n_layers as i64)),
                (names::N_NODES.into(), ChoiceValue::Int(self.n_nodes as i64)),
                (names::LEARNING_RATE.into(), ChoiceValue::Real(self.learning_rate)),
                (names::TRAIN_ITERATIONS.into(), ChoiceValue::Int(self.train_iterations as i64)),
                (names::L2_WEIGHT.into(), ChoiceValue::Real(self.l2_weight)),
            ],
        }
    }
}
