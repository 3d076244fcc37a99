use std::io::{Read, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{reward_from_accuracy, EvalError, Evaluator};
use crate::searchspace::{Configuration, SearchSpace};

/// Base accuracy for every configuration of a space, indexed by
/// lexicographic rank, plus optional Gaussian evaluation noise.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleTable {
    space: SearchSpace,
    accuracies: Vec<f64>,
    noise: f64,
}

impl OracleTable {
    pub fn new(space: SearchSpace, accuracies: Vec<f64>, noise: f64) -> Result<Self, EvalError> {
        if accuracies.len() as u64 != space.cardinality() {
            return Err(EvalError::Table(format!(
                "table has {} rows, space has {} configurations",
                accuracies.len(),
                space.cardinality()
            )));
        }
        if let Some(bad) = accuracies.iter().find(|a| !(0.0..=1.0).contains(*a)) {
            return Err(EvalError::OutOfRange(*bad));
        }
        if !(noise >= 0.0 && noise.is_finite()) {
            return Err(EvalError::Table(format!("noise must be a non-negative real, got {noise}")));
        }
        Ok(Self { space, accuracies, noise })
    }

    pub fn from_fn(space: SearchSpace, noise: f64, f: impl Fn(&[usize]) -> f64) -> Result<Self, EvalError> {
        let acc = space.enumerate().map(|a| f(&a)).collect();
        Self::new(space, acc, noise)
    }

    /// Reads `index,accuracy` rows; every index of the space must appear once.
    pub fn read_csv(reader: impl Read, space: SearchSpace, noise: f64) -> Result<Self, EvalError> {
        let n = space.cardinality() as usize;
        let mut acc = vec![f64::NAN; n];
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        for row in rdr.deserialize::<(u64, f64)>() {
            let (i, a) = row.map_err(|e| EvalError::Table(e.to_string()))?;
            let slot = acc
                .get_mut(i as usize)
                .ok_or_else(|| EvalError::Table(format!("index {i} outside space of {n}")))?;
            if !slot.is_nan() {
                return Err(EvalError::Table(format!("index {i} appears twice")));
            }
            *slot = a;
        }
        if let Some(missing) = acc.iter().position(|a| a.is_nan()) {
            return Err(EvalError::Table(format!("index {missing} missing")));
        }
        Self::new(space, acc, noise)
    }

    pub fn write_csv(&self, writer: impl Write) -> Result<(), EvalError> {
        let mut w = csv::Writer::from_writer(writer);
        let io = |e: csv::Error| EvalError::Table(e.to_string());
        w.write_record(["index", "accuracy"]).map_err(io)?;
        for (i, a) in self.accuracies.iter().enumerate() {
            w.serialize((i, a)).map_err(io)?;
        }
        w.flush().map_err(|e| EvalError::Table(e.to_string()))
    }

    pub fn space(&self) -> &SearchSpace {
        &self.space
    }

    pub fn noise(&self) -> f64 {
        self.noise
    }

    pub fn accuracies(&self) -> &[f64] {
        &self.accuracies
    }

    pub fn base_accuracy(&self, actions: &[usize]) -> Result<f64, EvalError> {
        let r = self.space.rank(actions)?;
        Ok(self.accuracies[r as usize])
    }

    pub fn with_noise(mut self, noise: f64) -> Self {
        self.noise = noise;
        self
    }
}

/// `reward_from_accuracy(clamp(base + N(0, noise), 0, 1))`; the noise
/// draw is a pure function of `seed`.
pub fn tabular_evaluate(table: &OracleTable, config: &Configuration, seed: u64) -> Result<f64, EvalError> {
    let actions = table.space.encode(config)?;
    evaluate_actions(table, &actions, seed)
}

fn evaluate_actions(table: &OracleTable, actions: &[usize], seed: u64) -> Result<f64, EvalError> {
    let base = table.base_accuracy(actions)?;
    let acc = if table.noise > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, table.noise).map_err(|e| EvalError::Table(e.to_string()))?;
        (base + normal.sample(&mut rng)).clamp(0.0, 1.0)
    } else {
        base
    };
    reward_from_accuracy(acc)
}

pub struct TabularEvaluator {
    name: String,
    table: OracleTable,
}

impl TabularEvaluator {
    pub fn new(name: impl Into<String>, table: OracleTable) -> Self {
        Self { name: name.into(), table }
    }

    pub fn table(&self) -> &OracleTable {
        &self.table
    }
}

impl Evaluator for TabularEvaluator {
    fn name(&self) -> &str {
        &self.name
    }

    fn space(&self) -> &SearchSpace {
        &self.table.space
    }

    fn evaluate(&self, actions: &[usize], seed: u64) -> Result<f64, EvalError> {
        evaluate_actions(&self.table, actions, seed)
    }

    fn noise_free_reward(&self, actions: &[usize]) -> Option<Result<f64, EvalError>> {
        Some(self.table.base_accuracy(actions).and_then(reward_from_accuracy))
    }

    fn brute_forceable(&self) -> bool {
        true
    }
}
