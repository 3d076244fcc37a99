//! Bundled tabular fixtures with planted optima.
//!
//! Accuracy is separable across parameters:
//! `floor + (ceiling - floor) * mean_i score_i(choice_i)`, where the planted
//! choice scores 1 and every other choice a fixed value in `[0, 0.5]`
//! drawn from the fixture seed. The planted sequence is the unique argmax.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{EvalError, OracleTable};
use crate::searchspace::{names, ChoiceValue, ParamSpec, SearchSpace, EMBEDDING_LABELS};

/// The reduced 576-configuration menu the fixtures are designed around.
pub fn fixture_space() -> SearchSpace {
    use ChoiceValue::*;
    SearchSpace::new(vec![
        ParamSpec::new(names::EMBEDDING, EMBEDDING_LABELS.iter().map(|&l| l.into()).collect()),
        ParamSpec::new(names::EMBEDDING_TRAINABLE, vec![Bool(true), Bool(false)]),
        ParamSpec::new(names::N_LAYERS, vec![Int(1), Int(2), Int(5)]),
        ParamSpec::new(names::N_NODES, vec![Int(10), Int(100)]),
        ParamSpec::new(names::LEARNING_RATE, vec![Real(0.01), Real(0.1)]),
        ParamSpec::new(names::TRAIN_ITERATIONS, vec![Int(5000), Int(20000)]),
        ParamSpec::new(names::L2_WEIGHT, vec![Real(0.0), Real(0.001)]),
    ])
    .expect("fixture space is valid")
}

/// A 384-configuration menu cheap enough to train every child network.
pub fn toy_space() -> SearchSpace {
    use ChoiceValue::*;
    SearchSpace::new(vec![
        ParamSpec::new(names::EMBEDDING, EMBEDDING_LABELS.iter().map(|&l| l.into()).collect()),
        ParamSpec::new(names::EMBEDDING_TRAINABLE, vec![Bool(false), Bool(true)]),
        ParamSpec::new(names::N_LAYERS, vec![Int(1), Int(2)]),
        ParamSpec::new(names::N_NODES, vec![Int(10), Int(50)]),
        ParamSpec::new(names::LEARNING_RATE, vec![Real(0.01), Real(0.1)]),
        ParamSpec::new(names::TRAIN_ITERATIONS, vec![Int(100), Int(200)]),
        ParamSpec::new(names::L2_WEIGHT, vec![Real(0.0), Real(0.001)]),
    ])
    .expect("toy space is valid")
}

#[derive(Debug, Clone, PartialEq)]
pub struct FixtureSpec {
    pub name: &'static str,
    /// Planted choice per parameter, reduced modulo each choice count.
    pub pattern: Vec<usize>,
    pub floor: f64,
    pub ceiling: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fixture {
    /// Harder task with a low ceiling.
    PlantedA,
    /// Easy task with a high ceiling; its optimum differs from `PlantedA`
    /// in the embedding, layer count and learning rate.
    PlantedB,
    /// `PlantedA` with the layer count of `PlantedB`.
    RelatedA,
    /// `PlantedB` with the learning rate of `PlantedA`.
    RelatedB,
}

impl Fixture {
    pub const ALL: [Fixture; 4] = [Fixture::PlantedA, Fixture::PlantedB, Fixture::RelatedA, Fixture::RelatedB];

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|f| f.spec().name == name)
    }

    pub fn spec(self) -> FixtureSpec {
        match self {
            Fixture::PlantedA => FixtureSpec {
                name: "planted-a",
                pattern: vec![4, 0, 1, 1, 0, 1, 1],
                floor: 0.5,
                ceiling: 0.85,
                seed: 101,
            },
            Fixture::PlantedB => FixtureSpec {
                name: "planted-b",
                pattern: vec![0, 0, 0, 1, 1, 1, 1],
                floor: 0.5,
                ceiling: 0.99,
                seed: 202,
            },
            Fixture::RelatedA => FixtureSpec {
                name: "related-a",
                pattern: vec![4, 0, 0, 1, 0, 1, 1],
                floor: 0.5,
                ceiling: 0.90,
                seed: 303,
            },
            Fixture::RelatedB => FixtureSpec {
                name: "related-b",
                pattern: vec![0, 0, 0, 1, 0, 1, 1],
                floor: 0.5,
                ceiling: 0.80,
                seed: 404,
            },
        }
    }

    pub fn table(self, space: &SearchSpace, noise: f64) -> Result<OracleTable, EvalError> {
        planted_table(space, &self.spec(), noise)
    }
}

impl FixtureSpec {
    pub fn optimum(&self, space: &SearchSpace) -> Vec<usize> {
        space
            .choice_counts()
            .iter()
            .enumerate()
            .map(|(i, &n)| self.pattern.get(i).copied().unwrap_or(0) % n)
            .collect()
    }
}

pub fn planted_table(space: &SearchSpace, spec: &FixtureSpec, noise: f64) -> Result<OracleTable, EvalError> {
    let optimum = spec.optimum(space);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let scores: Vec<Vec<f64>> = space
        .choice_counts()
        .iter()
        .zip(&optimum)
        .map(|(&n, &opt)| (0..n).map(|c| if c == opt { 1.0 } else { rng.random_range(0.0..0.5) }).collect())
        .collect();
    let active = space.choice_counts().iter().filter(|&&n| n > 1).count().max(1) as f64;
    let span = spec.ceiling - spec.floor;
    OracleTable::from_fn(space.clone(), noise, |actions| {
        let total: f64 = actions
            .iter()
            .zip(&scores)
            .filter(|(_, s)| s.len() > 1)
            .map(|(&a, s)| s[a])
            .sum();
        spec.floor + span * total / active
    })
}
