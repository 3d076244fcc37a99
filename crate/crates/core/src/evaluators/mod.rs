//! Reward sources: the evaluator contract, tabular oracles, and a small
//! feed-forward child-network trainer.

mod child;
mod fixtures;
mod tabular;

use thiserror::Error;

use crate::searchspace::{SearchSpace, SpaceError};

pub use child::{train_child_network, train_child_network_with, ChildEvaluator, ChildNetwork, ToyKind, ToyTask, ToyTaskSpec};
pub use fixtures::{fixture_space, planted_table, toy_space, Fixture, FixtureSpec};
pub use tabular::{tabular_evaluate, OracleTable, TabularEvaluator};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("accuracy {0} outside [0, 1]")]
    OutOfRange(f64),
    #[error("configuration is not part of the evaluator's space: {0}")]
    UnknownConfig(String),
    #[error("evaluator `{0}` cannot be brute-forced")]
    NotBruteForceable(String),
    #[error("invalid child configuration: {0}")]
    InvalidConfig(String),
    #[error("oracle table: {0}")]
    Table(String),
    #[error("evaluation failed: {0}")]
    Failed(String),
}

impl From<SpaceError> for EvalError {
    fn from(e: SpaceError) -> Self {
        EvalError::UnknownConfig(e.to_string())
    }
}

/// Reward is the cube of validation accuracy.
pub fn reward_from_accuracy(acc: f64) -> Result<f64, EvalError> {
    if !(0.0..=1.0).contains(&acc) {
        return Err(EvalError::OutOfRange(acc));
    }
    Ok(acc * acc * acc)
}

/// Maps a sampled action sequence plus a seed to a reward. Implementations
/// must be pure in `(actions, seed)`.
pub trait Evaluator: Send + Sync {
    fn name(&self) -> &str;

    fn space(&self) -> &SearchSpace;

    fn evaluate(&self, actions: &[usize], seed: u64) -> Result<f64, EvalError>;

    /// Noise-free reward used for exhaustive search; `None` when the
    /// evaluator cannot be brute-forced.
    fn noise_free_reward(&self, _actions: &[usize]) -> Option<Result<f64, EvalError>> {
        None
    }

    fn brute_forceable(&self) -> bool {
        false
    }
}

/// Multiplies every reward of an inner evaluator by a constant.
pub struct ScaledEvaluator<E> {
    pub inner: E,
    pub scale: f64,
}

impl<E: Evaluator> Evaluator for ScaledEvaluator<E> {
    fn name(&self) -> &str {
        self.inner.name()
    }

    fn space(&self) -> &SearchSpace {
        self.inner.space()
    }

    fn evaluate(&self, actions: &[usize], seed: u64) -> Result<f64, EvalError> {
        Ok(self.scale * self.inner.evaluate(actions, seed)?)
    }

    fn noise_free_reward(&self, actions: &[usize]) -> Option<Result<f64, EvalError>> {
        self.inner.noise_free_reward(actions).map(|r| r.map(|v| self.scale * v))
    }

    fn brute_forceable(&self) -> bool {
        self.inner.brute_forceable()
    }
}

impl<E: Evaluator + ?Sized> Evaluator for Box<E> {
    fn name(&self) -> &str {
        (**self).name()
    }

    fn space(&self) -> &SearchSpace {
        (**self).space()
    }

    fn evaluate(&self, actions: &[usize], seed: u64) -> Result<f64, EvalError> {
        (**self).evaluate(actions, seed)
    }

    fn noise_free_reward(&self, actions: &[usize]) -> Option<Result<f64, EvalError>> {
        (**self).noise_free_reward(actions)
    }

    fn brute_forceable(&self) -> bool {
        (**self).brute_forceable()
    }
}

/// Exact argmax of the noise-free reward over the whole space. Ties go to
/// the lexicographically first action sequence.
pub fn brute_force_optimum<E: Evaluator + ?Sized>(evaluator: &E) -> Result<(Vec<usize>, f64), EvalError> {
    if !evaluator.brute_forceable() {
        return Err(EvalError::NotBruteForceable(evaluator.name().to_string()));
    }
    let mut best: Option<(Vec<usize>, f64)> = None;
    for actions in evaluator.space().enumerate() {
        let r = evaluator
            .noise_free_reward(&actions)
            .ok_or_else(|| EvalError::NotBruteForceable(evaluator.name().to_string()))??;
        if best.as_ref().is_none_or(|(_, b)| r > *b) {
            best = Some((actions, r));
        }
    }
    Ok(best.expect("spaces are non-empty"))
}
