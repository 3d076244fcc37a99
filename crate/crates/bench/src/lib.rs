//! Shared setup for the criterion benchmarks.

use std::sync::Arc;

use mnms_core::evaluators::{fixture_space, Evaluator, Fixture, TabularEvaluator};
use mnms_core::trainer::{Evaluators, RewardRecord, TrainerConfig, TrainerState};
use mnms_core::{ControllerConfig, TaskRegistry};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Paper-sized controller on the planted pair, with a replay bank filled
/// by `warmup` iterations.
pub fn planted_state(warmup: u64) -> (TrainerState, Evaluators, ChaCha8Rng) {
    let space = fixture_space();
    let mut registry = TaskRegistry::new();
    let mut evaluators = Evaluators::new();
    for f in [Fixture::PlantedA, Fixture::PlantedB] {
        let name = f.spec().name;
        let id = registry.register(name, name);
        let ev: Arc<dyn Evaluator> = Arc::new(TabularEvaluator::new(name, f.table(&space, 0.0).expect("fixture")));
        evaluators.insert(id, ev);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut state =
        TrainerState::new(space, ControllerConfig::default(), TrainerConfig::default(), registry, &mut rng).expect("state");
    for _ in 0..warmup {
        state.train_iteration(&evaluators, &mut rng).expect("iteration");
    }
    (state, evaluators, rng)
}

/// A replay record for task 0 drawn from the actor.
pub fn sample_record(state: &TrainerState, rng: &mut ChaCha8Rng) -> RewardRecord {
    let s = state.actor.sample_sequence(0, rng).expect("sample");
    RewardRecord { task_id: 0, actions: s.actions, behavior_log_probs: s.behavior_log_probs, reward: 0.5, iteration: 0 }
}
