//! Multitask training loop.
//!
//! The actor samples models for a uniformly chosen task; rewards go into a
//! replay bank and update that task's baseline. The critic takes clipped
//! surrogate steps on replay batches using normalized advantages, and every
//! `steps_per_sync` critic steps the actor is Polyak-blended toward it.

mod baseline;
mod ppo;
mod replay;

use std::collections::BTreeMap;
use std::sync::Arc;

use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::controller::{ControllerConfig, ControllerError, ControllerParams, SampledModel, TaskRegistry};
use crate::evaluators::{EvalError, Evaluator};
use crate::numeric::{adaptive_update, clip_global_norm, polyak_average, AdamConfig, AdamState, NumericError, ParamSet};
use crate::searchspace::SearchSpace;

pub use baseline::{compute_advantage, BaselineEntry, BaselineTable};
pub use ppo::ppo_clipped_loss;
pub use replay::{ReplayBank, RewardRecord};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrainerError {
    #[error("baseline for the task is not initialized")]
    BaselineUninitialized,
    #[error("replay bank is empty")]
    EmptyBank,
    #[error("log-probability lists differ in length")]
    LengthMismatch,
    #[error("invalid record: {0}")]
    InvalidRecord(String),
    #[error("no active tasks to sample")]
    NoActiveTasks,
    #[error("no evaluator bound to task {0}")]
    MissingEvaluator(usize),
    #[error("invalid trainer config: {0}")]
    Config(String),
    #[error(transparent)]
    Controller(#[from] ControllerError),
    #[error(transparent)]
    Numeric(#[from] NumericError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainerConfig {
    pub batch_size: usize,
    pub critic_lr: f64,
    pub steps_per_sync: u64,
    pub polyak_keep: f64,
    pub clip_epsilon: f64,
    pub replay_capacity: usize,
    pub baseline_decay: f64,
    pub baseline_floor: f64,
    pub samples_per_iteration: usize,
    pub critic_steps_per_iteration: usize,
    pub total_iterations: u64,
    /// Global-norm clip on critic gradients; `None` disables clipping.
    pub grad_clip: Option<f64>,
    pub adam: AdamConfig,
    /// Worker threads for child evaluations within one iteration.
    pub eval_workers: usize,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        Self {
            batch_size: 20,
            critic_lr: 5e-4,
            steps_per_sync: 25,
            polyak_keep: 0.9,
            clip_epsilon: 0.2,
            replay_capacity: 1000,
            baseline_decay: 0.95,
            baseline_floor: 1e-3,
            samples_per_iteration: 1,
            critic_steps_per_iteration: 1,
            total_iterations: 2000,
            grad_clip: Some(5.0),
            adam: AdamConfig::default(),
            eval_workers: 1,
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<(), TrainerError> {
        let bad = |m: &str| Err(TrainerError::Config(m.to_string()));
        if self.batch_size == 0 || self.steps_per_sync == 0 || self.replay_capacity == 0 {
            return bad("batch_size, steps_per_sync and replay_capacity must be positive");
        }
        if self.samples_per_iteration == 0 || self.eval_workers == 0 {
            return bad("samples_per_iteration and eval_workers must be positive");
        }
        if !(self.critic_lr > 0.0) || !(self.baseline_floor > 0.0) {
            return bad("critic_lr and baseline_floor must be positive");
        }
        for (name, v) in [
            ("polyak_keep", self.polyak_keep),
            ("clip_epsilon", self.clip_epsilon),
            ("baseline_decay", self.baseline_decay),
        ] {
            if !(v > 0.0 && v < 1.0) {
                return Err(TrainerError::Config(format!("{name} must lie in (0, 1), got {v}")));
            }
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0) {
                return bad("grad_clip must be positive");
            }
        }
        Ok(())
    }
}

/// One evaluated sample, as written to the event log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub iteration: u64,
    pub task_id: usize,
    pub actions: Vec<usize>,
    pub reward: f64,
    pub baseline: f64,
    pub advantage_norm: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct IterationReport {
    pub task_id: Option<usize>,
    pub events: Vec<Event>,
    pub failures: Vec<String>,
    pub critic_steps: usize,
    pub synced: bool,
}

/// Evaluators keyed by task id.
pub type Evaluators = BTreeMap<usize, Arc<dyn Evaluator>>;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainerState {
    pub space: SearchSpace,
    pub config: TrainerConfig,
    pub controller_config: ControllerConfig,
    pub actor: ControllerParams,
    pub critic: ControllerParams,
    pub critic_opt: AdamState<ControllerParams>,
    pub baselines: BaselineTable,
    pub replay: ReplayBank,
    pub registry: TaskRegistry,
    pub iteration: u64,
    pub critic_steps: u64,
}

impl TrainerState {
    /// Fresh controller pair (critic starts as a copy of the actor).
    pub fn new<R: Rng + ?Sized>(
        space: SearchSpace,
        controller_config: ControllerConfig,
        config: TrainerConfig,
        registry: TaskRegistry,
        rng: &mut R,
    ) -> Result<Self, TrainerError> {
        config.validate()?;
        let actor = ControllerParams::init(&space, registry.len(), &controller_config, rng)?;
        Ok(Self::from_parts(space, controller_config, config, registry, actor.clone(), actor))
    }

    pub fn from_parts(
        space: SearchSpace,
        controller_config: ControllerConfig,
        config: TrainerConfig,
        registry: TaskRegistry,
        actor: ControllerParams,
        critic: ControllerParams,
    ) -> Self {
        let critic_opt = AdamState::new(&critic, config.adam);
        Self {
            baselines: BaselineTable::new(registry.len(), config.baseline_decay),
            replay: ReplayBank::new(config.replay_capacity),
            space,
            controller_config,
            actor,
            critic,
            critic_opt,
            registry,
            config,
            iteration: 0,
            critic_steps: 0,
        }
    }

    /// One critic gradient step on a replay batch. Returns the loss.
    pub fn critic_step<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<f64, TrainerError> {
        let batch = self.replay.sample(self.config.batch_size, rng)?;
        let mut traces = Vec::with_capacity(batch.len());
        let mut old = Vec::with_capacity(batch.len());
        let mut adv = Vec::with_capacity(batch.len());
        for rec in &batch {
            let (_, a_norm) =
                compute_advantage(rec.reward, self.baselines.get(rec.task_id), self.config.baseline_floor)?;
            traces.push(self.critic.forward_trace(rec.task_id, &rec.actions)?);
            old.push(rec.behavior_log_probs.clone());
            adv.push(a_norm);
        }
        let new: Vec<Vec<f64>> = traces.iter().map(|t| t.log_probs.clone()).collect();
        let (loss, d_new) = ppo_clipped_loss(&new, &old, &adv, self.config.clip_epsilon)?;
        let mut grads = self.critic.zeros_like();
        for (trace, d) in traces.iter().zip(&d_new) {
            if d.iter().any(|&g| g != 0.0) {
                self.critic.backward(trace, d, &mut grads);
            }
        }
        if let Some(c) = self.config.grad_clip {
            clip_global_norm(&mut grads, c);
        }
        adaptive_update(&mut self.critic, &grads, &mut self.critic_opt, self.config.critic_lr)?;
        self.critic_steps += 1;
        Ok(loss)
    }

    /// `actor <- keep * actor + (1 - keep) * critic`.
    pub fn sync_actor(&mut self) -> Result<(), TrainerError> {
        self.actor = polyak_average(&self.actor, &self.critic, self.config.polyak_keep)?;
        Ok(())
    }

    /// One controller training iteration.
    pub fn train_iteration<R: Rng + ?Sized>(
        &mut self,
        evaluators: &Evaluators,
        rng: &mut R,
    ) -> Result<IterationReport, TrainerError> {
        let active = self.registry.active_ids();
        if active.is_empty() {
            return Err(TrainerError::NoActiveTasks);
        }
        let task_id = active[rng.random_range(0..active.len())];
        let evaluator = evaluators.get(&task_id).ok_or(TrainerError::MissingEvaluator(task_id))?;

        let mut samples = Vec::with_capacity(self.config.samples_per_iteration);
        for _ in 0..self.config.samples_per_iteration {
            let s = self.actor.sample_sequence(task_id, rng)?;
            let seed: u64 = rng.random();
            samples.push((s, seed));
        }
        let results = evaluate_all(evaluator.as_ref(), &samples, self.config.eval_workers);

        let mut report = IterationReport { task_id: Some(task_id), ..Default::default() };
        for ((sample, _), result) in samples.into_iter().zip(results) {
            let reward = match result {
                Ok(r) if r.is_finite() => r,
                Ok(r) => {
                    report.failures.push(format!("non-finite reward {r}"));
                    continue;
                }
                Err(e) => {
                    warn!("task {task_id}: evaluation failed, sample skipped: {e}");
                    report.failures.push(e.to_string());
                    continue;
                }
            };
            if self.baselines.get(task_id).is_none() {
                self.baselines.update(task_id, reward)?;
            }
            let baseline = self.baselines.get(task_id).expect("initialized above");
            let (_, advantage_norm) = compute_advantage(reward, Some(baseline), self.config.baseline_floor)?;
            self.baselines.update(task_id, reward)?;
            let SampledModel { actions, behavior_log_probs, .. } = sample;
            report.events.push(Event {
                iteration: self.iteration,
                task_id,
                actions: actions.clone(),
                reward,
                baseline,
                advantage_norm,
            });
            self.replay.push(RewardRecord { task_id, actions, behavior_log_probs, reward, iteration: self.iteration })?;
        }

        if !self.replay.is_empty() {
            for _ in 0..self.config.critic_steps_per_iteration {
                self.critic_step(rng)?;
                report.critic_steps += 1;
                if self.critic_steps.is_multiple_of(self.config.steps_per_sync) {
                    self.sync_actor()?;
                    report.synced = true;
                }
            }
        }
        self.iteration += 1;
        Ok(report)
    }
}

fn evaluate_all(
    evaluator: &dyn Evaluator,
    samples: &[(SampledModel, u64)],
    workers: usize,
) -> Vec<Result<f64, EvalError>> {
    if workers <= 1 || samples.len() <= 1 {
        return samples.iter().map(|(s, seed)| evaluator.evaluate(&s.actions, *seed)).collect();
    }
    let chunk = samples.len().div_ceil(workers);
    std::thread::scope(|scope| {
        let handles: Vec<_> = samples
            .chunks(chunk)
            .map(|part| {
                scope.spawn(move || part.iter().map(|(s, seed)| evaluator.evaluate(&s.actions, *seed)).collect::<Vec<_>>())
            })
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().unwrap_or_else(|_| vec![Err(EvalError::Failed("worker panicked".into()))]))
            .collect()
    })
}

/// A named task plus the evaluator that scores its samples.
#[derive(Clone)]
pub struct TaskBinding {
    pub name: String,
    pub evaluator: Arc<dyn Evaluator>,
}

impl TaskBinding {
    pub fn new(name: impl Into<String>, evaluator: Arc<dyn Evaluator>) -> Self {
        Self { name: name.into(), evaluator }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BestModel {
    pub actions: Vec<usize>,
    pub reward: f64,
    pub iteration: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchResult {
    pub events: Vec<Event>,
    pub best: BTreeMap<usize, BestModel>,
    pub failures: usize,
    pub state: TrainerState,
}

impl SearchResult {
    /// Rewards of one task in the order they were observed.
    pub fn rewards_for(&self, task_id: usize) -> Vec<f64> {
        self.events.iter().filter(|e| e.task_id == task_id).map(|e| e.reward).collect()
    }

    pub fn events_for(&self, task_id: usize) -> impl Iterator<Item = &Event> {
        self.events.iter().filter(move |e| e.task_id == task_id)
    }
}

/// Runs `state.config.total_iterations` iterations and collects events
/// and the best model per task.
pub fn run_trainer<R: Rng + ?Sized>(
    mut state: TrainerState,
    evaluators: &Evaluators,
    rng: &mut R,
) -> Result<SearchResult, TrainerError> {
    let mut events = Vec::new();
    let mut best: BTreeMap<usize, BestModel> = BTreeMap::new();
    let mut failures = 0;
    for _ in 0..state.config.total_iterations {
        let report = state.train_iteration(evaluators, rng)?;
        failures += report.failures.len();
        for e in &report.events {
            let better = best.get(&e.task_id).is_none_or(|b| e.reward > b.reward);
            if better {
                best.insert(e.task_id, BestModel { actions: e.actions.clone(), reward: e.reward, iteration: e.iteration });
            }
        }
        events.extend(report.events);
    }
    Ok(SearchResult { events, best, failures, state })
}

/// Fresh multitask search from `seed`.
pub fn run_search(
    space: &SearchSpace,
    controller_config: &ControllerConfig,
    config: &TrainerConfig,
    tasks: &[TaskBinding],
    seed: u64,
) -> Result<SearchResult, TrainerError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut registry = TaskRegistry::new();
    let mut evaluators = Evaluators::new();
    for t in tasks {
        let id = registry.register(t.name.clone(), t.evaluator.name().to_string());
        evaluators.insert(id, t.evaluator.clone());
    }
    if registry.is_empty() {
        return Err(TrainerError::NoActiveTasks);
    }
    let state = TrainerState::new(space.clone(), *controller_config, config.clone(), registry, &mut rng)?;
    run_trainer(state, &evaluators, &mut rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evaluators::{OracleTable, TabularEvaluator};
    use crate::searchspace::{ChoiceValue, ParamSpec};

    fn tiny_space() -> SearchSpace {
        SearchSpace::new(vec![
            ParamSpec::new("a", (0..3).map(ChoiceValue::Int).collect()),
            ParamSpec::new("b", (0..2).map(ChoiceValue::Int).collect()),
        ])
        .unwrap()
    }

    fn small_controller() -> ControllerConfig {
        ControllerConfig { lstm_layers: 2, hidden_size: 8, action_embedding_size: 4, task_embedding_size: 4, init_range: 0.08 }
    }

    fn constant(space: &SearchSpace, acc: f64) -> Arc<dyn Evaluator> {
        let n = space.cardinality() as usize;
        Arc::new(TabularEvaluator::new("const", OracleTable::new(space.clone(), vec![acc; n], 0.0).unwrap()))
    }

    struct Failing(SearchSpace);

    impl Evaluator for Failing {
        fn name(&self) -> &str {
            "failing"
        }
        fn space(&self) -> &SearchSpace {
            &self.0
        }
        fn evaluate(&self, actions: &[usize], _seed: u64) -> Result<f64, EvalError> {
            if actions[0] == 0 {
                Err(EvalError::Failed("boom".into()))
            } else {
                Ok(0.5)
            }
        }
    }

    #[test]
    fn zero_iterations_give_empty_result() {
        let space = tiny_space();
        let cfg = TrainerConfig { total_iterations: 0, ..Default::default() };
        let r = run_search(&space, &small_controller(), &cfg, &[TaskBinding::new("t", constant(&space, 0.5))], 1).unwrap();
        assert!(r.events.is_empty() && r.best.is_empty());
    }

    #[test]
    fn constant_rewards_have_zero_advantage() {
        let space = tiny_space();
        let cfg = TrainerConfig { total_iterations: 60, ..Default::default() };
        let r = run_search(&space, &small_controller(), &cfg, &[TaskBinding::new("t", constant(&space, 0.6))], 3).unwrap();
        assert_eq!(r.events.len(), 60);
        assert_eq!(r.events[0].advantage_norm, 0.0);
        assert!(r.events.iter().all(|e| e.advantage_norm.abs() < 1e-12));
        assert!((r.state.baselines.get(0).unwrap() - 0.216).abs() < 1e-12);
    }

    #[test]
    fn tasks_are_sampled_uniformly() {
        let space = tiny_space();
        let cfg = TrainerConfig { critic_steps_per_iteration: 0, ..Default::default() };
        let tasks = [TaskBinding::new("a", constant(&space, 0.5)), TaskBinding::new("b", constant(&space, 0.7))];
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut registry = TaskRegistry::new();
        let mut evs = Evaluators::new();
        for t in &tasks {
            evs.insert(registry.register(&t.name, "const"), t.evaluator.clone());
        }
        let mut state = TrainerState::new(space, small_controller(), cfg, registry, &mut rng).unwrap();
        let n = 10_000;
        let mut first = 0usize;
        for _ in 0..n {
            if state.train_iteration(&evs, &mut rng).unwrap().task_id == Some(0) {
                first += 1;
            }
        }
        let sigma = (n as f64 * 0.25).sqrt();
        assert!((first as f64 - 5000.0).abs() < 3.0 * sigma, "{first}");
    }

    #[test]
    fn actor_changes_only_at_sync_with_polyak_blend() {
        let space = tiny_space();
        let cfg = TrainerConfig { steps_per_sync: 5, ..Default::default() };
        let mut registry = TaskRegistry::new();
        registry.register("t", "fixture");
        let table = OracleTable::from_fn(space.clone(), 0.0, |a| 0.3 + 0.1 * (a[0] + a[1]) as f64).unwrap();
        let mut evs = Evaluators::new();
        evs.insert(0, Arc::new(TabularEvaluator::new("t", table)) as Arc<dyn Evaluator>);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut state = TrainerState::new(space, small_controller(), cfg, registry, &mut rng).unwrap();
        for _ in 0..20 {
            let before_actor = state.actor.clone();
            let before_critic_steps = state.critic_steps;
            let report = state.train_iteration(&evs, &mut rng).unwrap();
            if report.synced {
                assert_eq!(state.critic_steps % 5, 0);
                let expected = polyak_average(&before_actor, &state.critic, 0.9).unwrap();
                assert_eq!(state.actor, expected);
                let (a, b, c) = (before_actor.flatten(), state.critic.flatten(), state.actor.flatten());
                for ((x, y), z) in a.iter().zip(&b).zip(&c) {
                    assert!((0.9 * x + 0.1 * y - z).abs() < 1e-15);
                }
            } else {
                assert_eq!(state.actor, before_actor);
                assert_eq!(report.critic_steps as u64, state.critic_steps - before_critic_steps);
            }
        }
    }

    #[test]
    fn ratio_is_one_when_critic_equals_behavior_policy() {
        let space = tiny_space();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut registry = TaskRegistry::new();
        registry.register("t", "fixture");
        let state = TrainerState::new(space, small_controller(), TrainerConfig::default(), registry, &mut rng).unwrap();
        for _ in 0..10 {
            let s = state.actor.sample_sequence(0, &mut rng).unwrap();
            let new = state.critic.sequence_log_probs(0, &s.actions).unwrap();
            let ratio = (new.iter().sum::<f64>() - s.total_log_prob()).exp();
            assert_eq!(ratio, 1.0);
        }
    }

    #[test]
    fn evaluator_failures_are_skipped() {
        let space = tiny_space();
        let cfg = TrainerConfig { total_iterations: 50, ..Default::default() };
        let tasks = [TaskBinding::new("t", Arc::new(Failing(space.clone())) as Arc<dyn Evaluator>)];
        let r = run_search(&space, &small_controller(), &cfg, &tasks, 4).unwrap();
        assert!(r.failures > 0);
        assert_eq!(r.failures + r.events.len(), 50);
        assert!(r.events.iter().all(|e| e.actions[0] != 0));
    }

    #[test]
    fn parallel_evaluation_preserves_order() {
        let space = tiny_space();
        let table = OracleTable::from_fn(space.clone(), 0.05, |a| 0.2 + 0.1 * (a[0] * 2 + a[1]) as f64).unwrap();
        let ev: Arc<dyn Evaluator> = Arc::new(TabularEvaluator::new("t", table));
        let base = TrainerConfig { total_iterations: 30, samples_per_iteration: 6, ..Default::default() };
        let par = TrainerConfig { eval_workers: 3, ..base.clone() };
        let tasks = [TaskBinding::new("t", ev)];
        let a = run_search(&space, &small_controller(), &base, &tasks, 9).unwrap();
        let b = run_search(&space, &small_controller(), &par, &tasks, 9).unwrap();
        assert_eq!(a.events, b.events);
    }

    #[test]
    fn config_validation() {
        let bad = TrainerConfig { polyak_keep: 1.0, ..Default::default() };
        assert!(matches!(bad.validate(), Err(TrainerError::Config(_))));
        assert!(TrainerConfig::default().validate().is_ok());
    }
}
