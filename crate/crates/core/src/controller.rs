//! Task-conditioned recurrent policy over action sequences.
//!
//! Every step feeds `[action_embedding, task_embedding]` into a stacked
//! LSTM. Step 0 uses a learned start embedding in place of an action;
//! step `i > 0` embeds the action chosen at step `i - 1` using that
//! parameter's own table. Each step has its own output projection whose
//! width is the choice count of the parameter being decided.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numeric::{
    axpy, log_softmax, lstm_step, DenseMatrix, LstmLayerParams, LstmState, LstmTrace, NumericError, ParamSet,
};
use crate::searchspace::{SearchSpace, SpaceError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ControllerError {
    #[error("unknown task id {0}")]
    UnknownTask(usize),
    #[error(transparent)]
    Space(#[from] SpaceError),
    #[error(transparent)]
    Numeric(#[from] NumericError),
    #[error("controller needs at least one task")]
    NoTasks,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControllerConfig {
    pub lstm_layers: usize,
    pub hidden_size: usize,
    pub action_embedding_size: usize,
    pub task_embedding_size: usize,
    pub init_range: f64,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        Self { lstm_layers: 2, hidden_size: 50, action_embedding_size: 25, task_embedding_size: 25, init_range: 0.08 }
    }
}

impl ControllerConfig {
    pub fn input_size(&self) -> usize {
        self.action_embedding_size + self.task_embedding_size
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControllerParams {
    pub lstm: Vec<LstmLayerParams>,
    pub start_embedding: DenseMatrix,
    /// Table `i` embeds the choices of parameter `i` as input to step `i + 1`.
    pub action_embeddings: Vec<DenseMatrix>,
    pub proj_weights: Vec<DenseMatrix>,
    pub proj_biases: Vec<DenseMatrix>,
    pub task_embeddings: DenseMatrix,
    pub init_range: f64,
}

impl ParamSet for ControllerParams {
    fn tensors(&self) -> Vec<&DenseMatrix> {
        let mut out = self.lstm.tensors();
        out.push(&self.start_embedding);
        out.extend(&self.action_embeddings);
        out.extend(&self.proj_weights);
        out.extend(&self.proj_biases);
        out.push(&self.task_embeddings);
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut DenseMatrix> {
        let mut out = self.lstm.tensors_mut();
        out.push(&mut self.start_embedding);
        out.extend(&mut self.action_embeddings);
        out.extend(&mut self.proj_weights);
        out.extend(&mut self.proj_biases);
        out.push(&mut self.task_embeddings);
        out
    }
}

/// A sequence drawn from the policy along with its sampling-time log-probs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampledModel {
    pub task_id: usize,
    pub actions: Vec<usize>,
    pub behavior_log_probs: Vec<f64>,
}

impl SampledModel {
    pub fn total_log_prob(&self) -> f64 {
        self.behavior_log_probs.iter().sum()
    }
}

/// Teacher-forced forward pass with everything needed for backprop.
#[derive(Debug, Clone)]
pub struct ControllerTrace {
    task_id: usize,
    actions: Vec<usize>,
    lstm: LstmTrace,
    probs: Vec<Vec<f64>>,
    pub log_probs: Vec<f64>,
}

impl ControllerTrace {
    pub fn total_log_prob(&self) -> f64 {
        self.log_probs.iter().sum()
    }
}

impl ControllerParams {
    pub fn init<R: Rng + ?Sized>(
        space: &SearchSpace,
        n_tasks: usize,
        config: &ControllerConfig,
        rng: &mut R,
    ) -> Result<Self, ControllerError> {
        if n_tasks == 0 {
            return Err(ControllerError::NoTasks);
        }
        let r = config.init_range;
        let h = config.hidden_size;
        let mut lstm = Vec::with_capacity(config.lstm_layers);
        for l in 0..config.lstm_layers {
            let inp = if l == 0 { config.input_size() } else { h };
            lstm.push(LstmLayerParams::uniform(inp, h, r, rng));
        }
        let counts = space.choice_counts();
        let start_embedding = DenseMatrix::uniform(1, config.action_embedding_size, r, rng);
        let action_embeddings = counts[..counts.len() - 1]
            .iter()
            .map(|&n| DenseMatrix::uniform(n, config.action_embedding_size, r, rng))
            .collect();
        let proj_weights = counts.iter().map(|&n| DenseMatrix::uniform(n, h, r, rng)).collect();
        let proj_biases = counts.iter().map(|&n| DenseMatrix::uniform(1, n, r, rng)).collect();
        let task_embeddings = DenseMatrix::uniform(n_tasks, config.task_embedding_size, r, rng);
        Ok(Self { lstm, start_embedding, action_embeddings, proj_weights, proj_biases, task_embeddings, init_range: r })
    }

    pub fn n_steps(&self) -> usize {
        self.proj_weights.len()
    }

    pub fn n_tasks(&self) -> usize {
        self.task_embeddings.rows()
    }

    pub fn choice_counts(&self) -> Vec<usize> {
        self.proj_weights.iter().map(DenseMatrix::rows).collect()
    }

    pub fn input_size(&self) -> usize {
        self.lstm[0].input_size()
    }

    fn check_task(&self, task_id: usize) -> Result<(), ControllerError> {
        if task_id >= self.n_tasks() {
            return Err(ControllerError::UnknownTask(task_id));
        }
        Ok(())
    }

    fn check_actions(&self, actions: &[usize]) -> Result<(), ControllerError> {
        let counts = self.choice_counts();
        if actions.len() != counts.len() {
            return Err(SpaceError::LengthMismatch { expected: counts.len(), got: actions.len() }.into());
        }
        for (i, (&a, &n)) in actions.iter().zip(&counts).enumerate() {
            if a >= n {
                return Err(SpaceError::IndexOutOfRange { param: format!("step {i}"), index: a }.into());
            }
        }
        Ok(())
    }

    fn step_input(&self, task_id: usize, step: usize, prev_action: Option<usize>) -> Vec<f64> {
        let action = match prev_action {
            None => self.start_embedding.row(0),
            Some(a) => self.action_embeddings[step - 1].row(a),
        };
        let mut x = Vec::with_capacity(self.input_size());
        x.extend_from_slice(action);
        x.extend_from_slice(self.task_embeddings.row(task_id));
        x
    }

    fn step_log_probs(&self, step: usize, h: &[f64]) -> Vec<f64> {
        let mut logits = self.proj_biases[step].data().to_vec();
        self.proj_weights[step].matvec_acc(h, &mut logits);
        log_softmax(&logits)
    }

    /// Draws one action sequence for `task_id`.
    pub fn sample_sequence<R: Rng + ?Sized>(&self, task_id: usize, rng: &mut R) -> Result<SampledModel, ControllerError> {
        self.check_task(task_id)?;
        let mut state = LstmState::zeros(&self.lstm);
        let mut actions = Vec::with_capacity(self.n_steps());
        let mut log_probs = Vec::with_capacity(self.n_steps());
        for step in 0..self.n_steps() {
            let x = self.step_input(task_id, step, actions.last().copied());
            let (h, next, _) = lstm_step(&self.lstm, &x, &state)?;
            state = next;
            let lp = self.step_log_probs(step, &h);
            let a = sample_index(&lp, rng);
            actions.push(a);
            log_probs.push(lp[a]);
        }
        Ok(SampledModel { task_id, actions, behavior_log_probs: log_probs })
    }

    /// Per-step `log pi(action_i | prefix, task)` under teacher forcing.
    pub fn sequence_log_probs(&self, task_id: usize, actions: &[usize]) -> Result<Vec<f64>, ControllerError> {
        Ok(self.forward_trace(task_id, actions)?.log_probs)
    }

    pub fn forward_trace(&self, task_id: usize, actions: &[usize]) -> Result<ControllerTrace, ControllerError> {
        self.check_task(task_id)?;
        self.check_actions(actions)?;
        let mut state = LstmState::zeros(&self.lstm);
        let mut lstm = LstmTrace::new();
        let mut probs = Vec::with_capacity(actions.len());
        let mut log_probs = Vec::with_capacity(actions.len());
        for (step, &a) in actions.iter().enumerate() {
            let prev = step.checked_sub(1).map(|s| actions[s]);
            let x = self.step_input(task_id, step, prev);
            let (h, next, cache) = lstm_step(&self.lstm, &x, &state)?;
            state = next;
            let lp = self.step_log_probs(step, &h);
            log_probs.push(lp[a]);
            probs.push(lp.iter().map(|v| v.exp()).collect());
            lstm.push(h, cache);
        }
        Ok(ControllerTrace { task_id, actions: actions.to_vec(), lstm, probs, log_probs })
    }

    /// Accumulates into `grads` the gradient of a loss whose derivative
    /// w.r.t. each step's log-prob is `d_log_probs[step]`.
    pub fn backward(&self, trace: &ControllerTrace, d_log_probs: &[f64], grads: &mut ControllerParams) {
        let steps = trace.actions.len();
        let mut d_hidden = Vec::with_capacity(steps);
        for step in 0..steps {
            let d = d_log_probs[step];
            let h = &trace.lstm.outputs()[step];
            let mut d_logits: Vec<f64> = trace.probs[step].iter().map(|p| -d * p).collect();
            d_logits[trace.actions[step]] += d;
            grads.proj_weights[step].add_outer(1.0, &d_logits, h);
            axpy(1.0, &d_logits, grads.proj_biases[step].data_mut());
            let mut dh = vec![0.0; h.len()];
            self.proj_weights[step].matvec_t_acc(&d_logits, &mut dh);
            d_hidden.push(dh);
        }
        let (lstm_grads, d_inputs) = trace.lstm.backward(&self.lstm, &d_hidden);
        for (g, lg) in grads.lstm.iter_mut().zip(&lstm_grads) {
            for (t, u) in g.tensors_mut().into_iter().zip(lg.tensors()) {
                axpy(1.0, u.data(), t.data_mut());
            }
        }
        let e = self.start_embedding.cols();
        for (step, dx) in d_inputs.iter().enumerate() {
            let (d_action, d_task) = dx.split_at(e);
            let row = match step {
                0 => grads.start_embedding.row_mut(0),
                s => grads.action_embeddings[s - 1].row_mut(trace.actions[s - 1]),
            };
            axpy(1.0, d_action, row);
            axpy(1.0, d_task, grads.task_embeddings.row_mut(trace.task_id));
        }
    }

    /// Monte-Carlo marginal of each parameter's chosen action.
    pub fn action_distributions<R: Rng + ?Sized>(
        &self,
        task_id: usize,
        n_samples: usize,
        rng: &mut R,
    ) -> Result<Vec<Vec<f64>>, ControllerError> {
        self.check_task(task_id)?;
        let mut counts: Vec<Vec<f64>> = self.choice_counts().iter().map(|&n| vec![0.0; n]).collect();
        for _ in 0..n_samples.max(1) {
            let s = self.sample_sequence(task_id, rng)?;
            for (row, &a) in counts.iter_mut().zip(&s.actions) {
                row[a] += 1.0;
            }
        }
        let n = n_samples.max(1) as f64;
        counts.iter_mut().flatten().for_each(|c| *c /= n);
        Ok(counts)
    }

    /// Exact marginals by walking the full prefix tree. Cost grows with the
    /// space cardinality.
    pub fn exact_marginals(&self, task_id: usize) -> Result<Vec<Vec<f64>>, ControllerError> {
        self.check_task(task_id)?;
        let mut out: Vec<Vec<f64>> = self.choice_counts().iter().map(|&n| vec![0.0; n]).collect();
        let state = LstmState::zeros(&self.lstm);
        self.walk(task_id, 0, None, &state, 1.0, &mut out)?;
        Ok(out)
    }

    fn walk(
        &self,
        task_id: usize,
        step: usize,
        prev: Option<usize>,
        state: &LstmState,
        mass: f64,
        out: &mut [Vec<f64>],
    ) -> Result<(), ControllerError> {
        if step == self.n_steps() {
            return Ok(());
        }
        let x = self.step_input(task_id, step, prev);
        let (h, next, _) = lstm_step(&self.lstm, &x, state)?;
        let lp = self.step_log_probs(step, &h);
        for (a, l) in lp.iter().enumerate() {
            let m = mass * l.exp();
            out[step][a] += m;
            self.walk(task_id, step + 1, Some(a), &next, m, out)?;
        }
        Ok(())
    }

    /// Appends a fresh task-embedding row; returns its task id.
    pub fn add_task<R: Rng + ?Sized>(&mut self, rng: &mut R) -> usize {
        let r = self.init_range;
        let row: Vec<f64> = (0..self.task_embeddings.cols()).map(|_| rng.random_range(-r..=r)).collect();
        self.task_embeddings.push_row(&row).expect("row width matches table");
        self.task_embeddings.rows() - 1
    }
}

fn sample_index<R: Rng + ?Sized>(log_probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut cum = 0.0;
    for (i, lp) in log_probs.iter().enumerate() {
        cum += lp.exp();
        if u < cum {
            return i;
        }
    }
    log_probs.len() - 1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskDescriptor {
    pub name: String,
    /// Name of the evaluator binding this task was trained with.
    pub evaluator: String,
    pub row: usize,
    pub active: bool,
}

/// Ordered task descriptors; task id and embedding row coincide.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TaskRegistry {
    tasks: Vec<TaskDescriptor>,
}

impl TaskRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, name: impl Into<String>, evaluator: impl Into<String>) -> usize {
        let row = self.tasks.len();
        self.tasks.push(TaskDescriptor { name: name.into(), evaluator: evaluator.into(), row, active: true });
        row
    }

    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }

    pub fn get(&self, id: usize) -> Option<&TaskDescriptor> {
        self.tasks.get(id)
    }

    pub fn tasks(&self) -> &[TaskDescriptor] {
        &self.tasks
    }

    pub fn find(&self, name: &str) -> Option<usize> {
        self.tasks.iter().position(|t| t.name == name)
    }

    pub fn set_active(&mut self, id: usize, active: bool) {
        if let Some(t) = self.tasks.get_mut(id) {
            t.active = active;
        }
    }

    pub fn active_ids(&self) -> Vec<usize> {
        self.tasks.iter().filter(|t| t.active).map(|t| t.row).collect()
    }
}
