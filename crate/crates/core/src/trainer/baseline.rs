use serde::{Deserialize, Serialize};

use super::TrainerError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BaselineEntry {
    pub value: Option<f64>,
    pub decay: f64,
}

/// Per-task exponential moving average of rewards.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineTable {
    entries: Vec<BaselineEntry>,
    default_decay: f64,
}

impl BaselineTable {
    pub fn new(n_tasks: usize, decay: f64) -> Self {
        Self { entries: vec![BaselineEntry { value: None, decay }; n_tasks], default_decay: decay }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Adds an uninitialized entry for a new task; returns its index.
    pub fn add_task(&mut self) -> usize {
        self.entries.push(BaselineEntry { value: None, decay: self.default_decay });
        self.entries.len() - 1
    }

    pub fn entries(&self) -> &[BaselineEntry] {
        &self.entries
    }

    pub fn get(&self, task_id: usize) -> Option<f64> {
        self.entries.get(task_id).and_then(|e| e.value)
    }

    pub fn set_decay(&mut self, task_id: usize, decay: f64) {
        if let Some(e) = self.entries.get_mut(task_id) {
            e.decay = decay;
        }
    }

    /// First reward initializes the baseline; later ones blend in with
    /// `b <- decay * b + (1 - decay) * r`.
    pub fn update(&mut self, task_id: usize, reward: f64) -> Result<f64, TrainerError> {
        if !reward.is_finite() {
            return Err(TrainerError::InvalidRecord("non-finite reward".into()));
        }
        if task_id >= self.entries.len() {
            self.entries.resize(task_id + 1, BaselineEntry { value: None, decay: self.default_decay });
        }
        let e = &mut self.entries[task_id];
        let b = match e.value {
            None => reward,
            Some(b) => e.decay * b + (1.0 - e.decay) * reward,
        };
        e.value = Some(b);
        Ok(b)
    }
}

/// Returns `(A, A_norm)` with `A = reward - baseline` and
/// `A_norm = A / max(baseline, floor)`.
pub fn compute_advantage(reward: f64, baseline: Option<f64>, floor: f64) -> Result<(f64, f64), TrainerError> {
    let b = baseline.ok_or(TrainerError::BaselineUninitialized)?;
    let a = reward - b;
    Ok((a, a / b.max(floor)))
}
