use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::controller::ControllerConfig;
use crate::evaluators::{fixture_space, toy_space, Fixture, ToyKind};
use crate::searchspace::{ParamSpec, SearchSpace};
use crate::trainer::TrainerConfig;

#[derive(Debug, Error, Clone, PartialEq)]
#[error("config field `{field}`: {message}")]
pub struct ConfigError {
    pub field: String,
    pub message: String,
}

impl ConfigError {
    pub fn new(field: impl Into<String>, message: impl Into<String>) -> Self {
        Self { field: field.into(), message: message.into() }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    #[default]
    Search,
    Transfer,
    BruteForce,
    Report,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpaceConfig {
    /// `table1`, `fixture` or `toy`.
    pub preset: Option<String>,
    pub params: Option<Vec<ParamSpec>>,
}

impl SpaceConfig {
    pub fn build(&self) -> Result<SearchSpace, ConfigError> {
        match (&self.preset, &self.params) {
            (Some(_), Some(_)) => Err(ConfigError::new("space", "set either `preset` or `params`, not both")),
            (None, Some(params)) => {
                SearchSpace::new(params.clone()).map_err(|e| ConfigError::new("space.params", e.to_string()))
            }
            (Some(p), None) => match p.as_str() {
                "table1" => Ok(SearchSpace::table1()),
                "fixture" => Ok(fixture_space()),
                "toy" => Ok(toy_space()),
                other => Err(ConfigError::new("space.preset", format!("unknown preset {other:?}"))),
            },
            (None, None) => Ok(SearchSpace::table1()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EvaluatorKind {
    Fixture,
    Table,
    Toy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskConfig {
    pub name: String,
    /// `fixture`, `table` or `toy`.
    pub evaluator: String,
    /// Bundled fixture name for `fixture` tasks.
    pub fixture: Option<String>,
    /// `index,accuracy` CSV for `table` tasks.
    pub table: Option<PathBuf>,
    /// Dataset family for `toy` tasks.
    pub toy: Option<ToyKind>,
    #[serde(default)]
    pub toy_seed: u64,
    /// Child seed used when brute-forcing a `toy` task.
    pub brute_force_seed: Option<u64>,
    /// Standard deviation of Gaussian accuracy noise (tabular tasks).
    #[serde(default)]
    pub noise: f64,
    #[serde(default = "one")]
    pub reward_scale: f64,
}

fn one() -> f64 {
    1.0
}

impl TaskConfig {
    pub fn kind(&self) -> Option<EvaluatorKind> {
        match self.evaluator.as_str() {
            "fixture" => Some(EvaluatorKind::Fixture),
            "table" => Some(EvaluatorKind::Table),
            "toy" => Some(EvaluatorKind::Toy),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SmoothingConfig {
    pub window: usize,
    pub order: usize,
}

impl Default for SmoothingConfig {
    fn default() -> Self {
        Self { window: 101, order: 2 }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReportConfig {
    pub runs: Vec<PathBuf>,
    /// Absolute reward level a smoothed curve has to reach.
    pub threshold: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub mode: Mode,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
    /// Pre-trained checkpoint for `transfer` mode.
    pub checkpoint: Option<PathBuf>,
    /// Number of seeds run concurrently.
    pub jobs: usize,
    /// Samples drawn per task for the distribution heatmap.
    pub heatmap_samples: usize,
    pub space: SpaceConfig,
    pub tasks: Vec<TaskConfig>,
    pub trainer: TrainerConfig,
    pub controller: ControllerConfig,
    pub smoothing: SmoothingConfig,
    pub report: ReportConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Search,
            seeds: vec![1, 2, 3],
            output_dir: PathBuf::from("runs"),
            checkpoint: None,
            jobs: 1,
            heatmap_samples: 10_000,
            space: SpaceConfig::default(),
            tasks: Vec::new(),
            trainer: TrainerConfig::default(),
            controller: ControllerConfig::default(),
            smoothing: SmoothingConfig::default(),
            report: ReportConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::new("<document>", e.message().trim().to_string()))
    }

    /// Reads a config file; relative paths inside it are resolved against
    /// the file's directory.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|e| ConfigError::new("config", format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.output_dir);
        if let Some(c) = self.checkpoint.as_mut() {
            fix(c);
        }
        for t in &mut self.tasks {
            if let Some(p) = t.table.as_mut() {
                fix(p);
            }
        }
        for r in &mut self.report.runs {
            fix(r);
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.seeds.is_empty() {
            return Err(ConfigError::new("seeds", "at least one seed is required"));
        }
        if self.jobs == 0 {
            return Err(ConfigError::new("jobs", "must be at least 1"));
        }
        if self.heatmap_samples == 0 {
            return Err(ConfigError::new("heatmap_samples", "must be positive"));
        }
        self.trainer.validate().map_err(|e| ConfigError::new("trainer", e.to_string()))?;
        let c = &self.controller;
        if c.lstm_layers == 0 || c.hidden_size == 0 || c.action_embedding_size == 0 || c.task_embedding_size == 0 {
            return Err(ConfigError::new("controller", "all sizes must be positive"));
        }
        if !(c.init_range > 0.0 && c.init_range.is_finite()) {
            return Err(ConfigError::new("controller.init_range", "must be a positive real"));
        }
        if self.smoothing.window.is_multiple_of(2) || self.smoothing.window <= self.smoothing.order {
            return Err(ConfigError::new("smoothing.window", "must be odd and larger than smoothing.order"));
        }
        self.space.build()?;
        match self.mode {
            Mode::Report => {
                if self.report.runs.len() < 2 {
                    return Err(ConfigError::new("report.runs", "needs at least two run directories"));
                }
                if self.report.threshold.is_none_or(|t| !t.is_finite()) {
                    return Err(ConfigError::new("report.threshold", "a finite threshold is required"));
                }
                return Ok(());
            }
            Mode::Transfer if self.checkpoint.is_none() => {
                return Err(ConfigError::new("checkpoint", "transfer mode needs a checkpoint path"));
            }
            _ => {}
        }
        if self.tasks.is_empty() {
            return Err(ConfigError::new("tasks", "at least one task is required"));
        }
        let mut names = BTreeSet::new();
        for (i, t) in self.tasks.iter().enumerate() {
            let field = |f: &str| format!("tasks[{i}].{f}");
            if t.name.is_empty() || !names.insert(t.name.as_str()) {
                return Err(ConfigError::new(field("name"), format!("task names must be unique and non-empty: {:?}", t.name)));
            }
            if t.name.contains(['/', '\\', ',']) {
                return Err(ConfigError::new(field("name"), "may not contain path separators or commas"));
            }
            if !(t.noise >= 0.0 && t.noise.is_finite()) {
                return Err(ConfigError::new(field("noise"), "must be a non-negative real"));
            }
            if !(t.reward_scale > 0.0 && t.reward_scale.is_finite()) {
                return Err(ConfigError::new(field("reward_scale"), "must be a positive real"));
            }
            match t.kind() {
                None => {
                    return Err(ConfigError::new(
                        field("evaluator"),
                        format!("unknown evaluator {:?} (expected fixture, table or toy)", t.evaluator),
                    ))
                }
                Some(EvaluatorKind::Fixture) => {
                    let name = t.fixture.as_deref().ok_or_else(|| ConfigError::new(field("fixture"), "missing"))?;
                    if Fixture::from_name(name).is_none() {
                        return Err(ConfigError::new(field("fixture"), format!("unknown fixture {name:?}")));
                    }
                }
                Some(EvaluatorKind::Table) => {
                    if t.table.is_none() {
                        return Err(ConfigError::new(field("table"), "missing"));
                    }
                }
                Some(EvaluatorKind::Toy) => {
                    if t.toy.is_none() {
                        return Err(ConfigError::new(field("toy"), "missing"));
                    }
                }
            }
        }
        Ok(())
    }
}
