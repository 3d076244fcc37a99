use std::fs;
use std::path::{Path, PathBuf};

use log::info;
use serde::{Deserialize, Serialize};

use super::config::SmoothingConfig;
use super::smoothing::{fit_window, smooth_curve};
use super::HarnessError;
use crate::controller::TaskRegistry;
use crate::trainer::Event;

/// One line of an event log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventRow {
    pub iteration: u64,
    pub task: String,
    pub reward: f64,
    pub baseline: f64,
    pub advantage_norm: f64,
}

pub fn event_rows(events: &[Event], registry: &TaskRegistry) -> Vec<EventRow> {
    events
        .iter()
        .map(|e| EventRow {
            iteration: e.iteration,
            task: registry.get(e.task_id).map(|t| t.name.clone()).unwrap_or_else(|| e.task_id.to_string()),
            reward: e.reward,
            baseline: e.baseline,
            advantage_norm: e.advantage_norm,
        })
        .collect()
}

pub(crate) fn csv_err(path: &Path) -> impl Fn(csv::Error) -> HarnessError + '_ {
    move |e| HarnessError::Csv { path: path.to_path_buf(), message: e.to_string() }
}

pub fn write_events(path: &Path, rows: &[EventRow]) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    if rows.is_empty() {
        w.write_record(["iteration", "task", "reward", "baseline", "advantage_norm"]).map_err(csv_err(path))?;
    }
    for r in rows {
        w.serialize(r).map_err(csv_err(path))?;
    }
    w.flush().map_err(|e| HarnessError::io(path, e))
}

pub fn read_events(path: &Path) -> Result<Vec<EventRow>, HarnessError> {
    let mut rdr = csv::Reader::from_path(path).map_err(csv_err(path))?;
    rdr.deserialize().collect::<Result<Vec<EventRow>, _>>().map_err(csv_err(path))
}

/// Smooths a reward series with the configured window, shrinking the
/// window when the series is too short. Series shorter than the order
/// come back unchanged.
pub fn smoothed_rewards(rewards: &[f64], smoothing: &SmoothingConfig) -> Vec<f64> {
    match fit_window(smoothing.window, smoothing.order, rewards.len()) {
        Some(w) => {
            if w != smoothing.window {
                info!("smoothing window shrunk from {} to {w} for a series of {}", smoothing.window, rewards.len());
            }
            smooth_curve(rewards, w, smoothing.order).expect("window fitted to the series")
        }
        None => rewards.to_vec(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CurveStats {
    /// First iteration whose smoothed reward reaches the threshold.
    pub iterations_to_threshold: Option<u64>,
    pub best_reward: f64,
    /// Trapezoidal area under the smoothed curve over iterations.
    pub auc: f64,
}

pub fn curve_stats(iterations: &[u64], rewards: &[f64], threshold: f64, smoothing: &SmoothingConfig) -> CurveStats {
    let smoothed = smoothed_rewards(rewards, smoothing);
    let iterations_to_threshold = iterations.iter().zip(&smoothed).find(|(_, &s)| s >= threshold).map(|(&i, _)| i);
    let best_reward = rewards.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let auc = iterations
        .windows(2)
        .zip(smoothed.windows(2))
        .map(|(x, y)| (x[1] as f64 - x[0] as f64) * 0.5 * (y[0] + y[1]))
        .sum();
    CurveStats { iterations_to_threshold, best_reward, auc }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompareRow {
    pub run: String,
    pub task: String,
    pub stats: CurveStats,
}

/// Event logs of a run directory: its own `events.csv`, or those of its
/// `seed-*` subdirectories.
pub fn find_event_logs(dir: &Path) -> Result<Vec<PathBuf>, HarnessError> {
    let direct = dir.join("events.csv");
    if direct.is_file() {
        return Ok(vec![direct]);
    }
    let mut logs = Vec::new();
    if let Ok(entries) = fs::read_dir(dir) {
        for entry in entries.flatten() {
            let p = entry.path().join("events.csv");
            let is_seed = entry.file_name().to_string_lossy().starts_with("seed-");
            if is_seed && p.is_file() {
                logs.push(p);
            }
        }
    }
    if logs.is_empty() {
        return Err(HarnessError::MissingLog(dir.to_path_buf()));
    }
    logs.sort();
    Ok(logs)
}

/// Per run and task: iterations to `threshold`, best reward and area
/// under the smoothed curve.
pub fn report_compare(
    run_dirs: &[PathBuf],
    threshold: f64,
    smoothing: &SmoothingConfig,
) -> Result<Vec<CompareRow>, HarnessError> {
    let mut rows = Vec::new();
    for dir in run_dirs {
        for log in find_event_logs(dir)? {
            let events = read_events(&log)?;
            let mut tasks: Vec<&str> = Vec::new();
            for e in &events {
                if !tasks.contains(&e.task.as_str()) {
                    tasks.push(&e.task);
                }
            }
            let run = log.parent().unwrap_or(dir).display().to_string();
            for task in tasks {
                let (its, rewards): (Vec<u64>, Vec<f64>) =
                    events.iter().filter(|e| e.task == task).map(|e| (e.iteration, e.reward)).unzip();
                rows.push(CompareRow {
                    run: run.clone(),
                    task: task.to_string(),
                    stats: curve_stats(&its, &rewards, threshold, smoothing),
                });
            }
        }
    }
    Ok(rows)
}

pub const NOT_REACHED: &str = "not reached";

pub fn write_compare(path: &Path, rows: &[CompareRow]) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    w.write_record(["run", "task", "iterations_to_threshold", "best_reward", "auc"]).map_err(csv_err(path))?;
    for r in rows {
        let hit = r.stats.iterations_to_threshold.map(|i| i.to_string()).unwrap_or_else(|| NOT_REACHED.into());
        w.write_record([
            r.run.clone(),
            r.task.clone(),
            hit,
            r.stats.best_reward.to_string(),
            r.stats.auc.to_string(),
        ])
        .map_err(csv_err(path))?;
    }
    w.flush().map_err(|e| HarnessError::io(path, e))
}
