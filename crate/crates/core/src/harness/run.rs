use std::collections::BTreeMap;
use std::fs::{self, File};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use log::info;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::{EvaluatorKind, ExperimentConfig, Mode};
use super::report::{csv_err, event_rows, report_compare, smoothed_rewards, write_compare, write_events};
use super::{ConfigError, HarnessError};
use crate::evaluators::{
    brute_force_optimum, ChildEvaluator, Evaluator, Fixture, OracleTable, ScaledEvaluator, TabularEvaluator, ToyTask,
    ToyTaskSpec,
};
use crate::searchspace::SearchSpace;
use crate::trainer::{run_search, SearchResult, TaskBinding};
use crate::transfer::{load_checkpoint, run_transfer, save_checkpoint, task_embedding_correlations, Checkpoint, TransferOptions};

/// A configured task with its evaluator, and the oracle table behind it
/// when there is one.
pub struct BuiltTask {
    pub binding: TaskBinding,
    pub table: Option<OracleTable>,
}

pub fn build_tasks(cfg: &ExperimentConfig, space: &SearchSpace) -> Result<Vec<BuiltTask>, HarnessError> {
    let mut out = Vec::new();
    for (i, t) in cfg.tasks.iter().enumerate() {
        let field = |f: &str| format!("tasks[{i}].{f}");
        let kind = t.kind().ok_or_else(|| ConfigError::new(field("evaluator"), format!("unknown evaluator {:?}", t.evaluator)))?;
        let (inner, table): (Box<dyn Evaluator>, Option<OracleTable>) = match kind {
            EvaluatorKind::Fixture => {
                let name = t.fixture.as_deref().unwrap_or_default();
                let fixture = Fixture::from_name(name)
                    .ok_or_else(|| ConfigError::new(field("fixture"), format!("unknown fixture {name:?}")))?;
                let table = fixture.table(space, t.noise)?;
                (Box::new(TabularEvaluator::new(name, table.clone())), Some(table))
            }
            EvaluatorKind::Table => {
                let path = t.table.clone().ok_or_else(|| ConfigError::new(field("table"), "missing"))?;
                let file = File::open(&path).map_err(|e| HarnessError::io(&path, e))?;
                let table = OracleTable::read_csv(file, space.clone(), t.noise)
                    .map_err(|e| ConfigError::new(field("table"), format!("{}: {e}", path.display())))?;
                (Box::new(TabularEvaluator::new(path.display().to_string(), table.clone())), Some(table))
            }
            EvaluatorKind::Toy => {
                let kind = t.toy.ok_or_else(|| ConfigError::new(field("toy"), "missing"))?;
                let first = space.unrank(0).expect("non-empty space");
                space
                    .decode(&first)
                    .and_then(|c| c.to_model_config())
                    .map_err(|e| ConfigError::new("space", format!("toy tasks need a child-model space: {e}")))?;
                let task = Arc::new(ToyTask::generate(&ToyTaskSpec::new(kind, t.toy_seed)));
                let mut ev = ChildEvaluator::new(format!("toy-{kind:?}").to_lowercase(), space.clone(), task);
                if let Some(s) = t.brute_force_seed {
                    ev = ev.with_brute_force_seed(s);
                }
                (Box::new(ev), None)
            }
        };
        let evaluator: Arc<dyn Evaluator> = if t.reward_scale == 1.0 {
            Arc::from(inner)
        } else {
            Arc::new(ScaledEvaluator { inner, scale: t.reward_scale })
        };
        out.push(BuiltTask { binding: TaskBinding::new(t.name.clone(), evaluator), table });
    }
    Ok(out)
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunSummary {
    pub output_dir: PathBuf,
    /// Every artifact written, relative to `output_dir`.
    pub files: Vec<PathBuf>,
    pub seed_dirs: Vec<PathBuf>,
}

/// Loads, validates and runs a config file.
pub fn run_config_file(path: &Path) -> Result<RunSummary, HarnessError> {
    let cfg = ExperimentConfig::load(path)?;
    run_experiment(&cfg)
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunSummary, HarnessError> {
    cfg.validate()?;
    fs::create_dir_all(&cfg.output_dir).map_err(|e| HarnessError::io(&cfg.output_dir, e))?;
    let mut summary = RunSummary { output_dir: cfg.output_dir.clone(), ..Default::default() };
    match cfg.mode {
        Mode::Report => {
            let threshold = cfg.report.threshold.expect("validated");
            let rows = report_compare(&cfg.report.runs, threshold, &cfg.smoothing)?;
            write_compare(&cfg.output_dir.join("comparison.csv"), &rows)?;
            summary.files.push("comparison.csv".into());
        }
        Mode::BruteForce => {
            let space = cfg.space.build()?;
            let tasks = build_tasks(cfg, &space)?;
            brute_force_all(&cfg.output_dir, &space, &tasks, &mut summary)?;
        }
        Mode::Search | Mode::Transfer => {
            let space = cfg.space.build()?;
            let tasks = build_tasks(cfg, &space)?;
            let bindings: Vec<TaskBinding> = tasks.into_iter().map(|t| t.binding).collect();
            let checkpoint = match (cfg.mode, &cfg.checkpoint) {
                (Mode::Transfer, Some(path)) => Some(load_checkpoint(path, Some(&space))?),
                _ => None,
            };
            let results = run_seeds(cfg, &space, &bindings, checkpoint.as_ref())?;
            let mut tables = Vec::new();
            for (seed, result) in cfg.seeds.iter().zip(&results) {
                tables.push(write_seed(cfg, *seed, result, &mut summary)?);
            }
            write_aggregate(cfg, &results, &tables, &mut summary)?;
        }
    }
    write_manifest(&mut summary)?;
    Ok(summary)
}

fn run_one(
    cfg: &ExperimentConfig,
    space: &SearchSpace,
    bindings: &[TaskBinding],
    checkpoint: Option<&Checkpoint>,
    seed: u64,
) -> Result<SearchResult, HarnessError> {
    info!("seed {seed}: starting {} iterations", cfg.trainer.total_iterations);
    let result = match checkpoint {
        Some(ckpt) => {
            let opts = TransferOptions { reactivate: Vec::new(), trainer_config: Some(cfg.trainer.clone()) };
            run_transfer(ckpt, bindings, &opts, seed)?
        }
        None => run_search(space, &cfg.controller, &cfg.trainer, bindings, seed)?,
    };
    info!("seed {seed}: done, {} failed evaluations", result.failures);
    Ok(result)
}

fn run_seeds(
    cfg: &ExperimentConfig,
    space: &SearchSpace,
    bindings: &[TaskBinding],
    checkpoint: Option<&Checkpoint>,
) -> Result<Vec<SearchResult>, HarnessError> {
    if cfg.jobs <= 1 {
        return cfg.seeds.iter().map(|&s| run_one(cfg, space, bindings, checkpoint, s)).collect();
    }
    let mut out = Vec::with_capacity(cfg.seeds.len());
    for chunk in cfg.seeds.chunks(cfg.jobs) {
        let results: Vec<Result<SearchResult, HarnessError>> = std::thread::scope(|scope| {
            let handles: Vec<_> =
                chunk.iter().map(|&s| scope.spawn(move || run_one(cfg, space, bindings, checkpoint, s))).collect();
            handles.into_iter().map(|h| h.join().unwrap_or(Err(HarnessError::Panicked))).collect()
        });
        for r in results {
            out.push(r?);
        }
    }
    Ok(out)
}

fn create(path: &Path) -> Result<csv::Writer<File>, HarnessError> {
    csv::Writer::from_path(path).map_err(csv_err(path))
}

type HeatRow = (String, String, String, f64);
type CorrRow = (String, String, f64);

/// Per-seed heatmap and correlation rows, reused by the aggregate.
struct SeedTables {
    heat: Vec<HeatRow>,
    corr: Vec<CorrRow>,
}

fn heatmap(result: &SearchResult, samples: usize, seed: u64) -> Result<Vec<HeatRow>, HarnessError> {
    let state = &result.state;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x0068_6561_746d_6170);
    let mut rows = Vec::new();
    for task in state.registry.tasks() {
        let dist = state.actor.action_distributions(task.row, samples, &mut rng).map_err(crate::trainer::TrainerError::from)?;
        for (param, probs) in state.space.params().iter().zip(dist) {
            for (choice, p) in param.choices.iter().zip(probs) {
                rows.push((task.name.clone(), param.name.clone(), choice.label(), p));
            }
        }
    }
    Ok(rows)
}

fn correlations(result: &SearchResult) -> Result<Vec<CorrRow>, HarnessError> {
    let tasks = result.state.registry.tasks();
    if tasks.len() < 2 {
        return Ok(Vec::new());
    }
    let ids: Vec<usize> = tasks.iter().map(|t| t.row).collect();
    let m = task_embedding_correlations(&result.state.actor, &ids)?;
    let mut rows = Vec::new();
    for (i, a) in tasks.iter().enumerate() {
        for (j, b) in tasks.iter().enumerate() {
            rows.push((a.name.clone(), b.name.clone(), m[i][j]));
        }
    }
    Ok(rows)
}

fn write_seed(
    cfg: &ExperimentConfig,
    seed: u64,
    result: &SearchResult,
    summary: &mut RunSummary,
) -> Result<SeedTables, HarnessError> {
    let rel = PathBuf::from(format!("seed-{seed}"));
    let dir = cfg.output_dir.join(&rel);
    fs::create_dir_all(&dir).map_err(|e| HarnessError::io(&dir, e))?;
    let registry = &result.state.registry;
    let space = &result.state.space;

    write_events(&dir.join("events.csv"), &event_rows(&result.events, registry))?;

    let path = dir.join("best.csv");
    let mut w = create(&path)?;
    let mut header = vec!["task".to_string(), "reward".into(), "iteration".into()];
    header.extend(space.params().iter().map(|p| p.name.clone()));
    w.write_record(&header).map_err(csv_err(&path))?;
    for (id, best) in &result.best {
        let name = registry.get(*id).map(|t| t.name.clone()).unwrap_or_default();
        let mut rec = vec![name, best.reward.to_string(), best.iteration.to_string()];
        let config = space.decode(&best.actions)?;
        rec.extend(config.values.iter().map(|(_, v)| v.label()));
        w.write_record(&rec).map_err(csv_err(&path))?;
    }
    w.flush().map_err(|e| HarnessError::io(&path, e))?;

    let ckpt = Checkpoint::from_state(&result.state, format!("run seeded with {seed}; generator not stored"));
    save_checkpoint(&ckpt, &dir.join("checkpoint.bin"))?;

    let path = dir.join("heatmap.csv");
    let mut w = create(&path)?;
    w.write_record(["task", "parameter", "choice", "probability"]).map_err(csv_err(&path))?;
    let heat = heatmap(result, cfg.heatmap_samples, seed)?;
    for row in &heat {
        w.serialize(row).map_err(csv_err(&path))?;
    }
    w.flush().map_err(|e| HarnessError::io(&path, e))?;

    let corr = correlations(result)?;
    let mut files = vec!["events.csv", "best.csv", "checkpoint.bin", "checkpoint.bin.manifest", "heatmap.csv"];
    if !corr.is_empty() {
        let path = dir.join("correlations.csv");
        let mut w = create(&path)?;
        w.write_record(["task_a", "task_b", "pearson"]).map_err(csv_err(&path))?;
        for row in &corr {
            w.serialize(row).map_err(csv_err(&path))?;
        }
        w.flush().map_err(|e| HarnessError::io(&path, e))?;
        files.push("correlations.csv");
    }
    summary.files.extend(files.into_iter().map(|f| rel.join(f)));
    summary.seed_dirs.push(dir);
    Ok(SeedTables { heat, corr })
}

fn write_aggregate(
    cfg: &ExperimentConfig,
    results: &[SearchResult],
    tables: &[SeedTables],
    summary: &mut RunSummary,
) -> Result<(), HarnessError> {
    let rel = PathBuf::from("aggregate");
    let dir = cfg.output_dir.join(&rel);
    fs::create_dir_all(&dir).map_err(|e| HarnessError::io(&dir, e))?;

    // one curve file per task with the trained events of every seed
    let names: Vec<String> = results[0].state.registry.tasks().iter().map(|t| t.name.clone()).collect();
    for (id, name) in names.iter().enumerate() {
        if results.iter().all(|r| r.events_for(id).next().is_none()) {
            continue;
        }
        let file = format!("curve_{name}.csv");
        let path = dir.join(&file);
        let mut w = create(&path)?;
        w.write_record(["seed", "iteration", "reward", "smoothed"]).map_err(csv_err(&path))?;
        for (seed, r) in cfg.seeds.iter().zip(results) {
            let events: Vec<_> = r.events_for(id).collect();
            let rewards: Vec<f64> = events.iter().map(|e| e.reward).collect();
            let smoothed = smoothed_rewards(&rewards, &cfg.smoothing);
            for (e, s) in events.iter().zip(smoothed) {
                w.serialize((seed, e.iteration, e.reward, s)).map_err(csv_err(&path))?;
            }
        }
        w.flush().map_err(|e| HarnessError::io(&path, e))?;
        summary.files.push(rel.join(file));
    }

    let mut heat: BTreeMap<(String, String, String), (usize, f64)> = BTreeMap::new();
    let mut order = Vec::new();
    for t in tables {
        for (task, p, c, v) in t.heat.iter().cloned() {
            let key = (task, p, c);
            let slot = heat.entry(key.clone()).or_insert_with(|| {
                order.push(key);
                (0, 0.0)
            });
            slot.0 += 1;
            slot.1 += v;
        }
    }
    let path = dir.join("heatmap.csv");
    let mut w = create(&path)?;
    w.write_record(["task", "parameter", "choice", "probability"]).map_err(csv_err(&path))?;
    for key in &order {
        let (n, sum) = heat[key];
        w.serialize((&key.0, &key.1, &key.2, sum / n as f64)).map_err(csv_err(&path))?;
    }
    w.flush().map_err(|e| HarnessError::io(&path, e))?;
    summary.files.push(rel.join("heatmap.csv"));

    let per_seed: Vec<&Vec<CorrRow>> = tables.iter().map(|t| &t.corr).collect();
    if !per_seed[0].is_empty() {
        let path = dir.join("correlations.csv");
        let mut w = create(&path)?;
        w.write_record(["task_a", "task_b", "pearson"]).map_err(csv_err(&path))?;
        for (k, (a, b, _)) in per_seed[0].iter().enumerate() {
            let mean = per_seed.iter().map(|rows| rows[k].2).sum::<f64>() / per_seed.len() as f64;
            w.serialize((a, b, mean)).map_err(csv_err(&path))?;
        }
        w.flush().map_err(|e| HarnessError::io(&path, e))?;
        summary.files.push(rel.join("correlations.csv"));
    }
    Ok(())
}

fn brute_force_all(out: &Path, space: &SearchSpace, tasks: &[BuiltTask], summary: &mut RunSummary) -> Result<(), HarnessError> {
    let path = out.join("brute_force.csv");
    let mut w = create(&path)?;
    let mut header = vec!["task".to_string(), "index".into(), "reward".into()];
    header.extend(space.params().iter().map(|p| p.name.clone()));
    w.write_record(&header).map_err(csv_err(&path))?;
    for t in tasks {
        let (best, reward) = brute_force_optimum(t.binding.evaluator.as_ref())?;
        info!("{}: optimum {:?} with reward {reward}", t.binding.name, best);
        let mut rec = vec![t.binding.name.clone(), space.rank(&best)?.to_string(), reward.to_string()];
        rec.extend(space.decode(&best)?.values.iter().map(|(_, v)| v.label()));
        w.write_record(&rec).map_err(csv_err(&path))?;
        if let Some(table) = &t.table {
            let file = format!("oracle_{}.csv", t.binding.name);
            let f = File::create(out.join(&file)).map_err(|e| HarnessError::io(&out.join(&file), e))?;
            table.write_csv(f)?;
            summary.files.push(file.into());
        }
    }
    w.flush().map_err(|e| HarnessError::io(&path, e))?;
    summary.files.insert(0, "brute_force.csv".into());
    Ok(())
}

fn write_manifest(summary: &mut RunSummary) -> Result<(), HarnessError> {
    for f in &summary.files {
        let p = summary.output_dir.join(f);
        let len = fs::metadata(&p).map_err(|e| HarnessError::io(&p, e))?.len();
        if len == 0 {
            return Err(HarnessError::EmptyArtifact(p));
        }
    }
    let text: String = summary.files.iter().map(|f| format!("{}\n", f.display())).collect();
    let path = summary.output_dir.join("manifest.txt");
    fs::write(&path, text).map_err(|e| HarnessError::io(&path, e))?;
    Ok(())
}
