//! Controller checkpoints and transfer to new tasks.
//!
//! File layout (all integers little-endian):
//!
//! ```text
//! magic      8 bytes  "MNMSCKPT"
//! version    u32
//! timestamp  u64      unix seconds at save time
//! fingerprint u64     search-space fingerprint
//! meta_len   u64
//! meta       meta_len bytes of JSON (space, registry, baselines, configs)
//! actor      u64 tensor count, then per tensor: rows u64, cols u64, rows*cols f64
//! critic     same as actor
//! ```
//!
//! A plain-text manifest listing tensor shapes is written next to the file.

use std::fs;
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::controller::{ControllerConfig, ControllerParams, TaskRegistry};
use crate::numeric::{DenseMatrix, ParamSet};
use crate::searchspace::{ParamSpec, SearchSpace, SpaceError};
use crate::trainer::{run_trainer, BaselineTable, Evaluators, SearchResult, TaskBinding, TrainerConfig, TrainerError, TrainerState};

pub const MAGIC: &[u8; 8] = b"MNMSCKPT";
pub const FORMAT_VERSION: u32 = 1;
/// Byte range of the timestamp field within the header.
pub const TIMESTAMP_RANGE: std::ops::Range<usize> = 12..20;

#[derive(Debug, Error)]
pub enum TransferError {
    #[error("checkpoint io: {0}")]
    Io(#[from] io::Error),
    #[error("unsupported checkpoint version {0}")]
    VersionMismatch(u32),
    #[error("search-space fingerprint {found:#018x} does not match {expected:#018x}")]
    FingerprintMismatch { expected: u64, found: u64 },
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
    #[error("task embedding {0} has zero variance")]
    DegenerateEmbedding(usize),
    #[error("need at least two tasks")]
    TooFewTasks,
    #[error("unknown task id {0}")]
    UnknownTask(usize),
    #[error("checkpoint has no task named {0:?}")]
    UnknownTaskName(String),
    #[error("task {0:?} already exists in the checkpoint")]
    DuplicateTask(String),
    #[error(transparent)]
    Trainer(#[from] TrainerError),
}

impl From<SpaceError> for TransferError {
    fn from(e: SpaceError) -> Self {
        TransferError::Malformed(e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Meta {
    space: Vec<ParamSpec>,
    registry: TaskRegistry,
    baselines: BaselineTable,
    trainer_config: TrainerConfig,
    controller_config: ControllerConfig,
    init_range: f64,
    iteration: u64,
    critic_steps: u64,
    rng_note: String,
    tensor_shapes: Vec<(usize, usize)>,
}

/// Everything needed to resume or transfer a trained controller.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub version: u32,
    pub timestamp: u64,
    pub space: SearchSpace,
    pub actor: ControllerParams,
    pub critic: ControllerParams,
    pub baselines: BaselineTable,
    pub registry: TaskRegistry,
    pub trainer_config: TrainerConfig,
    pub controller_config: ControllerConfig,
    pub iteration: u64,
    pub critic_steps: u64,
    /// Free-form description of where the run's generator stood.
    pub rng_note: String,
}

impl Checkpoint {
    pub fn from_state(state: &TrainerState, rng_note: impl Into<String>) -> Self {
        Self {
            version: FORMAT_VERSION,
            timestamp: SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0),
            space: state.space.clone(),
            actor: state.actor.clone(),
            critic: state.critic.clone(),
            baselines: state.baselines.clone(),
            registry: state.registry.clone(),
            trainer_config: state.config.clone(),
            controller_config: state.controller_config,
            iteration: state.iteration,
            critic_steps: state.critic_steps,
            rng_note: rng_note.into(),
        }
    }

    pub fn fingerprint(&self) -> u64 {
        self.space.fingerprint()
    }

    /// Rebuilds a trainer state; the replay bank and optimizer moments
    /// start empty.
    pub fn into_state(self) -> TrainerState {
        let mut state = TrainerState::from_parts(
            self.space,
            self.controller_config,
            self.trainer_config,
            self.registry,
            self.actor,
            self.critic,
        );
        state.baselines = self.baselines;
        state.iteration = self.iteration;
        state.critic_steps = self.critic_steps;
        state
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<(), TransferError> {
        let shapes: Vec<(usize, usize)> = self.actor.tensors().iter().map(|t| t.shape()).collect();
        let meta = Meta {
            space: self.space.params().to_vec(),
            registry: self.registry.clone(),
            baselines: self.baselines.clone(),
            trainer_config: self.trainer_config.clone(),
            controller_config: self.controller_config,
            init_range: self.actor.init_range,
            iteration: self.iteration,
            critic_steps: self.critic_steps,
            rng_note: self.rng_note.clone(),
            tensor_shapes: shapes,
        };
        let meta_bytes = serde_json::to_vec(&meta).map_err(|e| TransferError::Malformed(e.to_string()))?;
        w.write_all(MAGIC)?;
        w.write_all(&self.version.to_le_bytes())?;
        w.write_all(&self.timestamp.to_le_bytes())?;
        w.write_all(&self.fingerprint().to_le_bytes())?;
        w.write_all(&(meta_bytes.len() as u64).to_le_bytes())?;
        w.write_all(&meta_bytes)?;
        for params in [&self.actor, &self.critic] {
            let tensors = params.tensors();
            w.write_all(&(tensors.len() as u64).to_le_bytes())?;
            for t in tensors {
                w.write_all(&(t.rows() as u64).to_le_bytes())?;
                w.write_all(&(t.cols() as u64).to_le_bytes())?;
                for v in t.data() {
                    w.write_all(&v.to_le_bytes())?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self, TransferError> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(TransferError::Malformed("bad magic bytes".into()));
        }
        let version = read_u32(&mut r)?;
        if version != FORMAT_VERSION {
            return Err(TransferError::VersionMismatch(version));
        }
        let timestamp = read_u64(&mut r)?;
        let fingerprint = read_u64(&mut r)?;
        let meta_len = read_u64(&mut r)? as usize;
        if meta_len > 1 << 30 {
            return Err(TransferError::Malformed("metadata block too large".into()));
        }
        let mut meta_bytes = vec![0u8; meta_len];
        r.read_exact(&mut meta_bytes)?;
        let meta: Meta = serde_json::from_slice(&meta_bytes).map_err(|e| TransferError::Malformed(e.to_string()))?;
        let space = SearchSpace::new(meta.space)?;
        if space.fingerprint() != fingerprint {
            return Err(TransferError::FingerprintMismatch { expected: space.fingerprint(), found: fingerprint });
        }
        let template = ControllerParams::init(
            &space,
            meta.registry.len().max(1),
            &meta.controller_config,
            &mut ChaCha8Rng::seed_from_u64(0),
        )
        .map_err(|e| TransferError::Malformed(e.to_string()))?;
        let actor = read_params(&mut r, &template, meta.init_range)?;
        let critic = read_params(&mut r, &template, meta.init_range)?;
        let mut rest = Vec::new();
        r.read_to_end(&mut rest)?;
        if !rest.is_empty() {
            return Err(TransferError::Malformed(format!("{} trailing bytes", rest.len())));
        }
        Ok(Self {
            version,
            timestamp,
            space,
            actor,
            critic,
            baselines: meta.baselines,
            registry: meta.registry,
            trainer_config: meta.trainer_config,
            controller_config: meta.controller_config,
            iteration: meta.iteration,
            critic_steps: meta.critic_steps,
            rng_note: meta.rng_note,
        })
    }

    pub fn manifest(&self) -> String {
        let mut out = format!(
            "format {FORMAT_VERSION}\nfingerprint {:#018x}\ntasks {}\n",
            self.fingerprint(),
            self.registry.tasks().iter().map(|t| t.name.as_str()).collect::<Vec<_>>().join(",")
        );
        for (role, params) in [("actor", &self.actor), ("critic", &self.critic)] {
            for (i, t) in params.tensors().iter().enumerate() {
                out.push_str(&format!("{role}[{i}] {}x{}\n", t.rows(), t.cols()));
            }
        }
        out
    }
}

fn read_u32(r: &mut impl Read) -> io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> io::Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_params(r: &mut impl Read, template: &ControllerParams, init_range: f64) -> Result<ControllerParams, TransferError> {
    let mut params = template.clone();
    params.init_range = init_range;
    let count = read_u64(r)? as usize;
    let expected = template.tensors().len();
    if count != expected {
        return Err(TransferError::Malformed(format!("expected {expected} tensors, found {count}")));
    }
    for (i, slot) in params.tensors_mut().into_iter().enumerate() {
        let rows = read_u64(r)? as usize;
        let cols = read_u64(r)? as usize;
        // only the task-embedding table may differ in row count from the template
        if cols != slot.cols() || (i + 1 != count && rows != slot.rows()) {
            return Err(TransferError::Malformed(format!("tensor {i} has shape {rows}x{cols}")));
        }
        let mut data = vec![0.0; rows * cols];
        let mut buf = [0u8; 8];
        for v in data.iter_mut() {
            r.read_exact(&mut buf)?;
            *v = f64::from_le_bytes(buf);
        }
        *slot = DenseMatrix::from_vec(rows, cols, data).map_err(|e| TransferError::Malformed(e.to_string()))?;
    }
    Ok(params)
}

pub fn manifest_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".manifest");
    path.with_file_name(name)
}

/// Writes the checkpoint and its manifest.
pub fn save_checkpoint(checkpoint: &Checkpoint, path: &Path) -> Result<(), TransferError> {
    let mut buf = Vec::new();
    checkpoint.write_to(&mut buf)?;
    fs::write(path, buf)?;
    fs::write(manifest_path(path), checkpoint.manifest())?;
    Ok(())
}

/// Loads a checkpoint; when `space` is given its fingerprint must match.
pub fn load_checkpoint(path: &Path, space: Option<&SearchSpace>) -> Result<Checkpoint, TransferError> {
    let bytes = fs::read(path)?;
    let ckpt = Checkpoint::read_from(bytes.as_slice())?;
    if let Some(space) = space {
        if space.fingerprint() != ckpt.fingerprint() {
            return Err(TransferError::FingerprintMismatch { expected: space.fingerprint(), found: ckpt.fingerprint() });
        }
    }
    Ok(ckpt)
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TransferOptions {
    /// Pre-training tasks to keep in the sampling pool, by name.
    pub reactivate: Vec<String>,
    /// Trainer settings for the new search; defaults to the checkpoint's.
    pub trainer_config: Option<TrainerConfig>,
}

/// Reuses a pre-trained controller pair for new tasks: one fresh
/// embedding row per task, empty replay, uninitialized baselines for the
/// new tasks and fresh optimizer moments. Old tasks stay registered but
/// inactive unless listed in `options.reactivate`.
pub fn transfer_init<R: Rng + ?Sized>(
    checkpoint: &Checkpoint,
    space: &SearchSpace,
    new_tasks: &[(String, String)],
    options: &TransferOptions,
    rng: &mut R,
) -> Result<TrainerState, TransferError> {
    if space.fingerprint() != checkpoint.fingerprint() {
        return Err(TransferError::FingerprintMismatch { expected: space.fingerprint(), found: checkpoint.fingerprint() });
    }
    let mut actor = checkpoint.actor.clone();
    let mut critic = checkpoint.critic.clone();
    let mut registry = checkpoint.registry.clone();
    let mut baselines = checkpoint.baselines.clone();
    for id in 0..registry.len() {
        registry.set_active(id, false);
    }
    for name in &options.reactivate {
        let id = registry.find(name).ok_or_else(|| TransferError::UnknownTaskName(name.clone()))?;
        registry.set_active(id, true);
    }
    for (name, evaluator) in new_tasks {
        if registry.find(name).is_some() {
            return Err(TransferError::DuplicateTask(name.clone()));
        }
        let row = actor.add_task(rng);
        let fresh = actor.task_embeddings.row(row).to_vec();
        critic.task_embeddings.push_row(&fresh).map_err(|e| TransferError::Malformed(e.to_string()))?;
        let id = registry.register(name.clone(), evaluator.clone());
        let b = baselines.add_task();
        debug_assert!(id == row && b == row);
    }
    let config = options.trainer_config.clone().unwrap_or_else(|| checkpoint.trainer_config.clone());
    let mut state =
        TrainerState::from_parts(space.clone(), checkpoint.controller_config, config, registry, actor, critic);
    state.baselines = baselines;
    Ok(state)
}

/// Transfers `checkpoint` and runs a search from `seed`. Bindings whose
/// name matches a checkpoint task re-enable that task; the rest are added
/// as new tasks.
pub fn run_transfer(
    checkpoint: &Checkpoint,
    tasks: &[TaskBinding],
    options: &TransferOptions,
    seed: u64,
) -> Result<SearchResult, TransferError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut options = options.clone();
    let mut new = Vec::new();
    for t in tasks {
        if checkpoint.registry.find(&t.name).is_some() {
            if !options.reactivate.contains(&t.name) {
                options.reactivate.push(t.name.clone());
            }
        } else {
            new.push((t.name.clone(), t.evaluator.name().to_string()));
        }
    }
    let state = transfer_init(checkpoint, &checkpoint.space, &new, &options, &mut rng)?;
    let mut evaluators = Evaluators::new();
    for t in tasks {
        let id = state.registry.find(&t.name).expect("every binding is registered");
        evaluators.insert(id, t.evaluator.clone());
    }
    Ok(run_trainer(state, &evaluators, &mut rng)?)
}

fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return None;
    }
    Some((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}

/// Pairwise Pearson correlation of task-embedding rows.
pub fn task_embedding_correlations(params: &ControllerParams, task_ids: &[usize]) -> Result<Vec<Vec<f64>>, TransferError> {
    if task_ids.len() < 2 {
        return Err(TransferError::TooFewTasks);
    }
    for &t in task_ids {
        if t >= params.n_tasks() {
            return Err(TransferError::UnknownTask(t));
        }
    }
    let rows: Vec<&[f64]> = task_ids.iter().map(|&t| params.task_embeddings.row(t)).collect();
    let n = rows.len();
    let mut out = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in i..n {
            let c = if i == j {
                pearson(rows[i], rows[i]).map(|_| 1.0)
            } else {
                pearson(rows[i], rows[j])
            };
            let c = c.ok_or_else(|| {
                let degenerate = if pearson(rows[i], rows[i]).is_none() { task_ids[i] } else { task_ids[j] };
                TransferError::DegenerateEmbedding(degenerate)
            })?;
            out[i][j] = c;
            out[j][i] = c;
        }
    }
    Ok(out)
}
