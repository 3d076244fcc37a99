//! Toy child-network training: synthetic classification data, a fixed
//! linear feature extractor per embedding label, and a ReLU feed-forward
//! network with a softmax head trained by Adagrad with L2.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{reward_from_accuracy, EvalError, Evaluator};
use crate::numeric::{adagrad_l2_update, axpy, dot, log_softmax, AdagradState, DenseMatrix, L2Mode, ParamSet};
use crate::searchspace::{ModelConfig, SearchSpace, EMBEDDING_LABELS};

pub const BATCH_SIZE: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ToyKind {
    /// Linearly separable with a margin; English-labelled extractors see the
    /// decision direction.
    Separable,
    /// Two overlapping Gaussian clusters; Spanish-labelled extractors see
    /// the discriminative direction.
    Overlap,
}

impl ToyKind {
    /// How much of the discriminative direction each extractor keeps.
    fn qualities(self) -> [f64; 6] {
        match self {
            ToyKind::Separable => [0.05, 0.1, 0.05, 0.5, 0.9, 1.0],
            ToyKind::Overlap => [1.0, 0.5, 0.1, 0.05, 0.1, 0.2],
        }
    }
}

/// Output width of each extractor, in embedding-label order.
const EXTRACTOR_DIMS: [usize; 6] = [8, 8, 8, 4, 8, 12];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToyTaskSpec {
    pub kind: ToyKind,
    pub seed: u64,
    #[serde(default = "default_train")]
    pub n_train: usize,
    #[serde(default = "default_val")]
    pub n_val: usize,
    #[serde(default = "default_raw_dim")]
    pub raw_dim: usize,
}

fn default_train() -> usize {
    1000
}
fn default_val() -> usize {
    500
}
fn default_raw_dim() -> usize {
    10
}

impl ToyTaskSpec {
    pub fn new(kind: ToyKind, seed: u64) -> Self {
        Self { kind, seed, n_train: default_train(), n_val: default_val(), raw_dim: default_raw_dim() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyTask {
    pub spec: ToyTaskSpec,
    pub n_classes: usize,
    pub train_x: Vec<Vec<f64>>,
    pub train_y: Vec<usize>,
    pub val_x: Vec<Vec<f64>>,
    pub val_y: Vec<usize>,
    pub extractors: Vec<DenseMatrix>,
}

impl ToyTask {
    pub fn generate(spec: &ToyTaskSpec) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let d = spec.raw_dim;
        let mut dir: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let norm = dot(&dir, &dir).sqrt();
        dir.iter_mut().for_each(|v| *v /= norm);

        let draw = |n: usize, rng: &mut ChaCha8Rng| {
            let mut xs = Vec::with_capacity(n);
            let mut ys = Vec::with_capacity(n);
            while xs.len() < n {
                let label = xs.len() % 2;
                let x: Vec<f64> = match spec.kind {
                    ToyKind::Separable => {
                        let x: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
                        let m = dot(&x, &dir);
                        if m.abs() < 0.2 || (m > 0.0) != (label == 1) {
                            continue;
                        }
                        x
                    }
                    ToyKind::Overlap => {
                        let shift = if label == 1 { 0.6 } else { -0.6 };
                        (0..d).map(|k| rng.sample::<f64, _>(StandardNormal) + shift * dir[k]).collect()
                    }
                };
                xs.push(x);
                ys.push(label);
            }
            (xs, ys)
        };
        let (train_x, train_y) = draw(spec.n_train, &mut rng);
        let (val_x, val_y) = draw(spec.n_val, &mut rng);

        let extractors = spec
            .kind
            .qualities()
            .iter()
            .zip(EXTRACTOR_DIMS)
            .map(|(&q, out)| {
                let scale = 1.0 / (d as f64).sqrt();
                let mut e = DenseMatrix::zeros(out, d);
                for r in 0..out {
                    let row: Vec<f64> = (0..d).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect();
                    let along = dot(&row, &dir);
                    for k in 0..d {
                        e.set(r, k, row[k] - (1.0 - q) * along * dir[k]);
                    }
                }
                e
            })
            .collect();

        Self { spec: spec.clone(), n_classes: 2, train_x, train_y, val_x, val_y, extractors }
    }

    pub fn extractor(&self, label: &str) -> Result<&DenseMatrix, EvalError> {
        EMBEDDING_LABELS
            .iter()
            .position(|&l| l == label)
            .map(|i| &self.extractors[i])
            .ok_or_else(|| EvalError::InvalidConfig(format!("unknown embedding `{label}`")))
    }
}

/// Feature extractor followed by `n_layers` ReLU layers and a linear
/// softmax head. The extractor is part of the trainable set only when
/// `extractor_trainable` is set.
#[derive(Debug, Clone, PartialEq)]
pub struct ChildNetwork {
    pub extractor: DenseMatrix,
    pub extractor_trainable: bool,
    pub weights: Vec<DenseMatrix>,
    pub biases: Vec<DenseMatrix>,
}

impl ParamSet for ChildNetwork {
    fn tensors(&self) -> Vec<&DenseMatrix> {
        let mut out = Vec::with_capacity(2 * self.weights.len() + 1);
        if self.extractor_trainable {
            out.push(&self.extractor);
        }
        out.extend(&self.weights);
        out.extend(&self.biases);
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut DenseMatrix> {
        let mut out = Vec::with_capacity(2 * self.weights.len() + 1);
        if self.extractor_trainable {
            out.push(&mut self.extractor);
        }
        out.extend(&mut self.weights);
        out.extend(&mut self.biases);
        out
    }
}

impl ChildNetwork {
    pub fn new<R: Rng + ?Sized>(
        extractor: DenseMatrix,
        extractor_trainable: bool,
        n_layers: usize,
        n_nodes: usize,
        n_classes: usize,
        rng: &mut R,
    ) -> Self {
        let mut widths = vec![extractor.rows()];
        widths.extend(std::iter::repeat_n(n_nodes, n_layers));
        widths.push(n_classes);
        let mut weights = Vec::with_capacity(widths.len() - 1);
        let mut biases = Vec::with_capacity(widths.len() - 1);
        for w in widths.windows(2) {
            let limit = (6.0 / (w[0] + w[1]) as f64).sqrt();
            weights.push(DenseMatrix::uniform(w[1], w[0], limit, rng));
            biases.push(DenseMatrix::zeros(1, w[1]));
        }
        Self { extractor, extractor_trainable, weights, biases }
    }

    pub fn n_hidden_layers(&self) -> usize {
        self.weights.len() - 1
    }

    /// Weights and biases of the dense layers (extractor excluded).
    pub fn dense_parameter_count(&self) -> usize {
        self.weights.iter().chain(&self.biases).map(|t| t.data().len()).sum()
    }

    /// Closed form for `input`-wide features, `layers` hidden layers of
    /// `nodes` units, and `classes` outputs.
    pub fn expected_parameter_count(input: usize, layers: usize, nodes: usize, classes: usize) -> usize {
        input * nodes + nodes + (layers - 1) * (nodes * nodes + nodes) + nodes * classes + classes
    }

    /// Activations of every layer; the last entry holds the logits.
    fn forward(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let mut acts = Vec::with_capacity(self.weights.len() + 1);
        acts.push(self.extractor.matvec(x));
        let last = self.weights.len() - 1;
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let mut z = b.data().to_vec();
            w.matvec_acc(acts.last().expect("non-empty"), &mut z);
            if l < last {
                z.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            acts.push(z);
        }
        acts
    }

    pub fn predict(&self, x: &[f64]) -> usize {
        let logits = self.forward(x).pop().expect("non-empty");
        argmax(&logits)
    }

    /// Mean cross-entropy over the batch.
    pub fn loss(&self, xs: &[&[f64]], ys: &[usize]) -> f64 {
        let total: f64 = xs
            .iter()
            .zip(ys)
            .map(|(x, &y)| -log_softmax(self.forward(x).last().expect("non-empty"))[y])
            .sum();
        total / xs.len() as f64
    }

    pub fn loss_and_grads(&self, xs: &[&[f64]], ys: &[usize]) -> (f64, ChildNetwork) {
        let mut grads = self.zeros_like();
        let n = xs.len() as f64;
        let mut loss = 0.0;
        for (x, &y) in xs.iter().zip(ys) {
            let acts = self.forward(x);
            let lp = log_softmax(acts.last().expect("non-empty"));
            loss -= lp[y];
            let mut delta: Vec<f64> = lp.iter().map(|v| v.exp() / n).collect();
            delta[y] -= 1.0 / n;
            for l in (0..self.weights.len()).rev() {
                let input = &acts[l];
                grads.weights[l].add_outer(1.0, &delta, input);
                axpy(1.0, &delta, grads.biases[l].data_mut());
                let mut d_in = vec![0.0; input.len()];
                self.weights[l].matvec_t_acc(&delta, &mut d_in);
                if l > 0 {
                    // ReLU: acts[l] is post-activation of hidden layer l - 1
                    for (d, a) in d_in.iter_mut().zip(input) {
                        if *a <= 0.0 {
                            *d = 0.0;
                        }
                    }
                } else if self.extractor_trainable {
                    grads.extractor.add_outer(1.0, &d_in, x);
                }
                delta = d_in;
            }
        }
        (loss / n, grads)
    }

    pub fn accuracy(&self, xs: &[Vec<f64>], ys: &[usize]) -> f64 {
        if xs.is_empty() {
            return 0.0;
        }
        let correct = xs.iter().zip(ys).filter(|(x, &y)| self.predict(x) == y).count();
        correct as f64 / xs.len() as f64
    }
}

fn argmax(v: &[f64]) -> usize {
    v.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &x)| if x > bv { (i, x) } else { (bi, bv) })
        .0
}

/// Builds the network described by `config`, trains it for
/// `train_iterations` batches of 100 and returns validation accuracy.
pub fn train_child_network(config: &ModelConfig, task: &ToyTask, seed: u64) -> Result<f64, EvalError> {
    train_child_network_with(config, task, seed, L2Mode::Gradient)
}

pub fn train_child_network_with(
    config: &ModelConfig,
    task: &ToyTask,
    seed: u64,
    mode: L2Mode,
) -> Result<f64, EvalError> {
    if config.n_layers == 0 || config.n_nodes == 0 {
        return Err(EvalError::InvalidConfig("layers and nodes must be positive".into()));
    }
    if !(config.learning_rate > 0.0) || !(config.l2_weight >= 0.0) {
        return Err(EvalError::InvalidConfig("learning rate must be positive, l2 non-negative".into()));
    }
    if task.train_x.is_empty() {
        return Err(EvalError::InvalidConfig("empty training set".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let extractor = task.extractor(&config.embedding_choice)?.clone();
    let mut net = ChildNetwork::new(
        extractor,
        config.embedding_trainable,
        config.n_layers,
        config.n_nodes,
        task.n_classes,
        &mut rng,
    );
    let mut opt = AdagradState::new(&net, mode);
    let mut xs: Vec<&[f64]> = Vec::with_capacity(BATCH_SIZE);
    let mut ys = Vec::with_capacity(BATCH_SIZE);
    for _ in 0..config.train_iterations {
        xs.clear();
        ys.clear();
        for _ in 0..BATCH_SIZE {
            let i = rng.random_range(0..task.train_x.len());
            xs.push(&task.train_x[i]);
            ys.push(task.train_y[i]);
        }
        let (_, grads) = net.loss_and_grads(&xs, &ys);
        adagrad_l2_update(&mut net, &grads, &mut opt, config.learning_rate, config.l2_weight)
            .map_err(|e| EvalError::Failed(e.to_string()))?;
    }
    if !net.is_finite() {
        return Err(EvalError::Failed("child network diverged".into()));
    }
    Ok(net.accuracy(&task.val_x, &task.val_y))
}

/// Evaluator that trains a child network per sample.
pub struct ChildEvaluator {
    name: String,
    space: SearchSpace,
    task: Arc<ToyTask>,
    brute_force_seed: Option<u64>,
}

impl ChildEvaluator {
    pub fn new(name: impl Into<String>, space: SearchSpace, task: Arc<ToyTask>) -> Self {
        Self { name: name.into(), space, task, brute_force_seed: None }
    }

    /// Enables exhaustive search, scoring every config at one fixed seed.
    pub fn with_brute_force_seed(mut self, seed: u64) -> Self {
        self.brute_force_seed = Some(seed);
        self
    }

    pub fn task(&self) -> &ToyTask {
        &self.task
    }

    pub fn accuracy(&self, actions: &[usize], seed: u64) -> Result<f64, EvalError> {
        let config = self.space.decode(actions)?.to_model_config()?;
        train_child_network(&config, &self.task, seed)
    }
}

impl Evaluator for ChildEvaluator {
    fn name(&self) -> &str {
        &self.name
    }

    fn space(&self) -> &SearchSpace {
        &self.space
    }

    fn evaluate(&self, actions: &[usize], seed: u64) -> Result<f64, EvalError> {
        reward_from_accuracy(self.accuracy(actions, seed)?)
    }

    fn noise_free_reward(&self, actions: &[usize]) -> Option<Result<f64, EvalError>> {
        self.brute_force_seed.map(|s| self.evaluate(actions, s))
    }

    fn brute_forceable(&self) -> bool {
        self.brute_force_seed.is_some()
    }
}
