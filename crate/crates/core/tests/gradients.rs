//! Central finite-difference checks of every analytic gradient.

use mnms_core::controller::{ControllerConfig, ControllerParams};
use mnms_core::evaluators::ChildNetwork;
use mnms_core::numeric::{DenseMatrix, LstmLayerParams, LstmTrace, ParamSet};
use mnms_core::searchspace::{ChoiceValue, ParamSpec, SearchSpace};
use mnms_core::trainer::ppo_clipped_loss;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const STEP: f64 = 1e-5;
/// Gradients smaller than this are compared absolutely.
const FLOOR: f64 = 1e-6;
const TOLERANCE: f64 = 1e-4;

/// Largest relative error between `analytic` and central differences of
/// `f` over every scalar of `params`.
fn max_relative_error<P: ParamSet>(params: &P, analytic: &P, f: impl Fn(&P) -> f64) -> f64 {
    let mut worst: f64 = 0.0;
    let n_tensors = params.tensors().len();
    for t in 0..n_tensors {
        let len = params.tensors()[t].data().len();
        for i in 0..len {
            let mut plus = params.clone();
            plus.tensors_mut()[t].data_mut()[i] += STEP;
            let mut minus = params.clone();
            minus.tensors_mut()[t].data_mut()[i] -= STEP;
            let numeric = (f(&plus) - f(&minus)) / (2.0 * STEP);
            let a = analytic.tensors()[t].data()[i];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(FLOOR);
            worst = worst.max(rel);
        }
    }
    worst
}

fn space3() -> SearchSpace {
    SearchSpace::new(vec![
        ParamSpec::new("a", (0..3).map(ChoiceValue::Int).collect()),
        ParamSpec::new("b", (0..4).map(ChoiceValue::Int).collect()),
        ParamSpec::new("c", (0..2).map(ChoiceValue::Int).collect()),
    ])
    .unwrap()
}

fn small_controller(seed: u64) -> ControllerParams {
    let cfg = ControllerConfig { lstm_layers: 2, hidden_size: 4, action_embedding_size: 3, task_embedding_size: 3, init_range: 0.5 };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ControllerParams::init(&space3(), 2, &cfg, &mut rng).unwrap()
}

#[test]
fn lstm_bptt_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let layers = vec![LstmLayerParams::uniform(3, 4, 0.5, &mut rng), LstmLayerParams::uniform(4, 4, 0.5, &mut rng)];
    let inputs: Vec<Vec<f64>> = (0..3).map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    let coef: Vec<Vec<f64>> = (0..3).map(|_| (0..4).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    let loss = |l: &Vec<LstmLayerParams>| {
        let trace = LstmTrace::forward(l, &inputs).unwrap();
        trace.outputs().iter().zip(&coef).map(|(o, c)| o.iter().zip(c).map(|(a, b)| a * b).sum::<f64>()).sum::<f64>()
    };
    let trace = LstmTrace::forward(&layers, &inputs).unwrap();
    let (grads, d_inputs) = trace.backward(&layers, &coef);
    let err = max_relative_error(&layers, &grads, loss);
    assert!(err < TOLERANCE, "lstm weights: {err}");

    // input gradients
    let mut worst: f64 = 0.0;
    for t in 0..3 {
        for i in 0..3 {
            let mut p = inputs.clone();
            p[t][i] += STEP;
            let mut m = inputs.clone();
            m[t][i] -= STEP;
            let f = |x: &Vec<Vec<f64>>| {
                let tr = LstmTrace::forward(&layers, x).unwrap();
                tr.outputs().iter().zip(&coef).map(|(o, c)| o.iter().zip(c).map(|(a, b)| a * b).sum::<f64>()).sum::<f64>()
            };
            let numeric = (f(&p) - f(&m)) / (2.0 * STEP);
            let a = d_inputs[t][i];
            worst = worst.max((a - numeric).abs() / a.abs().max(numeric.abs()).max(FLOOR));
        }
    }
    assert!(worst < TOLERANCE, "lstm inputs: {worst}");
}

#[test]
fn controller_log_prob_gradients_match_finite_differences() {
    for (seed, task, actions) in [(1, 0, [2usize, 1, 0]), (2, 1, [0, 3, 1])] {
        let params = small_controller(seed);
        let weights = [0.7, -1.3, 0.4];
        let loss = |p: &ControllerParams| {
            let lp = p.sequence_log_probs(task, &actions).unwrap();
            lp.iter().zip(&weights).map(|(a, b)| a * b).sum::<f64>()
        };
        let trace = params.forward_trace(task, &actions).unwrap();
        let mut grads = params.zeros_like();
        params.backward(&trace, &weights, &mut grads);
        let err = max_relative_error(&params, &grads, loss);
        assert!(err < TOLERANCE, "seed {seed}: {err}");
    }
}

#[test]
fn clipped_surrogate_through_the_controller_matches_finite_differences() {
    let params = small_controller(5);
    // one unclipped sequence per task; ratios near 1
    let batch = [(0usize, [1usize, 2, 1], 0.8, 0.05), (1, [2, 0, 0], -0.6, -0.03)];
    let old: Vec<Vec<f64>> = batch
        .iter()
        .map(|(t, a, _, shift)| params.sequence_log_probs(*t, a).unwrap().iter().map(|l| l - shift / 3.0).collect())
        .collect();
    let adv: Vec<f64> = batch.iter().map(|b| b.2).collect();
    let loss = |p: &ControllerParams| {
        let new: Vec<Vec<f64>> = batch.iter().map(|(t, a, _, _)| p.sequence_log_probs(*t, a).unwrap()).collect();
        ppo_clipped_loss(&new, &old, &adv, 0.2).unwrap().0
    };
    let traces: Vec<_> = batch.iter().map(|(t, a, _, _)| params.forward_trace(*t, a).unwrap()).collect();
    let new: Vec<Vec<f64>> = traces.iter().map(|t| t.log_probs.clone()).collect();
    let (_, d) = ppo_clipped_loss(&new, &old, &adv, 0.2).unwrap();
    let mut grads = params.zeros_like();
    for (trace, g) in traces.iter().zip(&d) {
        params.backward(trace, g, &mut grads);
    }
    let err = max_relative_error(&params, &grads, loss);
    assert!(err < TOLERANCE, "{err}");
}

#[test]
fn child_network_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let extractor = DenseMatrix::uniform(4, 6, 0.6, &mut rng);
    for trainable in [true, false] {
        let net = ChildNetwork::new(extractor.clone(), trainable, 2, 5, 2, &mut rng);
        let xs: Vec<Vec<f64>> = (0..8).map(|_| (0..6).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let ys: Vec<usize> = (0..8).map(|i| i % 2).collect();
        let refs: Vec<&[f64]> = xs.iter().map(|x| x.as_slice()).collect();
        let (_, grads) = net.loss_and_grads(&refs, &ys);
        let err = max_relative_error(&net, &grads, |n| n.loss(&refs, &ys));
        assert!(err < TOLERANCE, "trainable={trainable}: {err}");
    }
}
