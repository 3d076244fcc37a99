//! End-to-end acceptance checks. Runs as a plain binary so every
//! criterion prints one PASS/FAIL line; exits non-zero if any fails.

use std::collections::BTreeMap;
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Instant;

use mnms_core::controller::{ControllerConfig, ControllerParams};
use mnms_core::evaluators::{
    brute_force_optimum, fixture_space, reward_from_accuracy, toy_space, ChildEvaluator, ChildNetwork, Evaluator,
    Fixture, ScaledEvaluator, TabularEvaluator, ToyKind, ToyTask, ToyTaskSpec,
};
use mnms_core::harness::{curve_stats, event_rows, write_events, ExperimentConfig, SmoothingConfig};
use mnms_core::numeric::{DenseMatrix, LstmLayerParams, LstmTrace, ParamSet};
use mnms_core::searchspace::{ChoiceValue, ParamSpec, SearchSpace};
use mnms_core::trainer::{ppo_clipped_loss, run_search, SearchResult, TaskBinding, TrainerConfig};
use mnms_core::transfer::{
    load_checkpoint, run_transfer, save_checkpoint, task_embedding_correlations, Checkpoint, TransferOptions,
    TIMESTAMP_RANGE,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SEEDS: [u64; 3] = [1, 2, 3];
const ITERATIONS: u64 = 3000;
const TRANSFER_SEED_OFFSET: u64 = 100;

type Outcome = Result<String, String>;

fn binding(space: &SearchSpace, f: Fixture) -> TaskBinding {
    let name = f.spec().name;
    TaskBinding::new(name, Arc::new(TabularEvaluator::new(name, f.table(space, 0.0).unwrap())))
}

fn search(tasks: &[TaskBinding], iterations: u64, seed: u64) -> SearchResult {
    let cfg = TrainerConfig { total_iterations: iterations, ..Default::default() };
    run_search(&tasks[0].evaluator.space().clone(), &ControllerConfig::default(), &cfg, tasks, seed).unwrap()
}

fn modal_config(result: &SearchResult, task: usize, last: usize) -> Vec<usize> {
    let events: Vec<_> = result.events_for(task).collect();
    let mut counts: BTreeMap<&[usize], usize> = BTreeMap::new();
    for e in &events[events.len().saturating_sub(last)..] {
        *counts.entry(&e.actions).or_default() += 1;
    }
    // ties go to the lexicographically first sequence
    let best = counts.values().copied().max().unwrap_or(0);
    counts.into_iter().find(|(_, c)| *c == best).map(|(a, _)| a.to_vec()).unwrap_or_default()
}

fn decile_means(result: &SearchResult, task: usize) -> (f64, f64) {
    let r = result.rewards_for(task);
    let k = (r.len() / 10).max(1);
    let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
    (mean(&r[..k]), mean(&r[r.len() - k..]))
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

/// Shared expensive runs: the planted pair per seed.
struct Planted {
    space: SearchSpace,
    tasks: Vec<TaskBinding>,
    runs: Vec<SearchResult>,
}

fn criterion_1() -> Outcome {
    const STEP: f64 = 1e-5;
    const FLOOR: f64 = 1e-6;
    fn worst<P: ParamSet>(p: &P, analytic: &P, f: impl Fn(&P) -> f64) -> f64 {
        let mut w: f64 = 0.0;
        for t in 0..p.tensors().len() {
            for i in 0..p.tensors()[t].data().len() {
                let mut a = p.clone();
                a.tensors_mut()[t].data_mut()[i] += STEP;
                let mut b = p.clone();
                b.tensors_mut()[t].data_mut()[i] -= STEP;
                let num = (f(&a) - f(&b)) / (2.0 * STEP);
                let ana = analytic.tensors()[t].data()[i];
                w = w.max((ana - num).abs() / ana.abs().max(num.abs()).max(FLOOR));
            }
        }
        w
    }
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut errors = Vec::new();

    // stacked LSTM, hidden 4, three steps
    let layers = vec![LstmLayerParams::uniform(3, 4, 0.5, &mut rng), LstmLayerParams::uniform(4, 4, 0.5, &mut rng)];
    let inputs: Vec<Vec<f64>> = (0..3).map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    let coef: Vec<Vec<f64>> = (0..3).map(|_| (0..4).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    let lstm_loss = |l: &Vec<LstmLayerParams>| {
        let tr = LstmTrace::forward(l, &inputs).unwrap();
        tr.outputs().iter().zip(&coef).map(|(o, c)| o.iter().zip(c).map(|(a, b)| a * b).sum::<f64>()).sum::<f64>()
    };
    let (g, _) = LstmTrace::forward(&layers, &inputs).unwrap().backward(&layers, &coef);
    errors.push(("lstm", worst(&layers, &g, lstm_loss)));

    // controller, hidden 4, sequence length 3, through the clipped surrogate
    let space = SearchSpace::new(vec![
        ParamSpec::new("a", (0..3).map(ChoiceValue::Int).collect()),
        ParamSpec::new("b", (0..4).map(ChoiceValue::Int).collect()),
        ParamSpec::new("c", (0..2).map(ChoiceValue::Int).collect()),
    ])
    .unwrap();
    let cfg = ControllerConfig { lstm_layers: 2, hidden_size: 4, action_embedding_size: 3, task_embedding_size: 3, init_range: 0.5 };
    let ctrl = ControllerParams::init(&space, 2, &cfg, &mut rng).unwrap();
    let batch = [(0usize, vec![1usize, 2, 1], 0.8), (1, vec![2, 0, 0], -0.6)];
    let old: Vec<Vec<f64>> =
        batch.iter().map(|(t, a, _)| ctrl.sequence_log_probs(*t, a).unwrap().iter().map(|l| l - 0.01).collect()).collect();
    let adv: Vec<f64> = batch.iter().map(|b| b.2).collect();
    let ctrl_loss = |p: &ControllerParams| {
        let new: Vec<Vec<f64>> = batch.iter().map(|(t, a, _)| p.sequence_log_probs(*t, a).unwrap()).collect();
        ppo_clipped_loss(&new, &old, &adv, 0.2).unwrap().0
    };
    let traces: Vec<_> = batch.iter().map(|(t, a, _)| ctrl.forward_trace(*t, a).unwrap()).collect();
    let new: Vec<Vec<f64>> = traces.iter().map(|t| t.log_probs.clone()).collect();
    let (_, d) = ppo_clipped_loss(&new, &old, &adv, 0.2).unwrap();
    let mut g = ctrl.zeros_like();
    for (tr, dd) in traces.iter().zip(&d) {
        ctrl.backward(tr, dd, &mut g);
    }
    errors.push(("controller", worst(&ctrl, &g, ctrl_loss)));

    // child network, 2 layers x 5 nodes, trainable extractor
    let extractor = DenseMatrix::uniform(4, 6, 0.6, &mut rng);
    let net = ChildNetwork::new(extractor, true, 2, 5, 2, &mut rng);
    let xs: Vec<Vec<f64>> = (0..8).map(|_| (0..6).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    let ys: Vec<usize> = (0..8).map(|i| i % 2).collect();
    let refs: Vec<&[f64]> = xs.iter().map(|x| x.as_slice()).collect();
    let (_, g) = net.loss_and_grads(&refs, &ys);
    errors.push(("child", worst(&net, &g, |n| n.loss(&refs, &ys))));

    let elapsed = start.elapsed().as_secs_f64();
    let detail = errors.iter().map(|(n, e)| format!("{n} {e:.2e}")).collect::<Vec<_>>().join(", ");
    let ok = errors.iter().all(|(_, e)| *e < 1e-4) && elapsed < 60.0;
    let msg = format!("max relative error {detail}; {elapsed:.2}s");
    if ok {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn criterion_2(p: &Planted) -> Outcome {
    let optima: Vec<Vec<usize>> = p.tasks.iter().map(|t| brute_force_optimum(t.evaluator.as_ref()).unwrap().0).collect();
    let mut modal_hits = vec![0; p.tasks.len()];
    let mut improving = true;
    let mut notes = Vec::new();
    for (seed, run) in SEEDS.iter().zip(&p.runs) {
        for (task, opt) in optima.iter().enumerate() {
            if modal_config(run, task, 200) == *opt {
                modal_hits[task] += 1;
            }
            let (first, last) = decile_means(run, task);
            improving &= last > first;
            notes.push(format!("s{seed}/t{task} {first:.3}->{last:.3}"));
        }
    }
    let msg = format!("modal==optimum per task {modal_hits:?}/3; deciles {}", notes.join(" "));
    if modal_hits.iter().all(|&h| h >= 2) && improving {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn criterion_3(p: &Planted) -> Outcome {
    let optima: Vec<Vec<usize>> = p.tasks.iter().map(|t| brute_force_optimum(t.evaluator.as_ref()).unwrap().0).collect();
    let differing: Vec<usize> = (0..p.space.len()).filter(|&i| optima[0][i] != optima[1][i]).collect();
    let mut good_seeds = 0;
    for (seed, run) in SEEDS.iter().zip(&p.runs) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xd15c);
        let ok = (0..2).all(|task| {
            let dist = run.state.actor.action_distributions(task, 10_000, &mut rng).unwrap();
            differing.iter().all(|&i| {
                let argmax = (0..dist[i].len()).max_by(|&a, &b| dist[i][a].total_cmp(&dist[i][b])).unwrap();
                argmax == optima[task][i]
            })
        });
        good_seeds += ok as usize;
    }
    let names: Vec<&str> = differing.iter().map(|&i| p.space.params()[i].name.as_str()).collect();
    let msg = format!("planted choice is the mode for {names:?} in {good_seeds}/3 seeds");
    if good_seeds >= 2 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn criterion_4(p: &Planted) -> Outcome {
    let mut max_diff: f64 = 0.0;
    let mut same_stream = true;
    let mut modal_same = 0;
    for (seed, base) in SEEDS.iter().zip(&p.runs) {
        let a = &p.tasks[0];
        let scaled: Arc<dyn Evaluator> =
            Arc::new(ScaledEvaluator { inner: TabularEvaluator::new("planted-a-x10", Fixture::PlantedA.table(&p.space, 0.0).unwrap()), scale: 10.0 });
        let tasks = vec![TaskBinding::new(a.name.clone(), scaled), p.tasks[1].clone()];
        let run = search(&tasks, ITERATIONS, *seed);
        let s0: Vec<_> = base.events_for(0).collect();
        let s1: Vec<_> = run.events_for(0).collect();
        same_stream &= s0.len() == s1.len()
            && s0.iter().zip(&s1).all(|(x, y)| x.iteration == y.iteration && x.actions == y.actions);
        for (x, y) in s0.iter().zip(&s1) {
            max_diff = max_diff.max((x.advantage_norm - y.advantage_norm).abs());
        }
        if modal_config(base, 1, 200) == modal_config(&run, 1, 200) {
            modal_same += 1;
        }
    }
    let msg = format!("max |dA_norm| {max_diff:.2e}, streams aligned {same_stream}, other task modal unchanged {modal_same}/3");
    if same_stream && max_diff < 1e-12 && modal_same == SEEDS.len() {
        Ok(msg)
    } else {
        Err(msg)
    }
}

struct TransferRuns {
    transfer: Vec<SearchResult>,
    scratch: Vec<SearchResult>,
    related: Vec<TaskBinding>,
}

fn transfer_runs(p: &Planted) -> TransferRuns {
    let related = vec![binding(&p.space, Fixture::RelatedA), binding(&p.space, Fixture::RelatedB)];
    let opts = TransferOptions {
        reactivate: Vec::new(),
        trainer_config: Some(TrainerConfig { total_iterations: ITERATIONS, ..Default::default() }),
    };
    let mut transfer = Vec::new();
    let mut scratch = Vec::new();
    for (seed, run) in SEEDS.iter().zip(&p.runs) {
        let ckpt = Checkpoint::from_state(&run.state, format!("seed {seed}"));
        transfer.push(run_transfer(&ckpt, &related, &opts, seed + TRANSFER_SEED_OFFSET).unwrap());
        scratch.push(search(&related, ITERATIONS, seed + TRANSFER_SEED_OFFSET));
    }
    TransferRuns { transfer, scratch, related }
}

/// Iterations until every task's smoothed reward reaches 90% of its
/// optimum, plus the best reward per task.
fn pair_hit(run: &SearchResult, ids: &[usize], thresholds: &[f64]) -> (f64, Vec<f64>) {
    let smoothing = SmoothingConfig::default();
    let mut hit: f64 = 0.0;
    let mut best = Vec::new();
    for (&id, &thr) in ids.iter().zip(thresholds) {
        let events: Vec<_> = run.events_for(id).collect();
        let its: Vec<u64> = events.iter().map(|e| e.iteration).collect();
        let rewards: Vec<f64> = events.iter().map(|e| e.reward).collect();
        let stats = curve_stats(&its, &rewards, thr, &smoothing);
        hit = hit.max(stats.iterations_to_threshold.map(|i| i as f64).unwrap_or(f64::INFINITY));
        best.push(stats.best_reward);
    }
    (hit, best)
}

fn criterion_5(t: &TransferRuns) -> Outcome {
    let thresholds: Vec<f64> =
        t.related.iter().map(|b| 0.9 * brute_force_optimum(b.evaluator.as_ref()).unwrap().1).collect();
    let mut hits_t = Vec::new();
    let mut hits_s = Vec::new();
    let mut best_ok = true;
    for (tr, sc) in t.transfer.iter().zip(&t.scratch) {
        let (ht, bt) = pair_hit(tr, &[2, 3], &thresholds);
        let (hs, bs) = pair_hit(sc, &[0, 1], &thresholds);
        hits_t.push(ht);
        hits_s.push(hs);
        best_ok &= bt.iter().zip(&bs).all(|(a, b)| *a >= 0.99 * b);
    }
    let (mt, ms) = (median(hits_t.clone()), median(hits_s.clone()));
    let msg = format!(
        "iterations to threshold transfer {hits_t:?} (median {mt}) vs scratch {hits_s:?} (median {ms}); best within 1%: {best_ok}"
    );
    if mt < ms && best_ok {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn early_rewards(t: &TransferRuns) -> Outcome {
    let first100 = |r: &SearchResult, ids: [usize; 2]| {
        let v: Vec<f64> = r.events.iter().filter(|e| ids.contains(&e.task_id)).take(100).map(|e| e.reward).collect();
        v.iter().sum::<f64>() / v.len() as f64
    };
    let mt = median(t.transfer.iter().map(|r| first100(r, [2, 3])).collect());
    let ms = median(t.scratch.iter().map(|r| first100(r, [0, 1])).collect());
    let msg = format!("first-100 mean reward transfer {mt:.4} vs scratch {ms:.4}");
    if mt > ms {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn criterion_6(t: &TransferRuns) -> Outcome {
    let mut good = 0;
    let mut notes = Vec::new();
    for r in &t.transfer {
        let c = task_embedding_correlations(&r.state.actor, &[0, 1, 2, 3]).unwrap();
        // task 2 is related to 0, task 3 to 1
        let ok = c[2][0] > c[2][1] && c[3][1] > c[3][0];
        good += ok as usize;
        notes.push(format!("ra:{:.2}/{:.2} rb:{:.2}/{:.2}", c[2][0], c[2][1], c[3][1], c[3][0]));
    }
    let msg = format!("related > unrelated in {good}/3 seeds ({})", notes.join(", "));
    if good >= 2 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn criterion_7() -> Outcome {
    let space = toy_space();
    let data = Arc::new(ToyTask::generate(&ToyTaskSpec::new(ToyKind::Separable, 7)));
    let target = 0.95;
    let oracle = ChildEvaluator::new("separable", space.clone(), data.clone()).with_brute_force_seed(0);
    let good_configs = space.enumerate().filter(|a| oracle.accuracy(a, 0).unwrap() >= target).count();
    if good_configs == 0 {
        return Err("brute force found no configuration with accuracy >= 0.95".into());
    }
    let ev: Arc<dyn Evaluator> = Arc::new(ChildEvaluator::new("separable", space.clone(), data));
    let tasks = vec![TaskBinding::new("separable", ev)];
    let mut found = Vec::new();
    for seed in SEEDS {
        let run = search(&tasks, 300, seed);
        let evaluations = run.events.len() + run.failures;
        let first = run.events.iter().position(|e| e.reward >= reward_from_accuracy(target).unwrap());
        found.push(first.filter(|_| evaluations <= 300).map(|i| i + 1));
    }
    let hits = found.iter().filter(|f| f.is_some()).count();
    let msg = format!("{good_configs}/{} configs reach 0.95; first hit at evaluation {found:?}", space.cardinality());
    if hits >= 2 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn criterion_8(p: &Planted) -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let a = search(&p.tasks, 300, 42);
    let b = search(&p.tasks, 300, 42);
    let bitwise = a.events.len() == b.events.len()
        && a.events.iter().zip(&b.events).all(|(x, y)| {
            x.actions == y.actions
                && x.reward.to_bits() == y.reward.to_bits()
                && x.baseline.to_bits() == y.baseline.to_bits()
                && x.advantage_norm.to_bits() == y.advantage_norm.to_bits()
        });
    let (pa, pb) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
    write_events(&pa, &event_rows(&a.events, &a.state.registry)).map_err(|e| e.to_string())?;
    write_events(&pb, &event_rows(&b.events, &b.state.registry)).map_err(|e| e.to_string())?;
    let logs_equal = std::fs::read(&pa).unwrap() == std::fs::read(&pb).unwrap();

    let path = dir.path().join("ckpt.bin");
    let ckpt = Checkpoint::from_state(&p.runs[0].state, "seed 1");
    save_checkpoint(&ckpt, &path).map_err(|e| e.to_string())?;
    let loaded = load_checkpoint(&path, Some(&p.space)).map_err(|e| e.to_string())?;
    let weights_equal = [(&ckpt.actor, &loaded.actor), (&ckpt.critic, &loaded.critic)].iter().all(|(x, y)| {
        x.flatten().iter().zip(y.flatten()).all(|(u, v)| u.to_bits() == v.to_bits()) && x.num_scalars() == y.num_scalars()
    });
    let mut again = Vec::new();
    let mut later = loaded.clone();
    later.timestamp += 1;
    later.write_to(&mut again).map_err(|e| e.to_string())?;
    let mut original = std::fs::read(&path).unwrap();
    original[TIMESTAMP_RANGE].fill(0);
    again[TIMESTAMP_RANGE].fill(0);
    let resave_equal = original == again;

    let space2 = SearchSpace::new(vec![
        ParamSpec::new("x", (0..4).map(ChoiceValue::Int).collect()),
        ParamSpec::new("y", (0..3).map(ChoiceValue::Int).collect()),
    ])
    .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut worst: f64 = 0.0;
    for _ in 0..5 {
        let c = ControllerParams::init(&space2, 3, &ControllerConfig { init_range: 1.0, ..Default::default() }, &mut rng).unwrap();
        for task in 0..3 {
            let total: f64 =
                space2.enumerate().map(|s| c.sequence_log_probs(task, &s).unwrap().iter().sum::<f64>().exp()).sum();
            worst = worst.max((total - 1.0).abs());
        }
    }
    let msg = format!(
        "events bitwise {bitwise}, csv identical {logs_equal}, checkpoint weights bitwise {weights_equal}, \
         re-save identical {resave_equal}, max |sum p - 1| {worst:.1e}"
    );
    if bitwise && logs_equal && weights_equal && resave_equal && worst <= 1e-6 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn criterion_9() -> Outcome {
    let c = ControllerConfig::default();
    let t = TrainerConfig::default();
    let exp = ExperimentConfig::default();
    let space = exp.space.build().map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let params = ControllerParams::init(&space, 2, &c, &mut rng).unwrap();
    let in_range = params.flatten().iter().all(|w| w.abs() <= 0.08);
    let checks = [
        ("lstm layers 2", c.lstm_layers == 2 && params.lstm.len() == 2),
        ("hidden 50", c.hidden_size == 50 && params.lstm.iter().all(|l| l.hidden_size() == 50)),
        ("embeddings 25", c.action_embedding_size == 25 && c.task_embedding_size == 25),
        ("input 50", params.input_size() == 50 && params.lstm[0].input_size() == 50),
        ("init U[-0.08, 0.08]", c.init_range == 0.08 && in_range),
        ("batch 20", t.batch_size == 20),
        ("lr 5e-4", t.critic_lr == 5e-4),
        ("25 steps per sync", t.steps_per_sync == 25),
        ("polyak 0.9", t.polyak_keep == 0.9),
        ("cubed accuracy", (reward_from_accuracy(0.9).unwrap() - 0.729).abs() < 1e-15),
        ("table1 cardinality 15360", space.cardinality() == 15360 && exp.controller == c && exp.trainer == t),
    ];
    let failed: Vec<&str> = checks.iter().filter(|(_, ok)| !ok).map(|(n, _)| *n).collect();
    if failed.is_empty() {
        Ok(format!("{} defaults verified", checks.len()))
    } else {
        Err(format!("wrong defaults: {failed:?}"))
    }
}

fn main() -> ExitCode {
    let start = Instant::now();
    let mut results: Vec<(String, Outcome)> = Vec::new();
    let mut report = |name: &str, outcome: Outcome| {
        let (tag, text) = match &outcome {
            Ok(m) => ("PASS", m),
            Err(m) => ("FAIL", m),
        };
        println!("[{tag}] {name}: {text}  ({:.0}s elapsed)", start.elapsed().as_secs_f64());
        results.push((name.to_string(), outcome));
    };

    report("1 gradient checks", criterion_1());
    report("9 paper defaults", criterion_9());

    let space = fixture_space();
    let tasks = vec![binding(&space, Fixture::PlantedA), binding(&space, Fixture::PlantedB)];
    let runs = SEEDS.iter().map(|&s| search(&tasks, ITERATIONS, s)).collect();
    let planted = Planted { space, tasks, runs };
    report("2 multitask convergence", criterion_2(&planted));
    report("3 task differentiation", criterion_3(&planted));
    report("4 advantage normalization", criterion_4(&planted));

    let transfer = transfer_runs(&planted);
    report("5 transfer speedup", criterion_5(&transfer));
    report("5b transfer early reward", early_rewards(&transfer));
    report("6 embedding relatedness", criterion_6(&transfer));

    report("7 child training search", criterion_7());
    report("8 determinism and serialization", criterion_8(&planted));

    let failed = results.iter().filter(|(_, o)| o.is_err()).count();
    println!("acceptance: {} passed, {failed} failed in {:.0}s", results.len() - failed, start.elapsed().as_secs_f64());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
