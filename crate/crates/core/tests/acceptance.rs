//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits non-zero if a gating criterion fails. Criteria 6-9 are directional
//! or statistical claims about training outcomes: they are reported with the
//! measured numbers but do not fail the build.
//!
//! Runs without the libtest harness so the lines always show up in
//! `cargo test` output, and runs the criteria one after another so the
//! timing comparison has the CPU to itself.

use std::fs::File;
use std::process::ExitCode;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use statrs::distribution::{Continuous, ContinuousCDF, Normal};

use gnm_lab::autodiff::{finite_diff_gradient, ParamSet, Tensor};
use gnm_lab::data::{gather, synth_dataset, Dataset};
use gnm_lab::harness::{
    class_split, evaluate, landscape_for, load_checkpoint, parse_config, restore_into, run_experiment, train,
    training_objective, RunConfig, TrainedRun, CHECKPOINT_FILE,
};
use gnm_lab::landscape::flatness_score;
use gnm_lab::losses::{ClassCounts, ClassWeights};
use gnm_lab::models::{Activation, MlpConfig, ModelConfig, ModelState, PromptedConfig};
use gnm_lab::optim::{
    gnm_step, gradient_group_norms, neighborhood_loss_stats, sam_step, sample_entry, sgd_step, GaussianNeighborhood,
    Objective, OptimizerConfig, OptimizerKind, PassCounter, StepClock,
};
use gnm_lab::rng::{stream, Stream};
use gnm_lab::task::ClassificationObjective;
use gnm_lab::Result;

const DESK: &str = include_str!("../configs/desk.cfg");
const SEEDS: u64 = 11;

fn desk() -> RunConfig {
    parse_config(DESK).expect("desk config parses")
}

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn randomize(params: &mut ParamSet, rng: &mut ChaCha8Rng, std: f64) {
    for t in params.tensors_mut() {
        for v in t.data_mut() {
            *v = std * rng.sample::<f64, _>(StandardNormal);
        }
    }
}

fn random_batch(rng: &mut ChaCha8Rng, rows: usize, dim: usize, classes: usize) -> (Tensor, Vec<usize>) {
    let x: Vec<f64> = (0..rows * dim).map(|_| rng.sample(StandardNormal)).collect();
    let y = (0..rows).map(|_| rng.random_range(0..classes)).collect();
    (Tensor::matrix(rows, dim, x).unwrap(), y)
}

fn random_mlp(rng: &mut ChaCha8Rng) -> ModelConfig {
    let layers = rng.random_range(0..=2);
    ModelConfig::Mlp(MlpConfig {
        input_dim: rng.random_range(2..=8),
        hidden: (0..layers).map(|_| rng.random_range(2..=8)).collect(),
        classes: rng.random_range(2..=5),
        activation: if rng.random_bool(0.5) {
            Activation::Relu
        } else {
            Activation::Tanh
        },
    })
}

fn random_prompted(rng: &mut ChaCha8Rng) -> ModelConfig {
    ModelConfig::Prompted(PromptedConfig {
        token_dim: rng.random_range(2..=4),
        tokens: rng.random_range(1..=3),
        prompts: rng.random_range(0..=2),
        layers: rng.random_range(1..=2),
        classes: rng.random_range(2..=4),
        mlp_hidden: rng.random_range(2..=4),
        w_p: rng.random_range(0.0..1.0),
        w_z: rng.random_range(0.0..1.0),
    })
}

/// A random small model, batch and loss variant, with trainable parameters
/// redrawn at unit-ish scale so no gradient is trivially tiny.
fn random_problem(rng: &mut ChaCha8Rng, prompted: bool) -> (ModelState, Tensor, Vec<usize>, ClassWeights, Option<ClassCounts>) {
    let cfg = if prompted {
        random_prompted(rng)
    } else {
        random_mlp(rng)
    };
    let mut model = ModelState::init(cfg.clone(), rng.random()).unwrap();
    randomize(&mut model.trainable, rng, 0.5);
    let rows = if prompted { rng.random_range(1..=3) } else { rng.random_range(1..=6) };
    let (x, y) = random_batch(rng, rows, cfg.input_dim(), cfg.classes());
    let weights = ClassWeights::normalized((0..cfg.classes()).map(|_| rng.random_range(0.1..2.0)).collect()).unwrap();
    let counts = rng
        .random_bool(0.3)
        .then(|| ClassCounts::new((0..cfg.classes()).map(|_| rng.random_range(1..50)).collect()).unwrap());
    (model, x, y, weights, counts)
}

fn criterion_1() -> Outcome {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (rel, abs) = (1e-4, 1e-7);
    let mut ok = 0;
    let mut worst = 0.0f64;
    let total = 120;
    for trial in 0..total {
        let (model, x, y, weights, counts) = random_problem(&mut rng, trial % 2 == 1);
        let mut obj = ClassificationObjective::new(&model, x, y).with_weights(weights);
        if let Some(c) = &counts {
            obj = obj.with_balanced_softmax(c);
        }
        let (_, grads) = obj.value_and_grad(&model.trainable).unwrap();
        let analytic: Vec<f64> = grads.iter().flat_map(|g| g.data().to_vec()).collect();
        let numeric = finite_diff_gradient(|p| obj.value(p).unwrap(), &model.trainable, 1e-5).unwrap();
        let mut good = true;
        for (a, n) in analytic.iter().zip(&numeric) {
            let err = (a - n).abs();
            let scale = a.abs().max(n.abs());
            if err > rel * scale + abs {
                good = false;
            }
            if scale > abs {
                worst = worst.max(err / scale);
            }
        }
        ok += usize::from(good);
    }
    let secs = started.elapsed().as_secs_f64();
    outcome(
        ok == total && secs < 60.0,
        format!("{ok}/{total} MLP and prompted models match central differences (worst rel err {worst:.2e}) in {secs:.1}s"),
    )
}

fn step_once(kind: OptimizerKind, cfg: &OptimizerConfig, params: &mut ParamSet, obj: &dyn Objective, rng: &mut ChaCha8Rng) -> u64 {
    let mut counter = PassCounter::default();
    let mut cfg = cfg.clone();
    cfg.kind = kind;
    let clock = StepClock::new(0, 1);
    match kind {
        OptimizerKind::Sgd => sgd_step(params, obj, &cfg, clock, &mut counter),
        OptimizerKind::Sam => sam_step(params, obj, &cfg, clock, &mut counter),
        OptimizerKind::Gnm => gnm_step(params, obj, &cfg, clock, rng, &mut counter),
    }
    .unwrap();
    counter.last_step_ns
}

fn criterion_2() -> Outcome {
    // exact pass counts over a 10-epoch run
    let mut counts_ok = true;
    let mut per_step = Vec::new();
    for kind in [OptimizerKind::Sgd, OptimizerKind::Sam, OptimizerKind::Gnm] {
        let mut cfg = desk();
        cfg.t1 = 7;
        cfg.t2 = 10;
        cfg.optim.kind = kind;
        let r = run_experiment(&cfg).unwrap();
        let passes = if kind == OptimizerKind::Sam { 2 } else { 1 };
        counts_ok &= r.epochs.len() == 10;
        for e in &r.epochs {
            counts_ok &= e.forward == passes * e.steps && e.backward == passes * e.steps && e.steps > 0;
        }
        counts_ok &= r.summary.forward == passes * r.summary.steps;
        per_step.push(format!("{kind} {}+{}", r.summary.forward / r.summary.steps, r.summary.backward / r.summary.steps));
    }

    // per-step wall time, interleaving the three steps on identical inputs
    let cfg = desk();
    let data = synth_dataset(&cfg.data).unwrap();
    let model = ModelState::init(cfg.model_config(), cfg.seed).unwrap();
    let mut order: Vec<usize> = (0..data.train_len()).collect();
    order.shuffle(&mut stream(cfg.seed, Stream::Shuffle));
    let batches: Vec<(Tensor, Vec<usize>)> = order
        .chunks(cfg.batch)
        .take(8)
        .map(|idx| gather(&data.train_x, &data.train_y, idx))
        .collect();
    let mut rng = stream(cfg.seed, Stream::Perturbation);
    let kinds = [OptimizerKind::Sgd, OptimizerKind::Sam, OptimizerKind::Gnm];
    let mut times: [Vec<f64>; 3] = Default::default();
    for rep in 0..40 {
        for (x, y) in &batches {
            let obj = ClassificationObjective::new(&model, x.clone(), y.clone());
            for k in 0..3 {
                let which = (k + rep) % 3;
                let mut p = model.trainable.clone();
                let ns = step_once(kinds[which], &cfg.optim, &mut p, &obj, &mut rng);
                if rep > 0 {
                    times[which].push(ns as f64);
                }
            }
        }
    }
    let [sgd, sam, gnm] = times.map(|mut v| median(&mut v));
    let (sam_ratio, gnm_ratio) = (sam / sgd, gnm / sgd);
    outcome(
        counts_ok && sam_ratio >= 1.5 && gnm_ratio <= 1.10,
        format!(
            "passes per step {} (exact: {counts_ok}); median step SAM/SGD = {sam_ratio:.3} (>= 1.5), GNM/SGD = {gnm_ratio:.3} (<= 1.10)",
            per_step.join(", ")
        ),
    )
}

fn criterion_3() -> Outcome {
    let mut cfg = desk();
    cfg.optim.rho_sam = 0.0;
    let reports: Vec<String> = [OptimizerKind::Sgd, OptimizerKind::Gnm, OptimizerKind::Sam]
        .iter()
        .map(|&k| {
            let mut c = cfg.clone();
            c.optim.kind = k;
            run_experiment(&c).unwrap().masked(false)
        })
        .collect();
    let gnm = reports[1] == reports[0];
    let sam = reports[2] == reports[0];
    outcome(
        gnm && sam,
        format!("rho = 0 reports identical to SGD modulo time fields: GNM {gnm}, SAM {sam}"),
    )
}

/// Standard deviation of `clamp(N(0, sigma^2), -c, c)`.
fn clamped_gaussian_std(sigma: f64, c: f64) -> f64 {
    let n = Normal::new(0.0, 1.0).unwrap();
    let a = c / sigma;
    let inside = 2.0 * n.cdf(a) - 1.0 - 2.0 * a * n.pdf(a);
    let tails = 2.0 * a * a * (1.0 - n.cdf(a));
    sigma * (inside + tails).sqrt()
}

/// Records the parameters each pass was evaluated at.
struct Recording<'a> {
    inner: ClassificationObjective<'a>,
    seen: std::sync::Mutex<Vec<ParamSet>>,
}

impl Objective for Recording<'_> {
    fn value(&self, p: &ParamSet) -> Result<f64> {
        self.seen.lock().unwrap().push(p.clone());
        self.inner.value(p)
    }

    fn value_and_grad(&self, p: &ParamSet) -> Result<(f64, Vec<Tensor>)> {
        self.seen.lock().unwrap().push(p.clone());
        self.inner.value_and_grad(p)
    }
}

fn criterion_4() -> Outcome {
    let nb = GaussianNeighborhood {
        radius: 0.005,
        sigma: 1.0 / 3.0,
        clamp: 1.0,
    };
    let n = 1_000_000;
    let mut rng = stream(4, Stream::Perturbation);
    let mut max_abs = 0.0f64;
    let (mut sum, mut sq) = (0.0, 0.0);
    for _ in 0..n {
        let e = sample_entry(&nb, &mut rng);
        max_abs = max_abs.max(e.abs());
        let u = e / nb.radius;
        sum += u;
        sq += u * u;
    }
    let mean = sum / n as f64;
    let std = (sq / n as f64 - mean * mean).sqrt();
    let oracle = clamped_gaussian_std(nb.sigma, nb.clamp);
    let rel = (std - oracle).abs() / oracle;

    // same seed, two unrelated batches: the perturbed points must coincide
    let cfg = desk();
    let data = synth_dataset(&cfg.data).unwrap();
    let model = ModelState::init(cfg.model_config(), cfg.seed).unwrap();
    let (xa, ya) = gather(&data.train_x, &data.train_y, &(0..64).collect::<Vec<_>>());
    let (xb, yb) = gather(&data.test_x, &data.test_y, &(100..164).collect::<Vec<_>>());
    let mut eps_bits = Vec::new();
    for (x, y) in [(xa, ya), (xb, yb)] {
        let rec = Recording {
            inner: ClassificationObjective::new(&model, x, y),
            seen: Default::default(),
        };
        let mut p = model.trainable.clone();
        let mut o = cfg.optim.clone();
        o.kind = OptimizerKind::Gnm;
        let mut counter = PassCounter::default();
        gnm_step(&mut p, &rec, &o, StepClock::new(0, 1), &mut stream(9, Stream::Perturbation), &mut counter).unwrap();
        let seen = rec.seen.into_inner().unwrap();
        let bits: Vec<u64> = seen[0].flatten().iter().map(|v| v.to_bits()).collect();
        eps_bits.push(bits);
    }
    let independent = eps_bits[0] == eps_bits[1];
    outcome(
        max_abs <= 0.005 && rel < 0.02 && independent,
        format!(
            "max |eps| = {max_abs:.6} (<= 0.005); std(eps/rho) = {std:.4} vs clamped-Gaussian {oracle:.4} ({:.2}% off); draws batch-independent: {independent}",
            100.0 * rel
        ),
    )
}

fn criterion_5() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut ok = 0;
    for trial in 0..50 {
        let (model, x, y, weights, _) = random_problem(&mut rng, trial % 5 == 0);
        let obj = ClassificationObjective::new(&model, x, y).with_weights(weights);
        let nb = GaussianNeighborhood {
            radius: rng.random_range(0.001..0.5),
            sigma: 1.0 / 3.0,
            clamp: 1.0,
        };
        let s = neighborhood_loss_stats(&model.trainable, &obj, &nb, 32, &mut stream(trial, Stream::Perturbation)).unwrap();
        ok += usize::from(s.mean <= s.max && s.evaluated == 32);
    }
    outcome(ok == 50, format!("sampled mean <= max in {ok}/50 configurations (32 samples each)"))
}

struct Pair {
    sgd: TrainedRun,
    gnm: TrainedRun,
}

fn train_pairs() -> Vec<Pair> {
    (0..SEEDS)
        .map(|seed| {
            let run = |kind| {
                let mut cfg = desk().with_seed(seed);
                cfg.optim.kind = kind;
                train(&cfg).unwrap()
            };
            Pair {
                sgd: run(OptimizerKind::Sgd),
                gnm: run(OptimizerKind::Gnm),
            }
        })
        .collect()
}

fn final_acc(r: &TrainedRun) -> (f64, f64) {
    let a = r.report.summary.final_accuracy.as_ref().unwrap();
    (a.overall, a.tail.unwrap())
}

fn criterion_6(pairs: &[Pair]) -> Outcome {
    let mut tail_sgd: Vec<f64> = pairs.iter().map(|p| final_acc(&p.sgd).1).collect();
    let mut tail_gnm: Vec<f64> = pairs.iter().map(|p| final_acc(&p.gnm).1).collect();
    let wins = pairs.iter().filter(|p| final_acc(&p.gnm).0 >= final_acc(&p.sgd).0).count();
    let (ms, mg) = (median(&mut tail_sgd), median(&mut tail_gnm));
    let mean_gap: f64 =
        pairs.iter().map(|p| final_acc(&p.gnm).0 - final_acc(&p.sgd).0).sum::<f64>() / pairs.len() as f64;
    outcome(
        mg >= ms && wins >= 7,
        format!(
            "median tail acc GNM {mg:.3} vs SGD {ms:.3}; GNM overall >= SGD in {wins}/{SEEDS} seeds (mean gap {:+.2} pts)",
            100.0 * mean_gap
        ),
    )
}

fn tail_at(r: &TrainedRun, epoch: usize) -> f64 {
    r.report.epochs[epoch - 1].accuracy.tail.unwrap()
}

fn criterion_7(pairs: &[Pair]) -> Outcome {
    let cfg = desk();
    let up = |r: &TrainedRun| tail_at(r, cfg.t2) >= tail_at(r, cfg.t1);
    let gnm = pairs.iter().filter(|p| up(&p.gnm)).count();
    let sgd = pairs.iter().filter(|p| up(&p.sgd)).count();
    outcome(
        gnm >= 8 && sgd >= 8,
        format!("tail acc at epoch T2 >= at T1 in {gnm}/{SEEDS} GNM runs and {sgd}/{SEEDS} SGD runs"),
    )
}

fn criterion_8(pairs: &[Pair]) -> Outcome {
    let mut flatter = 0;
    let mut centers_exact = true;
    let mut scores = Vec::new();
    for p in pairs {
        let mut score = |r: &TrainedRun| {
            let cfg = &r.report.config;
            let grid = landscape_for(cfg, &r.dataset, &r.model).unwrap();
            let (x, y) = r.dataset.balanced_train_subset(cfg.landscape.per_class, cfg.seed);
            let obj = training_objective(cfg, &r.dataset.counts, &r.model, x, y, cfg.t2).unwrap();
            centers_exact &= grid.center.to_bits() == obj.value(&r.model.trainable).unwrap().to_bits();
            flatness_score(&grid).unwrap()
        };
        let (s, g) = (score(&p.sgd), score(&p.gnm));
        flatter += usize::from(g <= s);
        scores.push(g - s);
    }
    outcome(
        flatter >= 7 && centers_exact,
        format!(
            "flatness GNM <= SGD in {flatter}/{SEEDS} seeds (median GNM - SGD {:+.4}); grid centers equal training loss bitwise: {centers_exact}",
            median(&mut scores)
        ),
    )
}

fn group_objective<'a>(model: &'a ModelState, x: &Tensor, y: &[usize], keep: &[usize]) -> Option<ClassificationObjective<'a>> {
    let idx: Vec<usize> = (0..y.len()).filter(|&i| keep.contains(&y[i])).collect();
    if idx.is_empty() {
        return None;
    }
    let (gx, gy) = gather(x, y, &idx);
    Some(ClassificationObjective::new(model, gx, gy).scaled(idx.len() as f64 / y.len() as f64))
}

fn criterion_9() -> Outcome {
    let mut wins = 0;
    let mut empty_tail = 0;
    let mut wins_nonempty = 0;
    for trial in 0..50 {
        let cfg = desk().with_seed(1000 + trial);
        let data: Dataset = synth_dataset(&cfg.data).unwrap();
        let split = class_split(&cfg, &data.counts).unwrap();
        let model = ModelState::init(cfg.model_config(), cfg.seed).unwrap();
        let mut idx: Vec<usize> = (0..data.train_len()).collect();
        idx.shuffle(&mut stream(cfg.seed, Stream::Shuffle));
        let (x, y) = gather(&data.train_x, &data.train_y, &idx[..cfg.batch]);
        let full = ClassificationObjective::new(&model, x.clone(), y.clone());
        let head = group_objective(&model, &x, &y, &split.head);
        let tail = group_objective(&model, &x, &y, &split.tail);
        empty_tail += usize::from(tail.is_none());
        let groups: Vec<Option<&dyn Objective>> = vec![
            head.as_ref().map(|o| o as &dyn Objective),
            tail.as_ref().map(|o| o as &dyn Objective),
        ];
        let norms = gradient_group_norms(&model.trainable, &full, &groups).unwrap();
        let win = norms.groups[0].norm > norms.groups[1].norm;
        wins += usize::from(win);
        wins_nonempty += usize::from(win && !norms.groups[1].empty);
    }
    outcome(
        wins >= 45,
        format!(
            "head gradient norm > tail at init in {wins}/50 batches; {wins_nonempty}/{} among batches with a tail sample",
            50 - empty_tail
        ),
    )
}

fn criterion_10() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = desk().with_seed(3);
    cfg.t1 = 4;
    cfg.t2 = 6;
    cfg.out_dir = Some(dir.path().join("a"));
    let a = train(&cfg).unwrap();
    cfg.out_dir = Some(dir.path().join("b"));
    let b = train(&cfg).unwrap();
    let same = a.report.masked(true) == b.report.masked(true);
    let file_a = std::fs::read_to_string(dir.path().join("a/report.jsonl")).unwrap();
    let file_b = std::fs::read_to_string(dir.path().join("b/report.jsonl")).unwrap();
    let files_same = gnm_lab::harness::RunReport::from_jsonl(&file_a).unwrap().masked(true)
        == gnm_lab::harness::RunReport::from_jsonl(&file_b).unwrap().masked(true);

    let (params, seed) = load_checkpoint(File::open(dir.path().join("a").join(CHECKPOINT_FILE)).unwrap()).unwrap();
    let mut model = ModelState::init(cfg.model_config(), seed).unwrap();
    restore_into(&mut model.trainable, &params).unwrap();
    let split = class_split(&cfg, &a.dataset.counts).unwrap();
    let acc = evaluate(&model, &model.trainable, &a.dataset.test_x, &a.dataset.test_y, &split).unwrap();
    let want = a.report.summary.final_accuracy.as_ref().unwrap();
    let bits = |g: &gnm_lab::harness::GroupAccuracy| {
        [Some(g.overall), g.head, g.med, g.tail].map(|v| v.map(f64::to_bits))
    };
    let round_trip = bits(&acc) == bits(want);
    outcome(
        same && files_same && round_trip,
        format!("same-seed reports identical modulo time: {same} (files: {files_same}); checkpoint reload reproduces test accuracy bitwise: {round_trip}"),
    )
}

const REPORTED_ONLY: [usize; 4] = [6, 7, 8, 9];

fn main() -> ExitCode {
    let mut failed = Vec::new();
    let mut report = |n: usize, name: &str, o: Outcome| {
        let note = if REPORTED_ONLY.contains(&n) { " (reported, non-gating)" } else { "" };
        println!("[{}] criterion {n:>2} {name}{note}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        if !o.pass && !REPORTED_ONLY.contains(&n) {
            failed.push(n);
        }
    };
    report(1, "gradient correctness", criterion_1());
    report(2, "pass accounting", criterion_2());
    report(3, "degeneration at rho = 0", criterion_3());
    report(4, "perturbation contract", criterion_4());
    report(5, "neighborhood mean <= max", criterion_5());
    let started = Instant::now();
    let pairs = train_pairs();
    let secs = started.elapsed().as_secs_f64();
    report(6, "long-tail direction", criterion_6(&pairs));
    report(7, "DRW stage effect", criterion_7(&pairs));
    report(8, "landscape flatness", criterion_8(&pairs));
    println!("           ({} desk runs for criteria 6-8 took {secs:.1}s)", 2 * SEEDS);
    report(9, "head gradient dominance", criterion_9());
    report(10, "determinism and round-trip", criterion_10());
    if failed.is_empty() {
        ExitCode::SUCCESS
    } else {
        println!("failed gating criteria: {failed:?}");
        ExitCode::FAILURE
    }
}
