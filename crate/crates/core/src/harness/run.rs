//! Two-stage long-tailed training: unweighted epochs `1..=t1`, then
//! class-reweighted epochs `t1+1..=t2`, with the configured optimizer active
//! throughout and a balanced-test evaluation after every epoch.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;

use super::checkpoint::save_checkpoint;
use super::config::{LossKind, RunConfig};
use super::report::{
    config_line, epoch_line, summary_line, weights_hash, EpochRecord, GroupAccuracy, LandscapeSummary, RunReport,
    RunStatus, Summary,
};
use crate::autodiff::{ParamSet, Tensor};
use crate::data::{gather, split_classes, synth_dataset, ClassSplit, Dataset};
use crate::error::{Error, Result};
use crate::landscape::{filter_normalized_directions, flatness_score, landscape_grid, LandscapeGrid};
use crate::losses::{drw_weights, ClassCounts, ClassWeights};
use crate::models::{argmax_rows, ModelState};
use crate::optim::{Optimizer, PassCounter};
use crate::rng::{stream, Stream};
use crate::task::ClassificationObjective;

pub const REPORT_FILE: &str = "report.jsonl";
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";

/// A finished (or aborted) run with the trained model and its data.
#[derive(Clone, Debug)]
pub struct TrainedRun {
    pub report: RunReport,
    pub model: ModelState,
    pub dataset: Dataset,
    pub landscape: Option<LandscapeGrid>,
}

/// Class weights for 1-based `epoch`: all ones through `t1`, DRW after.
pub fn stage_weights(cfg: &RunConfig, counts: &ClassCounts, epoch: usize) -> Result<ClassWeights> {
    drw_weights(counts, cfg.drw_beta, epoch.saturating_sub(1), cfg.t1)
}

pub fn class_split(cfg: &RunConfig, counts: &ClassCounts) -> Result<ClassSplit> {
    split_classes(counts, cfg.head_threshold, cfg.tail_threshold)
}

/// The loss minimized at `epoch`, on one batch.
pub fn training_objective<'a>(
    cfg: &RunConfig,
    counts: &ClassCounts,
    model: &'a ModelState,
    x: Tensor,
    y: Vec<usize>,
    epoch: usize,
) -> Result<ClassificationObjective<'a>> {
    let obj = ClassificationObjective::new(model, x, y).with_weights(stage_weights(cfg, counts, epoch)?);
    Ok(match cfg.loss {
        LossKind::Ce => obj,
        LossKind::CeBalancedSoftmax => obj.with_balanced_softmax(counts),
    })
}

/// Mean per-class recall over each group, from raw logits.
pub fn evaluate(model: &ModelState, params: &ParamSet, x: &Tensor, y: &[usize], split: &ClassSplit) -> Result<GroupAccuracy> {
    let classes = model.config.classes();
    let pred = argmax_rows(&model.logits_with(params, x)?);
    let mut hit = vec![0usize; classes];
    let mut seen = vec![0usize; classes];
    for (&p, &t) in pred.iter().zip(y) {
        seen[t] += 1;
        if p == t {
            hit[t] += 1;
        }
    }
    let recall = |c: usize| if seen[c] == 0 { 0.0 } else { hit[c] as f64 / seen[c] as f64 };
    let group = |cs: &[usize]| {
        if cs.is_empty() {
            None
        } else {
            Some(cs.iter().map(|&c| recall(c)).sum::<f64>() / cs.len() as f64)
        }
    };
    let all: Vec<usize> = (0..classes).collect();
    Ok(GroupAccuracy {
        overall: group(&all).unwrap_or(0.0),
        head: group(&split.head),
        med: group(&split.med),
        tail: group(&split.tail),
    })
}

/// Landscape of `model` on the fixed balanced evaluation batch, along
/// directions drawn from the run seed, under the final-epoch loss.
pub fn landscape_for(cfg: &RunConfig, dataset: &Dataset, model: &ModelState) -> Result<LandscapeGrid> {
    let (x, y) = dataset.balanced_train_subset(cfg.landscape.per_class, cfg.seed);
    let obj = training_objective(cfg, &dataset.counts, model, x, y, cfg.t2)?;
    let dirs = filter_normalized_directions(&model.trainable, &mut stream(cfg.seed, Stream::Landscape))?;
    let mut grid = landscape_grid(
        &model.trainable,
        &obj,
        &dirs.d1,
        &dirs.d2,
        cfg.landscape.range,
        cfg.landscape.resolution,
    )?;
    grid.direction_seed = Some(cfg.seed);
    Ok(grid)
}

pub fn write_landscape_csv(grid: &LandscapeGrid, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    grid.write_csv(&mut w)?;
    w.flush()?;
    Ok(())
}

/// Appends report lines to `report.jsonl` as they are produced, so an aborted
/// run still leaves its completed epochs on disk.
struct ReportSink(Option<BufWriter<File>>);

impl ReportSink {
    fn open(cfg: &RunConfig) -> Result<Self> {
        match &cfg.out_dir {
            None => Ok(Self(None)),
            Some(dir) => {
                fs::create_dir_all(dir)?;
                Ok(Self(Some(BufWriter::new(File::create(dir.join(REPORT_FILE))?))))
            }
        }
    }

    fn line(&mut self, text: String) -> Result<()> {
        if let Some(w) = &mut self.0 {
            writeln!(w, "{text}")?;
            w.flush()?;
        }
        Ok(())
    }
}

fn summarize(
    status: RunStatus,
    epochs: &[EpochRecord],
    counts: &ClassCounts,
    counter: &PassCounter,
    wall_ns: u64,
    params: &ParamSet,
) -> Summary {
    Summary {
        status,
        epochs: epochs.len(),
        final_accuracy: epochs.last().map(|e| e.accuracy.clone()),
        train_counts: counts.as_slice().to_vec(),
        forward: counter.forward,
        backward: counter.backward,
        steps: counter.steps,
        mean_step_ns: counter.mean_step_ns(),
        wall_ns,
        params_checksum: format!("{:016x}", params.checksum()),
        landscape: None,
    }
}

/// Run the configured experiment and return the report with the trained
/// model. Files go to `cfg.out_dir` / `cfg.landscape_csv` / `cfg.dump_data`
/// when set.
pub fn train(cfg: &RunConfig) -> Result<TrainedRun> {
    cfg.validate()?;
    let run_started = Instant::now();
    let mut spec = cfg.data.clone();
    spec.seed = cfg.seed;
    let dataset = synth_dataset(&spec)?;
    if let Some(path) = &cfg.dump_data {
        let mut w = BufWriter::new(File::create(path)?);
        dataset.write_text(&mut w)?;
        w.flush()?;
    }
    let split = class_split(cfg, &dataset.counts)?;
    let mut model = ModelState::init(cfg.model_config(), cfg.seed)?;
    let mut params = model.trainable.clone();

    let n = dataset.train_len();
    let steps_per_epoch = n.div_ceil(cfg.batch);
    let mut opt = Optimizer::new(cfg.optim.clone(), cfg.t2 * steps_per_epoch, cfg.seed)?;
    let mut shuffle = stream(cfg.seed, Stream::Shuffle);
    let mut order: Vec<usize> = (0..n).collect();

    let mut sink = ReportSink::open(cfg)?;
    sink.line(config_line(cfg)?)?;
    let mut epochs = Vec::with_capacity(cfg.t2);
    let mut abort = None;

    'epochs: for epoch in 1..=cfg.t2 {
        let started = Instant::now();
        let before = opt.counter;
        let weights = stage_weights(cfg, &dataset.counts, epoch)?;
        order.shuffle(&mut shuffle);
        let mut loss_sum = 0.0;
        for (b, idx) in order.chunks(cfg.batch).enumerate() {
            let (x, y) = gather(&dataset.train_x, &dataset.train_y, idx);
            let obj = training_objective(cfg, &dataset.counts, &model, x, y, epoch)?;
            match opt.step(&mut params, &obj, (epoch - 1) * steps_per_epoch + b) {
                Ok(loss) => loss_sum += loss,
                Err(e @ Error::NonFiniteLoss { .. }) => {
                    abort = Some(format!("epoch {epoch}: {e}"));
                    break 'epochs;
                }
                Err(e) => return Err(e),
            }
        }
        let accuracy = evaluate(&model, &params, &dataset.test_x, &dataset.test_y, &split)?;
        let spent = opt.counter.since(&before);
        let rec = EpochRecord {
            epoch,
            stage: if epoch <= cfg.t1 { 1 } else { 2 },
            train_loss: loss_sum / steps_per_epoch as f64,
            weights_all_ones: weights.is_all_ones(),
            weights_hash: weights_hash(weights.as_slice()),
            accuracy,
            forward: spent.forward,
            backward: spent.backward,
            steps: spent.steps,
            wall_ns: started.elapsed().as_nanos() as u64,
        };
        sink.line(epoch_line(&rec)?)?;
        epochs.push(rec);
    }

    model.trainable = params;
    let status = match abort {
        Some(reason) => RunStatus::Aborted { reason },
        None => RunStatus::Completed,
    };
    let completed = status == RunStatus::Completed;
    let mut summary = summarize(
        status,
        &epochs,
        &dataset.counts,
        &opt.counter,
        0,
        &model.trainable,
    );

    let mut landscape = None;
    if completed {
        if let Some(path) = &cfg.landscape_csv {
            let grid = landscape_for(cfg, &dataset, &model)?;
            write_landscape_csv(&grid, path)?;
            summary.landscape = Some(LandscapeSummary {
                flatness: flatness_score(&grid).ok(),
                center: grid.center,
                resolution: grid.resolution,
                range: grid.range,
                flagged: grid.flagged.len(),
            });
            landscape = Some(grid);
        }
        if let Some(dir) = &cfg.out_dir {
            let mut w = BufWriter::new(File::create(dir.join(CHECKPOINT_FILE))?);
            save_checkpoint(&model.trainable, cfg.seed, &mut w)?;
        }
    }
    summary.wall_ns = run_started.elapsed().as_nanos() as u64;
    sink.line(summary_line(&summary)?)?;

    Ok(TrainedRun {
        report: RunReport {
            config: cfg.clone(),
            epochs,
            summary,
        },
        model,
        dataset,
        landscape,
    })
}

/// [`train`] without the model; an aborted run is still `Ok`, marked in the
/// summary status.
pub fn run_experiment(cfg: &RunConfig) -> Result<RunReport> {
    train(cfg).map(|r| r.report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::parse_config;

    fn tiny(extra: &str) -> RunConfig {
        parse_config(&format!(
            "data.classes = 3\ndata.n_max = 40\ndata.imbalance_ratio = 10\ndata.dim = 4\n\
             data.test_per_class = 10\nmodel.hidden = 8\ntrain.batch = 16\ntrain.t1 = 2\ntrain.t2 = 3\n\
             split.head = 20\nsplit.tail = 4\n{extra}"
        ))
        .unwrap()
    }

    #[test]
    fn stage_boundary_in_report() {
        let r = run_experiment(&tiny("")).unwrap();
        assert!(r.is_completed());
        let stages: Vec<u8> = r.epochs.iter().map(|e| e.stage).collect();
        assert_eq!(stages, vec![1, 1, 2]);
        let ones: Vec<bool> = r.epochs.iter().map(|e| e.weights_all_ones).collect();
        assert_eq!(ones, vec![true, true, false]);
        assert_eq!(r.epochs[0].weights_hash, r.epochs[1].weights_hash);
        assert_ne!(r.epochs[1].weights_hash, r.epochs[2].weights_hash);
    }

    #[test]
    fn t1_equals_t2_never_reweights() {
        let r = run_experiment(&tiny("train.t1 = 3")).unwrap();
        assert!(r.epochs.iter().all(|e| e.weights_all_ones && e.stage == 1));
    }

    #[test]
    fn t1_zero_reweights_everything() {
        let r = run_experiment(&tiny("train.t1 = 0")).unwrap();
        assert!(r.epochs.iter().all(|e| !e.weights_all_ones && e.stage == 2));
    }

    #[test]
    fn zero_epochs_is_empty_run() {
        let r = run_experiment(&tiny("train.t1 = 0\ntrain.t2 = 0")).unwrap();
        assert!(r.epochs.is_empty());
        assert!(r.summary.final_accuracy.is_none());
    }

    #[test]
    fn repeat_runs_match_modulo_time() {
        let a = run_experiment(&tiny("seed = 5")).unwrap();
        let b = run_experiment(&tiny("seed = 5")).unwrap();
        assert_eq!(a.masked(true), b.masked(true));
        let c = run_experiment(&tiny("seed = 6")).unwrap();
        assert_ne!(a.masked(true), c.masked(true));
    }

    #[test]
    fn divergence_aborts_with_marker() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = tiny("optim.lr = 1e200\noptim.kind = sgd\noptim.schedule = constant");
        cfg.out_dir = Some(dir.path().to_path_buf());
        let r = run_experiment(&cfg).unwrap();
        assert!(matches!(r.summary.status, RunStatus::Aborted { .. }), "{:?}", r.summary.status);
        let text = fs::read_to_string(dir.path().join(REPORT_FILE)).unwrap();
        let back = RunReport::from_jsonl(&text).unwrap();
        assert_eq!(back.summary.status, r.summary.status);
        assert!(!dir.path().join(CHECKPOINT_FILE).exists());
    }

    #[test]
    fn evaluate_groups() {
        let mut cfg = tiny("");
        cfg.data.std = 0.0;
        let data = synth_dataset(&cfg.data).unwrap();
        let split = class_split(&cfg, &data.counts).unwrap();
        assert_eq!(split.head, vec![0]);
        assert_eq!(split.tail, vec![2]);
        let model = ModelState::init(cfg.model_config(), 0).unwrap();
        let acc = evaluate(&model, &model.trainable, &data.test_x, &data.test_y, &split).unwrap();
        for g in [acc.head, acc.med, acc.tail].into_iter().flatten() {
            assert!((0.0..=1.0).contains(&g));
        }
        let mean = (acc.head.unwrap() + acc.med.unwrap() + acc.tail.unwrap()) / 3.0;
        assert!((acc.overall - mean).abs() < 1e-12);
    }
}
