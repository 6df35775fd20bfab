//! Side-by-side comparison of run reports.

use std::fmt;

use super::report::{GroupAccuracy, RunReport};
use crate::error::{Error, Result};
use crate::optim::OptimizerKind;

#[derive(Clone, Debug, PartialEq)]
pub struct ComparisonRow {
    pub label: String,
    pub optimizer: OptimizerKind,
    pub seed: u64,
    pub completed: bool,
    pub accuracy: Option<GroupAccuracy>,
    /// Accuracy minus the first row's, per group.
    pub delta: Option<GroupAccuracy>,
    pub forward: u64,
    pub backward: u64,
    pub steps: u64,
    pub mean_step_ns: f64,
    /// Mean step time relative to the first row.
    pub time_ratio: f64,
}

impl ComparisonRow {
    pub fn forward_per_step(&self) -> f64 {
        per_step(self.forward, self.steps)
    }

    pub fn backward_per_step(&self) -> f64 {
        per_step(self.backward, self.steps)
    }
}

fn per_step(n: u64, steps: u64) -> f64 {
    if steps == 0 {
        0.0
    } else {
        n as f64 / steps as f64
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Comparison {
    pub rows: Vec<ComparisonRow>,
    pub warnings: Vec<String>,
}

fn sub(a: Option<f64>, b: Option<f64>) -> Option<f64> {
    Some(a? - b?)
}

fn delta(a: &GroupAccuracy, base: &GroupAccuracy) -> GroupAccuracy {
    GroupAccuracy {
        overall: a.overall - base.overall,
        head: sub(a.head, base.head),
        med: sub(a.med, base.med),
        tail: sub(a.tail, base.tail),
    }
}

/// Compare labelled reports against the first one. Reports must share
/// training class counts; differing dataset specs or seeds only warn.
pub fn compare_runs(reports: &[(String, RunReport)]) -> Result<Comparison> {
    let (_, base) = reports.first().ok_or_else(|| Error::Report("nothing to compare".into()))?;
    let mut warnings = Vec::new();
    for (label, r) in &reports[1..] {
        if r.summary.train_counts != base.summary.train_counts {
            return Err(Error::Report(format!(
                "`{label}` has class counts {:?}, expected {:?}",
                r.summary.train_counts, base.summary.train_counts
            )));
        }
        let (mut a, mut b) = (r.config.data.clone(), base.config.data.clone());
        if a.seed != b.seed || r.config.seed != base.config.seed {
            warnings.push(format!("`{label}` uses seed {}, first report uses {}", r.config.seed, base.config.seed));
        }
        a.seed = 0;
        b.seed = 0;
        if a != b {
            warnings.push(format!("`{label}` was generated from a different dataset spec"));
        }
    }
    for (label, r) in reports {
        if !r.is_completed() {
            warnings.push(format!("`{label}` did not complete"));
        }
    }

    let base_acc = base.summary.final_accuracy.clone();
    let base_ns = base.summary.mean_step_ns;
    let rows = reports
        .iter()
        .map(|(label, r)| {
            let acc = r.summary.final_accuracy.clone();
            ComparisonRow {
                label: label.clone(),
                optimizer: r.config.optim.kind,
                seed: r.config.seed,
                completed: r.is_completed(),
                delta: match (&acc, &base_acc) {
                    (Some(a), Some(b)) => Some(delta(a, b)),
                    _ => None,
                },
                accuracy: acc,
                forward: r.summary.forward,
                backward: r.summary.backward,
                steps: r.summary.steps,
                mean_step_ns: r.summary.mean_step_ns,
                time_ratio: if base_ns > 0.0 { r.summary.mean_step_ns / base_ns } else { f64::NAN },
            }
        })
        .collect();
    Ok(Comparison { rows, warnings })
}

fn pct(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |v| format!("{:.2}", 100.0 * v))
}

fn signed_pct(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |v| format!("{:+.2}", 100.0 * v))
}

impl fmt::Display for Comparison {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for w in &self.warnings {
            writeln!(f, "warning: {w}")?;
        }
        writeln!(
            f,
            "{:<24} {:>4} {:>6} {:>7} {:>7} {:>7} {:>7} {:>8} {:>8} {:>6} {:>6} {:>12} {:>6}",
            "run", "opt", "seed", "overall", "head", "med", "tail", "d_overal", "d_tail", "fwd/s", "bwd/s", "ns/step", "ratio"
        )?;
        for r in &self.rows {
            let acc = r.accuracy.as_ref();
            let d = r.delta.as_ref();
            writeln!(
                f,
                "{:<24} {:>4} {:>6} {:>7} {:>7} {:>7} {:>7} {:>8} {:>8} {:>6.2} {:>6.2} {:>12.0} {:>6.3}",
                r.label,
                r.optimizer.to_string(),
                r.seed,
                pct(acc.map(|a| a.overall)),
                pct(acc.and_then(|a| a.head)),
                pct(acc.and_then(|a| a.med)),
                pct(acc.and_then(|a| a.tail)),
                signed_pct(d.map(|a| a.overall)),
                signed_pct(d.and_then(|a| a.tail)),
                r.forward_per_step(),
                r.backward_per_step(),
                r.mean_step_ns,
                r.time_ratio,
            )?;
        }
        Ok(())
    }
}
