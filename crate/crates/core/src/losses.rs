//! Classification losses, deferred re-weighting and balanced-softmax logit
//! adjustment.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Tensor, Var};
use crate::error::{Error, Result};

/// Per-class training-sample counts. Every count is at least one.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCounts(Vec<usize>);

impl ClassCounts {
    pub fn new(counts: Vec<usize>) -> Result<Self> {
        if counts.is_empty() {
            return Err(Error::invalid("counts", "need at least one class"));
        }
        if let Some(c) = counts.iter().position(|&n| n == 0) {
            return Err(Error::invalid("counts", format!("class {c} has no samples")));
        }
        Ok(Self(counts))
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn classes(&self) -> usize {
        self.0.len()
    }

    pub fn total(&self) -> usize {
        self.0.iter().sum()
    }
}

/// Positive per-class loss weights with mean one.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassWeights(Vec<f64>);

impl ClassWeights {
    pub fn ones(classes: usize) -> Self {
        Self(vec![1.0; classes])
    }

    /// Normalize raw positive weights to mean one.
    pub fn normalized(raw: Vec<f64>) -> Result<Self> {
        if raw.is_empty() || raw.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
            return Err(Error::invalid("weights", "must be finite and positive"));
        }
        let mean = raw.iter().sum::<f64>() / raw.len() as f64;
        Ok(Self(raw.into_iter().map(|w| w / mean).collect()))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn is_all_ones(&self) -> bool {
        self.0.iter().all(|&w| w == 1.0)
    }
}

/// Weighted softmax cross-entropy: mean over the batch of
/// `w[y] * (logsumexp(logits_i) - logits_i[y])`.
pub fn cross_entropy(g: &mut Graph, logits: Var, labels: &[usize], weights: Option<&ClassWeights>) -> Result<Var> {
    let classes = g
        .value(logits)
        .dims2()
        .map(|d| d.1)
        .ok_or_else(|| Error::ShapeMismatch {
            op: "cross-entropy",
            shapes: format!("{:?}", g.value(logits).shape()),
        })?;
    let w = match weights {
        Some(w) => w.as_slice().to_vec(),
        None => vec![1.0; classes],
    };
    g.cross_entropy(logits, labels.to_vec(), w)
}

/// Deferred re-weighting: all-ones before epoch `t1`, effective-number
/// weights `(1 - beta) / (1 - beta^n_c)` (normalized to mean one) from `t1` on.
pub fn drw_weights(counts: &ClassCounts, beta: f64, epoch: usize, t1: usize) -> Result<ClassWeights> {
    if !(0.0..1.0).contains(&beta) {
        return Err(Error::invalid("beta", format!("{beta} not in [0, 1)")));
    }
    if epoch < t1 {
        return Ok(ClassWeights::ones(counts.classes()));
    }
    let raw = counts
        .as_slice()
        .iter()
        .map(|&n| (1.0 - beta) / (1.0 - beta.powf(n as f64)))
        .collect();
    ClassWeights::normalized(raw)
}

/// Log-prior offsets `log(n_c / sum n)` added to logits by balanced softmax.
pub fn log_prior(counts: &ClassCounts) -> Vec<f64> {
    let total = counts.total() as f64;
    counts.as_slice().iter().map(|&n| (n as f64 / total).ln()).collect()
}

/// Training-time balanced-softmax logits. Evaluation keeps the raw logits.
pub fn balanced_softmax_adjust(logits: &Tensor, counts: &ClassCounts) -> Result<Tensor> {
    let (rows, cols) = logits.dims2().ok_or_else(|| Error::ShapeMismatch {
        op: "balanced-softmax",
        shapes: format!("{:?}", logits.shape()),
    })?;
    if cols != counts.classes() {
        return Err(Error::ShapeMismatch {
            op: "balanced-softmax",
            shapes: format!("{:?} vs {} classes", logits.shape(), cols),
        });
    }
    Tensor::matrix(rows, cols, add_prior_rows(logits.data(), &log_prior(counts)))
}

/// Constant `[rows x C]` offset tensor for adding the prior inside a graph.
pub fn prior_offsets(rows: usize, counts: &ClassCounts) -> Tensor {
    let prior = log_prior(counts);
    Tensor::matrix(rows, prior.len(), prior.iter().copied().cycle().take(rows * prior.len()).collect())
        .expect("prior shape")
}

fn add_prior_rows(data: &[f64], prior: &[f64]) -> Vec<f64> {
    data.iter()
        .zip(prior.iter().cycle())
        .map(|(z, p)| z + p)
        .collect()
}
