//! Classification loss of a model on one batch, as an optimizer objective.

use crate::autodiff::{Graph, ParamSet, Tensor};
use crate::error::Result;
use crate::losses::{cross_entropy, prior_offsets, ClassCounts, ClassWeights};
use crate::models::ModelState;
use crate::optim::Objective;

/// Weighted cross-entropy of `model` on `(x, labels)` as a function of the
/// model's trainable parameters. Frozen weights come from `model`.
#[derive(Clone, Debug)]
pub struct ClassificationObjective<'a> {
    model: &'a ModelState,
    x: Tensor,
    labels: Vec<usize>,
    weights: ClassWeights,
    offsets: Option<Tensor>,
    scale: f64,
}

impl<'a> ClassificationObjective<'a> {
    pub fn new(model: &'a ModelState, x: Tensor, labels: Vec<usize>) -> Self {
        let classes = model.config.classes();
        Self {
            model,
            x,
            labels,
            weights: ClassWeights::ones(classes),
            offsets: None,
            scale: 1.0,
        }
    }

    pub fn with_weights(mut self, weights: ClassWeights) -> Self {
        self.weights = weights;
        self
    }

    /// Add the balanced-softmax log prior to the logits before the loss.
    pub fn with_balanced_softmax(mut self, counts: &ClassCounts) -> Self {
        self.offsets = Some(prior_offsets(self.labels.len(), counts));
        self
    }

    /// Multiply the loss by `scale`, e.g. `|group| / |batch|` to get a group's
    /// share of a batch-mean loss.
    pub fn scaled(mut self, scale: f64) -> Self {
        self.scale = scale;
        self
    }

    pub fn batch_len(&self) -> usize {
        self.labels.len()
    }

    fn eval(&self, params: &ParamSet, with_grad: bool) -> Result<(f64, Vec<Tensor>)> {
        let mut g = Graph::new();
        let vars = if with_grad { params.bind(&mut g) } else { params.bind_constant(&mut g) };
        let mut logits = self.model.logits(&mut g, &vars, &self.x)?;
        if let Some(off) = &self.offsets {
            let o = g.constant(off.clone());
            logits = g.add(logits, o)?;
        }
        let mut loss = cross_entropy(&mut g, logits, &self.labels, Some(&self.weights))?;
        if self.scale != 1.0 {
            loss = g.scale(loss, self.scale)?;
        }
        let value = g.value(loss).item();
        if !with_grad {
            return Ok((value, Vec::new()));
        }
        g.backward(loss)?;
        let grads = vars
            .iter()
            .zip(params.tensors())
            .map(|(&v, t)| g.grad(v).unwrap_or_else(|| Tensor::zeros(t.shape())))
            .collect();
        Ok((value, grads))
    }
}

impl Objective for ClassificationObjective<'_> {
    fn value(&self, params: &ParamSet) -> Result<f64> {
        self.eval(params, false).map(|(v, _)| v)
    }

    fn value_and_grad(&self, params: &ParamSet) -> Result<(f64, Vec<Tensor>)> {
        self.eval(params, true)
    }
}
