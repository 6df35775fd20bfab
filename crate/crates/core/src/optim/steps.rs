use std::time::Instant;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{OptimizerConfig, OptimizerKind, StepClock};
use super::objective::Objective;
use super::perturb::{sample_gaussian_perturbation, Perturbation};
use crate::autodiff::{ParamSet, Tensor};
use crate::error::{Error, Result};
use crate::rng::{self, Stream};

/// Forward/backward pass counts and step wall time.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PassCounter {
    pub forward: u64,
    pub backward: u64,
    pub steps: u64,
    pub total_ns: u64,
    pub last_step_ns: u64,
}

impl PassCounter {
    fn value_and_grad(&mut self, obj: &dyn Objective, params: &ParamSet) -> Result<(f64, Vec<Tensor>)> {
        self.forward += 1;
        self.backward += 1;
        obj.value_and_grad(params)
    }

    fn finish(&mut self, started: Instant) {
        let ns = started.elapsed().as_nanos() as u64;
        self.steps += 1;
        self.last_step_ns = ns;
        self.total_ns += ns;
    }

    pub fn mean_step_ns(&self) -> f64 {
        if self.steps == 0 {
            0.0
        } else {
            self.total_ns as f64 / self.steps as f64
        }
    }

    /// Counts accumulated since `earlier`.
    pub fn since(&self, earlier: &PassCounter) -> PassCounter {
        PassCounter {
            forward: self.forward - earlier.forward,
            backward: self.backward - earlier.backward,
            steps: self.steps - earlier.steps,
            total_ns: self.total_ns - earlier.total_ns,
            last_step_ns: self.last_step_ns,
        }
    }
}

fn finite(loss: f64, clock: StepClock) -> Result<f64> {
    if loss.is_finite() {
        Ok(loss)
    } else {
        Err(Error::NonFiniteLoss { step: clock.step })
    }
}

/// `theta <- theta - lr * (grad + weight_decay * theta)`.
fn descend(params: &mut ParamSet, grads: &[Tensor], lr: f64, weight_decay: f64) {
    for (p, g) in params.tensors_mut().iter_mut().zip(grads) {
        for (pv, gv) in p.data_mut().iter_mut().zip(g.data()) {
            *pv -= lr * (gv + weight_decay * *pv);
        }
    }
}

/// Gradient at `params + delta`, evaluated on a displaced copy so `params`
/// itself is never written and needs no restoring.
fn grad_at_displaced(
    params: &ParamSet,
    delta: &[Tensor],
    obj: &dyn Objective,
    counter: &mut PassCounter,
) -> Result<(f64, Vec<Tensor>)> {
    let shifted = params.displaced(delta, 1.0);
    counter.value_and_grad(obj, &shifted)
}

/// Plain gradient step. One forward and one backward pass.
pub fn sgd_step(
    params: &mut ParamSet,
    obj: &dyn Objective,
    cfg: &OptimizerConfig,
    clock: StepClock,
    counter: &mut PassCounter,
) -> Result<f64> {
    let started = Instant::now();
    let (loss, grads) = counter.value_and_grad(obj, params)?;
    let loss = finite(loss, clock)?;
    descend(params, &grads, cfg.learning_rate(clock), cfg.weight_decay);
    counter.finish(started);
    Ok(loss)
}

/// Sharpness-aware step: ascend to `theta + rho * g / ||g||`, descend from
/// `theta` with the gradient found there. Two forward and two backward passes.
///
/// A zero radius is the plain gradient step. A zero first-pass gradient skips
/// the ascent and reuses that gradient. Returns the loss at `theta`.
pub fn sam_step(
    params: &mut ParamSet,
    obj: &dyn Objective,
    cfg: &OptimizerConfig,
    clock: StepClock,
    counter: &mut PassCounter,
) -> Result<f64> {
    if cfg.rho_sam == 0.0 {
        return sgd_step(params, obj, cfg, clock, counter);
    }
    let started = Instant::now();
    let (loss, grads) = counter.value_and_grad(obj, params)?;
    let loss = finite(loss, clock)?;
    let norm = grads.iter().map(Tensor::sq_norm).sum::<f64>().sqrt();
    let grads = if norm > 0.0 {
        let ascent: Vec<Tensor> = grads.iter().map(|g| g.map(|v| cfg.rho_sam * v / norm)).collect();
        let (l2, g2) = grad_at_displaced(params, &ascent, obj, counter)?;
        finite(l2, clock)?;
        g2
    } else {
        grads
    };
    descend(params, &grads, cfg.learning_rate(clock), cfg.weight_decay);
    counter.finish(started);
    Ok(loss)
}

/// Gaussian-neighborhood step with an explicit perturbation: descend from
/// `theta` with the gradient at `theta + eps`. One forward and one backward pass.
/// Returns the loss at `theta + eps`.
pub fn gnm_step_with(
    params: &mut ParamSet,
    obj: &dyn Objective,
    cfg: &OptimizerConfig,
    clock: StepClock,
    eps: &Perturbation,
    counter: &mut PassCounter,
) -> Result<f64> {
    eps.check(params)?;
    let started = Instant::now();
    let (loss, grads) = grad_at_displaced(params, eps.tensors(), obj, counter)?;
    let loss = finite(loss, clock)?;
    descend(params, &grads, cfg.learning_rate(clock), cfg.weight_decay);
    counter.finish(started);
    Ok(loss)
}

/// Gaussian-neighborhood step drawing its perturbation from `rng`, which
/// should be a stream reserved for perturbations.
pub fn gnm_step<R: Rng + ?Sized>(
    params: &mut ParamSet,
    obj: &dyn Objective,
    cfg: &OptimizerConfig,
    clock: StepClock,
    rng: &mut R,
    counter: &mut PassCounter,
) -> Result<f64> {
    let started = Instant::now();
    let eps = sample_gaussian_perturbation(&params.shapes(), &cfg.gnm_neighborhood(), rng);
    let sample_ns = started.elapsed().as_nanos() as u64;
    let loss = gnm_step_with(params, obj, cfg, clock, &eps, counter)?;
    counter.last_step_ns += sample_ns;
    counter.total_ns += sample_ns;
    Ok(loss)
}

/// Dispatches to the configured step and owns the perturbation stream.
#[derive(Clone, Debug)]
pub struct Optimizer {
    pub cfg: OptimizerConfig,
    pub counter: PassCounter,
    total_steps: usize,
    perturb_rng: ChaCha8Rng,
}

impl Optimizer {
    pub fn new(cfg: OptimizerConfig, total_steps: usize, seed: u64) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            cfg,
            counter: PassCounter::default(),
            total_steps,
            perturb_rng: rng::stream(seed, Stream::Perturbation),
        })
    }

    pub fn total_steps(&self) -> usize {
        self.total_steps
    }

    pub fn step(&mut self, params: &mut ParamSet, obj: &dyn Objective, step: usize) -> Result<f64> {
        let clock = StepClock::new(step, self.total_steps);
        match self.cfg.kind {
            OptimizerKind::Sgd => sgd_step(params, obj, &self.cfg, clock, &mut self.counter),
            OptimizerKind::Sam => sam_step(params, obj, &self.cfg, clock, &mut self.counter),
            OptimizerKind::Gnm => gnm_step(params, obj, &self.cfg, clock, &mut self.perturb_rng, &mut self.counter),
        }
    }
}
