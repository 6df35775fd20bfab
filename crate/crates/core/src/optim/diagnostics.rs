use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::GaussianNeighborhood;
use super::objective::Objective;
use super::perturb::{sample_gaussian_perturbation, Perturbation};
use crate::autodiff::{ParamSet, Tensor};
use crate::error::{Error, Result};

/// Loss statistics over sampled neighbors `theta + eps`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NeighborhoodStats {
    pub mean: f64,
    pub max: f64,
    pub min: f64,
    /// Samples that produced a finite loss.
    pub evaluated: usize,
    /// Indices of samples dropped for a non-finite loss.
    pub excluded: Vec<usize>,
}

/// Draw `n_samples` perturbations from `nb` and summarize the loss at each
/// displaced point. Forward passes only; `params` is not modified.
pub fn neighborhood_loss_stats<R: Rng + ?Sized>(
    params: &ParamSet,
    obj: &dyn Objective,
    nb: &GaussianNeighborhood,
    n_samples: usize,
    rng: &mut R,
) -> Result<NeighborhoodStats> {
    if n_samples == 0 {
        return Err(Error::invalid("n_samples", "must be >= 1"));
    }
    let shapes = params.shapes();
    let draws: Vec<Perturbation> = (0..n_samples)
        .map(|_| sample_gaussian_perturbation(&shapes, nb, rng))
        .collect();
    neighborhood_loss_stats_with(params, obj, &draws)
}

/// Same as [`neighborhood_loss_stats`] over caller-supplied perturbations.
pub fn neighborhood_loss_stats_with(params: &ParamSet, obj: &dyn Objective, draws: &[Perturbation]) -> Result<NeighborhoodStats> {
    if draws.is_empty() {
        return Err(Error::invalid("n_samples", "must be >= 1"));
    }
    for d in draws {
        d.check(params)?;
    }
    let losses: Vec<f64> = draws
        .par_iter()
        .map(|eps| obj.value(&params.displaced(eps.tensors(), 1.0)))
        .collect::<Result<_>>()?;

    let mut excluded = Vec::new();
    let mut sum = 0.0;
    let mut max = f64::NEG_INFINITY;
    let mut min = f64::INFINITY;
    for (i, &l) in losses.iter().enumerate() {
        if !l.is_finite() {
            excluded.push(i);
            continue;
        }
        sum += l;
        max = max.max(l);
        min = min.min(l);
    }
    let evaluated = losses.len() - excluded.len();
    if evaluated == 0 {
        return Err(Error::invalid("neighborhood", "every sampled loss was non-finite"));
    }
    // rounding in the sum can push the quotient one ulp past the extremes
    let mean = (sum / evaluated as f64).clamp(min, max);
    Ok(NeighborhoodStats {
        mean,
        max,
        min,
        evaluated,
        excluded,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupNorm {
    pub norm: f64,
    /// The group had no samples; `norm` is reported as zero.
    pub empty: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupGradNorms {
    pub full: f64,
    pub groups: Vec<GroupNorm>,
}

fn grad_norm(grads: &[Tensor]) -> f64 {
    grads.iter().map(Tensor::sq_norm).sum::<f64>().sqrt()
}

/// L2 norm of the gradient of each group's share of the batch loss, next to
/// the full-batch gradient norm. `None` marks an empty group.
pub fn gradient_group_norms(params: &ParamSet, full: &dyn Objective, groups: &[Option<&dyn Objective>]) -> Result<GroupGradNorms> {
    let (_, g) = full.value_and_grad(params)?;
    let groups = groups
        .iter()
        .map(|grp| match grp {
            None => Ok(GroupNorm { norm: 0.0, empty: true }),
            Some(obj) => {
                let (_, g) = obj.value_and_grad(params)?;
                Ok(GroupNorm {
                    norm: grad_norm(&g),
                    empty: false,
                })
            }
        })
        .collect::<Result<_>>()?;
    Ok(GroupGradNorms {
        full: grad_norm(&g),
        groups,
    })
}
