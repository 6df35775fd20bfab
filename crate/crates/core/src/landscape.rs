//! Two-dimensional loss-landscape slices along filter-normalized random
//! directions.

use std::io::Write;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamSet, Tensor};
use crate::error::{Error, Result};
use crate::optim::{Objective, Perturbation};

/// A pair of random directions shaped like a parameter set.
#[derive(Clone, Debug, PartialEq)]
pub struct Directions {
    pub d1: Perturbation,
    pub d2: Perturbation,
    /// Parameter rows with zero norm whose direction rows were zeroed, counted
    /// over both directions.
    pub zero_rows: usize,
}

/// Rows of a tensor for filter normalization: one per output unit of a
/// matrix, the whole tensor otherwise.
fn filter_rows(t: &Tensor) -> (usize, usize) {
    match t.dims2() {
        Some((r, c)) => (r, c),
        None => (1, t.numel()),
    }
}

fn normalized_direction<R: Rng + ?Sized>(params: &ParamSet, rng: &mut R, zero_rows: &mut usize) -> Perturbation {
    let tensors = params
        .tensors()
        .iter()
        .map(|p| {
            let mut d: Vec<f64> = (0..p.numel()).map(|_| rng.sample(StandardNormal)).collect();
            let (rows, cols) = filter_rows(p);
            for r in 0..rows {
                let span = r * cols..(r + 1) * cols;
                let p_norm = p.data()[span.clone()].iter().map(|v| v * v).sum::<f64>().sqrt();
                let row = &mut d[span];
                let d_norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
                if p_norm == 0.0 || d_norm == 0.0 {
                    *zero_rows += 1;
                    row.iter_mut().for_each(|v| *v = 0.0);
                } else {
                    let s = p_norm / d_norm;
                    row.iter_mut().for_each(|v| *v *= s);
                }
            }
            Tensor::new(p.shape().to_vec(), d).expect("direction shape")
        })
        .collect();
    Perturbation::new(tensors)
}

/// Two independent Gaussian directions, each row rescaled to the norm of the
/// matching parameter row.
pub fn filter_normalized_directions<R: Rng + ?Sized>(params: &ParamSet, rng: &mut R) -> Result<Directions> {
    if params.is_empty() {
        return Err(Error::invalid("params", "need at least one parameter"));
    }
    let mut zero_rows = 0;
    let d1 = normalized_direction(params, rng, &mut zero_rows);
    let d2 = normalized_direction(params, rng, &mut zero_rows);
    Ok(Directions { d1, d2, zero_rows })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LandscapeGrid {
    pub resolution: usize,
    pub range: f64,
    /// Seed of the direction stream, when the directions came from one.
    pub direction_seed: Option<u64>,
    /// Coordinates along `d1`, indexed by row `i`.
    pub alphas: Vec<f64>,
    /// Coordinates along `d2`, indexed by column `j`.
    pub betas: Vec<f64>,
    /// Row-major `R x R` losses; entry `(i, j)` is `L(theta + alpha_i d1 + beta_j d2)`.
    pub values: Vec<f64>,
    /// Loss at the undisplaced parameters.
    pub center: f64,
    /// Grid indices whose loss was non-finite and replaced by the sentinel.
    pub flagged: Vec<(usize, usize)>,
}

impl LandscapeGrid {
    pub fn value(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.resolution + j]
    }

    /// CSV with header `alpha,beta,loss` and rows in `(i, j)` order.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "alpha,beta,loss")?;
        for (i, a) in self.alphas.iter().enumerate() {
            for (j, b) in self.betas.iter().enumerate() {
                writeln!(w, "{a},{b},{}", self.value(i, j))?;
            }
        }
        Ok(())
    }
}

/// `R` points symmetric about zero spanning `[-r, r]`.
pub fn axis(range: f64, resolution: usize) -> Vec<f64> {
    if resolution == 1 {
        return vec![0.0];
    }
    let last = (resolution - 1) as f64;
    (0..resolution)
        .map(|i| {
            let num = 2.0 * i as f64 - last;
            if num == 0.0 {
                0.0
            } else {
                range * num / last
            }
        })
        .collect()
}

/// Loss over the `R x R` grid `theta + alpha d1 + beta d2`, forward passes only.
pub fn landscape_grid(
    params: &ParamSet,
    obj: &dyn Objective,
    d1: &Perturbation,
    d2: &Perturbation,
    range: f64,
    resolution: usize,
) -> Result<LandscapeGrid> {
    if !(range > 0.0) {
        return Err(Error::invalid("landscape.range", "must be > 0"));
    }
    if resolution == 0 {
        return Err(Error::invalid("landscape.resolution", "must be >= 1"));
    }
    if !d1.matches(params) || !d2.matches(params) {
        return Err(Error::ShapeMismatch {
            op: "landscape",
            shapes: "directions do not match parameters".into(),
        });
    }
    let center = obj.value(params)?;
    let alphas = axis(range, resolution);
    let betas = alphas.clone();

    let values: Vec<f64> = (0..resolution * resolution)
        .into_par_iter()
        .map(|k| {
            let (a, b) = (alphas[k / resolution], betas[k % resolution]);
            if a == 0.0 && b == 0.0 {
                return Ok(center);
            }
            let moved = params.displaced(d1.tensors(), a).displaced(d2.tensors(), b);
            obj.value(&moved)
        })
        .collect::<Result<_>>()?;

    // non-finite points take the largest finite loss so the grid stays plottable
    let sentinel = values
        .iter()
        .copied()
        .filter(|v| v.is_finite())
        .reduce(f64::max)
        .unwrap_or(f64::MAX);
    let mut flagged = Vec::new();
    let values = values
        .into_iter()
        .enumerate()
        .map(|(k, v)| {
            if v.is_finite() {
                v
            } else {
                flagged.push((k / resolution, k % resolution));
                sentinel
            }
        })
        .collect();

    Ok(LandscapeGrid {
        resolution,
        range,
        direction_seed: None,
        alphas,
        betas,
        values,
        center,
        flagged,
    })
}

/// Mean grid loss minus the center loss; lower is flatter.
pub fn flatness_score(grid: &LandscapeGrid) -> Result<f64> {
    if !grid.flagged.is_empty() {
        return Err(Error::SentinelInGrid(grid.flagged.len()));
    }
    let mean = grid.values.iter().sum::<f64>() / grid.values.len() as f64;
    Ok(mean - grid.center)
}
