use super::params::ParamSet;
use crate::error::{Error, Result};

/// Central-difference gradient of `f` at `params`, one coordinate at a time.
pub fn finite_diff_gradient<F>(mut f: F, params: &ParamSet, h: f64) -> Result<Vec<f64>>
where
    F: FnMut(&ParamSet) -> f64,
{
    if !(h > 0.0) {
        return Err(Error::invalid("h", "step size must be positive"));
    }
    let base = params.flatten();
    let mut probe = params.clone();
    let mut grad = Vec::with_capacity(base.len());
    let mut work = base.clone();
    for i in 0..base.len() {
        work[i] = base[i] + h;
        probe.assign_flat(&work)?;
        let up = f(&probe);
        work[i] = base[i] - h;
        probe.assign_flat(&work)?;
        let down = f(&probe);
        work[i] = base[i];
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::NonFiniteAt { coordinate: i });
        }
        grad.push((up - down) / (2.0 * h));
    }
    Ok(grad)
}

/// `true` when every coordinate satisfies `|a - b| <= rel * max(|a|, |b|) + abs`.
pub fn grads_close(a: &[f64], b: &[f64], rel: f64, abs: f64) -> bool {
    a.len() == b.len()
        && a
            .iter()
            .zip(b)
            .all(|(x, y)| (x - y).abs() <= rel * x.abs().max(y.abs()) + abs)
}
