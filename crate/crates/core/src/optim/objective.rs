use crate::autodiff::{Graph, ParamSet, Tensor};
use crate::error::Result;

/// A scalar training loss over a fixed batch, evaluated at given parameters.
///
/// `value` is one forward pass; `value_and_grad` is one forward plus one
/// backward pass. Implementations must not keep state between calls.
pub trait Objective: Sync {
    fn value(&self, params: &ParamSet) -> Result<f64>;

    fn value_and_grad(&self, params: &ParamSet) -> Result<(f64, Vec<Tensor>)>;
}

/// `0.5 * ||theta||^2` over every parameter.
#[derive(Clone, Copy, Debug, Default)]
pub struct HalfSquaredNorm;

impl HalfSquaredNorm {
    fn eval(params: &ParamSet, with_grad: bool) -> Result<(f64, Vec<Tensor>)> {
        let mut g = Graph::new();
        let vars = if with_grad { params.bind(&mut g) } else { params.bind_constant(&mut g) };
        let mut total = None;
        for &v in &vars {
            let sq = g.mul(v, v)?;
            let n = g.value(v).numel() as f64;
            // mean * n = sum
            let m = g.mean(sq)?;
            let s = g.scale(m, 0.5 * n)?;
            total = Some(match total {
                None => s,
                Some(t) => g.add(t, s)?,
            });
        }
        let Some(loss) = total else {
            return Ok((0.0, vec![]));
        };
        let value = g.value(loss).item();
        if !with_grad {
            return Ok((value, vec![]));
        }
        g.backward(loss)?;
        let grads = vars.iter().map(|&v| g.grad(v).expect("param grad")).collect();
        Ok((value, grads))
    }
}

impl Objective for HalfSquaredNorm {
    fn value(&self, params: &ParamSet) -> Result<f64> {
        Self::eval(params, false).map(|(v, _)| v)
    }

    fn value_and_grad(&self, params: &ParamSet) -> Result<(f64, Vec<Tensor>)> {
        Self::eval(params, true)
    }
}
