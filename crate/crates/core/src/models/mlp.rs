use serde::{Deserialize, Serialize};

use super::{gaussian, linear, INIT_STD};
use crate::autodiff::{Graph, ParamSet, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpConfig {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub classes: usize,
    pub activation: Activation,
}

impl MlpConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.hidden.iter().any(|&h| h == 0) {
            return Err(Error::invalid("model.hidden", "all dimensions must be positive"));
        }
        if self.classes < 2 {
            return Err(Error::invalid("model.classes", "need at least 2 classes"));
        }
        Ok(())
    }
}

/// All MLP weights are trainable. Hidden layers use He-normal weights, the
/// head `N(0, 0.02^2)`, biases start at zero.
pub(super) fn init(cfg: &MlpConfig, seed: u64) -> Result<(ParamSet, ParamSet)> {
    let mut trainable = ParamSet::new();
    let mut fan_in = cfg.input_dim;
    for (i, &h) in cfg.hidden.iter().enumerate() {
        let name = format!("fc{i}.weight");
        let std = (2.0 / fan_in as f64).sqrt();
        trainable.insert(&name, gaussian(seed, &name, &[h, fan_in], std))?;
        trainable.insert(format!("fc{i}.bias"), Tensor::zeros(&[1, h]))?;
        fan_in = h;
    }
    trainable.insert("head.weight", gaussian(seed, "head.weight", &[cfg.classes, fan_in], INIT_STD))?;
    trainable.insert("head.bias", Tensor::zeros(&[1, cfg.classes]))?;
    Ok((ParamSet::new(), trainable))
}

pub(super) fn forward(cfg: &MlpConfig, g: &mut Graph, params: &[Var], x: &Tensor) -> Result<Var> {
    let mut h = g.constant(x.clone());
    for layer in 0..cfg.hidden.len() {
        let z = linear(g, h, params[2 * layer], params[2 * layer + 1])?;
        h = match cfg.activation {
            Activation::Relu => g.relu(z)?,
            Activation::Tanh => g.tanh(z)?,
        };
    }
    let n = params.len();
    linear(g, h, params[n - 2], params[n - 1])
}

#[cfg(test)]
mod tests {
    use crate::autodiff::{finite_diff_gradient, grads_close, Graph, ParamSet, Tensor};
    use crate::losses::cross_entropy;
    use crate::models::{Activation, MlpConfig, ModelConfig, ModelState};

    fn cfg(hidden: Vec<usize>) -> ModelConfig {
        ModelConfig::Mlp(MlpConfig {
            input_dim: 3,
            hidden,
            classes: 4,
            activation: Activation::Relu,
        })
    }

    #[test]
    fn no_hidden_is_affine() {
        let mut m = ModelState::init(cfg(vec![]), 1).unwrap();
        m.trainable
            .get_mut("head.bias")
            .unwrap()
            .data_mut()
            .copy_from_slice(&[0.1, 0.2, 0.3, 0.4]);
        let x = Tensor::matrix(1, 3, vec![1.0, -2.0, 0.5]).unwrap();
        let out = m.logits_with(&m.trainable, &x).unwrap();
        let w = m.trainable.get("head.weight").unwrap();
        let b = m.trainable.get("head.bias").unwrap();
        for c in 0..4 {
            let expect: f64 = w.row(c).iter().zip(x.data()).map(|(a, b)| a * b).sum::<f64>() + b.data()[c];
            assert!((out.data()[c] - expect).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_weights_zero_logits() {
        let mut m = ModelState::init(cfg(vec![5]), 2).unwrap();
        let zeros = m.trainable.unflatten(&vec![0.0; m.trainable.k()]).unwrap();
        m.trainable = zeros;
        let x = Tensor::matrix(2, 3, vec![1.0, 2.0, 3.0, -1.0, 0.0, 4.0]).unwrap();
        let out = m.logits_with(&m.trainable, &x).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn rejects_wrong_input_dim() {
        let m = ModelState::init(cfg(vec![5]), 2).unwrap();
        assert!(m.logits_with(&m.trainable, &Tensor::zeros(&[2, 4])).is_err());
    }

    #[test]
    fn ce_gradient_matches_finite_differences() {
        let m = ModelState::init(cfg(vec![6, 5]), 9).unwrap();
        let x = Tensor::matrix(3, 3, vec![0.3, -1.1, 0.8, 1.5, 0.2, -0.7, -0.4, 0.9, 1.2]).unwrap();
        let y = [0, 3, 1];
        let loss = |p: &ParamSet| {
            let mut g = Graph::new();
            let v = p.bind_constant(&mut g);
            let z = m.logits(&mut g, &v, &x).unwrap();
            let l = cross_entropy(&mut g, z, &y, None).unwrap();
            g.value(l).item()
        };
        let mut g = Graph::new();
        let vars = m.trainable.bind(&mut g);
        let z = m.logits(&mut g, &vars, &x).unwrap();
        let l = cross_entropy(&mut g, z, &y, None).unwrap();
        g.backward(l).unwrap();
        let analytic: Vec<f64> = vars.iter().flat_map(|&v| g.grad(v).unwrap().into_data()).collect();
        let numeric = finite_diff_gradient(loss, &m.trainable, 1e-5).unwrap();
        assert!(grads_close(&analytic, &numeric, 1e-4, 1e-7));
    }
}
