//! Toy classifiers: a plain MLP and a prompted token-mixing network.
//!
//! A [`ModelState`] splits its parameters into a frozen set (regenerated from
//! the seed, never updated) and a trainable set that optimizers touch. Forward
//! passes take the trainable parameters as graph variables so an optimizer can
//! evaluate the model at displaced parameters without mutating the state.

mod mlp;
mod prompted;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, ParamSet, Tensor, Var};
use crate::error::{Error, Result};
use crate::rng::{self, Stream};

pub use mlp::{Activation, MlpConfig};
pub use prompted::{merge_cls_token, PromptedConfig, VptOutput};

/// Standard deviation of frozen and head weight initialization.
pub const INIT_STD: f64 = 0.02;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ModelConfig {
    Mlp(MlpConfig),
    Prompted(PromptedConfig),
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        match self {
            ModelConfig::Mlp(c) => c.validate(),
            ModelConfig::Prompted(c) => c.validate(),
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            ModelConfig::Mlp(c) => c.input_dim,
            ModelConfig::Prompted(c) => c.tokens * c.token_dim,
        }
    }

    pub fn classes(&self) -> usize {
        match self {
            ModelConfig::Mlp(c) => c.classes,
            ModelConfig::Prompted(c) => c.classes,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelState {
    pub config: ModelConfig,
    pub frozen: ParamSet,
    pub trainable: ParamSet,
}

impl ModelState {
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let (frozen, trainable) = match &config {
            ModelConfig::Mlp(c) => mlp::init(c, seed)?,
            ModelConfig::Prompted(c) => prompted::init(c, seed)?,
        };
        Ok(Self {
            config,
            frozen,
            trainable,
        })
    }

    /// Logits `[B x C]` for rows of `x`, with `trainable` bound on `g` (in
    /// [`ParamSet`] order) and frozen weights entered as constants.
    pub fn logits(&self, g: &mut Graph, trainable: &[Var], x: &Tensor) -> Result<Var> {
        let (_, d) = x.dims2().ok_or_else(|| Error::ShapeMismatch {
            op: "model input",
            shapes: format!("{:?}", x.shape()),
        })?;
        if d != self.config.input_dim() {
            return Err(Error::ShapeMismatch {
                op: "model input",
                shapes: format!("{:?} vs input dim {}", x.shape(), self.config.input_dim()),
            });
        }
        if trainable.len() != self.trainable.len() {
            return Err(Error::ShapeMismatch {
                op: "model params",
                shapes: format!("{} bound vs {} trainable", trainable.len(), self.trainable.len()),
            });
        }
        let frozen = self.frozen.bind_constant(g);
        match &self.config {
            ModelConfig::Mlp(c) => mlp::forward(c, g, trainable, x),
            ModelConfig::Prompted(c) => prompted::forward_batch(c, g, &frozen, trainable, x),
        }
    }

    /// Forward-only logits at explicit trainable values.
    pub fn logits_with(&self, trainable: &ParamSet, x: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let vars = trainable.bind_constant(&mut g);
        let out = self.logits(&mut g, &vars, x)?;
        Ok(g.value(out).clone())
    }

    pub fn predict(&self, x: &Tensor) -> Result<Vec<usize>> {
        let logits = self.logits_with(&self.trainable, x)?;
        Ok(argmax_rows(&logits))
    }
}

pub fn argmax_rows(logits: &Tensor) -> Vec<usize> {
    let (rows, _) = logits.dims2().expect("logits are a matrix");
    (0..rows)
        .map(|r| {
            let row = logits.row(r);
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

fn name_index(name: &str) -> u64 {
    name.bytes()
        .fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3))
}

/// Gaussian tensor drawn from a generator keyed by `(seed, name)`, so the draw
/// for one tensor does not depend on which others exist.
pub(crate) fn gaussian(seed: u64, name: &str, shape: &[usize], std: f64) -> Tensor {
    let h = name_index(name);
    let mut rng = rng::substream(seed, Stream::ModelInit, (h ^ (h >> 32)) & 0xffff_ffff);
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let z: f64 = rng.sample(StandardNormal);
            std * z
        })
        .collect();
    Tensor::new(shape.to_vec(), data).expect("init shape")
}

/// `x W^T + 1 b` for `x [B x in]`, `W [out x in]`, `b [1 x out]`.
pub(crate) fn linear(g: &mut Graph, x: Var, w: Var, b: Var) -> Result<Var> {
    let rows = g.value(x).shape()[0];
    let wt = g.transpose(w)?;
    let xw = g.matmul(x, wt)?;
    let ones = g.constant(Tensor::full(&[rows, 1], 1.0));
    let bias = g.matmul(ones, b)?;
    g.add(xw, bias)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_deterministic_and_name_keyed() {
        let a = gaussian(3, "block0.fc1.weight", &[4, 4], 1.0);
        let b = gaussian(3, "block0.fc1.weight", &[4, 4], 1.0);
        let c = gaussian(3, "block1.fc1.weight", &[4, 4], 1.0);
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn argmax_picks_first_max() {
        let t = Tensor::matrix(2, 3, vec![1.0, 3.0, 3.0, -1.0, -2.0, -0.5]).unwrap();
        assert_eq!(argmax_rows(&t), vec![1, 2]);
    }
}
