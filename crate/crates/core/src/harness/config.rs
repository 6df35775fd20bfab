//! Line-oriented `key = value` run configuration.
//!
//! ```text
//! # desk run
//! seed = 3
//! optim.kind = sam
//! model.hidden = 64,64
//! ```
//!
//! Unknown keys and malformed lines are errors carrying the line number.
//! Every key is optional; see [`RunConfig::default`] for the defaults.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::LongTailSpec;
use crate::error::{Error, Result};
use crate::models::{Activation, MlpConfig, ModelConfig, PromptedConfig};
use crate::optim::OptimizerConfig;

/// Training loss.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum LossKind {
    /// Class-weighted cross-entropy.
    #[serde(rename = "ce")]
    Ce,
    /// Cross-entropy on logits shifted by the log class prior (training only).
    #[serde(rename = "ce+bsm")]
    CeBalancedSoftmax,
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ce" => Ok(Self::Ce),
            "ce+bsm" | "bsm" => Ok(Self::CeBalancedSoftmax),
            other => Err(Error::invalid("loss.kind", format!("unknown loss `{other}` (ce | ce+bsm)"))),
        }
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Ce => "ce",
            Self::CeBalancedSoftmax => "ce+bsm",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Mlp,
    Prompted,
}

/// Architecture knobs; input width and class count come from the dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelOptions {
    pub kind: ModelKind,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub token_dim: usize,
    pub prompts: usize,
    pub layers: usize,
    pub mlp_hidden: usize,
    pub w_p: f64,
    pub w_z: f64,
}

impl Default for ModelOptions {
    fn default() -> Self {
        Self {
            kind: ModelKind::Mlp,
            hidden: vec![64],
            activation: Activation::Relu,
            token_dim: 8,
            prompts: 2,
            layers: 2,
            mlp_hidden: 16,
            w_p: 0.5,
            w_z: 0.5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LandscapeOptions {
    pub range: f64,
    pub resolution: usize,
    /// Training samples per class in the fixed evaluation batch.
    pub per_class: usize,
}

impl Default for LandscapeOptions {
    fn default() -> Self {
        Self {
            range: 1.0,
            resolution: 21,
            per_class: 20,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub seed: u64,
    /// Dataset geometry; its seed always equals `seed`.
    pub data: LongTailSpec,
    pub model: ModelOptions,
    pub optim: OptimizerConfig,
    pub loss: LossKind,
    pub drw_beta: f64,
    /// Last epoch of the unweighted stage.
    pub t1: usize,
    /// Total epochs.
    pub t2: usize,
    pub batch: usize,
    /// Classes with more than `head_threshold` samples are head.
    pub head_threshold: usize,
    /// Classes with at most `tail_threshold` samples are tail.
    pub tail_threshold: usize,
    pub landscape: LandscapeOptions,
    /// Directory for `report.jsonl` and `checkpoint.bin`.
    #[serde(skip)]
    pub out_dir: Option<PathBuf>,
    /// Write a landscape grid of the trained model here.
    #[serde(skip)]
    pub landscape_csv: Option<PathBuf>,
    /// Export the training set here before training.
    #[serde(skip)]
    pub dump_data: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            data: LongTailSpec::default(),
            model: ModelOptions::default(),
            optim: OptimizerConfig::default(),
            loss: LossKind::Ce,
            drw_beta: 0.9999,
            t1: 30,
            t2: 40,
            batch: 128,
            head_threshold: 50,
            tail_threshold: 10,
            landscape: LandscapeOptions::default(),
            out_dir: None,
            landscape_csv: None,
            dump_data: None,
        }
    }
}

impl RunConfig {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.data.seed = seed;
        self
    }

    pub fn model_config(&self) -> ModelConfig {
        let m = &self.model;
        match m.kind {
            ModelKind::Mlp => ModelConfig::Mlp(MlpConfig {
                input_dim: self.data.dim,
                hidden: m.hidden.clone(),
                classes: self.data.classes,
                activation: m.activation,
            }),
            ModelKind::Prompted => ModelConfig::Prompted(PromptedConfig {
                token_dim: m.token_dim,
                tokens: self.data.dim / m.token_dim.max(1),
                prompts: m.prompts,
                layers: m.layers,
                classes: self.data.classes,
                mlp_hidden: m.mlp_hidden,
                w_p: m.w_p,
                w_z: m.w_z,
            }),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.data.validate()?;
        self.optim.validate()?;
        if self.t1 > self.t2 {
            return Err(Error::invalid("train.t1", format!("t1 <= t2 violated ({} > {})", self.t1, self.t2)));
        }
        if self.batch == 0 {
            return Err(Error::invalid("train.batch", "must be >= 1"));
        }
        if !(0.0..1.0).contains(&self.drw_beta) {
            return Err(Error::invalid("loss.beta", "must lie in [0, 1)"));
        }
        if self.head_threshold <= self.tail_threshold {
            return Err(Error::invalid("split.head", "head threshold must exceed tail threshold"));
        }
        if self.model.kind == ModelKind::Prompted && (self.model.token_dim == 0 || self.data.dim % self.model.token_dim != 0) {
            return Err(Error::invalid("model.token_dim", "must divide data.dim"));
        }
        if !(self.landscape.range > 0.0) || self.landscape.resolution == 0 || self.landscape.per_class == 0 {
            return Err(Error::invalid("landscape", "range, resolution and per_class must be positive"));
        }
        self.model_config().validate()
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::invalid(key, format!("cannot parse `{value}`")))
}

fn parse_list(key: &str, value: &str) -> Result<Vec<usize>> {
    if value.is_empty() {
        return Ok(Vec::new());
    }
    value.split(',').map(|v| parse(key, v.trim())).collect()
}

fn apply(cfg: &mut RunConfig, key: &str, value: &str) -> Result<()> {
    match key {
        "seed" => {
            let seed = parse(key, value)?;
            cfg.seed = seed;
            cfg.data.seed = seed;
        }
        "out" => cfg.out_dir = Some(PathBuf::from(value)),

        "data.classes" => cfg.data.classes = parse(key, value)?,
        "data.n_max" => cfg.data.n_max = parse(key, value)?,
        "data.imbalance_ratio" => cfg.data.imbalance_ratio = parse(key, value)?,
        "data.dim" => cfg.data.dim = parse(key, value)?,
        "data.separation" => cfg.data.separation = parse(key, value)?,
        "data.std" => cfg.data.std = parse(key, value)?,
        "data.test_per_class" => cfg.data.test_per_class = parse(key, value)?,

        "model.kind" => {
            cfg.model.kind = match value {
                "mlp" => ModelKind::Mlp,
                "prompted" => ModelKind::Prompted,
                _ => return Err(Error::invalid(key, format!("unknown model `{value}` (mlp | prompted)"))),
            }
        }
        "model.hidden" => cfg.model.hidden = parse_list(key, value)?,
        "model.activation" => {
            cfg.model.activation = match value {
                "relu" => Activation::Relu,
                "tanh" => Activation::Tanh,
                _ => return Err(Error::invalid(key, format!("unknown activation `{value}` (relu | tanh)"))),
            }
        }
        "model.token_dim" => cfg.model.token_dim = parse(key, value)?,
        "model.prompts" => cfg.model.prompts = parse(key, value)?,
        "model.layers" => cfg.model.layers = parse(key, value)?,
        "model.mlp_hidden" => cfg.model.mlp_hidden = parse(key, value)?,
        "model.w_p" => cfg.model.w_p = parse(key, value)?,
        "model.w_z" => cfg.model.w_z = parse(key, value)?,

        "optim.kind" => cfg.optim.kind = value.parse()?,
        "optim.lr" => cfg.optim.lr = parse(key, value)?,
        "optim.schedule" => cfg.optim.schedule = value.parse()?,
        "optim.weight_decay" => cfg.optim.weight_decay = parse(key, value)?,
        "optim.rho" => cfg.optim.rho_sam = parse(key, value)?,
        "optim.amplitude" => cfg.optim.amplitude = parse(key, value)?,
        "optim.sigma" => cfg.optim.sigma = parse(key, value)?,
        "optim.clamp" => cfg.optim.clamp = parse(key, value)?,

        "loss.kind" => cfg.loss = value.parse()?,
        "loss.beta" => cfg.drw_beta = parse(key, value)?,

        "train.t1" => cfg.t1 = parse(key, value)?,
        "train.t2" => cfg.t2 = parse(key, value)?,
        "train.batch" => cfg.batch = parse(key, value)?,

        "split.head" => cfg.head_threshold = parse(key, value)?,
        "split.tail" => cfg.tail_threshold = parse(key, value)?,

        "landscape.range" => cfg.landscape.range = parse(key, value)?,
        "landscape.resolution" => cfg.landscape.resolution = parse(key, value)?,
        "landscape.per_class" => cfg.landscape.per_class = parse(key, value)?,

        _ => return Err(Error::invalid(key, "unknown key")),
    }
    Ok(())
}

/// Parse a configuration, then check every cross-key invariant.
pub fn parse_config(source: &str) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    for (i, raw) in source.lines().enumerate() {
        let line = i + 1;
        let text = raw.split('#').next().unwrap_or("").trim();
        if text.is_empty() {
            continue;
        }
        let (key, value) = text.split_once('=').ok_or_else(|| Error::ConfigLine {
            line,
            reason: format!("expected `key = value`, got `{text}`"),
        })?;
        let (key, value) = (key.trim(), value.trim());
        if key.is_empty() {
            return Err(Error::ConfigLine {
                line,
                reason: "empty key".into(),
            });
        }
        apply(&mut cfg, key, value).map_err(|e| Error::ConfigLine {
            line,
            reason: e.to_string(),
        })?;
    }
    cfg.validate()?;
    Ok(cfg)
}
