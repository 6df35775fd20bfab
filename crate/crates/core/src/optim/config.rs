use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Sam,
    Gnm,
}

impl FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sgd" => Ok(Self::Sgd),
            "sam" => Ok(Self::Sam),
            "gnm" => Ok(Self::Gnm),
            other => Err(Error::invalid("optim.kind", format!("unknown optimizer `{other}` (sgd | sam | gnm)"))),
        }
    }
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Sgd => "sgd",
            Self::Sam => "sam",
            Self::Gnm => "gnm",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Schedule {
    Cosine,
    Constant,
}

impl FromStr for Schedule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cosine" => Ok(Self::Cosine),
            "constant" => Ok(Self::Constant),
            other => Err(Error::invalid("optim.schedule", format!("unknown schedule `{other}`"))),
        }
    }
}

/// Position of a step within a run, for the learning-rate schedule.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StepClock {
    pub step: usize,
    pub total: usize,
}

impl StepClock {
    pub fn new(step: usize, total: usize) -> Self {
        Self { step, total }
    }
}

/// Clamped Gaussian neighborhood: entries are `radius * clamp(N(0, sigma^2), -c, c)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GaussianNeighborhood {
    pub radius: f64,
    pub sigma: f64,
    pub clamp: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub schedule: Schedule,
    pub weight_decay: f64,
    pub rho_sam: f64,
    /// GNM amplitude `a`; the GNM radius is `a * rho_sam`.
    pub amplitude: f64,
    pub sigma: f64,
    pub clamp: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            kind: OptimizerKind::Gnm,
            lr: 0.01,
            schedule: Schedule::Cosine,
            weight_decay: 1e-4,
            rho_sam: 0.05,
            amplitude: 0.1,
            sigma: 1.0 / 3.0,
            clamp: 1.0,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        let checks = [
            ("optim.lr", self.lr > 0.0, "must be > 0"),
            ("optim.weight_decay", self.weight_decay >= 0.0, "must be >= 0"),
            ("optim.rho_sam", self.rho_sam >= 0.0, "must be >= 0"),
            ("optim.amplitude", self.amplitude >= 0.0, "must be >= 0"),
            ("optim.sigma", self.sigma > 0.0, "must be > 0"),
            ("optim.clamp", self.clamp > 0.0, "must be > 0"),
        ];
        for (key, ok, reason) in checks {
            if !ok {
                return Err(Error::invalid(key, reason));
            }
        }
        Ok(())
    }

    pub fn rho_gnm(&self) -> f64 {
        self.amplitude * self.rho_sam
    }

    pub fn gnm_neighborhood(&self) -> GaussianNeighborhood {
        GaussianNeighborhood {
            radius: self.rho_gnm(),
            sigma: self.sigma,
            clamp: self.clamp,
        }
    }

    /// `lr * (1 + cos(pi t / T)) / 2` for cosine, `lr` for constant.
    pub fn learning_rate(&self, clock: StepClock) -> f64 {
        match self.schedule {
            Schedule::Constant => self.lr,
            Schedule::Cosine => {
                if clock.total == 0 {
                    return self.lr;
                }
                self.lr * 0.5 * (1.0 + (PI * clock.step as f64 / clock.total as f64).cos())
            }
        }
    }
}
