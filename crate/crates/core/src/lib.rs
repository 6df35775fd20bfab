//! Gaussian-neighborhood minimization for long-tailed classification.
//!
//! A small reverse-mode autodiff engine, MLP and prompt-tuned token models,
//! SGD / SAM / GNM optimizers, reweighted losses, a synthetic long-tailed
//! dataset generator and loss-landscape probes, plus the experiment harness
//! behind the `gnm-lab` binary.

pub mod autodiff;
pub mod data;
pub mod error;
pub mod harness;
pub mod landscape;
pub mod losses;
pub mod models;
pub mod optim;
pub mod rng;
pub mod task;

pub use error::{Error, Result};
