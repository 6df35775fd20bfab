//! SGD, SAM and Gaussian-neighborhood (GNM) steps with pass accounting,
//! plus neighborhood and per-group gradient diagnostics.

mod config;
mod diagnostics;
mod objective;
mod perturb;
mod steps;

pub use config::{GaussianNeighborhood, OptimizerConfig, OptimizerKind, Schedule, StepClock};
pub use diagnostics::{
    gradient_group_norms, neighborhood_loss_stats, neighborhood_loss_stats_with, GroupGradNorms, GroupNorm,
    NeighborhoodStats,
};
pub use objective::{HalfSquaredNorm, Objective};
pub use perturb::{sample_entry, sample_gaussian_perturbation, scale_draw, Perturbation};
pub use steps::{gnm_step, gnm_step_with, sam_step, sgd_step, Optimizer, PassCounter};
