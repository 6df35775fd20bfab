//! Dense-tensor reverse-mode automatic differentiation.
//!
//! A [`Graph`] is a tape built during one forward pass. Parameters enter it as
//! leaves via [`ParamSet::bind`]; after [`Graph::backward`] their gradients
//! are read back with [`Graph::grad`].

mod finite_diff;
mod graph;
mod params;
mod tensor;

pub use finite_diff::{finite_diff_gradient, grads_close};
pub use graph::{Graph, Primitive, Var, LAYER_NORM_EPS};
pub use params::ParamSet;
pub use tensor::Tensor;
