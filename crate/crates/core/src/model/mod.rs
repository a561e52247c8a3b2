//! Nested models: layers, parameter layout, objective and gradient.

mod data;
mod layer;
mod net;
mod ops;

pub use data::Dataset;
pub use layer::{layer_jacobians, rbf_features, sigmoid, Layer, LayerJacobians, LayerKind, LayerSpec};
pub use net::NestedNet;
pub use ops::{
    backprop_gradient, bias_warmup, bias_warmup_step, forward, gradient_on_points, init_weights,
    nested_objective, nested_objective_on, regularizer, squared_error,
};
pub(crate) use ops::block_backprop;
