//! Training nested models with the method of auxiliary coordinates.
//!
//! A nested model `f(x) = f_{K+1}(...f_1(x))` is trained by introducing
//! auxiliary coordinates for chosen hidden layers and minimizing a quadratic
//! penalty that ties them to the layer outputs. See [`mac`] for the
//! optimizer, [`baselines`] for reference trainers and [`selection`] for
//! choosing RBF layer sizes during training.

pub mod baselines;
pub mod checkpoint;
pub mod error;
pub mod linalg;
pub mod mac;
pub mod model;
pub mod parallel;
pub mod selection;
pub mod trace;

pub use error::{Error, Result};
