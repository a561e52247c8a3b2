//! Reference trainers and the fitting primitives they share with the
//! auxiliary-coordinate method.

mod altopt;
mod cg;
mod kmeans;
mod ridge;
mod sgd;

pub use altopt::{alt_opt_rbf_train, decoder_step, AltOptConfig};
pub use cg::{cg_train, minimize_cg, CgConfig, CgOutcome, CgStatus, LineSearch};
pub use kmeans::{kmeans, KMeans};
pub use ridge::ridge_lsq;
pub use sgd::{sgd_train, SgdConfig};
