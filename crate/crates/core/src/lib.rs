//! Neural-field density estimation on products of circles and 2-spheres.
//!
//! The log-density `v = log f` is a sine-activated MLP whose first layer is a
//! random subset of tensor-product Laplace-Beltrami eigenfunctions. It is fit
//! by stochastic gradient ascent on a penalized log-likelihood whose
//! roughness penalty is `tau * int (Laplacian v)^2`.

// `!(x > 0.0)` is the NaN-rejecting comparison throughout.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod checkpoint;
pub mod encoding;
pub mod error;
pub mod field;
pub mod manifold;
pub mod metrics;
pub mod objective;
pub mod qmc;
pub mod quadrature;
mod scalar;
pub mod synthetic;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Double-precision instantiations used by the CLI and the acceptance runs.
pub type FieldParams64 = field::FieldParams<f64>;
pub type FieldParams32 = field::FieldParams<f32>;
pub type TrainState64 = objective::TrainState<f64>;
pub type TrainOutcome64 = objective::TrainOutcome<f64>;
pub type TpbModel64 = baselines::TpbModel<f64>;
pub type FieldDensity64 = field::FieldDensity<f64>;
pub type Point64 = manifold::Point<f64>;
