//! Simulation and analysis of two-layer networks trained by gradient flow
//! under general initialization scales.

// `!(x > 0.0)` is used on purpose so NaN falls into the rejecting branch.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod activation;
pub mod cli;
pub mod config;
pub mod dataset;
pub mod error;
pub mod gram;
pub mod harness;
pub mod integrator;
pub mod io;
pub mod linalg;
pub mod linear;
pub mod metrics;
pub mod network;
pub mod scaling;

pub use activation::Activation;
pub use dataset::Dataset;
pub use error::{Error, Result};
pub use network::NormalizedParams;
pub use scaling::ScalingConfig;
