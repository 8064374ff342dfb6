//! Dynamic activation sparsity for small feed-forward and convolutional
//! networks: run-time winners-take-all masks, energy-based calibration of
//! winner rates, row-condensed kernels that skip masked inputs, and the
//! training, cost-model and compression tooling around them.

pub mod calibration;
pub mod compression;
pub mod cost;
pub mod data;
pub mod error;
pub mod kernels;
pub mod nn;
pub mod rng;
pub mod tensor;
pub mod wta;

pub use error::{Error, Result};
pub use tensor::{FeatureMap, Tensor};
pub use wta::{FvMode, WtaMask};
