//! Calibrated interference tail prediction for industrial sub-networks.

pub mod baselines;
pub mod calibration;
pub mod error;
pub mod experiment;
pub mod linalg;
pub mod qpt;
pub mod ra;
pub mod scenario;
pub mod special;
pub mod split;
pub mod windowing;

pub use error::{Error, Result};
