//! PointManifoldCut: point-wise mixing of hidden point-cloud representations,
//! with the small networks, training loop, synthetic data and robustness
//! harness needed to exercise it.

pub mod augment;
mod binio;
pub mod cli;
pub mod cloud;
pub mod data;
pub mod error;
pub mod geometry;
pub mod network;
pub mod rng;
pub mod robustness;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
