//! Weight-uncertainty feature learning as a min-max game over coding rates.
//!
//! A deterministic feature encoder (the max player) and a per-parameter
//! noise-scale network (the min player) are trained against a shared
//! rate-reduction objective. Sampling the scales around the deterministic
//! weights yields a stochastic encoder whose features are evaluated with a
//! k-nearest-neighbor classifier.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod data;
pub mod encoder;
pub mod error;
pub mod knn;
pub mod linalg;
pub mod metrics;
pub mod optim;
pub mod params;
pub mod plot;
pub mod rate;
pub mod tape;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
