//! Uncertainty-aware model-based planning on Minipacman.
//!
//! A K-headed convolutional forward model is trained on bootstrap-masked
//! experience (optionally with fixed randomized prior networks), its heads
//! are consolidated into a single prediction, count constraints are
//! enforced by error-correction filters, and a Rolling Horizon Evolution
//! planner searches action sequences on top of it.

pub mod correction;
pub mod ensemble;
pub mod env;
pub mod error;
pub mod experience;
pub mod harness;
pub mod model;
pub mod planner;
pub mod scalar;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Single-precision network, the default for training and planning.
pub type Network32 = model::Network<f32>;
/// Double-precision network, used for gradient checks.
pub type Network64 = model::Network<f64>;
pub type Prediction32 = ensemble::EnsemblePrediction<f32>;
pub type Prediction64 = ensemble::EnsemblePrediction<f64>;
