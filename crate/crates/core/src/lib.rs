//! Single-image dehazing with a ranking-augmented convolutional network.
//!
//! The crate is organised bottom-up:
//!
//! * [`nn`] is a small feed-forward engine (convolution, pooling, ReLU,
//!   dense and the order-statistic ranking layer) with SGD training and a
//!   finite-difference gradient checker.
//! * [`net`] builds the fixed ten-layer Ranking-CNN, labels patches into
//!   transmission bins, trains it and extracts 64-D features.
//! * [`synth`] samples clear patches and synthesizes hazy training data.
//! * [`forest`] regresses transmission from features with a random forest,
//!   and [`baseline`] holds the comparison regressors.
//! * [`dehaze`] is the inference pipeline from a hazy image to a clear one.
//! * [`eval`] holds metrics, benchmark cases and ablation studies.

pub mod baseline;
pub mod dehaze;
pub mod error;
pub mod eval;
pub mod forest;
pub mod imaging;
pub mod net;
pub mod nn;
pub mod par;
pub mod procedural;
pub mod synth;
mod wire;

pub use error::{Error, Result};
