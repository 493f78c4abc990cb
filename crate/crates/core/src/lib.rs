//! Two-dancer motion modelling: pose cleaning, a three-VAE + transformer
//! decoder duet model trained with MSE, KL and velocity losses, and
//! autoregressive partner generation.

pub mod error;
pub mod evaluation;
pub mod inference;
pub mod model;
pub mod nn;
pub mod pose_ingest;
pub mod preprocess;
pub mod sequence;
pub mod synth;
pub mod training;

pub use error::{Error, Result};
