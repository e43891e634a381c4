//! Bayesian conditional GAN for paired image translation.

pub mod data;
pub mod error;
pub mod evaluation;
pub mod layers;
pub mod networks;
pub mod pipeline;
pub mod posterior;
pub mod recalibration;
pub mod rng;
pub mod training;
pub mod tensor;

pub use error::{Error, Result};
