//! Stereo matching with decoupled 2D cost aggregation.

pub mod aggregation;
pub mod autograd;
pub mod bench;
pub mod config;
pub mod costvolume;
pub mod data;
pub mod error;
pub mod features;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod regression;
pub mod selftest;
pub mod tensor;
pub mod training;
pub mod viz;

pub use error::{Error, FormatError, Result};
pub use tensor::{Real, Tensor};
