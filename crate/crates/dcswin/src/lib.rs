//! Windowed-attention semantic segmentation with a densely connected
//! feature aggregation decoder, on a small self-contained tensor core.

pub mod attention;
pub mod bench;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod data;
pub mod decoder;
pub mod encoder;
pub mod error;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod tensor;
pub mod train;
pub mod verify;
pub mod util;

pub use error::{Error, Result};
pub use tensor::{backward, no_grad, Tensor};
