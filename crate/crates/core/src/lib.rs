//! Robustness toolkit for keypoint estimation.

pub mod adam;
pub mod augment;
pub mod autodiff;
pub mod bench;
pub mod checkpoint;
pub mod corruption;
pub mod data;
pub mod desk;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod heatmap;
pub mod image;
pub mod nets;
pub mod report;
pub mod rng;
pub mod synth;
pub mod tensor;
pub mod texture;
pub mod train;

pub use error::{Error, Result};
