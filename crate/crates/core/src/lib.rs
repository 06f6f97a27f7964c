//! Iterative facial keypoint estimation with a cascade of convolutional
//! regressors operating on Gaussian-heatmap renderings of the current shape.

pub mod cascade;
pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod image;
pub mod learning;
pub mod model;
pub mod regressor;
pub mod render;

pub use error::{KeplerError, Result};
