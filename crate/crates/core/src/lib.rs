//! Daily-life captioning from simulated radio heatmaps and floormaps.

pub mod alignment;
pub mod captioner;
pub mod encoders;
pub mod error;
pub mod experiment;
pub mod geometry;
pub mod metrics;
pub mod model;
pub mod simulator;
pub mod skeletonizer;

pub use error::{Error, Result};
