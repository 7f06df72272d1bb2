//! Dynamic-scene RGB-D odometry toolkit: depth-variance motion masks,
//! latent-space keypoint resampling, masked pose estimation, trajectory
//! metrics and static point-cloud mapping.

pub mod cli;
pub mod clustering;
pub mod config;
pub mod dynamic_mask;
pub mod error;
pub mod evaluation;
pub mod geometry;
pub mod ingest;
pub mod mapping;
pub mod pipeline;
pub mod raster;
pub mod resampler;
pub mod synthetic;
pub mod tracking;
pub mod trajectory;

pub use error::{Error, Result};
