//! Semantic scene completion from LiDAR with a grid of local implicit functions.

pub mod classes;
pub mod config;
pub mod container;
pub mod decoder;
pub mod error;
pub mod evaluation;
pub mod extraction;
pub mod geometry;
pub mod latent_grid;
pub mod losses;
pub mod num;
pub mod pipeline;
pub mod rng;
pub mod sampling;
pub mod scene_io;
pub mod synthscene;
pub mod trainer;
pub mod voxel;

pub use error::{Error, Result};

/// Single-precision model types, as used for training and checkpoints.
pub type Checkpoint32 = trainer::Checkpoint<f32>;
pub type TrainState32 = trainer::TrainState<f32>;
pub type DecoderParams32 = decoder::DecoderParams<f32>;
pub type LatentGrid32 = latent_grid::LatentGrid<f32>;

/// Double-precision model types, as used by the gradient checks.
pub type Checkpoint64 = trainer::Checkpoint<f64>;
pub type TrainState64 = trainer::TrainState<f64>;
pub type DecoderParams64 = decoder::DecoderParams<f64>;
pub type LatentGrid64 = latent_grid::LatentGrid<f64>;
