//! Hybrid sky-camera / satellite solar irradiance nowcasting.

pub mod error;
pub mod fgrid;
pub mod geometry;
pub mod grid;
pub mod imaging;
pub mod metrics;
pub mod baselines;
pub mod cloudindex;
pub mod dataset;
pub mod model;
pub mod pipeline;
pub mod simulator;
pub mod scalar;

pub use error::{Error, Result};
pub use grid::Grid2D;
pub use scalar::Scalar;

/// Single precision raster, the storage type of every frame on disk.
pub type Grid = Grid2D<f32>;
/// Double precision raster used by oracles and reference computations.
pub type Grid64 = Grid2D<f64>;
