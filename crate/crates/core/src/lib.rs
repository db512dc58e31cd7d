//! Camera-LiDAR depth completion.
//!
//! Fuses one RGB image with a sparse LiDAR point cloud into a dense
//! per-pixel depth map plus an uncertainty map. The image is segmented into
//! SLIC superpixels, LiDAR observations are aggregated per superpixel, and
//! a quadratic conditional-random-field energy with colour, surface-normal,
//! and 3D-proximity pairwise terms is minimized by reducing it to one
//! sparse linear system solved with Conjugate Gradient Squared.

pub mod baseline;
pub mod crf;
pub mod dataset;
pub mod error;
pub mod geometry;
pub mod io;
pub mod metrics;
pub mod pipeline;
pub mod solver;
pub mod superpixel;
pub mod synth;

pub use error::{Error, Result};
pub use geometry::{NormalCloud, ProjectedPoint};
pub use io::{CalibrationSet, DepthImage, RawPointCloud, RgbImage, RunConfig};
pub use solver::{SolveReport, SparseMatrix};
