//! Salient local 3D features on voxel grids and bag-of-visual-words shape retrieval.
//!
//! Pipeline: mesh → solid voxel grid → Gaussian scale space and DoG stack →
//! surface extrema (keypoints) → rotation-normalized orientation histograms on a
//! geodesic sphere (descriptors) → K-means codebook → per-model word histograms
//! → ranked retrieval and NN/FT/ST/DCG evaluation.

pub mod bow;
pub mod config;
pub mod descriptor;
pub mod error;
pub mod eval;
pub mod geodesic;
pub mod keypoints;
pub mod mesh;
pub mod pipeline;
pub mod rotation;
pub mod scale_space;
pub mod shapes;
pub mod synthetic;
pub mod voxel;

pub use error::{Error, Result};

/// Scientific notation with 9 significant digits, as used by every CSV writer.
pub(crate) fn sig9(v: f64) -> String {
    format!("{v:.8e}")
}
