//! Cross-view geometric supervision for keypoint heatmaps.
//!
//! The crate covers the full loop of a calibrated multi-camera keypoint
//! pipeline that learns from geometry instead of dense labels:
//!
//! - [`geometry`]: pinhole projection, fundamental matrices, rectifying
//!   rotations, DLT and RANSAC triangulation, pair-degeneracy screening.
//! - [`heatmap`]: Gaussian label grids, the crop/heatmap/rectification
//!   homography chain, inverse-homography warping, row-wise flattening.
//! - [`divergence`]: the epipolar divergence between flattened distributions
//!   and its analytic gradients back to heatmap values.
//! - [`supervision`]: labeled/bootstrap/total losses, triangulation-based
//!   pseudo-labels, and a direct-heatmap gradient-descent harness.
//! - [`metrics`]: PCK curves and triangulation reprojection error.
//! - [`synth`]: deterministic synthetic rigs, scenes, and noise models.
//! - [`io`]: the on-disk formats (rig JSON, heatmap tensors, scenes, CSV).

pub mod divergence;
pub mod geometry;
pub mod heatmap;
pub mod io;
pub mod metrics;
pub mod supervision;
pub mod synth;

/// Side length of the square probability heatmaps produced by default.
pub const DEFAULT_HEATMAP_SIZE: usize = 46;

/// Default height of the resampled crop sitting between the bounding box and
/// the heatmap in the coordinate chain.
pub const DEFAULT_CROP_HEIGHT: usize = 368;

/// View pairs whose epipolar-line direction spread over the working window
/// stays below this many degrees carry supervision in only one direction and
/// are skipped by the pair builders.
pub const DEGENERACY_THRESHOLD_DEG: f64 = 2.0;
