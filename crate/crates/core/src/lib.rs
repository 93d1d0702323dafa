//! Patch-based crowd counting with a parameter-free patch rescaling router.
//!
//! An image is cut into 224x224 tiles; each tile is classified into one of four
//! crowd-density classes and routed through the rescaling module (discard,
//! 2x down-scale with zero padding, identity, or 4-way split with 2x up-scale)
//! before counting. Three counting schemes are provided in [`pipelines`]:
//! modular (separate classifier and regressor), two-pass, and single-pass.
//!
//! Modules:
//! - [`geometry`]: rasters, tiling, interpolation.
//! - [`prm`]: density classes and the rescaling router.
//! - [`labeling`]: counts from head annotations, class labels, `c_max`,
//!   training-set sampling.
//! - [`netspec`]: architecture descriptors with analytic shapes and parameter counts.
//! - [`predict`]: the predictor abstraction, losses, and a small trainable network.
//! - [`pipelines`]: whole-image counting.
//! - [`evalharness`]: metrics and experiment runners.
//! - [`dataio`]: manifests, sidecars, patch archives, synthetic data.

pub mod dataio;
pub mod error;
pub mod evalharness;
pub mod geometry;
pub mod labeling;
pub mod netspec;
pub mod pipelines;
pub mod predict;
pub mod prm;

pub use error::{Error, Result};
