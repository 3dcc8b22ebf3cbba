//! Scanpath prediction with a conditional adversarial recurrent model, and the
//! evaluation tooling around it: a vector-based scanpath metric for planar and
//! equirectangular images, one-to-one Hungarian matching, reference baselines
//! and spatial distribution diagnostics.

pub mod assignment;
pub mod baselines;
pub mod eval;
pub mod geometry;
pub mod harness;
pub mod matrix;
pub mod metric;
pub mod nn;
pub mod par;
pub mod scanpath;
pub mod train;

pub use geometry::Geometry;
pub use matrix::Matrix;
pub use scanpath::{Fixation, Scanpath, ScanpathSet};
