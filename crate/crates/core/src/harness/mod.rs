//! Dataset I/O, synthetic data, distribution statistics and config files.

pub mod io;
pub mod kv;
pub mod pgm;
pub mod stats;
pub mod synth;

pub use io::{load_scanpaths, save_planar_lines, LoadError, ScanpathFormat};
pub use pgm::{read_pgm, PgmError, PgmImage, SaliencyMap};
pub use stats::{divergence, spatial_histogram, SpatialHistogram, StatsError};
pub use synth::{generate_synthetic, SyntheticDataset, SyntheticSpec};
