//! Vector-based scanpath dissimilarity.
//!
//! Two scanpaths are reduced to saccade sequences, aligned along the cheapest
//! monotone path through their dissimilarity matrix, and compared on shape,
//! amplitude, direction, landing position and fixation duration. Every
//! component lies in `[0, 1]` and lower means more similar.

mod align;
mod measures;

pub use align::{align, AlignmentPath};
pub use measures::{component_measures, dissimilarity_matrix, MeasureSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{distance, saccades_of, Geometry};
use crate::matrix::Matrix;
use crate::scanpath::{validate_scanpath, Fixation, Scanpath, ScanpathError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricError {
    #[error("saccade list is empty")]
    EmptySaccadeList,
    #[error("alignment path does not fit the saccade sequences")]
    InvalidAlignment,
    #[error("component weights must be finite, nonnegative and sum to a positive value")]
    InvalidWeights,
    #[error(transparent)]
    Scanpath(#[from] ScanpathError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricConfig {
    /// Weights of shape, amplitude, direction, position and duration.
    pub weights: [f64; 5],
    /// Merge fixations closer than this distance to the previous kept fixation
    /// before comparing. Off by default.
    pub simplify_below: Option<f64>,
}

impl Default for MetricConfig {
    fn default() -> Self {
        Self {
            weights: [0.2; 5],
            simplify_below: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct JarodzkaScore {
    pub value: f64,
    pub components: MeasureSet,
    pub alignment: AlignmentPath,
}

fn simplify(fixations: &[Fixation], g: Geometry, threshold: f64) -> Vec<Fixation> {
    let mut out: Vec<Fixation> = Vec::with_capacity(fixations.len());
    for f in fixations {
        match out.last() {
            Some(prev) if distance(g, prev, f) < threshold => {}
            _ => out.push(*f),
        }
    }
    out
}

/// Scores two scanpaths with the default configuration.
pub fn jarodzka(a: &Scanpath, b: &Scanpath, g: Geometry) -> Result<f64, MetricError> {
    jarodzka_score(a, b, g, &MetricConfig::default()).map(|s| s.value)
}

/// Weighted multi-component dissimilarity of two scanpaths.
///
/// When either path has a single fixation there are no saccades to compare,
/// and the score degrades to the mean aligned fixation distance divided by
/// the geometry normalizer, reported as the position component.
pub fn jarodzka_score(
    a: &Scanpath,
    b: &Scanpath,
    g: Geometry,
    cfg: &MetricConfig,
) -> Result<JarodzkaScore, MetricError> {
    validate_scanpath(a)?;
    validate_scanpath(b)?;
    let w = cfg.weights;
    let wsum: f64 = w.iter().sum();
    if w.iter().any(|x| !x.is_finite() || *x < 0.0) || wsum <= 0.0 {
        return Err(MetricError::InvalidWeights);
    }

    let (fa, fb) = match cfg.simplify_below {
        Some(thr) => (simplify(&a.fixations, g, thr), simplify(&b.fixations, g, thr)),
        None => (a.fixations.clone(), b.fixations.clone()),
    };

    if fa.len() < 2 || fb.len() < 2 {
        let m = Matrix::from_fn(fa.len(), fb.len(), |i, j| distance(g, &fa[i], &fb[j]));
        let alignment = align(&m);
        let position = alignment.cost(&m) / alignment.len() as f64 / g.normalizer();
        return Ok(JarodzkaScore {
            value: position,
            components: MeasureSet {
                position,
                ..MeasureSet::default()
            },
            alignment,
        });
    }

    let (sa, sb) = (saccades_of(&fa, g), saccades_of(&fb, g));
    let m = dissimilarity_matrix(&sa, &sb, g)?;
    let alignment = align(&m);
    let components = component_measures(&fa, &fb, &alignment, g)?;
    let value = components
        .as_array()
        .iter()
        .zip(w.iter())
        .map(|(c, w)| c * w)
        .sum::<f64>()
        / wsum;
    Ok(JarodzkaScore {
        value,
        components,
        alignment,
    })
}
