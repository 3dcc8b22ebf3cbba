//! Fixations, scanpaths and their validity rules.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Duration assigned to the only fixation of a single-fixation scanpath, in seconds.
pub const DEFAULT_FIXATION_DURATION: f64 = 0.25;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScanpathError {
    #[error("scanpath has no fixations")]
    EmptyScanpath,
    #[error("fixation {index}: {axis} = {value} is outside [0, 1]")]
    CoordinateOutOfRange {
        index: usize,
        axis: &'static str,
        value: f64,
    },
    #[error("fixation {index}: timestamp {value} is negative or not finite")]
    InvalidTimestamp { index: usize, value: f64 },
    #[error("fixation {index}: timestamp {current} precedes previous timestamp {previous}")]
    NonMonotoneTimestamps {
        index: usize,
        previous: f64,
        current: f64,
    },
}

/// A gaze dwell at a normalized image position, with onset time in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Fixation {
    pub x: f64,
    pub y: f64,
    pub t: f64,
}

impl Fixation {
    pub const fn new(x: f64, y: f64, t: f64) -> Self {
        Self { x, y, t }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scanpath {
    pub image_id: String,
    pub observer_id: Option<String>,
    pub fixations: Vec<Fixation>,
}

impl Scanpath {
    /// Builds a scanpath and validates it.
    pub fn new(
        image_id: impl Into<String>,
        observer_id: Option<String>,
        fixations: Vec<Fixation>,
    ) -> Result<Self, ScanpathError> {
        let sp = Self {
            image_id: image_id.into(),
            observer_id,
            fixations,
        };
        validate_scanpath(&sp)?;
        Ok(sp)
    }

    pub fn len(&self) -> usize {
        self.fixations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fixations.is_empty()
    }

    /// Per-fixation durations, see [`durations`].
    pub fn durations(&self) -> Vec<f64> {
        durations(self)
    }
}

/// Scanpaths grouped by image id, in deterministic id order.
pub type ScanpathSet = BTreeMap<String, Vec<Scanpath>>;

/// Groups scanpaths by image id, keeping each image's input order.
pub fn group_by_image(scanpaths: impl IntoIterator<Item = Scanpath>) -> ScanpathSet {
    let mut set = ScanpathSet::new();
    for sp in scanpaths {
        set.entry(sp.image_id.clone()).or_default().push(sp);
    }
    set
}

/// Checks every scanpath invariant and returns the scanpath unchanged.
pub fn validate_scanpath(sp: &Scanpath) -> Result<&Scanpath, ScanpathError> {
    if sp.fixations.is_empty() {
        return Err(ScanpathError::EmptyScanpath);
    }
    let mut previous: Option<f64> = None;
    for (index, f) in sp.fixations.iter().enumerate() {
        for (axis, value) in [("x", f.x), ("y", f.y)] {
            // NaN fails the range test as well.
            if !(0.0..=1.0).contains(&value) {
                return Err(ScanpathError::CoordinateOutOfRange { index, axis, value });
            }
        }
        if !f.t.is_finite() || f.t < 0.0 {
            return Err(ScanpathError::InvalidTimestamp { index, value: f.t });
        }
        if let Some(prev) = previous {
            if f.t < prev {
                return Err(ScanpathError::NonMonotoneTimestamps {
                    index,
                    previous: prev,
                    current: f.t,
                });
            }
        }
        previous = Some(f.t);
    }
    Ok(sp)
}

/// Fixation durations derived from onset timestamps.
///
/// Every fixation except the last lasts until the next onset. The last one gets
/// the mean of the others, and a lone fixation gets
/// [`DEFAULT_FIXATION_DURATION`].
pub fn durations(sp: &Scanpath) -> Vec<f64> {
    onset_durations(&sp.fixations)
}

pub(crate) fn onset_durations(fixations: &[Fixation]) -> Vec<f64> {
    match fixations.len() {
        0 => Vec::new(),
        1 => vec![DEFAULT_FIXATION_DURATION],
        n => {
            let mut out: Vec<f64> = fixations.windows(2).map(|w| w[1].t - w[0].t).collect();
            let mean = out.iter().sum::<f64>() / (n - 1) as f64;
            out.push(mean);
            out
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sp(fix: &[(f64, f64, f64)]) -> Scanpath {
        Scanpath {
            image_id: "img".into(),
            observer_id: None,
            fixations: fix.iter().map(|&(x, y, t)| Fixation::new(x, y, t)).collect(),
        }
    }

    #[test]
    fn minimal_scanpath_is_valid() {
        let s = sp(&[(0.5, 0.5, 0.0)]);
        assert_eq!(validate_scanpath(&s), Ok(&s));
    }

    #[test]
    fn decreasing_timestamps_are_rejected() {
        let s = sp(&[(0.5, 0.5, 1.0), (0.5, 0.5, 0.5)]);
        assert!(matches!(
            validate_scanpath(&s),
            Err(ScanpathError::NonMonotoneTimestamps { index: 1, .. })
        ));
    }

    #[test]
    fn out_of_range_coordinate_reports_index() {
        let s = sp(&[(1.2, 0.5, 0.0)]);
        assert_eq!(
            validate_scanpath(&s),
            Err(ScanpathError::CoordinateOutOfRange {
                index: 0,
                axis: "x",
                value: 1.2
            })
        );
        let s = sp(&[(0.2, 0.5, 0.0), (0.3, f64::NAN, 0.1)]);
        assert!(matches!(
            validate_scanpath(&s),
            Err(ScanpathError::CoordinateOutOfRange { index: 1, axis: "y", .. })
        ));
    }

    #[test]
    fn empty_and_negative_time() {
        assert_eq!(validate_scanpath(&sp(&[])), Err(ScanpathError::EmptyScanpath));
        assert!(matches!(
            validate_scanpath(&sp(&[(0.1, 0.1, -0.1)])),
            Err(ScanpathError::InvalidTimestamp { index: 0, .. })
        ));
    }

    #[test]
    fn durations_follow_onsets() {
        let d = durations(&sp(&[(0.1, 0.1, 0.0), (0.2, 0.2, 0.2), (0.3, 0.3, 0.5)]));
        assert_eq!(d.len(), 3);
        assert!((d[0] - 0.2).abs() < 1e-15);
        assert!((d[1] - 0.3).abs() < 1e-15);
        assert!((d[2] - 0.25).abs() < 1e-15);

        assert_eq!(durations(&sp(&[(0.1, 0.1, 3.0)])), vec![0.25]);
        assert_eq!(durations(&sp(&[(0.1, 0.1, 0.0), (0.1, 0.1, 1.0)])), vec![1.0, 1.0]);
    }
}
