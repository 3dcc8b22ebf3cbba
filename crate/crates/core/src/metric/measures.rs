use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::{AlignmentPath, MetricError};
use crate::geometry::{central_angle, distance, Geometry, SaccadeVector};
use crate::matrix::Matrix;
use crate::scanpath::{onset_durations, Fixation};

/// The five normalized dissimilarity components, each in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MeasureSet {
    pub shape: f64,
    pub amplitude: f64,
    pub direction: f64,
    pub position: f64,
    pub duration: f64,
}

impl MeasureSet {
    pub fn as_array(&self) -> [f64; 5] {
        [
            self.shape,
            self.amplitude,
            self.direction,
            self.position,
            self.duration,
        ]
    }
}

/// Pairwise saccade dissimilarities.
///
/// Planar cells are the norm of the displacement difference. Spherical cells
/// are the mean of the central angles between the two start points and the
/// two end points.
pub fn dissimilarity_matrix(
    a: &[SaccadeVector],
    b: &[SaccadeVector],
    g: Geometry,
) -> Result<Matrix, MetricError> {
    if a.is_empty() || b.is_empty() {
        return Err(MetricError::EmptySaccadeList);
    }
    Ok(Matrix::from_fn(a.len(), b.len(), |i, j| {
        let (u, v) = (&a[i], &b[j]);
        match g {
            Geometry::Planar => {
                (u.displacement[0] - v.displacement[0]).hypot(u.displacement[1] - v.displacement[1])
            }
            Geometry::Spherical => {
                0.5 * (central_angle((&u.start).into(), (&v.start).into())
                    + central_angle((&u.end).into(), (&v.end).into()))
            }
        }
    }))
}

/// Unsigned angle between two directions, in `[0, pi]`.
pub(crate) fn angle_between(a: f64, b: f64) -> f64 {
    let d = (a - b).abs() % (2.0 * PI);
    d.min(2.0 * PI - d)
}

pub(crate) fn duration_difference(a: f64, b: f64) -> f64 {
    let hi = a.max(b);
    if hi > 0.0 {
        (a - b).abs() / hi
    } else {
        0.0
    }
}

/// Averages the five measures over the aligned saccade pairs.
///
/// Position and duration compare the fixations each saccade lands on.
pub fn component_measures(
    a: &[Fixation],
    b: &[Fixation],
    path: &AlignmentPath,
    g: Geometry,
) -> Result<MeasureSet, MetricError> {
    let (sa, sb) = (
        crate::geometry::saccades_of(a, g),
        crate::geometry::saccades_of(b, g),
    );
    if !path.is_valid_for(sa.len(), sb.len()) {
        return Err(MetricError::InvalidAlignment);
    }
    let (da, db) = (onset_durations(a), onset_durations(b));
    let norm = g.normalizer();

    let mut sum = [0.0; 5];
    for &(i, j) in &path.pairs {
        let (u, v) = (&sa[i], &sb[j]);
        let diff = (u.displacement[0] - v.displacement[0]).hypot(u.displacement[1] - v.displacement[1]);
        sum[0] += diff / (2.0 * norm);
        sum[1] += (u.amplitude - v.amplitude).abs() / norm;
        sum[2] += angle_between(u.direction, v.direction) / PI;
        sum[3] += distance(g, &u.end, &v.end) / norm;
        sum[4] += duration_difference(da[i + 1], db[j + 1]);
    }
    let k = path.len() as f64;
    Ok(MeasureSet {
        shape: sum[0] / k,
        amplitude: sum[1] / k,
        direction: sum[2] / k,
        position: sum[3] / k,
        duration: sum[4] / k,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::saccades_of;
    use crate::metric::align;

    fn fx(pts: &[(f64, f64, f64)]) -> Vec<Fixation> {
        pts.iter().map(|&(x, y, t)| Fixation::new(x, y, t)).collect()
    }

    #[test]
    fn matrix_entries() {
        let a = saccades_of(&fx(&[(0.1, 0.1, 0.0), (0.4, 0.5, 0.2)]), Geometry::Planar);
        let m = dissimilarity_matrix(&a, &a, Geometry::Planar).unwrap();
        assert_eq!(m.as_slice(), &[0.0]);

        let still = saccades_of(&fx(&[(0.2, 0.2, 0.0), (0.2, 0.2, 0.2)]), Geometry::Planar);
        let m = dissimilarity_matrix(&a, &still, Geometry::Planar).unwrap();
        assert!((m[(0, 0)] - 0.5).abs() < 1e-15);

        let b = saccades_of(
            &fx(&[(0.1, 0.9, 0.0), (0.3, 0.2, 0.1), (0.8, 0.8, 0.4), (0.5, 0.5, 0.6)]),
            Geometry::Spherical,
        );
        let m = dissimilarity_matrix(&a, &b, Geometry::Spherical).unwrap();
        assert_eq!((m.rows(), m.cols()), (1, 3));
        assert!(m.as_slice().iter().all(|&c| c >= 0.0));

        assert_eq!(
            dissimilarity_matrix(&[], &a, Geometry::Planar),
            Err(MetricError::EmptySaccadeList)
        );
    }

    #[test]
    fn shifted_copy_only_moves_position() {
        let a = fx(&[(0.1, 0.1, 0.0), (0.4, 0.5, 0.3)]);
        let b = fx(&[(0.2, 0.1, 0.0), (0.5, 0.5, 0.3)]);
        let path = AlignmentPath { pairs: vec![(0, 0)] };
        let m = component_measures(&a, &b, &path, Geometry::Planar).unwrap();
        assert!(m.shape.abs() < 1e-15);
        assert!(m.amplitude.abs() < 1e-15);
        assert!(m.direction.abs() < 1e-15);
        assert!(m.duration.abs() < 1e-15);
        assert!((m.position - 0.1 / std::f64::consts::SQRT_2).abs() < 1e-12);
    }

    #[test]
    fn opposite_saccades_have_unit_direction() {
        let a = fx(&[(0.2, 0.2, 0.0), (0.5, 0.6, 0.3)]);
        let b = fx(&[(0.5, 0.6, 0.0), (0.2, 0.2, 0.3)]);
        let path = AlignmentPath { pairs: vec![(0, 0)] };
        let m = component_measures(&a, &b, &path, Geometry::Planar).unwrap();
        assert!((m.direction - 1.0).abs() < 1e-12);
        // |u - v| = 1 for the 3-4-5 pair, normalized by 2 * sqrt(2).
        assert!((m.shape - 0.5 / std::f64::consts::SQRT_2).abs() < 1e-12);
    }

    #[test]
    fn identical_paths_measure_zero() {
        let a = fx(&[(0.2, 0.2, 0.0), (0.5, 0.6, 0.3), (0.9, 0.1, 0.35), (0.4, 0.4, 0.9)]);
        for g in [Geometry::Planar, Geometry::Spherical] {
            let s = saccades_of(&a, g);
            let path = align(&dissimilarity_matrix(&s, &s, g).unwrap());
            let m = component_measures(&a, &a, &path, g).unwrap();
            assert_eq!(m.as_array(), [0.0; 5]);
        }
    }

    #[test]
    fn rejects_mismatched_path() {
        let a = fx(&[(0.2, 0.2, 0.0), (0.5, 0.6, 0.3)]);
        let path = AlignmentPath {
            pairs: vec![(0, 0), (1, 1)],
        };
        assert_eq!(
            component_measures(&a, &a, &path, Geometry::Planar),
            Err(MetricError::InvalidAlignment)
        );
    }

    #[test]
    fn duration_ratio_edge_cases() {
        assert_eq!(duration_difference(0.0, 0.0), 0.0);
        assert_eq!(duration_difference(0.0, 2.0), 1.0);
        assert!((duration_difference(0.2, 0.3) - 1.0 / 3.0).abs() < 1e-15);
        assert!((angle_between(3.0, -3.0) - (2.0 * PI - 6.0)).abs() < 1e-12);
    }
}
