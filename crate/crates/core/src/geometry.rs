//! Planar and spherical geometry over normalized image coordinates.
//!
//! Spherical coordinates follow the equirectangular layout: `x` spans longitude
//! from left to right and `y` spans latitude from top (north pole) to bottom.

use std::f64::consts::{PI, SQRT_2};

use serde::{Deserialize, Serialize};

use crate::scanpath::{Fixation, Scanpath};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Geometry {
    #[default]
    Planar,
    Spherical,
}

impl Geometry {
    /// Largest attainable distance between two positions.
    pub fn normalizer(self) -> f64 {
        match self {
            Geometry::Planar => SQRT_2,
            Geometry::Spherical => PI,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Geometry::Planar => "planar",
            Geometry::Spherical => "spherical",
        }
    }

    pub fn distance(self, a: &Fixation, b: &Fixation) -> f64 {
        distance(self, a, b)
    }
}

impl std::str::FromStr for Geometry {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "planar" => Ok(Geometry::Planar),
            "spherical" => Ok(Geometry::Spherical),
            other => Err(format!("unknown geometry `{other}` (expected planar or spherical)")),
        }
    }
}

/// A point on the unit sphere in radians.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpherePoint {
    pub lon: f64,
    pub lat: f64,
}

impl SpherePoint {
    pub fn from_normalized(x: f64, y: f64) -> Self {
        Self {
            lon: (x - 0.5) * 2.0 * PI,
            lat: (0.5 - y) * PI,
        }
    }

    pub fn to_normalized(self) -> (f64, f64) {
        (self.lon / (2.0 * PI) + 0.5, 0.5 - self.lat / PI)
    }

    fn unit(self) -> [f64; 3] {
        let (sl, cl) = self.lat.sin_cos();
        let (so, co) = self.lon.sin_cos();
        [cl * co, cl * so, sl]
    }

    /// Local east and south unit vectors of the tangent plane.
    fn tangent_frame(self) -> ([f64; 3], [f64; 3]) {
        let (sl, cl) = self.lat.sin_cos();
        let (so, co) = self.lon.sin_cos();
        let east = [-so, co, 0.0];
        let south = [sl * co, sl * so, -cl];
        (east, south)
    }
}

impl From<&Fixation> for SpherePoint {
    fn from(f: &Fixation) -> Self {
        SpherePoint::from_normalized(f.x, f.y)
    }
}

fn dot(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn cross(a: &[f64; 3], b: &[f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

/// Central angle between two sphere points in radians.
pub fn central_angle(a: SpherePoint, b: SpherePoint) -> f64 {
    let (ua, ub) = (a.unit(), b.unit());
    let c = cross(&ua, &ub);
    dot(&c, &c).sqrt().atan2(dot(&ua, &ub))
}

/// Position distance between two fixations in the given geometry.
pub fn distance(g: Geometry, a: &Fixation, b: &Fixation) -> f64 {
    match g {
        Geometry::Planar => (a.x - b.x).hypot(a.y - b.y),
        Geometry::Spherical => central_angle(a.into(), b.into()),
    }
}

/// A saccade between two consecutive fixations.
///
/// `displacement` is the planar difference vector, or on the sphere the
/// tangent vector at the start point whose length is the central angle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SaccadeVector {
    pub start: Fixation,
    pub end: Fixation,
    pub displacement: [f64; 2],
    pub amplitude: f64,
    pub direction: f64,
}

impl SaccadeVector {
    pub fn new(g: Geometry, start: Fixation, end: Fixation) -> Self {
        match g {
            Geometry::Planar => {
                let d = [end.x - start.x, end.y - start.y];
                Self {
                    start,
                    end,
                    displacement: d,
                    amplitude: d[0].hypot(d[1]),
                    direction: d[1].atan2(d[0]),
                }
            }
            Geometry::Spherical => {
                let (a, b) = (SpherePoint::from(&start), SpherePoint::from(&end));
                let amplitude = central_angle(a, b);
                let (ua, ub) = (a.unit(), b.unit());
                let along = dot(&ua, &ub);
                let t = [ub[0] - along * ua[0], ub[1] - along * ua[1], ub[2] - along * ua[2]];
                let (east, south) = a.tangent_frame();
                let direction = dot(&t, &south).atan2(dot(&t, &east));
                let displacement = if amplitude == 0.0 {
                    [0.0, 0.0]
                } else {
                    [amplitude * direction.cos(), amplitude * direction.sin()]
                };
                Self {
                    start,
                    end,
                    displacement,
                    amplitude,
                    direction,
                }
            }
        }
    }
}

/// Saccades between consecutive fixations; empty for a single fixation.
pub fn saccades(sp: &Scanpath, g: Geometry) -> Vec<SaccadeVector> {
    saccades_of(&sp.fixations, g)
}

pub(crate) fn saccades_of(fixations: &[Fixation], g: Geometry) -> Vec<SaccadeVector> {
    fixations
        .windows(2)
        .map(|w| SaccadeVector::new(g, w[0], w[1]))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn f(x: f64, y: f64) -> Fixation {
        Fixation::new(x, y, 0.0)
    }

    #[test]
    fn reference_distances() {
        assert!((distance(Geometry::Planar, &f(0.0, 0.0), &f(1.0, 1.0)) - SQRT_2).abs() < 1e-15);
        let quarter = distance(Geometry::Spherical, &f(0.5, 0.5), &f(0.75, 0.5));
        assert!((quarter - PI / 2.0).abs() < 1e-12);
        let antipodal = distance(Geometry::Spherical, &f(0.25, 0.5), &f(0.75, 0.5));
        assert!((antipodal - PI).abs() < 1e-12);
        // Poles are single points whatever the longitude.
        let pole = distance(Geometry::Spherical, &f(0.1, 0.0), &f(0.9, 0.0));
        assert!(pole < 1e-12);
    }

    #[test]
    fn sphere_point_round_trip() {
        let p = SpherePoint::from_normalized(0.75, 0.5);
        assert!((p.lon - PI / 2.0).abs() < 1e-15 && p.lat.abs() < 1e-15);
        let (x, y) = p.to_normalized();
        assert!((x - 0.75).abs() < 1e-15 && (y - 0.5).abs() < 1e-15);
    }

    #[test]
    fn distance_properties_on_random_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for g in [Geometry::Planar, Geometry::Spherical] {
            for _ in 0..1000 {
                let a = f(rng.gen(), rng.gen());
                let b = f(rng.gen(), rng.gen());
                let dab = distance(g, &a, &b);
                assert!(dab >= 0.0);
                assert!((dab - distance(g, &b, &a)).abs() <= 1e-12);
                assert_eq!(distance(g, &a, &a), 0.0);
                assert!(dab <= g.normalizer() + 1e-12);
                if a != b && g == Geometry::Planar {
                    assert!(dab > 0.0);
                }
            }
        }
    }

    #[test]
    fn planar_saccade_is_3_4_5() {
        let s = saccades_of(&[f(0.1, 0.1), f(0.4, 0.5)], Geometry::Planar);
        assert_eq!(s.len(), 1);
        assert!((s[0].displacement[0] - 0.3).abs() < 1e-15);
        assert!((s[0].displacement[1] - 0.4).abs() < 1e-15);
        assert!((s[0].amplitude - 0.5).abs() < 1e-15);
    }

    #[test]
    fn saccade_chain_telescopes() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let fix: Vec<_> = (0..5).map(|_| f(rng.gen(), rng.gen())).collect();
        let s = saccades_of(&fix, Geometry::Planar);
        assert_eq!(s.len(), 4);
        for w in s.windows(2) {
            assert_eq!(w[0].end, w[1].start);
        }
        let sum = s.iter().fold([0.0, 0.0], |acc, v| {
            [acc[0] + v.displacement[0], acc[1] + v.displacement[1]]
        });
        assert!((sum[0] - (fix[4].x - fix[0].x)).abs() < 1e-12);
        assert!((sum[1] - (fix[4].y - fix[0].y)).abs() < 1e-12);
        assert!(saccades_of(&fix[..1], Geometry::Planar).is_empty());
    }

    #[test]
    fn spherical_saccade_direction_matches_image_axes() {
        // Eastward along the equator reads as "right" (angle 0), southward as "down" (pi/2).
        let east = SaccadeVector::new(Geometry::Spherical, f(0.5, 0.5), f(0.6, 0.5));
        assert!(east.direction.abs() < 1e-12);
        assert!((east.amplitude - 0.2 * PI).abs() < 1e-12);
        let south = SaccadeVector::new(Geometry::Spherical, f(0.5, 0.5), f(0.5, 0.7));
        assert!((south.direction - PI / 2.0).abs() < 1e-12);
        let len = south.displacement[0].hypot(south.displacement[1]);
        assert!((len - south.amplitude).abs() < 1e-12);
    }
}
