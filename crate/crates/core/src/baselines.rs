//! Reference scanpath generators used to put model scores in context.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::harness::SaliencyMap;
use crate::scanpath::{Fixation, Scanpath, ScanpathSet};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BaselineError {
    #[error("invalid baseline configuration: {0}")]
    InvalidConfig(String),
    #[error("saliency map has no positive value")]
    AllZeroSaliencyMap,
    #[error("saliency map contains a negative or non-finite value")]
    InvalidSaliencyMap,
    #[error("a scanpath needs at least one fixation")]
    ZeroLength,
    #[error("interchanging needs at least two images, got {0}")]
    TooFewImages(usize),
    #[error("no saliency map for image `{0}`")]
    MissingSaliency(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BaselineConfig {
    pub len_min: usize,
    pub len_max: usize,
    /// Inter-fixation interval bounds in seconds.
    pub dt_min: f64,
    pub dt_max: f64,
    pub seed: u64,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            len_min: 1,
            len_max: 35,
            dt_min: 0.1,
            dt_max: 0.5,
            seed: 0,
        }
    }
}

impl BaselineConfig {
    pub fn validate(&self) -> Result<(), BaselineError> {
        if self.len_min < 1 || self.len_min > self.len_max {
            return Err(BaselineError::InvalidConfig(format!(
                "need 1 <= len_min <= len_max, got {}..{}",
                self.len_min, self.len_max
            )));
        }
        if !(self.dt_min > 0.0 && self.dt_min <= self.dt_max && self.dt_max.is_finite()) {
            return Err(BaselineError::InvalidConfig(format!(
                "need 0 < dt_min <= dt_max, got {}..{}",
                self.dt_min, self.dt_max
            )));
        }
        Ok(())
    }
}

fn timestamps<R: Rng>(n: usize, cfg: &BaselineConfig, rng: &mut R) -> Vec<f64> {
    let mut t = 0.0;
    (0..n)
        .map(|i| {
            if i > 0 {
                t += rng.gen_range(cfg.dt_min..=cfg.dt_max);
            }
            t
        })
        .collect()
}

fn uniform_path<R: Rng>(image_id: &str, n: usize, cfg: &BaselineConfig, rng: &mut R) -> Scanpath {
    let positions: Vec<(f64, f64)> = (0..n).map(|_| (rng.gen(), rng.gen())).collect();
    let times = timestamps(n, cfg, rng);
    let fixations = positions
        .into_iter()
        .zip(times)
        .map(|((x, y), t)| Fixation::new(x, y, t))
        .collect();
    Scanpath {
        image_id: image_id.to_string(),
        observer_id: None,
        fixations,
    }
}

/// Uniform positions with a uniformly drawn fixation count.
pub fn baseline_random<R: Rng>(
    image_id: &str,
    cfg: &BaselineConfig,
    rng: &mut R,
) -> Result<Scanpath, BaselineError> {
    cfg.validate()?;
    let n = rng.gen_range(cfg.len_min..=cfg.len_max);
    Ok(uniform_path(image_id, n, cfg, rng))
}

/// Uniform positions with the fixation count of a ground-truth scanpath.
pub fn baseline_random_gt_count<R: Rng>(
    gt: &Scanpath,
    cfg: &BaselineConfig,
    rng: &mut R,
) -> Result<Scanpath, BaselineError> {
    cfg.validate()?;
    if gt.is_empty() {
        return Err(BaselineError::ZeroLength);
    }
    Ok(uniform_path(&gt.image_id, gt.len(), cfg, rng))
}

/// Draws `n` fixations i.i.d. from a saliency map treated as a pixel pmf.
pub fn baseline_saliency_sampling<R: Rng>(
    image_id: &str,
    map: &SaliencyMap,
    n: usize,
    cfg: &BaselineConfig,
    rng: &mut R,
) -> Result<Scanpath, BaselineError> {
    cfg.validate()?;
    if n == 0 {
        return Err(BaselineError::ZeroLength);
    }
    if map.values.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(BaselineError::InvalidSaliencyMap);
    }
    let mut cumulative = Vec::with_capacity(map.values.len());
    let mut total = 0.0;
    for v in &map.values {
        total += v;
        cumulative.push(total);
    }
    if total <= 0.0 {
        return Err(BaselineError::AllZeroSaliencyMap);
    }
    let (w, h) = (map.width as f64, map.height as f64);
    let pixels: Vec<usize> = (0..n)
        .map(|_| {
            let u = rng.gen::<f64>() * total;
            // First pixel whose cumulative mass exceeds u; zero-mass pixels are never chosen.
            cumulative
                .partition_point(|&c| c <= u)
                .min(cumulative.len() - 1)
        })
        .collect();
    let times = timestamps(n, cfg, rng);
    let fixations = pixels
        .into_iter()
        .zip(times)
        .map(|(p, t)| {
            let (r, c) = (p / map.width, p % map.width);
            Fixation::new((c as f64 + 0.5) / w, (r as f64 + 0.5) / h, t)
        })
        .collect();
    Ok(Scanpath {
        image_id: image_id.to_string(),
        observer_id: None,
        fixations,
    })
}

/// Uniform random permutation of `0..n` without fixed points (rejection sampling).
pub fn derangement<R: Rng>(n: usize, rng: &mut R) -> Result<Vec<usize>, BaselineError> {
    if n < 2 {
        return Err(BaselineError::TooFewImages(n));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    loop {
        perm.shuffle(rng);
        if perm.iter().enumerate().all(|(i, &p)| i != p) {
            return Ok(perm);
        }
    }
}

/// Gives every image the ground-truth scanpaths of another image.
pub fn baseline_interchange<R: Rng>(
    gt_set: &ScanpathSet,
    rng: &mut R,
) -> Result<ScanpathSet, BaselineError> {
    let ids: Vec<&String> = gt_set.keys().collect();
    let sigma = derangement(ids.len(), rng)?;
    Ok(ids
        .iter()
        .zip(&sigma)
        .map(|(id, &src)| {
            let paths = gt_set[ids[src]]
                .iter()
                .map(|sp| Scanpath {
                    image_id: (*id).clone(),
                    ..sp.clone()
                })
                .collect();
            ((*id).clone(), paths)
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BaselineKind {
    Random,
    GtCount,
    Saliency,
    Interchange,
}

impl std::str::FromStr for BaselineKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "random" => Ok(Self::Random),
            "gt-count" => Ok(Self::GtCount),
            "saliency" => Ok(Self::Saliency),
            "interchange" => Ok(Self::Interchange),
            other => Err(format!(
                "unknown baseline `{other}` (expected random, gt-count, saliency or interchange)"
            )),
        }
    }
}

/// Per-image RNG stream so results do not depend on iteration order.
fn image_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64 + 1);
    rng
}

/// Produces `k` baseline predictions for every image of `gt_set`.
///
/// Count-matched baselines cycle through the image's ground-truth scanpaths
/// for their lengths. Interchange returns the foreign ground truth as is.
pub fn generate_set(
    kind: BaselineKind,
    gt_set: &ScanpathSet,
    saliency: &BTreeMap<String, SaliencyMap>,
    k: usize,
    cfg: &BaselineConfig,
) -> Result<ScanpathSet, BaselineError> {
    cfg.validate()?;
    if kind == BaselineKind::Interchange {
        let mut rng = image_rng(cfg.seed, 0);
        return baseline_interchange(gt_set, &mut rng);
    }
    let mut out = ScanpathSet::new();
    for (index, (id, gts)) in gt_set.iter().enumerate() {
        let mut rng = image_rng(cfg.seed, index);
        let mut paths = Vec::with_capacity(k);
        for i in 0..k {
            let sp = match kind {
                BaselineKind::Random => baseline_random(id, cfg, &mut rng)?,
                BaselineKind::GtCount => baseline_random_gt_count(&gts[i % gts.len()], cfg, &mut rng)?,
                BaselineKind::Saliency => {
                    let map = saliency
                        .get(id)
                        .ok_or_else(|| BaselineError::MissingSaliency(id.clone()))?;
                    let n = if gts.is_empty() {
                        rng.gen_range(cfg.len_min..=cfg.len_max)
                    } else {
                        gts[i % gts.len()].len()
                    };
                    baseline_saliency_sampling(id, map, n, cfg, &mut rng)?
                }
                BaselineKind::Interchange => unreachable!(),
            };
            paths.push(sp);
        }
        out.insert(id.clone(), paths);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scanpath::{group_by_image, validate_scanpath};

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn gt(id: &str, n: usize) -> Scanpath {
        let fix = (0..n)
            .map(|i| Fixation::new(0.1 + 0.05 * i as f64, 0.5, 0.3 * i as f64))
            .collect();
        Scanpath::new(id, Some("o".into()), fix).unwrap()
    }

    #[test]
    fn forced_length() {
        let cfg = BaselineConfig {
            len_min: 5,
            len_max: 5,
            ..Default::default()
        };
        let sp = baseline_random("img", &cfg, &mut rng(1)).unwrap();
        assert_eq!(sp.len(), 5);
        assert!(validate_scanpath(&sp).is_ok());
        assert_eq!(sp.fixations[0].t, 0.0);
    }

    #[test]
    fn random_outputs_are_valid() {
        let cfg = BaselineConfig::default();
        let mut r = rng(2);
        for _ in 0..200 {
            let sp = baseline_random("img", &cfg, &mut r).unwrap();
            assert!((1..=35).contains(&sp.len()));
            assert!(validate_scanpath(&sp).is_ok());
            for w in sp.fixations.windows(2) {
                let dt = w[1].t - w[0].t;
                assert!((0.1 - 1e-12..=0.5 + 1e-12).contains(&dt));
            }
        }
    }

    #[test]
    fn pooled_positions_are_centered() {
        let cfg = BaselineConfig::default();
        let mut r = rng(3);
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        while xs.len() < 10_000 {
            let sp = baseline_random("img", &cfg, &mut r).unwrap();
            for f in sp.fixations {
                xs.push(f.x);
                ys.push(f.y);
            }
        }
        xs.truncate(10_000);
        ys.truncate(10_000);
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        assert!((mean(&xs) - 0.5).abs() < 0.02);
        assert!((mean(&ys) - 0.5).abs() < 0.02);
    }

    #[test]
    fn gt_count_matches() {
        let cfg = BaselineConfig::default();
        assert_eq!(baseline_random_gt_count(&gt("a", 7), &cfg, &mut rng(4)).unwrap().len(), 7);
        assert_eq!(baseline_random_gt_count(&gt("a", 1), &cfg, &mut rng(4)).unwrap().len(), 1);
        let a = baseline_random_gt_count(&gt("a", 6), &cfg, &mut rng(9)).unwrap();
        let b = baseline_random_gt_count(&gt("a", 6), &cfg, &mut rng(9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn degenerate_saliency_map() {
        let mut values = vec![0.0; 12];
        values[7] = 3.0; // row 1, col 3 of a 4x3 map
        let map = SaliencyMap {
            width: 4,
            height: 3,
            values,
        };
        let sp = baseline_saliency_sampling("img", &map, 25, &BaselineConfig::default(), &mut rng(5)).unwrap();
        assert_eq!(sp.len(), 25);
        for f in &sp.fixations {
            assert_eq!((f.x, f.y), (3.5 / 4.0, 1.5 / 3.0));
        }
    }

    #[test]
    fn saliency_errors() {
        let cfg = BaselineConfig::default();
        let zero = SaliencyMap {
            width: 2,
            height: 2,
            values: vec![0.0; 4],
        };
        assert_eq!(
            baseline_saliency_sampling("i", &zero, 3, &cfg, &mut rng(1)),
            Err(BaselineError::AllZeroSaliencyMap)
        );
        let one = SaliencyMap {
            width: 1,
            height: 1,
            values: vec![1.0],
        };
        assert_eq!(
            baseline_saliency_sampling("i", &one, 0, &cfg, &mut rng(1)),
            Err(BaselineError::ZeroLength)
        );
    }

    #[test]
    fn interchange_two_images() {
        let set = group_by_image(vec![gt("A", 2), gt("B", 3), gt("B", 4)]);
        let out = baseline_interchange(&set, &mut rng(6)).unwrap();
        assert_eq!(out["A"].len(), 2);
        assert_eq!(out["A"][0].len(), 3);
        assert!(out["A"].iter().all(|s| s.image_id == "A"));
        assert_eq!(out["B"][0].len(), 2);
        assert_eq!(out["B"][0].image_id, "B");
    }

    #[test]
    fn interchange_needs_two_images() {
        let set = group_by_image(vec![gt("A", 2)]);
        assert_eq!(
            baseline_interchange(&set, &mut rng(6)),
            Err(BaselineError::TooFewImages(1))
        );
    }

    #[test]
    fn derangements_have_no_fixed_points() {
        let mut r = rng(7);
        for n in 2..30 {
            let p = derangement(n, &mut r).unwrap();
            let mut sorted = p.clone();
            sorted.sort_unstable();
            assert_eq!(sorted, (0..n).collect::<Vec<_>>());
            assert!(p.iter().enumerate().all(|(i, &v)| i != v));
        }
    }

    #[test]
    fn invalid_config() {
        let cfg = BaselineConfig {
            len_min: 0,
            ..Default::default()
        };
        assert!(matches!(
            baseline_random("i", &cfg, &mut rng(1)),
            Err(BaselineError::InvalidConfig(_))
        ));
        let cfg = BaselineConfig {
            dt_min: 0.0,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
    }
}
