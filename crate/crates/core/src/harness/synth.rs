//! Seeded synthetic stand-in for a free-viewing dataset.
//!
//! Each image is a sum of Gaussian blobs on a dark background. Observers start
//! at the image center and then visit blob centers from brightest to dimmest,
//! with Gaussian positional noise. Brighter blobs hold the gaze longer.

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use super::io::{load_scanpaths, save_planar_lines, LoadError, ScanpathFormat};
use super::kv::{KvError, KvMap};
use super::pgm::{read_pgm_image, write_pgm, PgmError, PgmImage, SaliencyMap};
use crate::scanpath::{Fixation, Scanpath};

pub const SCANPATH_FILE: &str = "scanpaths.jsonl";
pub const IMAGE_DIR: &str = "images";
pub const SALIENCY_DIR: &str = "saliency";

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Config(#[from] KvError),
    #[error(transparent)]
    Pgm(#[from] PgmError),
    #[error(transparent)]
    Load(#[from] LoadError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub n_images: usize,
    pub width: usize,
    pub height: usize,
    pub blobs_min: usize,
    pub blobs_max: usize,
    /// Blob Gaussian radius as a fraction of the image width.
    pub blob_radius: f64,
    /// Spread of blob centers around the image center; lower means stronger center bias.
    pub blob_spread: f64,
    pub observers: usize,
    /// Positional noise of each fixation, normalized units.
    pub sigma: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_images: 200,
            width: 64,
            height: 64,
            blobs_min: 2,
            blobs_max: 4,
            blob_radius: 0.06,
            blob_spread: 0.2,
            observers: 3,
            sigma: 0.03,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: &str| Err(SynthError::InvalidSpec(m.to_string()));
        if self.n_images == 0 || self.observers == 0 || self.width == 0 || self.height == 0 {
            return bad("image count, observer count and dimensions must be at least 1");
        }
        if self.blobs_min == 0 || self.blobs_min > self.blobs_max {
            return bad("need 1 <= blobs_min <= blobs_max");
        }
        if !(self.sigma > 0.0 && self.blob_radius > 0.0 && self.blob_spread > 0.0) {
            return bad("sigma, blob_radius and blob_spread must be positive");
        }
        Ok(())
    }

    /// Reads a flat `key = value` spec; absent keys keep their defaults.
    pub fn from_kv(text: &str) -> Result<(Self, u64), SynthError> {
        let mut kv = KvMap::parse(text)?;
        let mut s = Self::default();
        let mut seed = 0u64;
        kv.take("n_images", &mut s.n_images)?;
        kv.take("width", &mut s.width)?;
        kv.take("height", &mut s.height)?;
        kv.take("blobs_min", &mut s.blobs_min)?;
        kv.take("blobs_max", &mut s.blobs_max)?;
        kv.take("blob_radius", &mut s.blob_radius)?;
        kv.take("blob_spread", &mut s.blob_spread)?;
        kv.take("observers", &mut s.observers)?;
        kv.take("sigma", &mut s.sigma)?;
        kv.take("seed", &mut seed)?;
        kv.finish()?;
        s.validate()?;
        Ok((s, seed))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Blob {
    pub x: f64,
    pub y: f64,
    pub intensity: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticImage {
    pub id: String,
    pub pixels: PgmImage,
    /// Sorted by decreasing intensity.
    pub blobs: Vec<Blob>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDataset {
    pub images: Vec<SyntheticImage>,
    pub scanpaths: Vec<Scanpath>,
    pub saliency: BTreeMap<String, SaliencyMap>,
}

fn render(blobs: &[Blob], spec: &SyntheticSpec, maxval: f64) -> Vec<f64> {
    let (w, h) = (spec.width, spec.height);
    let r2 = 2.0 * spec.blob_radius * spec.blob_radius;
    let mut out = Vec::with_capacity(w * h);
    for row in 0..h {
        let y = (row as f64 + 0.5) / h as f64;
        for col in 0..w {
            let x = (col as f64 + 0.5) / w as f64;
            let v: f64 = blobs
                .iter()
                .map(|b| b.intensity * (-((x - b.x).powi(2) + (y - b.y).powi(2)) / r2).exp())
                .sum();
            out.push(v.min(1.0) * maxval);
        }
    }
    out
}

fn noisy(v: f64, noise: &Normal<f64>, rng: &mut impl Rng) -> f64 {
    (v + noise.sample(rng)).clamp(0.0, 1.0)
}

pub fn generate_synthetic<R: Rng>(spec: &SyntheticSpec, rng: &mut R) -> Result<SyntheticDataset, SynthError> {
    spec.validate()?;
    let spread = Normal::new(0.0, spec.blob_spread).expect("positive spread");
    let noise = Normal::new(0.0, spec.sigma).expect("positive sigma");
    let width = (spec.n_images - 1).to_string().len();

    let mut images = Vec::with_capacity(spec.n_images);
    let mut scanpaths = Vec::new();
    let mut saliency = BTreeMap::new();
    for i in 0..spec.n_images {
        let id = format!("img{i:0width$}");
        let count = rng.gen_range(spec.blobs_min..=spec.blobs_max);
        let mut blobs: Vec<Blob> = (0..count)
            .map(|_| Blob {
                x: (0.5 + spread.sample(rng)).clamp(0.1, 0.9),
                y: (0.5 + spread.sample(rng)).clamp(0.1, 0.9),
                intensity: rng.gen_range(0.3..1.0),
            })
            .collect();
        blobs.sort_by(|a, b| b.intensity.total_cmp(&a.intensity));

        let pixels = PgmImage {
            width: spec.width,
            height: spec.height,
            maxval: 255,
            data: render(&blobs, spec, 255.0)
                .into_iter()
                .map(|v| v.round() as u16)
                .collect(),
        };
        let sal = PgmImage {
            width: spec.width,
            height: spec.height,
            maxval: 65535,
            data: render(&blobs, spec, 65535.0)
                .into_iter()
                .map(|v| v.round() as u16)
                .collect(),
        };
        saliency.insert(id.clone(), SaliencyMap::from(sal));

        for o in 0..spec.observers {
            let mut t = 0.0;
            let mut fixations = vec![Fixation::new(
                noisy(0.5, &noise, rng),
                noisy(0.5, &noise, rng),
                t,
            )];
            t += 0.2 + 0.05 * rng.gen::<f64>();
            for b in &blobs {
                fixations.push(Fixation::new(noisy(b.x, &noise, rng), noisy(b.y, &noise, rng), t));
                t += 0.15 + 0.3 * b.intensity + 0.05 * rng.gen::<f64>();
            }
            scanpaths.push(Scanpath {
                image_id: id.clone(),
                observer_id: Some(format!("obs{o}")),
                fixations,
            });
        }
        images.push(SyntheticImage { id, pixels, blobs });
    }
    Ok(SyntheticDataset {
        images,
        scanpaths,
        saliency,
    })
}

/// Writes `images/<id>.pgm`, `saliency/<id>.pgm` and `scanpaths.jsonl` under `dir`.
pub fn save_dataset(ds: &SyntheticDataset, dir: &Path) -> Result<(), SynthError> {
    std::fs::create_dir_all(dir.join(IMAGE_DIR))?;
    std::fs::create_dir_all(dir.join(SALIENCY_DIR))?;
    for img in &ds.images {
        write_pgm(dir.join(IMAGE_DIR).join(format!("{}.pgm", img.id)), &img.pixels)?;
        let sal = &ds.saliency[&img.id];
        let sal_img = PgmImage {
            width: sal.width,
            height: sal.height,
            maxval: 65535,
            data: sal.values.iter().map(|&v| v as u16).collect(),
        };
        write_pgm(dir.join(SALIENCY_DIR).join(format!("{}.pgm", img.id)), &sal_img)?;
    }
    save_planar_lines(dir.join(SCANPATH_FILE), &ds.scanpaths)?;
    Ok(())
}

/// Images and scanpaths of a dataset directory, sorted by image id.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetFiles {
    pub images: BTreeMap<String, PgmImage>,
    pub scanpaths: Vec<Scanpath>,
}

/// Reads every `*.pgm` in a directory, keyed by file stem.
pub fn read_pgm_dir(dir: &Path) -> Result<BTreeMap<String, PgmImage>, SynthError> {
    let mut out = BTreeMap::new();
    for entry in std::fs::read_dir(dir)? {
        let path = entry?.path();
        if path.extension().and_then(|e| e.to_str()) == Some("pgm") {
            let stem = path
                .file_stem()
                .and_then(|s| s.to_str())
                .unwrap_or_default()
                .to_string();
            out.insert(stem, read_pgm_image(&path)?);
        }
    }
    Ok(out)
}

pub fn load_dataset(dir: &Path) -> Result<DatasetFiles, SynthError> {
    Ok(DatasetFiles {
        images: read_pgm_dir(&dir.join(IMAGE_DIR))?,
        scanpaths: load_scanpaths(dir.join(SCANPATH_FILE), ScanpathFormat::PlanarLines)?,
    })
}
