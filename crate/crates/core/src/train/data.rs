//! Dataset preparation: image split, resizing, mean-pixel subtraction and
//! per-step targets.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

use crate::harness::synth::load_dataset;
use crate::nn::image::mean_pixel;
use crate::nn::{content_targets, Image};
use crate::scanpath::{Fixation, Scanpath, ScanpathSet};

use super::{TrainConfig, TrainError};

/// RNG stream reserved for the train/validation split.
pub(crate) const SPLIT_STREAM: u64 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct PathRecord {
    pub image: usize,
    pub scanpath: Scanpath,
    pub targets: Vec<[f64; 4]>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PreparedData {
    /// Image ids in sorted order; every index below refers to this list.
    pub ids: Vec<String>,
    /// Resized, mean-subtracted images.
    pub images: Vec<Image>,
    pub mean_pixel: [f64; 3],
    pub train_images: Vec<usize>,
    pub val_images: Vec<usize>,
    pub paths: Vec<PathRecord>,
    pub train_paths: Vec<usize>,
    pub val_paths: Vec<usize>,
    /// Per-image features that replace the encoder, when configured.
    pub external_features: Option<Vec<Vec<f64>>>,
}

impl PreparedData {
    pub fn val_ground_truth(&self) -> ScanpathSet {
        let mut set = ScanpathSet::new();
        for &p in &self.val_paths {
            let r = &self.paths[p];
            set.entry(self.ids[r.image].clone()).or_default().push(r.scanpath.clone());
        }
        set
    }
}

/// Divides pixel coordinates by the image size.
pub fn normalize_pixel_scanpath(
    sp: &Scanpath,
    width: usize,
    height: usize,
    record: usize,
) -> Result<Scanpath, TrainError> {
    let mut fixations = Vec::with_capacity(sp.fixations.len());
    for (index, f) in sp.fixations.iter().enumerate() {
        let inside = (0.0..=width as f64).contains(&f.x) && (0.0..=height as f64).contains(&f.y);
        if !inside {
            return Err(TrainError::FixationOutsideImage {
                record,
                image: sp.image_id.clone(),
                index,
                x: f.x,
                y: f.y,
                width,
                height,
            });
        }
        fixations.push(Fixation::new(f.x / width as f64, f.y / height as f64, f.t));
    }
    Ok(Scanpath {
        image_id: sp.image_id.clone(),
        observer_id: sp.observer_id.clone(),
        fixations,
    })
}

/// Splits images, resizes them to the configured input size and subtracts
/// the mean pixel of the training split. Scanpaths must already be in
/// normalized coordinates.
pub fn preprocess(
    images: &BTreeMap<String, Image>,
    scanpaths: &[Scanpath],
    cfg: &TrainConfig,
) -> Result<PreparedData, TrainError> {
    let ids: Vec<String> = images.keys().cloned().collect();
    if ids.len() < 2 {
        return Err(TrainError::InvalidConfig("need at least two images to split".into()));
    }
    let mut order: Vec<usize> = (0..ids.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(SPLIT_STREAM);
    order.shuffle(&mut rng);
    let n_train = ((cfg.split * ids.len() as f64).round() as usize).clamp(1, ids.len() - 1);
    let mut train_images = order[..n_train].to_vec();
    let mut val_images = order[n_train..].to_vec();
    train_images.sort_unstable();
    val_images.sort_unstable();

    let (h, w) = (cfg.model.input.height, cfg.model.input.width);
    let mut resized: Vec<Image> = Vec::with_capacity(ids.len());
    for id in &ids {
        let img = &images[id];
        if img.channels != 3 || img.height == 0 || img.width == 0 {
            return Err(TrainError::UndecodableImage {
                id: id.clone(),
                reason: format!("{}x{}x{} is not a nonempty 3-channel image", img.channels, img.height, img.width),
            });
        }
        resized.push(img.resize(h, w));
    }
    let mp = mean_pixel(train_images.iter().map(|&i| &resized[i]));
    let mean = [mp[0], mp[1], mp[2]];
    for img in &mut resized {
        img.subtract_mean(&mean);
    }

    let index: BTreeMap<&str, usize> = ids.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect();
    let is_train: Vec<bool> = {
        let mut v = vec![false; ids.len()];
        train_images.iter().for_each(|&i| v[i] = true);
        v
    };
    let mut paths = Vec::with_capacity(scanpaths.len());
    let (mut train_paths, mut val_paths) = (Vec::new(), Vec::new());
    for sp in scanpaths {
        let &image = index.get(sp.image_id.as_str()).ok_or_else(|| TrainError::UndecodableImage {
            id: sp.image_id.clone(),
            reason: "no image file for this scanpath".into(),
        })?;
        let k = paths.len();
        if is_train[image] {
            train_paths.push(k);
        } else {
            val_paths.push(k);
        }
        paths.push(PathRecord {
            image,
            targets: content_targets(sp),
            scanpath: sp.clone(),
        });
    }
    if train_paths.is_empty() || val_paths.is_empty() {
        return Err(TrainError::InvalidConfig("split leaves no scanpaths on one side".into()));
    }
    Ok(PreparedData {
        ids,
        images: resized,
        mean_pixel: mean,
        train_images,
        val_images,
        paths,
        train_paths,
        val_paths,
        external_features: None,
    })
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct FeatureRecord {
    image_id: String,
    feature: Vec<f64>,
}

/// Reads `{"image_id", "feature"}` lines; every id in `ids` must be present
/// with exactly `dim` values.
pub fn read_feature_file(path: &Path, ids: &[String], dim: usize) -> Result<Vec<Vec<f64>>, TrainError> {
    let text = std::fs::read_to_string(path)?;
    let mut map = BTreeMap::new();
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let r: FeatureRecord =
            serde_json::from_str(line).map_err(|e| TrainError::FeatureFile(format!("line {}: {e}", i + 1)))?;
        if r.feature.len() != dim || r.feature.iter().any(|v| !v.is_finite()) {
            return Err(TrainError::FeatureFile(format!(
                "line {}: expected {dim} finite values, got {}",
                i + 1,
                r.feature.len()
            )));
        }
        map.insert(r.image_id, r.feature);
    }
    ids.iter()
        .map(|id| {
            map.remove(id)
                .ok_or_else(|| TrainError::FeatureFile(format!("no feature for image `{id}`")))
        })
        .collect()
}

/// Loads the dataset directory named in the config and prepares it.
pub fn load_prepared(cfg: &TrainConfig) -> Result<PreparedData, TrainError> {
    let files = load_dataset(&cfg.data_dir)?;
    let images: BTreeMap<String, Image> = files.images.iter().map(|(k, v)| (k.clone(), Image::from_pgm(v))).collect();
    let mut data = preprocess(&images, &files.scanpaths, cfg)?;
    if let Some(path) = &cfg.feature_file {
        data.external_features = Some(read_feature_file(path, &data.ids, cfg.model.encoder.feature_dim())?);
    }
    Ok(data)
}
