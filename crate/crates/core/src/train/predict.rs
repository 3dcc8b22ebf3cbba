//! Scanpath sampling from a trained generator.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::eval::{EvalError, PredictionSource};
use crate::nn::{Image, Model, NnError};
use crate::par::Exec;
use crate::scanpath::{Scanpath, ScanpathSet};

/// Samples `k` rollouts per image. Image `i` (in id order) draws from RNG
/// stream `i + 1` of `seed`, so results do not depend on evaluation order.
pub struct GeneratorSource<'a> {
    model: &'a Model,
    features: BTreeMap<String, (u64, Vec<f64>)>,
    seed: u64,
}

impl<'a> GeneratorSource<'a> {
    pub fn new(model: &'a Model, features: BTreeMap<String, Vec<f64>>, seed: u64) -> Self {
        let features = features
            .into_iter()
            .enumerate()
            .map(|(i, (id, f))| (id, (i as u64 + 1, f)))
            .collect();
        Self { model, features, seed }
    }

    pub fn sample(&self, image_id: &str, k: usize) -> Option<Vec<Scanpath>> {
        let (stream, feature) = self.features.get(image_id)?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(*stream);
        Some(
            (0..k)
                .map(|j| {
                    let mut sp = self.model.generator_rollout(image_id, feature, &mut rng).0;
                    sp.observer_id = Some(format!("gen{j}"));
                    sp
                })
                .collect(),
        )
    }
}

impl PredictionSource for GeneratorSource<'_> {
    fn predict(&self, image_id: &str, k: usize) -> Result<Vec<Scanpath>, EvalError> {
        self.sample(image_id, k)
            .ok_or_else(|| EvalError::MissingPredictions(image_id.to_string()))
    }
}

/// Encodes raw images (resize and mean subtraction included) and samples
/// `k` scanpaths for each.
pub fn predict_set(
    model: &Model,
    images: &BTreeMap<String, Image>,
    k: usize,
    seed: u64,
    exec: Exec,
) -> Result<ScanpathSet, NnError> {
    let entries: Vec<(&String, &Image)> = images.iter().collect();
    let feats = exec.map(&entries, |(id, img)| {
        model
            .encode_image(&model.prepare_image(img))
            .map(|f| ((*id).clone(), f))
    });
    let features = feats.into_iter().collect::<Result<BTreeMap<_, _>, _>>()?;
    let source = GeneratorSource::new(model, features, seed);
    let ids: Vec<&String> = images.keys().collect();
    let sets = exec.map(&ids, |id| ((*id).clone(), source.sample(id, k).unwrap_or_default()));
    Ok(sets.into_iter().collect())
}
