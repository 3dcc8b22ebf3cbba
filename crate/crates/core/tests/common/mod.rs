//! Fixtures shared by the integration test targets.
#![allow(dead_code)]

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use scanpath::harness::synth::{generate_synthetic, SyntheticDataset, SyntheticSpec};
use scanpath::nn::gradcheck::{check_gradients, Evaluation, Probe};
use scanpath::nn::model::Model;
use scanpath::nn::{Image, ModelConfig};
use scanpath::train::objective::{discriminator_objective, generator_objective, FeatureSource, GeneratorInputs};
use scanpath::{Fixation, Scanpath};

pub fn random_image(h: usize, w: usize, rng: &mut ChaCha8Rng) -> Image {
    Image::new(3, h, w, (0..3 * h * w).map(|_| rng.gen_range(-0.5..0.5)).collect())
}

pub fn random_scanpath(rng: &mut ChaCha8Rng, id: &str, max_len: usize) -> Scanpath {
    let n = rng.gen_range(1..=max_len);
    let mut t = 0.0;
    let fixations = (0..n)
        .map(|_| {
            let f = Fixation::new(rng.gen(), rng.gen(), t);
            t += rng.gen_range(0.05..0.6);
            f
        })
        .collect();
    Scanpath::new(id, None, fixations).unwrap()
}

pub fn synthetic(seed: u64) -> SyntheticDataset {
    generate_synthetic(&SyntheticSpec::default(), &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
}

pub fn images_of(ds: &SyntheticDataset) -> BTreeMap<String, Image> {
    ds.images.iter().map(|i| (i.id.clone(), Image::from_pgm(&i.pixels))).collect()
}

/// Perturbs running statistics away from their initial values so the
/// normalization layers are exercised with nontrivial constants.
pub fn jitter_running_stats(model: &mut Model, rng: &mut ChaCha8Rng) {
    for p in model.store.iter_mut() {
        if p.name.ends_with("running_mean") {
            p.data.iter_mut().for_each(|v| *v = rng.gen_range(-0.2..0.2));
        } else if p.name.ends_with("running_var") {
            p.data.iter_mut().for_each(|v| *v = rng.gen_range(0.5..1.5));
        }
    }
}

/// Finite-difference probes of both training objectives: the adversarial
/// generator objective (encoder and generator arrays) and the
/// discriminator objective (discriminator arrays).
pub fn gradient_probes(config: ModelConfig, image_size: usize, probes: usize, h: f64, seed: u64) -> Vec<Probe> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = Model::new(config, seed).unwrap();
    jitter_running_stats(&mut model, &mut rng);
    let n = 3;
    let images: Vec<Image> = (0..n).map(|_| random_image(image_size, image_size, &mut rng)).collect();
    let targets: Vec<Vec<[f64; 4]>> = (0..n)
        .map(|_| scanpath::nn::content_targets(&random_scanpath(&mut rng, "i", 4)))
        .collect();
    let gen_seeds: Vec<u64> = (0..n).map(|_| rng.gen()).collect();
    let disc_seeds: Vec<u64> = (0..2 * n).map(|_| rng.gen()).collect();
    let disc_features: Vec<Vec<f64>> = images.iter().map(|i| model.encode_image(i).unwrap()).collect();

    let img_refs: Vec<&Image> = images.iter().collect();
    let tgt_refs: Vec<&[[f64; 4]]> = targets.iter().map(|t| t.as_slice()).collect();
    let df_refs: Vec<&[f64]> = disc_features.iter().map(|f| f.as_slice()).collect();
    let pattern = |m: &Model| -> Vec<bool> {
        images.iter().flat_map(|i| m.encode_with_tape(i).unwrap().1.relu_pattern()).collect()
    };
    let gen_loss = |m: &Model| {
        let inp = GeneratorInputs {
            features: FeatureSource::Images(&img_refs),
            targets: &tgt_refs,
            gen_seeds: &gen_seeds,
            disc_features: &df_refs,
            disc_seeds: &disc_seeds[..n],
        };
        generator_objective(m, &inp, true).unwrap()
    };
    let g = gen_loss(&model);
    let mut out = check_gradients(
        &mut model,
        &g.grads,
        |p| p.trainable && (p.name.starts_with("enc.") || p.name.starts_with("gen.")),
        probes,
        probes * 10,
        h,
        seed ^ 1,
        |m| Evaluation {
            loss: gen_loss(m).loss,
            pattern: pattern(m),
        },
    );

    let fakes: Vec<Vec<[f64; 4]>> = targets
        .iter()
        .map(|t| t.iter().map(|s| [s[0] * 0.8 + 0.1, s[1], s[2] + 0.05, 0.3]).collect())
        .collect();
    let mut seqs: Vec<&[[f64; 4]]> = tgt_refs.clone();
    seqs.extend(fakes.iter().map(|f| f.as_slice()));
    let feats2: Vec<&[f64]> = df_refs.iter().chain(df_refs.iter()).copied().collect();
    let disc_loss = |m: &Model| discriminator_objective(m, &feats2, &seqs, n, &disc_seeds).unwrap();
    let d = disc_loss(&model);
    out.extend(check_gradients(
        &mut model,
        &d.grads,
        |p| p.trainable && p.name.starts_with("disc."),
        probes,
        probes,
        h,
        seed ^ 2,
        |m| Evaluation {
            loss: disc_loss(m).loss,
            pattern: Vec::new(),
        },
    ));
    out
}
