//! Losses of one optimizer step with their gradients.
//!
//! The discriminator treats image features as given inputs: generator steps
//! never route gradients into the encoder through the discriminator, and
//! discriminator steps never update the encoder. Inside generator steps the
//! discriminator normalizes with its running statistics, which track the
//! mixed real/fake batches it is trained on; an all-fake batch would
//! otherwise be normalized against itself.

use crate::nn::layers::BnStats;
use crate::nn::loss::{content_loss_grad, generator_adversarial, neg_log, neg_log_complement};
use crate::nn::model::{Mode, Model, Net};
use crate::nn::{Grads, Image, NnError};

/// How the generator obtains image features.
#[derive(Debug, Clone, Copy)]
pub enum FeatureSource<'a> {
    /// Encode these preprocessed images and backpropagate into the encoder.
    Images(&'a [&'a Image]),
    /// Fixed features; the encoder receives no gradient.
    Fixed(&'a [&'a [f64]]),
}

#[derive(Debug, Clone, Copy)]
pub struct GeneratorInputs<'a> {
    pub features: FeatureSource<'a>,
    /// Per-step targets `(x, y, duration, eos)` for every sample.
    pub targets: &'a [&'a [[f64; 4]]],
    pub gen_seeds: &'a [u64],
    /// Features the discriminator conditions on; only used with `adversarial`.
    pub disc_features: &'a [&'a [f64]],
    pub disc_seeds: &'a [u64],
}

#[derive(Debug, Clone)]
pub struct GeneratorStep {
    /// Objective that `grads` differentiate.
    pub loss: f64,
    pub content: f64,
    /// Mean generator adversarial loss; zero without the adversarial term.
    pub g_adv: f64,
    pub grads: Grads,
    pub bn_stats: Vec<BnStats>,
    pub rows: usize,
}

/// Content-only objective when `adversarial` is false, otherwise
/// `g_adv + α·content` with `α` from the generator config.
pub fn generator_objective(model: &Model, inp: &GeneratorInputs, adversarial: bool) -> Result<GeneratorStep, NnError> {
    let n = inp.targets.len();
    let mut grads = Grads::zeros_like(&model.store);
    let (features, tapes) = match inp.features {
        FeatureSource::Images(imgs) => {
            let mut f = Vec::with_capacity(n);
            let mut t = Vec::with_capacity(n);
            for img in imgs {
                let (feat, tape) = model.encode_with_tape(img)?;
                f.push(feat);
                t.push(tape);
            }
            (f, Some(t))
        }
        FeatureSource::Fixed(f) => (f.iter().map(|v| v.to_vec()).collect(), None),
    };
    let feat_refs: Vec<&[f64]> = features.iter().map(|f| f.as_slice()).collect();
    let batch = model.generator_batch(&feat_refs, inp.targets, inp.gen_seeds, Mode::TRAIN);
    let mut content = 0.0;
    let mut d_out = Vec::with_capacity(n);
    for (out, tgt) in batch.outputs.iter().zip(inp.targets) {
        let (l, g) = content_loss_grad(out, tgt)?;
        content += l / n as f64;
        d_out.push(g);
    }
    let alpha = if adversarial { model.config.generator.alpha } else { 1.0 };
    for g in d_out.iter_mut().flatten() {
        g.iter_mut().for_each(|v| *v *= alpha / n as f64);
    }
    let mut g_adv = 0.0;
    if adversarial {
        let fakes: Vec<&[[f64; 4]]> = batch.outputs.iter().map(|o| o.as_slice()).collect();
        let db = model.discriminator_batch(inp.disc_features, &fakes, inp.disc_seeds, Mode::SAMPLE)?;
        let saturating = model.config.generator.saturating_loss;
        let mut d_scores = Vec::with_capacity(n);
        for &p in &db.scores {
            let (l, d) = generator_adversarial(p, saturating);
            g_adv += l / n as f64;
            d_scores.push(d / n as f64);
        }
        let mut scratch = Grads::zeros_like(&model.store);
        let (_, d_steps) = model.discriminator_backward(&db, inp.disc_features, &d_scores, &mut scratch);
        for (dst, src) in d_out.iter_mut().zip(&d_steps) {
            for (row, s) in dst.iter_mut().zip(src.chunks(4)) {
                for k in 0..4 {
                    row[k] += s[k];
                }
            }
        }
    }
    let d_feat = model.generator_backward(&batch, &feat_refs, &d_out, &mut grads);
    if let Some(tapes) = tapes {
        for (tape, df) in tapes.iter().zip(&d_feat) {
            model.encoder_backward(tape, df, &mut grads);
        }
    }
    let loss = if adversarial {
        g_adv + model.config.generator.alpha * content
    } else {
        content
    };
    Ok(GeneratorStep {
        loss,
        content,
        g_adv,
        grads,
        rows: Model::tape_rows(&batch.stack),
        bn_stats: batch.stack.bn_stats,
    })
}

#[derive(Debug, Clone)]
pub struct DiscriminatorStep {
    pub loss: f64,
    pub acc_real: f64,
    pub acc_fake: f64,
    pub grads: Grads,
    pub bn_stats: Vec<BnStats>,
    pub rows: usize,
}

/// `mean(-ln D(real)) + mean(-ln(1 - D(fake)))` over one mixed batch whose
/// first `n_real` sequences are real.
pub fn discriminator_objective(
    model: &Model,
    features: &[&[f64]],
    seqs: &[&[[f64; 4]]],
    n_real: usize,
    seeds: &[u64],
) -> Result<DiscriminatorStep, NnError> {
    let n_fake = seqs.len() - n_real;
    let batch = model.discriminator_batch(features, seqs, seeds, Mode::TRAIN)?;
    let mut loss = 0.0;
    let (mut acc_real, mut acc_fake) = (0.0, 0.0);
    let mut d_scores = Vec::with_capacity(seqs.len());
    for (i, &p) in batch.scores.iter().enumerate() {
        if i < n_real {
            let (l, d) = neg_log(p);
            loss += l / n_real as f64;
            d_scores.push(d / n_real as f64);
            acc_real += f64::from(u8::from(p > 0.5)) / n_real as f64;
        } else {
            let (l, d) = neg_log_complement(p);
            loss += l / n_fake as f64;
            d_scores.push(d / n_fake as f64);
            acc_fake += f64::from(u8::from(p < 0.5)) / n_fake as f64;
        }
    }
    let mut grads = Grads::zeros_like(&model.store);
    model.discriminator_backward(&batch, features, &d_scores, &mut grads);
    Ok(DiscriminatorStep {
        loss,
        acc_real,
        acc_fake,
        grads,
        rows: Model::tape_rows(&batch.stack),
        bn_stats: batch.stack.bn_stats,
    })
}

/// Names updated by generator steps, given whether the encoder trains.
pub fn generator_owns(name: &str, train_encoder: bool) -> bool {
    name.starts_with(Net::Generator.prefix()) || (train_encoder && name.starts_with("enc."))
}

pub fn discriminator_owns(name: &str) -> bool {
    name.starts_with(Net::Discriminator.prefix())
}
