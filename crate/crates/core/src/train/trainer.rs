//! The training loop.
//!
//! Every source of randomness is a ChaCha8 stream derived from the config
//! seed and the epoch or iteration index, so a run resumed from a checkpoint
//! draws exactly what the uninterrupted run would have drawn.

use std::fmt::Write as _;
use std::fs::OpenOptions;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::eval::{evaluate_dataset, EvalOptions, EvalReport};
use crate::nn::loss::content_loss_grad;
use crate::nn::model::{Mode, Net};
use crate::nn::{rmsprop_step, Model, ParamStore, RmsPropState};
use crate::scanpath::ScanpathSet;

use super::data::{load_prepared, PreparedData};
use super::objective::{
    discriminator_objective, discriminator_owns, generator_objective, generator_owns, FeatureSource, GeneratorInputs,
};
use super::predict::GeneratorSource;
use super::{EncoderTraining, TrainConfig, TrainError};

const BOOTSTRAP_STREAM: u64 = 1 << 32;
const ADVERSARIAL_STREAM: u64 = 2 << 32;
const VALIDATION_STREAM: u64 = 3 << 32;

pub const LOG_HEADER: &str = "iteration,phase,content_loss,d_loss,g_loss,d_acc_real,d_acc_fake";
pub const VALIDATION_HEADER: &str = "iteration,phase,content_loss,matched_cost";

/// One bootstrap epoch or one adversarial iteration. Losses and accuracies
/// are means over the sub-steps; bootstrap rows carry zeros for the
/// discriminator columns.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    pub phase: &'static str,
    pub content_loss: f64,
    pub d_loss: f64,
    pub g_loss: f64,
    pub d_acc_real: f64,
    pub d_acc_fake: f64,
    pub d_steps: usize,
    pub g_steps: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationRecord {
    pub iteration: usize,
    pub phase: &'static str,
    pub content_loss: f64,
    pub matched_cost: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainLog {
    pub rows: Vec<IterationRecord>,
    pub validations: Vec<ValidationRecord>,
}

impl IterationRecord {
    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{:?},{:?},{:?},{:?},{:?}",
            self.iteration, self.phase, self.content_loss, self.d_loss, self.g_loss, self.d_acc_real, self.d_acc_fake
        )
    }
}

impl ValidationRecord {
    pub fn csv_line(&self) -> String {
        format!("{},{},{:?},{:?}", self.iteration, self.phase, self.content_loss, self.matched_cost)
    }
}

impl TrainLog {
    pub fn to_csv(&self) -> String {
        let mut s = format!("{LOG_HEADER}\n");
        for r in &self.rows {
            let _ = writeln!(s, "{}", r.csv_line());
        }
        s
    }

    pub fn validation_csv(&self) -> String {
        let mut s = format!("{VALIDATION_HEADER}\n");
        for r in &self.validations {
            let _ = writeln!(s, "{}", r.csv_line());
        }
        s
    }

    pub fn all_finite(&self) -> bool {
        self.rows
            .iter()
            .all(|r| [r.content_loss, r.d_loss, r.g_loss, r.d_acc_real, r.d_acc_fake].iter().all(|v| v.is_finite()))
            && self
                .validations
                .iter()
                .all(|v| v.content_loss.is_finite() && v.matched_cost.is_finite())
    }
}

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub struct Trainer {
    pub cfg: TrainConfig,
    pub model: Model,
    pub opt: RmsPropState,
    pub data: PreparedData,
    pub log: TrainLog,
    pub epochs_done: usize,
    pub iterations_done: usize,
    /// Features of every image under the current encoder, valid while the
    /// encoder does not change.
    cache: Option<Vec<Vec<f64>>>,
}

impl Trainer {
    pub fn new(cfg: TrainConfig, data: PreparedData) -> Result<Self, TrainError> {
        cfg.validate()?;
        let mut model = Model::new(cfg.model.clone(), cfg.seed)?;
        let mut input = cfg.model.input.clone();
        input.mean_pixel = data.mean_pixel;
        model.set_input(input);
        let opt = RmsPropState::new(&model.store);
        Ok(Self {
            cfg,
            model,
            opt,
            data,
            log: TrainLog::default(),
            epochs_done: 0,
            iterations_done: 0,
            cache: None,
        })
    }

    /// Restores model, optimizer state and progress counters from a
    /// checkpoint written by [`Trainer::save_checkpoint`].
    pub fn resume(cfg: TrainConfig, data: PreparedData, path: &Path) -> Result<Self, TrainError> {
        let saved = ParamStore::load(path)?;
        let model = Model::from_store(&saved)?;
        let opt = RmsPropState::from_store(&saved, &model.store)?;
        let counter = |n: &str| -> Result<usize, TrainError> {
            saved
                .by_name(n)
                .and_then(|p| p.data.first())
                .map(|v| *v as usize)
                .ok_or_else(|| TrainError::Nn(crate::nn::NnError::Checkpoint(format!("missing {n}"))))
        };
        Ok(Self {
            epochs_done: counter("train.epochs_done")?,
            iterations_done: counter("train.iterations_done")?,
            cfg,
            model,
            opt,
            data,
            log: TrainLog::default(),
            cache: None,
        })
    }

    pub fn save_checkpoint(&self, path: &Path) -> Result<(), TrainError> {
        let mut s = self.model.store.to_checkpoint_string();
        let acc = self.opt.to_store(&self.model.store).to_checkpoint_string();
        s.push_str(acc.split_once('\n').map_or("", |(_, rest)| rest));
        let _ = writeln!(s, "train.epochs_done 1 1 {:.16e}", self.epochs_done as f64);
        let _ = writeln!(s, "train.iterations_done 1 1 {:.16e}", self.iterations_done as f64);
        std::fs::write(path, s)?;
        Ok(())
    }

    fn encoder_trains(&self, adversarial: bool) -> bool {
        self.data.external_features.is_none()
            && match self.cfg.encoder_training {
                EncoderTraining::Full => true,
                EncoderTraining::Bootstrap => !adversarial,
                EncoderTraining::Frozen => false,
            }
    }

    fn features(&self, images: &[usize]) -> Result<Vec<Vec<f64>>, TrainError> {
        if let Some(ext) = &self.data.external_features {
            return Ok(images.iter().map(|&i| ext[i].clone()).collect());
        }
        if let Some(cache) = &self.cache {
            return Ok(images.iter().map(|&i| cache[i].clone()).collect());
        }
        images
            .iter()
            .map(|&i| Ok(self.model.encode_image(&self.data.images[i])?))
            .collect()
    }

    fn fill_cache(&mut self) -> Result<(), TrainError> {
        if self.cache.is_none() && self.data.external_features.is_none() {
            let all: Vec<usize> = (0..self.data.images.len()).collect();
            let f = self.features(&all)?;
            self.cache = Some(f);
        }
        Ok(())
    }

    fn generator_update(
        &mut self,
        paths: &[usize],
        rng: &mut ChaCha8Rng,
        adversarial: bool,
    ) -> Result<(f64, f64), TrainError> {
        let train_enc = self.encoder_trains(adversarial);
        if !train_enc {
            self.fill_cache()?;
        }
        let gen_seeds: Vec<u64> = paths.iter().map(|_| rng.gen()).collect();
        let disc_seeds: Vec<u64> = paths.iter().map(|_| rng.gen()).collect();
        let image_idx: Vec<usize> = paths.iter().map(|&p| self.data.paths[p].image).collect();
        let targets: Vec<&[[f64; 4]]> = paths.iter().map(|&p| self.data.paths[p].targets.as_slice()).collect();
        let step = if train_enc {
            let feats = if adversarial { self.features(&image_idx)? } else { Vec::new() };
            let frefs: Vec<&[f64]> = feats.iter().map(|f| f.as_slice()).collect();
            let imgs: Vec<&crate::nn::Image> = image_idx.iter().map(|&i| &self.data.images[i]).collect();
            let inp = GeneratorInputs {
                features: FeatureSource::Images(&imgs),
                targets: &targets,
                gen_seeds: &gen_seeds,
                disc_features: &frefs,
                disc_seeds: &disc_seeds,
            };
            generator_objective(&self.model, &inp, adversarial)?
        } else {
            let feats = self.features(&image_idx)?;
            let frefs: Vec<&[f64]> = feats.iter().map(|f| f.as_slice()).collect();
            let inp = GeneratorInputs {
                features: FeatureSource::Fixed(&frefs),
                targets: &targets,
                gen_seeds: &gen_seeds,
                disc_features: &frefs,
                disc_seeds: &disc_seeds,
            };
            generator_objective(&self.model, &inp, adversarial)?
        };
        rmsprop_step(&self.cfg.optimizer, &mut self.model.store, &step.grads, &mut self.opt, |n| {
            generator_owns(n, train_enc)
        })?;
        self.model.update_running_stats(Net::Generator, &step.bn_stats, step.rows);
        if train_enc {
            self.cache = None;
        }
        Ok((step.content, step.g_adv))
    }

    fn discriminator_update(&mut self, paths: &[usize], rng: &mut ChaCha8Rng) -> Result<(f64, f64, f64), TrainError> {
        let n_real = paths.len() / 2;
        if !self.encoder_trains(true) {
            self.fill_cache()?;
        }
        let gen_seeds: Vec<u64> = paths[n_real..].iter().map(|_| rng.gen()).collect();
        let disc_seeds: Vec<u64> = paths.iter().map(|_| rng.gen()).collect();
        let image_idx: Vec<usize> = paths.iter().map(|&p| self.data.paths[p].image).collect();
        let feats = self.features(&image_idx)?;
        let frefs: Vec<&[f64]> = feats.iter().map(|f| f.as_slice()).collect();
        let fake_targets: Vec<&[[f64; 4]]> = paths[n_real..]
            .iter()
            .map(|&p| self.data.paths[p].targets.as_slice())
            .collect();
        let fakes = self
            .model
            .generator_batch(&frefs[n_real..], &fake_targets, &gen_seeds, Mode::TRAIN)
            .outputs;
        let mut seqs: Vec<&[[f64; 4]]> = paths[..n_real]
            .iter()
            .map(|&p| self.data.paths[p].targets.as_slice())
            .collect();
        seqs.extend(fakes.iter().map(|f| f.as_slice()));
        let step = discriminator_objective(&self.model, &frefs, &seqs, n_real, &disc_seeds)?;
        rmsprop_step(&self.cfg.optimizer, &mut self.model.store, &step.grads, &mut self.opt, discriminator_owns)?;
        self.model.update_running_stats(Net::Discriminator, &step.bn_stats, step.rows);
        Ok((step.loss, step.acc_real, step.acc_fake))
    }

    /// One pass of content-only updates over all training scanpaths.
    pub fn bootstrap_epoch(&mut self) -> Result<IterationRecord, TrainError> {
        let epoch = self.epochs_done + 1;
        let mut rng = rng_for(self.cfg.seed, BOOTSTRAP_STREAM + epoch as u64);
        let mut order = self.data.train_paths.clone();
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut steps = 0;
        for chunk in order.chunks(self.cfg.minibatch) {
            total += self.generator_update(chunk, &mut rng, false)?.0;
            steps += 1;
        }
        self.epochs_done = epoch;
        let rec = IterationRecord {
            iteration: epoch,
            phase: "bootstrap",
            content_loss: total / steps as f64,
            d_loss: 0.0,
            g_loss: 0.0,
            d_acc_real: 0.0,
            d_acc_fake: 0.0,
            d_steps: 0,
            g_steps: steps,
        };
        self.log.rows.push(rec.clone());
        Ok(rec)
    }

    fn sample_paths(&self, n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
        let pool = &self.data.train_paths;
        if n <= pool.len() {
            pool.choose_multiple(rng, n).copied().collect()
        } else {
            (0..n).map(|_| pool[rng.gen_range(0..pool.len())]).collect()
        }
    }

    /// Discriminator updates followed by generator updates.
    pub fn adversarial_iteration(&mut self) -> Result<IterationRecord, TrainError> {
        let it = self.iterations_done + 1;
        let mut rng = rng_for(self.cfg.seed, ADVERSARIAL_STREAM + it as u64);
        let m = self.cfg.minibatch;
        let (mut d_loss, mut acc_r, mut acc_f) = (0.0, 0.0, 0.0);
        let d_n = self.cfg.d_updates_per_iter;
        for _ in 0..d_n {
            let paths = self.sample_paths(m.max(2), &mut rng);
            let (l, r, f) = self.discriminator_update(&paths, &mut rng)?;
            d_loss += l / d_n as f64;
            acc_r += r / d_n as f64;
            acc_f += f / d_n as f64;
        }
        let (mut content, mut g_loss) = (0.0, 0.0);
        let g_n = self.cfg.g_updates_per_iter;
        for _ in 0..g_n {
            let paths = self.sample_paths(m, &mut rng);
            let (c, g) = self.generator_update(&paths, &mut rng, true)?;
            content += c / g_n as f64;
            g_loss += g / g_n as f64;
        }
        self.iterations_done = it;
        let rec = IterationRecord {
            iteration: it,
            phase: "adversarial",
            content_loss: content,
            d_loss,
            g_loss,
            d_acc_real: acc_r,
            d_acc_fake: acc_f,
            d_steps: d_n,
            g_steps: g_n,
        };
        self.log.rows.push(rec.clone());
        Ok(rec)
    }

    /// Mean content loss over validation scanpaths, with running statistics
    /// and without dropout.
    pub fn validation_content_loss(&mut self) -> Result<f64, TrainError> {
        let val = self.data.val_paths.clone();
        let mut total = 0.0;
        for chunk in val.chunks(64) {
            let image_idx: Vec<usize> = chunk.iter().map(|&p| self.data.paths[p].image).collect();
            let feats = self.features(&image_idx)?;
            let frefs: Vec<&[f64]> = feats.iter().map(|f| f.as_slice()).collect();
            let targets: Vec<&[[f64; 4]]> = chunk.iter().map(|&p| self.data.paths[p].targets.as_slice()).collect();
            let out = self
                .model
                .generator_batch(&frefs, &targets, &vec![0; chunk.len()], Mode::EVAL)
                .outputs;
            for (o, t) in out.iter().zip(&targets) {
                total += content_loss_grad(o, t)?.0;
            }
        }
        Ok(total / val.len() as f64)
    }

    /// Validation images used for the matched cost, in id order.
    pub fn eval_ground_truth(&self) -> ScanpathSet {
        let mut gt = self.data.val_ground_truth();
        if self.cfg.eval_images > 0 {
            gt = gt.into_iter().take(self.cfg.eval_images).collect();
        }
        gt
    }

    /// Samples `eval_k` scanpaths per validation image and runs the matched
    /// evaluation against the validation ground truth.
    pub fn evaluate(&mut self, seed: u64) -> Result<EvalReport, TrainError> {
        let gt = self.eval_ground_truth();
        let idx: Vec<usize> = gt
            .keys()
            .map(|id| self.data.ids.iter().position(|x| x == id).expect("validation id"))
            .collect();
        let feats = self.features(&idx)?;
        let features = gt.keys().cloned().zip(feats).collect();
        let source = GeneratorSource::new(&self.model, features, seed);
        let opts = EvalOptions {
            k: self.cfg.eval_k,
            ..Default::default()
        };
        Ok(evaluate_dataset(&source, &gt, &opts)?)
    }

    pub fn validate(&mut self, phase: &'static str) -> Result<ValidationRecord, TrainError> {
        if !self.encoder_trains(self.iterations_done > 0) {
            self.fill_cache()?;
        }
        let content_loss = self.validation_content_loss()?;
        let seed = rng_for(self.cfg.seed, VALIDATION_STREAM).gen();
        let report = self.evaluate(seed)?;
        let rec = ValidationRecord {
            iteration: self.iterations_done,
            phase,
            content_loss,
            matched_cost: report.overall_mean,
        };
        self.log.validations.push(rec.clone());
        Ok(rec)
    }

    /// Runs the remaining bootstrap epochs and adversarial iterations,
    /// validating and checkpointing on the configured cadence. When
    /// `out_dir` is given, log rows are appended to `train_log.csv` and
    /// `validation.csv` as they are produced.
    pub fn run(&mut self, out_dir: Option<&Path>) -> Result<Option<PathBuf>, TrainError> {
        let mut sink = match out_dir {
            Some(dir) => Some(LogSink::open(dir, self.epochs_done > 0 || self.iterations_done > 0)?),
            None => None,
        };
        if self.epochs_done == 0 && self.iterations_done == 0 {
            let v = self.validate("initial")?;
            if let Some(s) = &mut sink {
                s.validation(&v)?;
            }
        }
        let bootstrapping = self.epochs_done < self.cfg.bootstrap_epochs;
        while self.epochs_done < self.cfg.bootstrap_epochs {
            let r = self.bootstrap_epoch()?;
            if let Some(s) = &mut sink {
                s.row(&r)?;
            }
        }
        if bootstrapping {
            let v = self.validate("bootstrap")?;
            if let Some(s) = &mut sink {
                s.validation(&v)?;
            }
        }
        let mut validations = 0;
        while self.iterations_done < self.cfg.iterations {
            let r = self.adversarial_iteration()?;
            if let Some(s) = &mut sink {
                s.row(&r)?;
            }
            let it = self.iterations_done;
            if it % self.cfg.validate_every == 0 || it == self.cfg.iterations {
                let v = self.validate("adversarial")?;
                validations += 1;
                if let Some(s) = &mut sink {
                    s.validation(&v)?;
                }
                if let Some(dir) = out_dir {
                    if self.cfg.checkpoint_every > 0 && validations % self.cfg.checkpoint_every == 0 {
                        self.save_checkpoint(&dir.join(format!("ckpt-{it:06}.txt")))?;
                    }
                }
            }
        }
        match out_dir {
            Some(dir) => {
                let path = dir.join("final.ckpt");
                self.save_checkpoint(&path)?;
                Ok(Some(path))
            }
            None => Ok(None),
        }
    }
}

struct LogSink {
    rows: std::fs::File,
    validations: std::fs::File,
}

impl LogSink {
    fn open(dir: &Path, append: bool) -> Result<Self, TrainError> {
        std::fs::create_dir_all(dir)?;
        let open = |name: &str, header: &str| -> std::io::Result<std::fs::File> {
            let path = dir.join(name);
            if append && path.exists() {
                OpenOptions::new().append(true).open(path)
            } else {
                let mut f = std::fs::File::create(path)?;
                writeln!(f, "{header}")?;
                Ok(f)
            }
        };
        Ok(Self {
            rows: open("train_log.csv", LOG_HEADER)?,
            validations: open("validation.csv", VALIDATION_HEADER)?,
        })
    }

    fn row(&mut self, r: &IterationRecord) -> std::io::Result<()> {
        writeln!(self.rows, "{}", r.csv_line())
    }

    fn validation(&mut self, v: &ValidationRecord) -> std::io::Result<()> {
        writeln!(self.validations, "{}", v.csv_line())
    }
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub checkpoint: PathBuf,
    pub log: TrainLog,
}

/// Loads the dataset, then trains (or resumes from `resume`) into `cfg.out_dir`.
pub fn train(cfg: &TrainConfig, resume: Option<&Path>) -> Result<TrainOutcome, TrainError> {
    let data = load_prepared(cfg)?;
    let mut trainer = match resume {
        Some(path) => Trainer::resume(cfg.clone(), data, path)?,
        None => Trainer::new(cfg.clone(), data)?,
    };
    let checkpoint = trainer.run(Some(&cfg.out_dir))?.expect("output directory given");
    Ok(TrainOutcome {
        checkpoint,
        log: trainer.log,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::synth::{generate_synthetic, SyntheticSpec};
    use crate::nn::model::{DiscriminatorConfig, EncoderConfig, GeneratorConfig};
    use crate::nn::Image;
    use crate::train::preprocess;

    fn tiny_trainer(encoder_training: EncoderTraining) -> Trainer {
        let spec = SyntheticSpec {
            n_images: 20,
            ..Default::default()
        };
        let ds = generate_synthetic(&spec, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let images = ds.images.iter().map(|i| (i.id.clone(), Image::from_pgm(&i.pixels))).collect();
        let mut cfg = TrainConfig {
            seed: 3,
            minibatch: 4,
            eval_k: 2,
            encoder_training,
            ..Default::default()
        };
        cfg.model.encoder = EncoderConfig {
            conv_channels: vec![4, 8],
            coord_channels: true,
        };
        cfg.model.generator = GeneratorConfig {
            hidden: 16,
            ..Default::default()
        };
        cfg.model.discriminator = DiscriminatorConfig {
            hidden: 16,
            ..Default::default()
        };
        let data = preprocess(&images, &ds.scanpaths, &cfg).unwrap();
        Trainer::new(cfg, data).unwrap()
    }

    fn changed(before: &ParamStore, after: &ParamStore) -> Vec<String> {
        before
            .iter()
            .zip(after.iter())
            .filter(|(a, b)| a.data != b.data)
            .map(|(a, _)| a.name.clone())
            .collect()
    }

    #[test]
    fn updates_touch_only_their_own_network() {
        for mode in [EncoderTraining::Full, EncoderTraining::Bootstrap] {
            let mut t = tiny_trainer(mode);
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            let paths = t.sample_paths(4, &mut rng);

            let before = t.model.store.clone();
            t.discriminator_update(&paths, &mut rng).unwrap();
            let d = changed(&before, &t.model.store);
            assert!(!d.is_empty());
            assert!(d.iter().all(|n| n.starts_with("disc.")), "{d:?}");

            let before = t.model.store.clone();
            t.generator_update(&paths, &mut rng, true).unwrap();
            let g = changed(&before, &t.model.store);
            assert!(g.iter().any(|n| n.starts_with("gen.")));
            assert!(g.iter().all(|n| !n.starts_with("disc.")), "{g:?}");
            assert_eq!(g.iter().any(|n| n.starts_with("enc.")), mode == EncoderTraining::Full);

            let before = t.model.store.clone();
            t.generator_update(&paths, &mut rng, false).unwrap();
            let b = changed(&before, &t.model.store);
            assert!(b.iter().any(|n| n.starts_with("enc.")));
            assert!(b.iter().all(|n| !n.starts_with("disc.")), "{b:?}");
        }
    }

    #[test]
    fn iteration_records_update_counts() {
        let mut t = tiny_trainer(EncoderTraining::Frozen);
        let r = t.adversarial_iteration().unwrap();
        assert_eq!((r.d_steps, r.g_steps), (16, 8));
        assert_eq!(r.iteration, 1);
        assert!(t.log.all_finite());
    }

    #[test]
    fn discriminator_separates_real_from_frozen_generator() {
        // With the generator never updated, its untrained outputs are easy
        // to tell from real scanpaths.
        let mut t = tiny_trainer(EncoderTraining::Frozen);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut reached = None;
        for it in 1..=200 {
            let (mut r, mut f) = (0.0, 0.0);
            for _ in 0..16 {
                let paths = t.sample_paths(4, &mut rng);
                let (loss, ar, af) = t.discriminator_update(&paths, &mut rng).unwrap();
                assert!(loss.is_finite());
                r += ar / 16.0;
                f += af / 16.0;
            }
            if r > 0.9 && f > 0.9 {
                reached = Some(it);
                break;
            }
        }
        assert!(reached.is_some());
    }
}
