//! Command-line front end: synthetic data, training, generation, evaluation,
//! baselines and fixation statistics.
//!
//! Exit codes: 0 on success, 1 on usage errors, 2 on data errors.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use scanpath::baselines::{generate_set, BaselineConfig, BaselineKind};
use scanpath::eval::{evaluate_dataset, EvalOptions};
use scanpath::harness::io::{load_scanpaths, save_planar_lines, ScanpathFormat};
use scanpath::harness::pgm::SaliencyMap;
use scanpath::harness::stats::{divergence, spatial_histogram, DEFAULT_SMOOTHING};
use scanpath::harness::synth::{generate_synthetic, read_pgm_dir, save_dataset, SyntheticSpec};
use scanpath::nn::{Image, Model};
use scanpath::par::Exec;
use scanpath::scanpath::group_by_image;
use scanpath::train::{predict_set, train, TrainConfig};
use scanpath::{Geometry, Scanpath, ScanpathSet};

#[derive(Parser)]
#[command(name = "scanpath", version, about = "Scanpath generation and evaluation toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a generator from a `key = value` config file.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Continue from a training checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Sample scanpaths for every PGM image in a directory.
    Generate {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        images: PathBuf,
        #[arg(long, default_value_t = 20)]
        k: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Matched Jarodzka evaluation of predictions against ground truth.
    Evaluate {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long, default_value = "planar")]
        geometry: Geometry,
        /// JSON report; a CSV table is written next to it.
        #[arg(long)]
        out: PathBuf,
        /// Predictions used per image (default: all).
        #[arg(long)]
        k: Option<usize>,
        /// Input format, inferred from the extension when omitted.
        #[arg(long)]
        format: Option<ScanpathFormat>,
    },
    /// Produce baseline predictions for the images of a ground-truth file.
    Baseline {
        #[arg(long)]
        kind: BaselineKind,
        #[arg(long)]
        gt: PathBuf,
        /// Directory of `<image_id>.pgm` saliency maps, needed by `saliency`.
        #[arg(long)]
        saliency: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 20)]
        k: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        format: Option<ScanpathFormat>,
    },
    /// Spatial fixation histograms and their divergence.
    Stats {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long, default_value_t = 16)]
        bins: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        format: Option<ScanpathFormat>,
    },
    /// Write a synthetic dataset described by a `key = value` spec file.
    Synth {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

enum Failure {
    Usage(String),
    Data(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Data(e)
    }
}

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

fn configure_threads() -> Result<(), Failure> {
    let Ok(value) = std::env::var("SCANPATH_THREADS") else {
        return Ok(());
    };
    let n: usize = value
        .parse()
        .ok()
        .filter(|&n| n >= 1)
        .ok_or_else(|| usage(format!("SCANPATH_THREADS must be a positive integer, got `{value}`")))?;
    #[cfg(feature = "parallel")]
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| usage(format!("SCANPATH_THREADS: {e}")))?;
    #[cfg(not(feature = "parallel"))]
    let _ = n;
    Ok(())
}

fn format_of(path: &Path, explicit: Option<ScanpathFormat>) -> ScanpathFormat {
    explicit.unwrap_or_else(|| match path.extension().and_then(|e| e.to_str()) {
        Some("csv") => ScanpathFormat::SphericalCsv,
        _ => ScanpathFormat::PlanarLines,
    })
}

fn read_set(path: &Path, format: Option<ScanpathFormat>) -> anyhow::Result<ScanpathSet> {
    let paths = load_scanpaths(path, format_of(path, format)).with_context(|| format!("reading {}", path.display()))?;
    Ok(group_by_image(paths))
}

fn write_set(path: &Path, set: &ScanpathSet) -> anyhow::Result<()> {
    let all: Vec<Scanpath> = set.values().flatten().cloned().collect();
    save_planar_lines(path, &all).with_context(|| format!("writing {}", path.display()))
}

fn read_text(path: &Path) -> anyhow::Result<String> {
    std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

/// Resolves relative paths of a config file against the file's directory.
fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn cmd_train(config: &Path, resume: Option<&Path>) -> Result<(), Failure> {
    let text = read_text(config)?;
    let mut cfg = TrainConfig::from_kv(&text).map_err(|e| usage(format!("--config {}: {e}", config.display())))?;
    let base = config.parent().unwrap_or(Path::new("."));
    cfg.data_dir = resolve(base, &cfg.data_dir);
    cfg.out_dir = resolve(base, &cfg.out_dir);
    cfg.feature_file = cfg.feature_file.map(|f| resolve(base, &f));
    let out = train(&cfg, resume).map_err(anyhow::Error::from)?;
    if let Some(v) = out.log.validations.last() {
        println!(
            "iteration {} content_loss {:.6} matched_cost {:.6}",
            v.iteration, v.content_loss, v.matched_cost
        );
    }
    println!("checkpoint {}", out.checkpoint.display());
    Ok(())
}

fn cmd_generate(ckpt: &Path, images: &Path, k: usize, seed: u64, out: &Path) -> Result<(), Failure> {
    if k == 0 {
        return Err(usage("--k must be at least 1"));
    }
    let model = Model::load(ckpt).with_context(|| format!("loading {}", ckpt.display()))?;
    let raw = read_pgm_dir(images).with_context(|| format!("reading {}", images.display()))?;
    if raw.is_empty() {
        return Err(Failure::Data(anyhow!("no .pgm images in {}", images.display())));
    }
    let imgs: BTreeMap<String, Image> = raw.iter().map(|(id, p)| (id.clone(), Image::from_pgm(p))).collect();
    let set = predict_set(&model, &imgs, k, seed, Exec::default()).map_err(anyhow::Error::from)?;
    write_set(out, &set)?;
    Ok(())
}

fn cmd_evaluate(
    pred: &Path,
    gt: &Path,
    geometry: Geometry,
    out: &Path,
    k: Option<usize>,
    format: Option<ScanpathFormat>,
) -> Result<(), Failure> {
    if k == Some(0) {
        return Err(usage("--k must be at least 1"));
    }
    let preds = read_set(pred, format)?;
    let truth = read_set(gt, format)?;
    let k = k.unwrap_or_else(|| preds.values().map(Vec::len).max().unwrap_or(1));
    let opts = EvalOptions {
        geometry,
        k,
        ..Default::default()
    };
    let report = evaluate_dataset(&preds, &truth, &opts).map_err(anyhow::Error::from)?;
    std::fs::write(out, report.to_json()).with_context(|| format!("writing {}", out.display()))?;
    let csv = out.with_extension("csv");
    std::fs::write(&csv, report.to_csv()).with_context(|| format!("writing {}", csv.display()))?;
    println!("overall_mean {:?}", report.overall_mean);
    Ok(())
}

fn read_saliency(dir: &Path) -> anyhow::Result<BTreeMap<String, SaliencyMap>> {
    let maps = read_pgm_dir(dir).with_context(|| format!("reading {}", dir.display()))?;
    Ok(maps.into_iter().map(|(id, p)| (id, SaliencyMap::from(p))).collect())
}

fn cmd_baseline(
    kind: BaselineKind,
    gt: &Path,
    saliency: Option<&Path>,
    seed: u64,
    k: usize,
    out: &Path,
    format: Option<ScanpathFormat>,
) -> Result<(), Failure> {
    if k == 0 {
        return Err(usage("--k must be at least 1"));
    }
    let maps = match (kind, saliency) {
        (BaselineKind::Saliency, None) => return Err(usage("--saliency is required for --kind saliency")),
        (_, Some(dir)) => read_saliency(dir)?,
        (_, None) => BTreeMap::new(),
    };
    let truth = read_set(gt, format)?;
    let cfg = BaselineConfig {
        seed,
        ..Default::default()
    };
    let set = generate_set(kind, &truth, &maps, k, &cfg).map_err(anyhow::Error::from)?;
    write_set(out, &set)?;
    Ok(())
}

fn cmd_stats(pred: &Path, gt: &Path, bins: usize, out: &Path, format: Option<ScanpathFormat>) -> Result<(), Failure> {
    if bins == 0 {
        return Err(usage("--bins must be at least 1"));
    }
    let flat = |s: ScanpathSet| -> Vec<Scanpath> { s.into_values().flatten().collect() };
    let p = spatial_histogram(&flat(read_set(pred, format)?), bins).map_err(anyhow::Error::from)?;
    let q = spatial_histogram(&flat(read_set(gt, format)?), bins).map_err(anyhow::Error::from)?;
    let kl = divergence(&p, &q, DEFAULT_SMOOTHING).map_err(anyhow::Error::from)?;
    // Blocks separated by two blank lines, as plotting tools index them.
    let mut s = String::new();
    let _ = writeln!(s, "# generated {bins}x{bins}");
    s.push_str(&p.to_grid_text());
    let _ = writeln!(s, "\n\n# ground_truth {bins}x{bins}");
    s.push_str(&q.to_grid_text());
    let _ = writeln!(s, "\n\n# kl_generated_ground_truth\n{kl:.17e}");
    std::fs::write(out, s).with_context(|| format!("writing {}", out.display()))?;
    println!("kl {kl:.6}");
    Ok(())
}

fn cmd_synth(spec: &Path, out: &Path) -> Result<(), Failure> {
    let text = read_text(spec)?;
    let (spec_cfg, seed) =
        SyntheticSpec::from_kv(&text).map_err(|e| usage(format!("--spec {}: {e}", spec.display())))?;
    let ds = generate_synthetic(&spec_cfg, &mut ChaCha8Rng::seed_from_u64(seed)).map_err(anyhow::Error::from)?;
    save_dataset(&ds, out).map_err(anyhow::Error::from)?;
    println!("{} images, {} scanpaths", ds.images.len(), ds.scanpaths.len());
    Ok(())
}

fn run(cli: Cli) -> Result<(), Failure> {
    configure_threads()?;
    match cli.command {
        Command::Train { config, resume } => cmd_train(&config, resume.as_deref()),
        Command::Generate {
            ckpt,
            images,
            k,
            seed,
            out,
        } => cmd_generate(&ckpt, &images, k, seed, &out),
        Command::Evaluate {
            pred,
            gt,
            geometry,
            out,
            k,
            format,
        } => cmd_evaluate(&pred, &gt, geometry, &out, k, format),
        Command::Baseline {
            kind,
            gt,
            saliency,
            seed,
            k,
            out,
            format,
        } => cmd_baseline(kind, &gt, saliency.as_deref(), seed, k, &out, format),
        Command::Stats {
            pred,
            gt,
            bins,
            out,
            format,
        } => cmd_stats(&pred, &gt, bins, &out, format),
        Command::Synth { spec, out } => cmd_synth(&spec, &out),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Data(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
