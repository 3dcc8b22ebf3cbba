//! Goodness-of-fit checks of the stochastic baselines.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use scanpath::baselines::{baseline_random, baseline_saliency_sampling, BaselineConfig};
use scanpath::harness::pgm::SaliencyMap;
use statrs::distribution::{ChiSquared, ContinuousCDF};

fn chi_square(observed: &[f64], expected: &[f64]) -> f64 {
    observed.iter().zip(expected).map(|(o, e)| (o - e).powi(2) / e).sum()
}

fn critical(dof: usize) -> f64 {
    ChiSquared::new(dof as f64).unwrap().inverse_cdf(0.999)
}

#[test]
fn saliency_sampling_follows_the_map() {
    let values: Vec<f64> = vec![1.0, 2.0, 0.0, 4.0, 3.0, 1.0, 6.0, 2.0, 5.0, 1.0, 1.0, 2.0];
    let map = SaliencyMap {
        width: 4,
        height: 3,
        values: values.clone(),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(50);
    let cfg = BaselineConfig::default();
    let draws = 30_000;
    let sp = baseline_saliency_sampling("img", &map, draws, &cfg, &mut rng).unwrap();
    let mut counts = vec![0.0; values.len()];
    for f in &sp.fixations {
        let (c, r) = ((f.x * 4.0) as usize, (f.y * 3.0) as usize);
        counts[r * 4 + c] += 1.0;
    }
    assert_eq!(counts[2], 0.0, "zero-mass pixel sampled");
    let total: f64 = values.iter().sum();
    let (obs, exp): (Vec<f64>, Vec<f64>) = counts
        .iter()
        .zip(&values)
        .filter(|(_, &v)| v > 0.0)
        .map(|(&o, &v)| (o, v / total * draws as f64))
        .unzip();
    let stat = chi_square(&obs, &exp);
    assert!(stat < critical(obs.len() - 1), "chi-square {stat}");
}

#[test]
fn random_baseline_is_uniform_over_the_image() {
    let mut rng = ChaCha8Rng::seed_from_u64(51);
    let cfg = BaselineConfig::default();
    let bins = 5;
    let mut counts = vec![0.0; bins * bins];
    let mut lengths = vec![0.0; cfg.len_max - cfg.len_min + 1];
    let mut n = 0.0;
    for _ in 0..3000 {
        let sp = baseline_random("img", &cfg, &mut rng).unwrap();
        lengths[sp.len() - cfg.len_min] += 1.0;
        for f in &sp.fixations {
            let (c, r) = (((f.x * bins as f64) as usize).min(bins - 1), ((f.y * bins as f64) as usize).min(bins - 1));
            counts[r * bins + c] += 1.0;
            n += 1.0;
        }
    }
    let exp = vec![n / counts.len() as f64; counts.len()];
    assert!(chi_square(&counts, &exp) < critical(counts.len() - 1));
    let exp_len = vec![3000.0 / lengths.len() as f64; lengths.len()];
    assert!(chi_square(&lengths, &exp_len) < critical(lengths.len() - 1));
}
