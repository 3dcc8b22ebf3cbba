//! Spatial fixation distributions and their divergence.

use std::fmt::Write as _;

use thiserror::Error;

use crate::scanpath::Scanpath;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StatsError {
    #[error("no fixations to histogram")]
    NoFixations,
    #[error("histograms have different bin counts ({0} vs {1})")]
    BinMismatch(usize, usize),
    #[error("bin count must be at least 1")]
    ZeroBins,
}

/// `bins × bins` grid of fixation probabilities; row index follows `y`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialHistogram {
    pub bins: usize,
    pub probs: Vec<f64>,
}

impl SpatialHistogram {
    pub fn cell(&self, row: usize, col: usize) -> f64 {
        self.probs[row * self.bins + col]
    }

    /// Whitespace-delimited matrix, one grid row per line.
    pub fn to_grid_text(&self) -> String {
        let mut s = String::new();
        for row in self.probs.chunks(self.bins) {
            let line: Vec<String> = row.iter().map(|p| format!("{p:.10e}")).collect();
            let _ = writeln!(s, "{}", line.join(" "));
        }
        s
    }
}

fn bin_of(v: f64, bins: usize) -> usize {
    ((v * bins as f64) as usize).min(bins - 1)
}

pub fn spatial_histogram(scanpaths: &[Scanpath], bins: usize) -> Result<SpatialHistogram, StatsError> {
    if bins == 0 {
        return Err(StatsError::ZeroBins);
    }
    let mut counts = vec![0u64; bins * bins];
    let mut total = 0u64;
    for f in scanpaths.iter().flat_map(|s| s.fixations.iter()) {
        counts[bin_of(f.y, bins) * bins + bin_of(f.x, bins)] += 1;
        total += 1;
    }
    if total == 0 {
        return Err(StatsError::NoFixations);
    }
    Ok(SpatialHistogram {
        bins,
        probs: counts.into_iter().map(|c| c as f64 / total as f64).collect(),
    })
}

fn smoothed(h: &SpatialHistogram, eps: f64) -> Vec<f64> {
    let z = 1.0 + eps * h.probs.len() as f64;
    h.probs.iter().map(|p| (p + eps) / z).collect()
}

/// `KL(P || Q)` in nats after adding `eps` to every cell and renormalizing.
pub fn divergence(p: &SpatialHistogram, q: &SpatialHistogram, eps: f64) -> Result<f64, StatsError> {
    if p.bins != q.bins {
        return Err(StatsError::BinMismatch(p.bins, q.bins));
    }
    let (ps, qs) = (smoothed(p, eps), smoothed(q, eps));
    let kl: f64 = ps
        .iter()
        .zip(&qs)
        .filter(|(a, _)| **a > 0.0)
        .map(|(a, b)| a * (a / b).ln())
        .sum();
    Ok(kl.max(0.0))
}

pub const DEFAULT_SMOOTHING: f64 = 1e-6;
