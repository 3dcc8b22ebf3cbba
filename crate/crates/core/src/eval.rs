//! One-to-one matched evaluation of predicted against ground-truth scanpaths.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assignment::{hungarian, Assignment, AssignmentError};
use crate::geometry::Geometry;
use crate::matrix::Matrix;
use crate::metric::{jarodzka_score, MetricConfig, MetricError};
use crate::par::Exec;
use crate::scanpath::{Scanpath, ScanpathSet};

/// Aggregation rule recorded in every report.
pub const AGGREGATION: &str = "mean over matched pairs per image, then unweighted mean over images";

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("scanpath list is empty")]
    EmptyList,
    #[error("scanpaths belong to different images: `{0}` and `{1}`")]
    MixedImageIds(String, String),
    #[error("no predictions available for image `{0}`")]
    MissingPredictions(String),
    #[error("ground-truth set is empty")]
    EmptyGroundTruth,
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Assignment(#[from] AssignmentError),
    #[error("prediction source failed for image `{image}`: {message}")]
    Source { image: String, message: String },
}

#[derive(Debug, Clone, Copy)]
pub struct EvalOptions {
    pub geometry: Geometry,
    /// Predictions requested per image.
    pub k: usize,
    pub metric: MetricConfig,
    pub exec: Exec,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            geometry: Geometry::Planar,
            k: 40,
            metric: MetricConfig::default(),
            exec: Exec::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchOutcome {
    pub assignment: Assignment,
    /// Matched pair scores in ascending order.
    pub matched_costs: Vec<f64>,
    pub mean_cost: f64,
}

fn common_image_id<'a>(lists: [&'a [Scanpath]; 2]) -> Result<&'a str, EvalError> {
    let first = lists[0].first().ok_or(EvalError::EmptyList)?;
    for sp in lists.iter().flat_map(|l| l.iter()) {
        if sp.image_id != first.image_id {
            return Err(EvalError::MixedImageIds(first.image_id.clone(), sp.image_id.clone()));
        }
    }
    Ok(&first.image_id)
}

/// Pairwise metric scores, rows indexed by `generated`.
pub fn cost_matrix(
    generated: &[Scanpath],
    gt: &[Scanpath],
    geometry: Geometry,
    metric: &MetricConfig,
    exec: Exec,
) -> Result<Matrix, EvalError> {
    let m = gt.len();
    let cells = exec.map_range(generated.len() * m, |idx| {
        jarodzka_score(&generated[idx / m], &gt[idx % m], geometry, metric).map(|s| s.value)
    });
    let data = cells.into_iter().collect::<Result<Vec<_>, _>>()?;
    Ok(Matrix::from_vec(generated.len(), m, data))
}

/// Matches generated to ground-truth scanpaths one-to-one at minimum total
/// metric cost and reports the mean cost over the matched pairs.
pub fn match_scanpaths(
    generated: &[Scanpath],
    gt: &[Scanpath],
    opts: &EvalOptions,
) -> Result<MatchOutcome, EvalError> {
    if generated.is_empty() || gt.is_empty() {
        return Err(EvalError::EmptyList);
    }
    common_image_id([generated, gt])?;
    let cost = cost_matrix(generated, gt, opts.geometry, &opts.metric, opts.exec)?;
    let assignment = hungarian(&cost)?;
    let mut matched_costs: Vec<f64> = assignment.pairs.iter().map(|&p| cost[p]).collect();
    // Sorted summation makes the mean independent of list order.
    matched_costs.sort_by(f64::total_cmp);
    let mean_cost = matched_costs.iter().sum::<f64>() / matched_costs.len() as f64;
    Ok(MatchOutcome {
        assignment,
        matched_costs,
        mean_cost,
    })
}

/// Anything that can produce predicted scanpaths for an image.
pub trait PredictionSource: Sync {
    /// Up to `k` predictions for `image_id`.
    fn predict(&self, image_id: &str, k: usize) -> Result<Vec<Scanpath>, EvalError>;
}

impl PredictionSource for ScanpathSet {
    fn predict(&self, image_id: &str, k: usize) -> Result<Vec<Scanpath>, EvalError> {
        match self.get(image_id) {
            Some(list) if !list.is_empty() => Ok(list.iter().take(k).cloned().collect()),
            _ => Err(EvalError::MissingPredictions(image_id.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_image: BTreeMap<String, f64>,
    pub overall_mean: f64,
    pub n_generated_per_image: usize,
    pub config: ReportConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportConfig {
    pub geometry: Geometry,
    pub weights: [f64; 5],
    pub aggregation: String,
    pub n_images: usize,
}

impl EvalReport {
    /// Nested key/value document.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(s)
    }

    /// Flat `image_id,mean_cost` table.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["image_id", "mean_cost"]).expect("in-memory write");
        for (id, cost) in &self.per_image {
            w.write_record([id.as_str(), &format!("{cost:?}")])
                .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("utf8")
    }
}

/// Runs the matched protocol for every ground-truth image.
pub fn evaluate_dataset(
    source: &dyn PredictionSource,
    gt: &ScanpathSet,
    opts: &EvalOptions,
) -> Result<EvalReport, EvalError> {
    if gt.is_empty() {
        return Err(EvalError::EmptyGroundTruth);
    }
    let ids: Vec<&String> = gt.keys().collect();
    let per_image = opts.exec.map(&ids, |id| -> Result<(String, f64), EvalError> {
        let preds = source.predict(id, opts.k)?;
        if preds.is_empty() {
            return Err(EvalError::MissingPredictions((*id).clone()));
        }
        let outcome = match_scanpaths(&preds, &gt[*id], opts)?;
        Ok(((*id).clone(), outcome.mean_cost))
    });
    let per_image = per_image.into_iter().collect::<Result<BTreeMap<_, _>, _>>()?;
    let overall_mean = per_image.values().sum::<f64>() / per_image.len() as f64;
    Ok(EvalReport {
        overall_mean,
        n_generated_per_image: opts.k,
        config: ReportConfig {
            geometry: opts.geometry,
            weights: opts.metric.weights,
            aggregation: AGGREGATION.to_string(),
            n_images: per_image.len(),
        },
        per_image,
    })
}
