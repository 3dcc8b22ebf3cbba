//! Content and adversarial losses with their derivatives.

use crate::scanpath::Scanpath;

use super::{NnError, StepOutput};

/// Probabilities are clipped to `[PROB_CLIP, 1 - PROB_CLIP]` before logs.
pub const PROB_CLIP: f64 = 1e-7;

/// Per-step targets `(x, y, duration, eos)`; eos is 1 on the last step only.
pub fn content_targets(gt: &Scanpath) -> Vec<[f64; 4]> {
    let n = gt.fixations.len();
    gt.fixations
        .iter()
        .zip(gt.durations())
        .enumerate()
        .map(|(i, (f, d))| [f.x, f.y, d, if i + 1 == n { 1.0 } else { 0.0 }])
        .collect()
}

/// Mean over steps of the squared Euclidean distance in all four dimensions.
pub fn content_loss(pred: &[StepOutput], gt: &Scanpath) -> Result<f64, NnError> {
    let targets = content_targets(gt);
    let out: Vec<[f64; 4]> = pred.iter().map(|s| s.to_array()).collect();
    Ok(content_loss_grad(&out, &targets)?.0)
}

/// Loss and its gradient with respect to every predicted component.
pub fn content_loss_grad(pred: &[[f64; 4]], targets: &[[f64; 4]]) -> Result<(f64, Vec<[f64; 4]>), NnError> {
    if pred.len() != targets.len() {
        return Err(NnError::LengthMismatch {
            pred: pred.len(),
            gt: targets.len(),
        });
    }
    if pred.is_empty() {
        return Err(NnError::EmptySequence);
    }
    let n = pred.len() as f64;
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(pred.len());
    for (p, t) in pred.iter().zip(targets) {
        let mut g = [0.0; 4];
        for k in 0..4 {
            let d = p[k] - t[k];
            loss += d * d;
            g[k] = 2.0 * d / n;
        }
        grad.push(g);
    }
    Ok((loss / n, grad))
}

fn clip(p: f64) -> f64 {
    p.clamp(PROB_CLIP, 1.0 - PROB_CLIP)
}

/// `-ln(clip(p))` and its derivative in `p` (zero where the clip is active).
pub fn neg_log(p: f64) -> (f64, f64) {
    let c = clip(p);
    (-c.ln(), if c == p { -1.0 / p } else { 0.0 })
}

/// `-ln(1 - clip(p))` and its derivative in `p`.
pub fn neg_log_complement(p: f64) -> (f64, f64) {
    let c = clip(p);
    (-(1.0 - c).ln(), if c == p { 1.0 / (1.0 - p) } else { 0.0 })
}

/// `(d_loss, g_loss)` with `d_loss = -[ln d_real + ln(1 - d_fake)]` and the
/// non-saturating `g_loss = -ln d_fake`.
pub fn adversarial_losses(d_real: f64, d_fake: f64) -> (f64, f64) {
    (neg_log(d_real).0 + neg_log_complement(d_fake).0, neg_log(d_fake).0)
}

/// Generator adversarial loss for one fake score and its derivative. The
/// saturating form `ln(1 - d_fake)` is minimized when `saturating` is set.
pub fn generator_adversarial(d_fake: f64, saturating: bool) -> (f64, f64) {
    if saturating {
        let (l, g) = neg_log_complement(d_fake);
        (-l, -g)
    } else {
        neg_log(d_fake)
    }
}

pub fn combined_generator_loss(g_adv: f64, content: f64, alpha: f64) -> f64 {
    g_adv + alpha * content
}
