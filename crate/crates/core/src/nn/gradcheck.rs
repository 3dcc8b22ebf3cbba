//! Central finite-difference verification of analytic gradients.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::model::Model;
use super::params::{Grads, Param};

/// Loss value plus the on/off pattern of every piecewise-linear unit.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub loss: f64,
    pub pattern: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Probe {
    pub name: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
    /// The ±h interval crosses a rectifier kink, so the central difference
    /// does not measure the derivative there.
    pub kink: bool,
}

/// `|a - n| / max(|a|, |n|)`, zero when both vanish.
pub fn relative_error(a: f64, n: f64) -> f64 {
    let scale = a.abs().max(n.abs());
    if scale == 0.0 {
        0.0
    } else {
        (a - n).abs() / scale
    }
}

/// Compares `analytic` with `(L(θ + h) - L(θ - h)) / 2h` on every array
/// selected by `select`. Positions are visited in a seeded order until
/// `probes` kink-free ones are found or `max_tries` have been examined.
pub fn check_gradients(
    model: &mut Model,
    analytic: &Grads,
    select: impl Fn(&Param) -> bool,
    probes: usize,
    max_tries: usize,
    h: f64,
    seed: u64,
    mut eval: impl FnMut(&Model) -> Evaluation,
) -> Vec<Probe> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base = eval(model).pattern;
    let ids: Vec<usize> = (0..model.store.len()).filter(|&i| select(model.store.param(i))).collect();
    let mut out = Vec::new();
    for id in ids {
        let mut order: Vec<usize> = (0..model.store.get(id).len()).collect();
        order.shuffle(&mut rng);
        let mut clean = 0;
        for &index in order.iter().take(max_tries) {
            if clean == probes {
                break;
            }
            let orig = model.store.get(id)[index];
            model.store.get_mut(id)[index] = orig + h;
            let up = eval(model);
            model.store.get_mut(id)[index] = orig - h;
            let down = eval(model);
            model.store.get_mut(id)[index] = orig;
            let numeric = (up.loss - down.loss) / (2.0 * h);
            let kink = up.pattern != base || down.pattern != base;
            clean += usize::from(!kink);
            let a = analytic.get(id)[index];
            out.push(Probe {
                name: model.store.param(id).name.clone(),
                index,
                analytic: a,
                numeric,
                rel_error: relative_error(a, numeric),
                kink,
            });
        }
    }
    out
}
