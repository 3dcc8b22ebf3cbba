//! RMSprop without decay: `acc ← ρ·acc + (1−ρ)·g²`, `θ ← θ − lr·g / (√acc + ε)`.

use super::params::{Grads, ParamStore};
use super::NnError;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RmsProp {
    pub lr: f64,
    pub rho: f64,
    pub eps: f64,
}

impl Default for RmsProp {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            rho: 0.9,
            eps: 1e-8,
        }
    }
}

/// One accumulator per parameter array, same layout as the store.
#[derive(Debug, Clone, PartialEq)]
pub struct RmsPropState {
    pub acc: Vec<Vec<f64>>,
}

impl RmsPropState {
    pub fn new(store: &ParamStore) -> Self {
        Self {
            acc: store.iter().map(|p| vec![0.0; p.data.len()]).collect(),
        }
    }

    /// Accumulators as a store with names prefixed by `acc.`, for checkpoints.
    pub fn to_store(&self, params: &ParamStore) -> ParamStore {
        let mut s = ParamStore::new();
        for (p, a) in params.iter().zip(&self.acc) {
            s.add(&format!("acc.{}", p.name), &p.shape, a.clone(), false);
        }
        s
    }

    pub fn from_store(saved: &ParamStore, params: &ParamStore) -> Result<Self, NnError> {
        let acc = params
            .iter()
            .map(|p| {
                let name = format!("acc.{}", p.name);
                let a = saved
                    .by_name(&name)
                    .ok_or_else(|| NnError::Checkpoint(format!("missing {name}")))?;
                if a.shape != p.shape {
                    return Err(NnError::ShapeMismatch(name));
                }
                Ok(a.data.clone())
            })
            .collect::<Result<_, _>>()?;
        Ok(Self { acc })
    }
}

/// Updates every trainable array selected by `select`. Arrays not selected
/// keep both their values and their accumulators.
pub fn rmsprop_step(
    opt: &RmsProp,
    store: &mut ParamStore,
    grads: &Grads,
    state: &mut RmsPropState,
    select: impl Fn(&str) -> bool,
) -> Result<(), NnError> {
    if grads.data.len() != store.len() || state.acc.len() != store.len() {
        return Err(NnError::ShapeMismatch(format!(
            "{} arrays, {} gradients, {} accumulators",
            store.len(),
            grads.data.len(),
            state.acc.len()
        )));
    }
    for ((p, g), acc) in store.iter_mut().zip(&grads.data).zip(&mut state.acc) {
        if g.len() != p.data.len() || acc.len() != p.data.len() {
            return Err(NnError::ShapeMismatch(p.name.clone()));
        }
        if !p.trainable || !select(&p.name) {
            continue;
        }
        for ((theta, gi), a) in p.data.iter_mut().zip(g).zip(acc.iter_mut()) {
            *a = opt.rho * *a + (1.0 - opt.rho) * gi * gi;
            *theta -= opt.lr * gi / (a.sqrt() + opt.eps);
        }
    }
    Ok(())
}
