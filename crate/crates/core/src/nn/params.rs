//! Named flat parameter arrays and the text checkpoint format.
//!
//! A checkpoint is a header line `pathgan-ckpt v1` followed by one line per
//! array: `name ndim dim_0 .. dim_{ndim-1} value_0 value_1 ..`, with values
//! printed to 17 significant digits so they parse back bit-exactly.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use super::NnError;

pub const CHECKPOINT_HEADER: &str = "pathgan-ckpt v1";

pub type ParamId = usize;

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
    /// Buffers such as running statistics are stored but never optimized.
    pub trainable: bool,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore {
    params: Vec<Param>,
    index: HashMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a new array. Panics on a duplicate name or a shape/data mismatch.
    pub fn add(&mut self, name: &str, shape: &[usize], data: Vec<f64>, trainable: bool) -> ParamId {
        assert_eq!(shape.iter().product::<usize>(), data.len(), "shape mismatch for {name}");
        assert!(!self.index.contains_key(name), "duplicate parameter {name}");
        let id = self.params.len();
        self.params.push(Param {
            name: name.to_string(),
            shape: shape.to_vec(),
            data,
            trainable,
        });
        self.index.insert(name.to_string(), id);
        id
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn get(&self, id: ParamId) -> &[f64] {
        &self.params[id].data
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut [f64] {
        &mut self.params[id].data
    }

    pub fn param(&self, id: ParamId) -> &Param {
        &self.params[id]
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        self.params.iter_mut()
    }

    pub fn by_name(&self, name: &str) -> Option<&Param> {
        self.id(name).map(|id| &self.params[id])
    }

    pub fn num_values(&self, trainable_only: bool) -> usize {
        self.params
            .iter()
            .filter(|p| p.trainable || !trainable_only)
            .map(|p| p.data.len())
            .sum()
    }

    pub fn all_finite(&self) -> bool {
        self.params.iter().all(|p| p.data.iter().all(|v| v.is_finite()))
    }

    /// Overwrites values from `other` for every name present in both stores.
    /// Fails when a shared name has a different shape.
    pub fn load_from(&mut self, other: &ParamStore) -> Result<usize, NnError> {
        let mut n = 0;
        for p in &mut self.params {
            if let Some(src) = other.by_name(&p.name) {
                if src.shape != p.shape {
                    return Err(NnError::ShapeMismatch(format!(
                        "{}: {:?} vs {:?}",
                        p.name, p.shape, src.shape
                    )));
                }
                p.data.copy_from_slice(&src.data);
                n += 1;
            }
        }
        Ok(n)
    }

    pub fn to_checkpoint_string(&self) -> String {
        let mut s = String::with_capacity(32 * self.num_values(false) + 64);
        s.push_str(CHECKPOINT_HEADER);
        s.push('\n');
        for p in &self.params {
            let _ = write!(s, "{} {}", p.name, p.shape.len());
            for d in &p.shape {
                let _ = write!(s, " {d}");
            }
            for v in &p.data {
                let _ = write!(s, " {v:.16e}");
            }
            s.push('\n');
        }
        s
    }

    /// Parses a checkpoint. Every array is marked trainable; callers decide
    /// which names are buffers when loading into a model.
    pub fn from_checkpoint_str(text: &str) -> Result<Self, NnError> {
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, h)) if h.trim_end() == CHECKPOINT_HEADER => {}
            _ => return Err(NnError::Checkpoint(format!("missing header `{CHECKPOINT_HEADER}`"))),
        }
        let mut store = ParamStore::new();
        for (i, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let bad = |m: &str| NnError::Checkpoint(format!("line {}: {m}", i + 1));
            let mut tok = line.split_ascii_whitespace();
            let name = tok.next().ok_or_else(|| bad("missing name"))?;
            let ndim: usize = tok
                .next()
                .and_then(|t| t.parse().ok())
                .ok_or_else(|| bad("bad ndim"))?;
            let shape = (0..ndim)
                .map(|_| tok.next().and_then(|t| t.parse::<usize>().ok()))
                .collect::<Option<Vec<_>>>()
                .ok_or_else(|| bad("bad dimensions"))?;
            let data = tok
                .map(|t| t.parse::<f64>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|_| bad("bad value"))?;
            if data.len() != shape.iter().product::<usize>() {
                return Err(bad("value count does not match shape"));
            }
            if store.id(name).is_some() {
                return Err(bad("duplicate array"));
            }
            store.add(name, &shape, data, true);
        }
        Ok(store)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), NnError> {
        std::fs::write(path, self.to_checkpoint_string())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, NnError> {
        Self::from_checkpoint_str(&std::fs::read_to_string(path)?)
    }
}

/// Gradient buffers laid out like a [`ParamStore`].
#[derive(Debug, Clone, PartialEq)]
pub struct Grads {
    pub data: Vec<Vec<f64>>,
}

impl Grads {
    pub fn zeros_like(store: &ParamStore) -> Self {
        Self {
            data: store.iter().map(|p| vec![0.0; p.data.len()]).collect(),
        }
    }

    pub fn get(&self, id: ParamId) -> &[f64] {
        &self.data[id]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut [f64] {
        &mut self.data[id]
    }

    /// `self += scale * other`
    pub fn add_scaled(&mut self, other: &Grads, scale: f64) {
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += scale * y;
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        for v in self.data.iter_mut().flatten() {
            *v *= s;
        }
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().flatten().all(|v| *v == 0.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let mut s = ParamStore::new();
        s.add("a.w", &[2, 3], vec![0.1, -1.0 / 3.0, 1e-300, f64::MIN_POSITIVE, 12345.678901234567, -0.0], true);
        s.add("a.running_mean", &[2], vec![std::f64::consts::PI, 2.5e17], false);
        let text = s.to_checkpoint_string();
        assert!(text.starts_with("pathgan-ckpt v1\na.w 2 2 3 "));
        let back = ParamStore::from_checkpoint_str(&text).unwrap();
        for (p, q) in s.iter().zip(back.iter()) {
            assert_eq!(p.name, q.name);
            assert_eq!(p.shape, q.shape);
            let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(&p.data), bits(&q.data));
        }
    }

    #[test]
    fn rejects_malformed_checkpoints() {
        assert!(ParamStore::from_checkpoint_str("nope\n").is_err());
        assert!(ParamStore::from_checkpoint_str("pathgan-ckpt v1\nx 1 3 1 2\n").is_err());
        assert!(ParamStore::from_checkpoint_str("pathgan-ckpt v1\nx 1 1 zz\n").is_err());
        assert!(ParamStore::from_checkpoint_str("pathgan-ckpt v1\nx 1 1 1\nx 1 1 2\n").is_err());
    }

    #[test]
    fn load_from_checks_shapes() {
        let mut a = ParamStore::new();
        a.add("w", &[2], vec![0.0, 0.0], true);
        let mut b = ParamStore::new();
        b.add("w", &[2], vec![1.0, 2.0], true);
        b.add("extra", &[1], vec![3.0], true);
        assert_eq!(a.load_from(&b).unwrap(), 1);
        assert_eq!(a.get(0), &[1.0, 2.0]);
        let mut c = ParamStore::new();
        c.add("w", &[1], vec![1.0], true);
        assert!(a.load_from(&c).is_err());
    }
}
