//! Flat, insertion-ordered registry of named learnable parameters.
//!
//! Models register their tensors once (deterministic order given a config),
//! hold on to the returned [`ParamId`]s, and bind the whole store onto a
//! fresh tape per forward pass. The registry order defines the checkpoint
//! manifest order, so serialization is reproducible by construction.

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::graph::{Graph, Mat, Var};
use crate::error::{Error, Result};

/// Index of a parameter within its [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ParamId(pub(crate) usize);

#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Mat>,
    index: BTreeMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a tensor under a unique name.
    pub fn insert(&mut self, name: impl Into<String>, value: Mat) -> ParamId {
        let name = name.into();
        assert!(
            !self.index.contains_key(&name),
            "duplicate parameter name '{name}'"
        );
        let id = self.values.len();
        self.index.insert(name.clone(), id);
        self.names.push(name);
        self.values.push(value);
        ParamId(id)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Total number of scalar parameters across all tensors.
    pub fn total_elements(&self) -> usize {
        self.values.iter().map(|v| v.len()).sum()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Mat {
        &self.values[id.0]
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Mat {
        &mut self.values[id.0]
    }

    pub fn id_of(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied().map(ParamId)
    }

    /// Iterates `(name, value)` in registration order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &Mat)> {
        self.names.iter().map(String::as_str).zip(self.values.iter())
    }

    /// Overwrites a parameter's value; the shape must match exactly.
    pub fn set_value(&mut self, id: ParamId, value: Mat) -> Result<()> {
        let current = &self.values[id.0];
        if current.dim() != value.dim() {
            return Err(Error::Shape(format!(
                "parameter '{}' expects shape {:?}, got {:?}",
                self.names[id.0],
                current.dim(),
                value.dim()
            )));
        }
        self.values[id.0] = value;
        Ok(())
    }

    /// Inserts every parameter as a leaf on `g`, in registration order.
    /// The returned vector is indexed by [`ParamId`].
    pub fn bind(&self, g: &mut Graph) -> BoundParams {
        let vars = self.values.iter().map(|v| g.leaf(v.clone())).collect();
        BoundParams { vars }
    }
}

/// Tape handles for every parameter of a store, aligned with its ids.
pub struct BoundParams {
    vars: Vec<Var>,
}

impl BoundParams {
    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }

    pub fn iter(&self) -> impl Iterator<Item = Var> + '_ {
        self.vars.iter().copied()
    }

    pub fn len(&self) -> usize {
        self.vars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vars.is_empty()
    }
}

// ─── Initializers ───────────────────────────────────────────────────────────

/// Glorot/fan-balanced normal initialization for weight matrices.
pub fn glorot(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Mat {
    let std = (2.0 / (rows + cols) as f64).sqrt();
    normal(rng, rows, cols, std)
}

/// I.i.d. normal entries with the given standard deviation.
pub fn normal(rng: &mut ChaCha8Rng, rows: usize, cols: usize, std: f64) -> Mat {
    let dist = Normal::new(0.0, std).expect("valid std");
    Mat::from_shape_fn((rows, cols), |_| dist.sample(rng))
}

/// Uniform entries in [lo, hi); used where sign symmetry is not wanted.
pub fn uniform(rng: &mut ChaCha8Rng, rows: usize, cols: usize, lo: f64, hi: f64) -> Mat {
    Mat::from_shape_fn((rows, cols), |_| rng.random_range(lo..hi))
}

pub fn zeros(rows: usize, cols: usize) -> Mat {
    Mat::zeros((rows, cols))
}

pub fn full(rows: usize, cols: usize, value: f64) -> Mat {
    Mat::from_elem((rows, cols), value)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn registration_order_is_stable() {
        let mut store = ParamStore::new();
        let a = store.insert("w1", zeros(2, 3));
        let b = store.insert("b1", zeros(1, 3));
        assert_eq!(store.name(a), "w1");
        assert_eq!(store.name(b), "b1");
        assert_eq!(store.total_elements(), 9);
        let names: Vec<_> = store.iter().map(|(n, _)| n.to_string()).collect();
        assert_eq!(names, ["w1", "b1"]);
        assert_eq!(store.id_of("b1"), Some(b));
        assert_eq!(store.id_of("nope"), None);
    }

    #[test]
    fn set_value_rejects_shape_changes() {
        let mut store = ParamStore::new();
        let a = store.insert("w", zeros(2, 2));
        assert!(store.set_value(a, zeros(2, 2)).is_ok());
        assert!(store.set_value(a, zeros(3, 2)).is_err());
    }

    #[test]
    fn initializers_are_seed_deterministic() {
        let mut r1 = ChaCha8Rng::seed_from_u64(5);
        let mut r2 = ChaCha8Rng::seed_from_u64(5);
        assert_eq!(glorot(&mut r1, 4, 4), glorot(&mut r2, 4, 4));
        assert_eq!(normal(&mut r1, 2, 8, 0.3), normal(&mut r2, 2, 8, 0.3));
    }
}
