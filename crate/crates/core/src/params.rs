//! Named parameter storage shared by every trainable component.

use std::collections::{BTreeMap, HashMap};

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};

use crate::autograd::{Gradients, Tape, Var};
use crate::error::{Error, Result};

/// Parameter matrices keyed by a dotted path such as `encoder.0.ff1.weight`.
///
/// Iteration order is lexicographic by name, which fixes the order of every
/// reduction done over a store.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    map: BTreeMap<String, Array2<f64>>,
}

#[derive(Serialize, Deserialize)]
struct RawTensor {
    shape: [usize; 2],
    data: Vec<f64>,
}

impl Serialize for ParamStore {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let raw: BTreeMap<&str, RawTensor> = self
            .map
            .iter()
            .map(|(k, v)| {
                (
                    k.as_str(),
                    RawTensor {
                        shape: [v.nrows(), v.ncols()],
                        data: v.iter().copied().collect(),
                    },
                )
            })
            .collect();
        raw.serialize(s)
    }
}

impl<'de> Deserialize<'de> for ParamStore {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let raw = BTreeMap::<String, RawTensor>::deserialize(d)?;
        let mut map = BTreeMap::new();
        for (k, t) in raw {
            let a = Array2::from_shape_vec((t.shape[0], t.shape[1]), t.data)
                .map_err(|e| serde::de::Error::custom(format!("tensor `{k}`: {e}")))?;
            map.insert(k, a);
        }
        Ok(Self { map })
    }
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Array2<f64>) {
        self.map.insert(name.into(), value);
    }

    pub fn get(&self, name: &str) -> Option<&Array2<f64>> {
        self.map.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Array2<f64>> {
        self.map.get_mut(name)
    }

    pub fn require(&self, name: &str) -> Result<&Array2<f64>> {
        self.map
            .get(name)
            .ok_or_else(|| Error::ShapeMismatch(format!("missing parameter `{name}`")))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.map.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Array2<f64>)> {
        self.map.iter()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.map.keys()
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn scalar_count(&self) -> usize {
        self.map.values().map(|a| a.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.map.values().all(|a| a.iter().all(|x| x.is_finite()))
    }

    /// Merge another store in, prefixing its names.
    pub fn extend_prefixed(&mut self, prefix: &str, other: &ParamStore) {
        for (k, v) in other.iter() {
            self.map.insert(format!("{prefix}{k}"), v.clone());
        }
    }

    /// Entries whose name starts with `prefix`, with the prefix stripped.
    pub fn strip_prefix(&self, prefix: &str) -> ParamStore {
        ParamStore {
            map: self
                .map
                .iter()
                .filter_map(|(k, v)| k.strip_prefix(prefix).map(|s| (s.to_string(), v.clone())))
                .collect(),
        }
    }

    pub fn global_norm(&self) -> f64 {
        self.map.values().flat_map(|a| a.iter()).map(|x| x * x).sum::<f64>().sqrt()
    }

    /// `self += other · c` over the names present in `other`.
    pub fn add_scaled(&mut self, other: &ParamStore, c: f64) {
        for (k, v) in other.iter() {
            match self.map.get_mut(k) {
                Some(a) => a.scaled_add(c, v),
                None => {
                    self.map.insert(k.clone(), v * c);
                }
            }
        }
    }

    pub fn scale(&mut self, c: f64) {
        for a in self.map.values_mut() {
            a.mapv_inplace(|x| x * c);
        }
    }

    /// SHA-256 over names, shapes and the little-endian bits of every entry.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        for (k, v) in &self.map {
            h.update(k.as_bytes());
            h.update([0u8]);
            h.update((v.nrows() as u64).to_le_bytes());
            h.update((v.ncols() as u64).to_le_bytes());
            for x in v.iter() {
                h.update(x.to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }
}

/// Gaussian init with the given standard deviation.
pub fn normal_init(rng: &mut impl Rng, rows: usize, cols: usize, std: f64) -> Array2<f64> {
    let dist = Normal::new(0.0, std).expect("std must be finite and non-negative");
    Array2::from_shape_fn((rows, cols), |_| dist.sample(rng))
}

/// Tape handles for a set of parameters, looked up by name during a forward
/// pass.
#[derive(Debug, Default, Clone)]
pub struct Bindings {
    vars: HashMap<String, Var>,
}

impl Bindings {
    pub fn new() -> Self {
        Self::default()
    }

    /// Register every entry of `store` under `prefix + name`, as a trainable
    /// parameter when `trainable` says so and as a constant otherwise.
    pub fn bind(&mut self, tape: &mut Tape, store: &ParamStore, prefix: &str, trainable: impl Fn(&str) -> bool) {
        for (k, v) in store.iter() {
            let var = if trainable(k) {
                tape.param(v.clone())
            } else {
                tape.constant(v.clone())
            };
            self.vars.insert(format!("{prefix}{k}"), var);
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, var: Var) {
        self.vars.insert(name.into(), var);
    }

    /// Panics when the name was never bound: the caller built the bindings
    /// from the same parameter layout it is reading back.
    pub fn get(&self, name: &str) -> Var {
        *self
            .vars
            .get(name)
            .unwrap_or_else(|| panic!("parameter `{name}` is not bound"))
    }

    pub fn try_get(&self, name: &str) -> Option<Var> {
        self.vars.get(name).copied()
    }

    /// Collect gradients for the given names; unreached parameters get zeros.
    pub fn gradients(&self, tape: &Tape, grads: &Gradients, names: impl IntoIterator<Item = String>) -> ParamStore {
        let mut out = ParamStore::new();
        for name in names {
            let v = self.get(&name);
            let g = grads
                .get(v)
                .cloned()
                .unwrap_or_else(|| Array2::zeros(tape.shape(v)));
            out.insert(name, g);
        }
        out
    }
}
