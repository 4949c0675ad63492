use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::seed;

pub const CHECKPOINT_FORMAT: &str = "grabnas-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Gradient (or any per-parameter tensor) keyed by parameter name.
pub type GradMap = BTreeMap<String, Tensor>;

/// Named trainable tensors. Initialization of each tensor depends only on the
/// store seed and the tensor name.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamStore {
    seed: u64,
    params: BTreeMap<String, Tensor>,
}

impl ParamStore {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            params: BTreeMap::new(),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    fn insert_new(&mut self, name: &str, value: Tensor) -> Result<()> {
        if self.params.contains_key(name) {
            return Err(Error::InvalidArgument(format!(
                "parameter `{name}` already exists"
            )));
        }
        self.params.insert(name.to_owned(), value);
        Ok(())
    }

    /// Uniform(-a, a) with `a = sqrt(6 / (fan_in + fan_out))`.
    pub fn add_glorot(&mut self, name: &str, fan_in: usize, fan_out: usize) -> Result<()> {
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        self.add_uniform(name, fan_in, fan_out, bound)
    }

    pub fn add_uniform(&mut self, name: &str, rows: usize, cols: usize, bound: f64) -> Result<()> {
        let mut rng = seed::rng(self.seed, name);
        let data = (0..rows * cols)
            .map(|_| rng.random_range(-bound..bound))
            .collect();
        self.insert_new(name, Tensor::from_vec(rows, cols, data)?)
    }

    pub fn add_constant(&mut self, name: &str, rows: usize, cols: usize, value: f64) -> Result<()> {
        self.insert_new(name, Tensor::filled(rows, cols, value))
    }

    pub fn add_tensor(&mut self, name: &str, value: Tensor) -> Result<()> {
        self.insert_new(name, value)
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.params
            .get(name)
            .ok_or_else(|| Error::UnknownParam(name.to_owned()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.params
            .get_mut(name)
            .ok_or_else(|| Error::UnknownParam(name.to_owned()))
    }

    /// Replaces values; the shape must not change.
    pub fn set(&mut self, name: &str, value: Tensor) -> Result<()> {
        let slot = self.get_mut(name)?;
        if slot.shape() != value.shape() {
            return Err(Error::Shape(format!(
                "parameter `{name}` is {:?}, got {:?}",
                slot.shape(),
                value.shape()
            )));
        }
        *slot = value;
        Ok(())
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    /// Names starting with `prefix`.
    pub fn names_with_prefix<'a>(&'a self, prefix: &'a str) -> impl Iterator<Item = &'a str> + 'a {
        self.names().filter(move |n| n.starts_with(prefix))
    }

    /// Copies every parameter of `other` into this store, overwriting shared names.
    pub fn merge(&mut self, other: &ParamStore) {
        for (name, value) in other.iter() {
            self.params.insert(name.to_owned(), value.clone());
        }
    }

    pub fn zeros_like(&self) -> GradMap {
        self.params
            .iter()
            .map(|(k, v)| (k.clone(), Tensor::zeros(v.rows(), v.cols())))
            .collect()
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            format: CHECKPOINT_FORMAT.to_owned(),
            version: CHECKPOINT_VERSION,
            seed: self.seed,
            params: self
                .params
                .iter()
                .map(|(k, v)| {
                    (
                        k.clone(),
                        StoredTensor {
                            shape: [v.rows(), v.cols()],
                            values: v.data().to_vec(),
                        },
                    )
                })
                .collect(),
        }
    }

    pub fn from_checkpoint(ckpt: Checkpoint) -> Result<Self> {
        if ckpt.format != CHECKPOINT_FORMAT {
            return Err(Error::Checkpoint(format!("unknown format `{}`", ckpt.format)));
        }
        if ckpt.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported version {}",
                ckpt.version
            )));
        }
        let mut store = ParamStore::new(ckpt.seed);
        for (name, stored) in ckpt.params {
            let [r, c] = stored.shape;
            store.insert_new(&name, Tensor::from_vec(r, c, stored.values)?)?;
        }
        Ok(store)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(&self.to_checkpoint())?;
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_checkpoint(serde_json::from_str(&text)?)
    }
}

/// On-disk parameter container: JSON with a format tag, version and seed
/// header, then every tensor as shape plus row-major values.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub seed: u64,
    pub params: BTreeMap<String, StoredTensor>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StoredTensor {
    pub shape: [usize; 2],
    pub values: Vec<f64>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_reproducible_per_name() {
        let mut a = ParamStore::new(9);
        a.add_glorot("w1", 4, 3).unwrap();
        a.add_glorot("w2", 3, 2).unwrap();
        let mut b = ParamStore::new(9);
        b.add_glorot("w2", 3, 2).unwrap();
        b.add_glorot("w1", 4, 3).unwrap();
        assert_eq!(a, b);
        let bound = (6.0f64 / 7.0).sqrt();
        assert!(a.get("w1").unwrap().data().iter().all(|v| v.abs() < bound));
    }

    #[test]
    fn duplicate_names_and_shape_changes_are_rejected() {
        let mut p = ParamStore::new(0);
        p.add_constant("b", 1, 3, 0.0).unwrap();
        assert!(p.add_constant("b", 1, 3, 0.0).is_err());
        assert!(p.set("b", Tensor::zeros(1, 4)).is_err());
        assert!(p.get("missing").is_err());
    }

    #[test]
    fn checkpoint_round_trip_is_exact() {
        let mut p = ParamStore::new(42);
        p.add_glorot("enc.w", 5, 7).unwrap();
        p.add_uniform("enc.r", 1, 3, 1e-3).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.json");
        p.save(&path).unwrap();
        let q = ParamStore::load(&path).unwrap();
        assert_eq!(p, q);
        q.save(&dir.path().join("again.json")).unwrap();
        assert_eq!(
            std::fs::read(&path).unwrap(),
            std::fs::read(dir.path().join("again.json")).unwrap()
        );
    }
}
