use std::collections::BTreeMap;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::config::stable_hash;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    Zeros,
    Ones,
    /// Uniform in ±sqrt(6 / (rows + cols)).
    Xavier,
    Normal(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: (usize, usize),
    pub init: Init,
}

impl ParamSpec {
    pub fn new(name: impl Into<String>, shape: (usize, usize), init: Init) -> Self {
        ParamSpec { name: name.into(), shape, init }
    }
}

/// Named 2-d parameters, ordered by name.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    tensors: BTreeMap<String, Array2<f64>>,
}

impl ParamStore {
    /// Each tensor is drawn from its own stream seeded by `(seed, name)`, so
    /// two specs sharing a name get the same values.
    pub fn init(specs: &[ParamSpec], seed: u64) -> Result<Self> {
        let mut tensors = BTreeMap::new();
        for spec in specs {
            let mut rng = ChaCha8Rng::seed_from_u64(stable_hash(&[&seed.to_le_bytes(), spec.name.as_bytes()]));
            let (r, c) = spec.shape;
            let t = match spec.init {
                Init::Zeros => Array2::zeros((r, c)),
                Init::Ones => Array2::ones((r, c)),
                Init::Xavier => {
                    let a = (6.0 / (r + c) as f64).sqrt();
                    Array2::from_shape_fn((r, c), |_| rng.random_range(-a..a))
                }
                Init::Normal(std) => {
                    let n = Normal::new(0.0, std).map_err(|e| Error::Config(e.to_string()))?;
                    Array2::from_shape_fn((r, c), |_| n.sample(&mut rng))
                }
            };
            if tensors.insert(spec.name.clone(), t).is_some() {
                return Err(Error::Config(format!("duplicate parameter {}", spec.name)));
            }
        }
        Ok(ParamStore { tensors })
    }

    pub fn get(&self, name: &str) -> Option<&Array2<f64>> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Array2<f64>> {
        self.tensors.get_mut(name)
    }

    pub fn insert(&mut self, name: &str, value: Array2<f64>) {
        self.tensors.insert(name.to_string(), value);
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Array2<f64>)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Array2<f64>)> {
        self.tensors.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn num_values(&self) -> usize {
        self.tensors.values().map(|t| t.len()).sum()
    }

    /// Sets every tensor whose name starts with `prefix` to zero.
    pub fn zero_prefix(&mut self, prefix: &str) {
        for (k, v) in self.tensors.iter_mut() {
            if k.starts_with(prefix) {
                v.fill(0.0);
            }
        }
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.values().all(|t| t.iter().all(|x| x.is_finite()))
    }
}
