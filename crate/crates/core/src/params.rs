//! Named parameter storage and its binding onto a tape.

use std::collections::BTreeMap;
use std::ops::Index;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::tensor::{Real, Tape, Tensor, Var};

/// All learnable tensors of a model, keyed by dotted path
/// (`generator.0.attn.wq`, `classifier.s`, ...). Iteration order is the
/// sorted name order, which fixes checkpoint layout and reduction order.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamStore<F: Real> {
    tensors: BTreeMap<String, Tensor<F>>,
}

impl<F: Real> Default for ParamStore<F> {
    fn default() -> Self {
        ParamStore {
            tensors: BTreeMap::new(),
        }
    }
}

impl<F: Real> ParamStore<F> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor<F>) {
        self.tensors.insert(name.into(), t);
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<F>> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::NotFound(format!("parameter {name}")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor<F>> {
        self.tensors
            .get_mut(name)
            .ok_or_else(|| Error::NotFound(format!("parameter {name}")))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor<F>)> {
        self.tensors.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor<F>)> {
        self.tensors.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.values().map(Tensor::numel).sum()
    }

    pub fn cast<G: Real>(&self) -> ParamStore<G> {
        ParamStore {
            tensors: self
                .tensors
                .iter()
                .map(|(k, v)| (k.clone(), v.cast()))
                .collect(),
        }
    }

    /// SHA-256 over names, shapes and little-endian payloads of the
    /// parameters selected by `filter`.
    pub fn checksum(&self, filter: impl Fn(&str) -> bool) -> [u8; 32] {
        let mut h = Sha256::new();
        for (name, t) in &self.tensors {
            if !filter(name) {
                continue;
            }
            h.update(name.as_bytes());
            for &d in t.shape() {
                h.update((d as u64).to_le_bytes());
            }
            for &x in t.data() {
                h.update(x.as_f64().to_le_bytes());
            }
        }
        h.finalize().into()
    }

    /// Registers every tensor on `tape`; names for which `trainable`
    /// returns false become constants.
    pub fn bind(&self, tape: &mut Tape<F>, trainable: impl Fn(&str) -> bool) -> Bound {
        let vars = self
            .tensors
            .iter()
            .map(|(name, t)| {
                let v = if trainable(name) {
                    tape.param(t.clone())
                } else {
                    tape.constant(t.clone())
                };
                (name.clone(), v)
            })
            .collect();
        Bound { vars }
    }

    pub(crate) fn gaussian(
        &mut self,
        name: &str,
        shape: &[usize],
        sigma: f64,
        rng: &mut impl Rng,
    ) {
        let normal = Normal::new(0.0, sigma).expect("positive sigma");
        let n: usize = shape.iter().product();
        let data = (0..n)
            .map(|_| F::from_f64_lossy(normal.sample(rng)))
            .collect();
        self.insert(name, Tensor::new(shape.to_vec(), data).expect("valid shape"));
    }

    pub(crate) fn constant_fill(&mut self, name: &str, shape: &[usize], value: f64) {
        self.insert(name, Tensor::full(shape, F::from_f64_lossy(value)));
    }
}

/// Tape handles for a [`ParamStore`], looked up by name.
#[derive(Clone, Debug, Default)]
pub struct Bound {
    vars: BTreeMap<String, Var>,
}

impl Bound {
    pub fn get(&self, name: &str) -> Option<Var> {
        self.vars.get(name).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Var)> {
        self.vars.iter()
    }
}

impl Index<&str> for Bound {
    type Output = Var;

    fn index(&self, name: &str) -> &Var {
        self.vars
            .get(name)
            .unwrap_or_else(|| panic!("parameter {name} not bound"))
    }
}
