use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, ParamId, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Optimiser group a parameter belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Group {
    Encoder,
    Head,
}

#[derive(Clone, Debug)]
pub struct ParamEntry<T> {
    pub name: String,
    pub group: Group,
    pub value: Tensor<T>,
}

/// Named parameter tensors in creation order.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<T> {
    entries: Vec<ParamEntry<T>>,
    by_name: BTreeMap<String, usize>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self { entries: Vec::new(), by_name: BTreeMap::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, group: Group, value: Tensor<T>) -> ParamId {
        let name = name.into();
        assert!(!self.by_name.contains_key(&name), "duplicate parameter {name}");
        self.by_name.insert(name.clone(), self.entries.len());
        self.entries.push(ParamEntry { name, group, value });
        ParamId(self.entries.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.entries[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.entries[id.0].value
    }

    pub fn entry(&self, id: ParamId) -> &ParamEntry<T> {
        &self.entries[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).map(|&i| ParamId(i))
    }

    pub fn entries(&self) -> &[ParamEntry<T>] {
        &self.entries
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn total_scalars(&self) -> usize {
        self.entries.iter().map(|e| e.value.len()).sum()
    }

    /// Replace every value from `other`, matching by name and shape.
    pub fn load_from(&mut self, named: &BTreeMap<String, Tensor<T>>) -> Result<()> {
        for e in &mut self.entries {
            let t = named.get(&e.name).ok_or_else(|| Error::Checkpoint(format!("missing tensor {}", e.name)))?;
            if t.shape() != e.value.shape() {
                return Err(Error::Checkpoint(format!(
                    "tensor {} has shape {:?}, expected {:?}",
                    e.name,
                    t.shape(),
                    e.value.shape()
                )));
            }
            e.value = t.clone();
        }
        Ok(())
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            entries: self.entries.iter().map(|e| ParamEntry { name: e.name.clone(), group: e.group, value: e.value.cast() }).collect(),
            by_name: self.by_name.clone(),
        }
    }
}

/// Seeded initialiser used while building a network.
pub struct Init<'a, T> {
    pub store: &'a mut ParamStore<T>,
    rng: ChaCha8Rng,
    group: Group,
}

impl<'a, T: Scalar> Init<'a, T> {
    pub fn new(store: &'a mut ParamStore<T>, seed: u64) -> Self {
        Self { store, rng: ChaCha8Rng::seed_from_u64(seed), group: Group::Head }
    }

    pub fn set_group(&mut self, group: Group) {
        self.group = group;
    }

    pub fn normal(&mut self, name: &str, rows: usize, cols: usize, std: f64) -> ParamId {
        let dist = Normal::new(0.0, std).expect("positive std");
        let data = (0..rows * cols).map(|_| T::lit(dist.sample(&mut self.rng))).collect();
        self.store.add(name, self.group, Tensor::from_vec(rows, cols, data))
    }

    pub fn constant(&mut self, name: &str, rows: usize, cols: usize, v: f64) -> ParamId {
        self.store.add(name, self.group, Tensor::filled(rows, cols, T::lit(v)))
    }
}

/// Graph construction context: binds each parameter once per graph and
/// decides which groups receive gradients.
pub struct Cx<'a, T> {
    pub g: Graph<T>,
    store: &'a ParamStore<T>,
    bound: Vec<Option<Var>>,
    trainable: fn(Group) -> bool,
}

pub fn all_trainable(_: Group) -> bool {
    true
}

pub fn frozen(_: Group) -> bool {
    false
}

pub fn heads_only(g: Group) -> bool {
    g == Group::Head
}

impl<'a, T: Scalar> Cx<'a, T> {
    pub fn new(store: &'a ParamStore<T>, trainable: fn(Group) -> bool) -> Self {
        Self { g: Graph::new(), store, bound: vec![None; store.len()], trainable }
    }

    pub fn store(&self) -> &ParamStore<T> {
        self.store
    }

    pub fn p(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.bound[id.0] {
            return v;
        }
        let e = self.store.entry(id);
        let v = self.g.param(id, &e.value, (self.trainable)(e.group));
        self.bound[id.0] = Some(v);
        v
    }

    pub fn into_graph(self) -> Graph<T> {
        self.g
    }
}
