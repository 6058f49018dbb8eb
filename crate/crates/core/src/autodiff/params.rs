use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::tape::{Gradients, Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Index of a parameter inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ParamId(usize);

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Entry {
    name: String,
    value: Tensor,
    trainable: bool,
}

/// Named parameter tensors owned by one model.
///
/// Non-trainable entries (batch-norm running statistics) live here too so a
/// checkpoint is a single flat map.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ParamStore {
    entries: Vec<Entry>,
}

/// Tape handles for every entry of a store, valid for one tape.
#[derive(Debug, Clone)]
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    /// Handles supplied by the caller, one per store entry in store order.
    /// Used to evaluate a model at externally owned tape leaves.
    pub fn from_vars(vars: Vec<Var>) -> Self {
        Bound { vars }
    }

    pub fn get(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        self.insert(name.into(), value, true)
    }

    pub fn add_buffer(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        self.insert(name.into(), value, false)
    }

    fn insert(&mut self, name: String, value: Tensor, trainable: bool) -> ParamId {
        debug_assert!(self.entries.iter().all(|e| e.name != name), "duplicate parameter {name}");
        self.entries.push(Entry { name, value, trainable });
        ParamId(self.entries.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.entries[id.0].value
    }

    pub fn is_trainable(&self, id: ParamId) -> bool {
        self.entries[id.0].trainable
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.entries.iter().position(|e| e.name == name).map(ParamId)
    }

    /// Places every entry on the tape: trainable ones as differentiable
    /// leaves, buffers as constants.
    pub fn bind(&self, tape: &mut Tape) -> Bound {
        let vars = self
            .entries
            .iter()
            .map(|e| if e.trainable { tape.param(e.value.clone()) } else { tape.constant(e.value.clone()) })
            .collect();
        Bound { vars }
    }

    /// Gradient per entry in store order (zeros for buffers and unreachable
    /// parameters).
    pub fn collect_grads(&self, bound: &Bound, grads: &Gradients) -> Vec<Tensor> {
        self.ids()
            .map(|id| {
                if self.is_trainable(id) {
                    grads.wrt(bound.get(id))
                } else {
                    Tensor::zeros(self.get(id).shape())
                }
            })
            .collect()
    }

    /// Flat `name → tensor` view, used for checkpoints.
    pub fn to_map(&self) -> BTreeMap<String, Tensor> {
        self.entries.iter().map(|e| (e.name.clone(), e.value.clone())).collect()
    }

    /// Overwrites values from a flat map. Every entry must be present with a
    /// matching shape.
    pub fn load_map(&mut self, map: &BTreeMap<String, Tensor>) -> Result<()> {
        for e in &mut self.entries {
            let t = map
                .get(&e.name)
                .ok_or_else(|| Error::Data(format!("checkpoint lacks parameter {:?}", e.name)))?;
            if t.shape() != e.value.shape() {
                return Err(Error::dim(
                    "load_map",
                    format!("{}: {:?} vs {:?}", e.name, t.shape(), e.value.shape()),
                ));
            }
            e.value = t.clone();
        }
        Ok(())
    }
}
