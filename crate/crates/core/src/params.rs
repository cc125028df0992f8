//! Named parameter storage shared by encoders and decoders.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A parameter tensor with its stable name, as written to checkpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    #[serde(flatten)]
    pub tensor: Tensor,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

/// Graph handles for every parameter of a store, in registration order.
#[derive(Debug, Clone)]
pub struct Bound(Vec<Var>);

impl Bound {
    pub fn var(&self, id: ParamId) -> Var {
        self.0[id.0]
    }

    pub fn vars(&self) -> &[Var] {
        &self.0
    }
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor) -> ParamId {
        let name = name.into();
        debug_assert!(!self.names.contains(&name), "duplicate parameter {name}");
        self.names.push(name);
        self.tensors.push(tensor);
        ParamId(self.tensors.len() - 1)
    }

    /// Xavier-uniform weight of shape `fan_in × fan_out`.
    pub fn add_xavier<R: Rng>(
        &mut self,
        name: impl Into<String>,
        fan_in: usize,
        fan_out: usize,
        rng: &mut R,
    ) -> ParamId {
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let data = (0..fan_in * fan_out)
            .map(|_| rng.random_range(-bound..=bound))
            .collect();
        let tensor = Tensor::new(fan_in, fan_out, data).expect("length matches shape");
        self.add(name, tensor)
    }

    pub fn add_zeros(&mut self, name: impl Into<String>, rows: usize, cols: usize) -> ParamId {
        self.add(name, Tensor::zeros(rows, cols))
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    /// Registers every parameter as a trainable leaf.
    pub fn bind(&self, g: &mut Graph) -> Bound {
        Bound(self.tensors.iter().map(|t| g.param(t.clone())).collect())
    }

    /// Registers every parameter as a constant (inference only).
    pub fn bind_frozen(&self, g: &mut Graph) -> Bound {
        Bound(self.tensors.iter().map(|t| g.constant(t.clone())).collect())
    }

    /// Binds externally supplied tensors in place of the stored ones, with
    /// the choice of leaf kind made by the caller.
    pub fn bind_with(&self, g: &mut Graph, vars: &[Var]) -> Result<Bound> {
        if vars.len() != self.tensors.len() {
            return Err(Error::contract(format!(
                "expected {} parameter nodes, got {}",
                self.tensors.len(),
                vars.len()
            )));
        }
        for (v, t) in vars.iter().zip(&self.tensors) {
            if g.value(*v).shape() != t.shape() {
                return Err(Error::Dimension {
                    op: "bind",
                    left: t.shape(),
                    right: g.value(*v).shape(),
                });
            }
        }
        Ok(Bound(vars.to_vec()))
    }

    pub fn to_named(&self) -> Vec<NamedTensor> {
        self.names
            .iter()
            .zip(&self.tensors)
            .map(|(name, tensor)| NamedTensor {
                name: name.clone(),
                tensor: tensor.clone(),
            })
            .collect()
    }

    /// Overwrites stored tensors from `named`; names and shapes must match
    /// this store exactly.
    pub fn load_named(&mut self, named: &[NamedTensor]) -> Result<()> {
        if named.len() != self.tensors.len() {
            return Err(Error::config(format!(
                "checkpoint has {} parameters, model expects {}",
                named.len(),
                self.tensors.len()
            )));
        }
        for entry in named {
            let id = self
                .find(&entry.name)
                .ok_or_else(|| Error::config(format!("unknown parameter {}", entry.name)))?;
            let slot = &mut self.tensors[id.0];
            if slot.shape() != entry.tensor.shape() {
                return Err(Error::Dimension {
                    op: "load parameter",
                    left: slot.shape(),
                    right: entry.tensor.shape(),
                });
            }
            *slot = entry.tensor.clone();
        }
        Ok(())
    }
}
