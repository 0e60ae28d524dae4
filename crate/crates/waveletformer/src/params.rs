//! Named parameter storage shared by the network blocks, the optimizer, and
//! the checkpoint codec.
//!
//! Blocks hold [`PIdx`] handles; a [`Ctx`] binds each parameter to a tape
//! leaf lazily during one forward pass so the optimizer can read gradients
//! back by index afterwards.

use crate::error::{Result, WfnError};
use crate::tape::{Tape, VarId};
use crate::tensor::Tensor;
use rand_chacha::ChaCha8Rng;

/// Index of a parameter inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PIdx(pub(crate) usize);

#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

/// How a freshly created parameter tensor is filled.
#[derive(Debug, Clone, Copy)]
pub enum Init {
    Zeros,
    /// Uniform in `±1/sqrt(fan_in)`.
    FanInUniform { fan_in: usize },
    /// Truncated normal, std 0.02 (projection weights).
    TruncNormal,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor) -> PIdx {
        self.names.push(name.into());
        self.tensors.push(tensor);
        PIdx(self.names.len() - 1)
    }

    pub fn add_init(&mut self, name: impl Into<String>, shape: &[usize], init: Init, rng: &mut ChaCha8Rng) -> PIdx {
        let tensor = match init {
            Init::Zeros => Tensor::zeros(shape),
            Init::FanInUniform { fan_in } => {
                let bound = 1.0 / (fan_in as f64).sqrt();
                Tensor::uniform_with(rng, shape, -bound, bound)
            }
            Init::TruncNormal => Tensor::trunc_normal_with(rng, shape, 0.02),
        };
        self.add(name, tensor)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, idx: PIdx) -> &Tensor {
        &self.tensors[idx.0]
    }

    pub fn get_mut(&mut self, idx: PIdx) -> &mut Tensor {
        &mut self.tensors[idx.0]
    }

    pub fn name(&self, idx: PIdx) -> &str {
        &self.names[idx.0]
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(|s| s.as_str()).zip(self.tensors.iter())
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    /// Total scalar parameter count.
    pub fn total_params(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    pub fn find(&self, name: &str) -> Option<PIdx> {
        self.names.iter().position(|n| n == name).map(PIdx)
    }

    /// Replaces a parameter value, enforcing shape equality.
    pub fn set(&mut self, idx: PIdx, tensor: Tensor) -> Result<()> {
        if self.tensors[idx.0].shape() != tensor.shape() {
            return Err(WfnError::shape(format!(
                "parameter `{}` has shape {:?}, incoming {:?}",
                self.names[idx.0],
                self.tensors[idx.0].shape(),
                tensor.shape()
            )));
        }
        self.tensors[idx.0] = tensor;
        Ok(())
    }
}

/// One forward pass: a tape plus lazy parameter-to-leaf bindings.
pub struct Ctx<'a> {
    pub tape: &'a mut Tape,
    store: &'a ParamStore,
    bound: Vec<Option<VarId>>,
}

impl<'a> Ctx<'a> {
    pub fn new(tape: &'a mut Tape, store: &'a ParamStore) -> Self {
        let bound = vec![None; store.len()];
        Ctx { tape, store, bound }
    }

    /// Tape leaf for a parameter, inserted on first use.
    pub fn param(&mut self, idx: PIdx) -> VarId {
        if let Some(v) = self.bound[idx.0] {
            return v;
        }
        let v = self.tape.leaf(self.store.get(idx).clone());
        self.bound[idx.0] = Some(v);
        v
    }

    /// Gradients for every store parameter after `tape.backward`, `None`
    /// where a parameter never joined the graph.
    pub fn collect_grads(&self) -> Vec<Option<Tensor>> {
        self.bound
            .iter()
            .map(|slot| slot.and_then(|v| self.tape.grad(v).cloned()))
            .collect()
    }
}
