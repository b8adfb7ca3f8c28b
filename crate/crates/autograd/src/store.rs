//! Named parameter storage and per-pass binding onto a tape.

use std::cell::RefCell;
use std::sync::Arc;

use crate::tape::{Grads, Tape, Var};
use crate::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(pub usize);

/// Ordered collection of named parameter tensors.
#[derive(Clone, Default, Debug)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Arc<Tensor>>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        self.names.push(name.into());
        self.values.push(Arc::new(value));
        ParamId(self.values.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        Arc::make_mut(&mut self.values[id.0])
    }

    pub fn set(&mut self, id: ParamId, value: Tensor) {
        assert_eq!(self.values[id.0].shape(), value.shape(), "parameter shape change");
        self.values[id.0] = Arc::new(value);
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(self.values.iter().map(|v| &**v))
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(|v| v.len()).sum()
    }

    /// Bitwise equality of names and values.
    pub fn bit_eq(&self, other: &ParamStore) -> bool {
        self.names == other.names
            && self.values.len() == other.values.len()
            && self.values.iter().zip(&other.values).all(|(a, b)| a.bit_eq(b))
    }

    /// Bind parameters lazily onto `tape`. With `track = false` they are constants.
    pub fn bind<'t>(&'t self, tape: &'t Tape, track: bool) -> Bound<'t> {
        Bound {
            store: self,
            tape,
            track,
            vars: RefCell::new(vec![None; self.values.len()]),
        }
    }

    pub(crate) fn arc(&self, id: ParamId) -> Arc<Tensor> {
        self.values[id.0].clone()
    }
}

/// Parameters of one [`ParamStore`] bound to a tape for a single pass.
pub struct Bound<'t> {
    store: &'t ParamStore,
    tape: &'t Tape,
    track: bool,
    vars: RefCell<Vec<Option<usize>>>,
}

impl<'t> Bound<'t> {
    pub fn var(&self, id: ParamId) -> Var<'t> {
        let existing = self.vars.borrow()[id.0];
        if let Some(node) = existing {
            return self.tape_var(node);
        }
        let v = if self.track {
            self.tape.leaf_arc(self.store.arc(id))
        } else {
            self.tape.constant_arc(self.store.arc(id))
        };
        self.vars.borrow_mut()[id.0] = Some(v.id());
        v
    }

    fn tape_var(&self, node: usize) -> Var<'t> {
        // Re-materialize a handle for an already-bound node.
        crate::tape::var_handle(self.tape, node)
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn store(&self) -> &'t ParamStore {
        self.store
    }

    /// Take the gradients of every bound parameter out of `grads`.
    pub fn collect(&self, grads: &mut Grads) -> Vec<(ParamId, Tensor)> {
        self.vars
            .borrow()
            .iter()
            .enumerate()
            .filter_map(|(i, node)| node.and_then(|n| grads.take(n).map(|g| (ParamId(i), g))))
            .collect()
    }
}

/// Gradient accumulator aligned with a [`ParamStore`].
#[derive(Clone, Debug)]
pub struct GradBuffer {
    grads: Vec<Tensor>,
}

impl GradBuffer {
    pub fn zeros_like(store: &ParamStore) -> Self {
        Self {
            grads: store.values.iter().map(|v| Tensor::zeros(v.shape())).collect(),
        }
    }

    pub fn accumulate(&mut self, collected: &[(ParamId, Tensor)], scale: f64) {
        for (id, g) in collected {
            self.grads[id.0].axpy(scale, g);
        }
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.grads[id.0]
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.grads
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.grads
    }

    pub fn sq_norm(&self) -> f64 {
        self.grads.iter().map(Tensor::sq_norm).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.grads.iter().all(Tensor::is_finite)
    }
}
