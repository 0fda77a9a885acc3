//! Named parameter storage and per-forward-pass binding onto a tape.

use std::collections::HashMap;
use std::ops::{Deref, DerefMut};

use crate::error::{Result, TensorError};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Ordered collection of named parameters. Insertion order is the
/// serialization order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Tensor>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> Result<ParamId> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(TensorError::Usage(format!("parameter `{name}` registered twice")));
        }
        self.index.insert(name.clone(), self.values.len());
        self.names.push(name);
        self.values.push(value);
        Ok(ParamId(self.values.len() - 1))
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied().map(ParamId)
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.values[id.0]
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor> {
        self.id(name).map(|id| self.get(id))
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Tensor)> {
        self.names.iter().zip(&self.values).enumerate().map(|(i, (n, t))| (ParamId(i), n.as_str(), t))
    }

    pub fn scalar_count(&self) -> usize {
        self.values.iter().map(Tensor::len).sum()
    }

    /// Overwrite values from `other` for every name present in both, checking shapes.
    pub fn load_from(&mut self, other: &ParamStore) -> Result<usize> {
        let mut loaded = 0;
        for (i, name) in self.names.iter().enumerate() {
            if let Some(src) = other.by_name(name) {
                if src.shape() != self.values[i].shape() {
                    return Err(TensorError::dim(
                        "load_from",
                        format!("`{name}`: stored {:?}, expected {:?}", src.shape(), self.values[i].shape()),
                    ));
                }
                self.values[i] = src.clone();
                loaded += 1;
            }
        }
        Ok(loaded)
    }
}

/// Dense gradient buffers aligned with a [`ParamStore`].
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrads {
    grads: Vec<Vec<f64>>,
}

impl ParamGrads {
    pub fn zeros_like(store: &ParamStore) -> Self {
        ParamGrads { grads: store.values.iter().map(|t| vec![0.0; t.len()]).collect() }
    }

    pub fn get(&self, id: ParamId) -> &[f64] {
        &self.grads[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut [f64] {
        &mut self.grads[id.0]
    }

    pub fn add_assign(&mut self, other: &ParamGrads) {
        for (a, b) in self.grads.iter_mut().zip(&other.grads) {
            crate::kernels::add_into(b, a);
        }
    }

    pub fn scale(&mut self, s: f64) {
        for g in &mut self.grads {
            for x in g.iter_mut() {
                *x *= s;
            }
        }
    }

    pub fn global_norm(&self) -> f64 {
        self.grads.iter().flatten().map(|x| x * x).sum::<f64>().sqrt()
    }

    /// Rescale so the global L2 norm is at most `max_norm`; returns the norm before clipping.
    pub fn clip_global_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self.global_norm();
        if norm > max_norm && norm > 0.0 {
            self.scale(max_norm / norm);
        }
        norm
    }

    pub fn is_finite(&self) -> bool {
        self.grads.iter().flatten().all(|x| x.is_finite())
    }

    /// Number of parameter tensors with at least one non-zero gradient entry.
    pub fn nonzero_tensors(&self) -> usize {
        self.grads.iter().filter(|g| g.iter().any(|&x| x != 0.0)).count()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &[f64])> {
        self.grads.iter().enumerate().map(|(i, g)| (ParamId(i), g.as_slice()))
    }
}

/// A tape plus lazily bound parameters of one store.
pub struct Session<'s> {
    tape: Tape,
    store: &'s ParamStore,
    bound: Vec<Option<Var>>,
    trainable: bool,
}

impl<'s> Session<'s> {
    /// Parameters are bound as trainable leaves.
    pub fn new(store: &'s ParamStore) -> Self {
        Session { tape: Tape::new(), store, bound: vec![None; store.len()], trainable: true }
    }

    /// Parameters are bound as constants; nothing is differentiable unless the
    /// caller adds its own leaves.
    pub fn inference(store: &'s ParamStore) -> Self {
        Session { trainable: false, ..Self::new(store) }
    }

    pub fn store(&self) -> &'s ParamStore {
        self.store
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.bound[id.0] {
            return v;
        }
        let value = self.store.get(id).clone();
        let v = if self.trainable { self.tape.leaf(value) } else { self.tape.constant(value) };
        self.bound[id.0] = Some(v);
        v
    }

    pub fn bound_var(&self, id: ParamId) -> Option<Var> {
        self.bound[id.0]
    }

    /// Gradients of bound parameters after `backward`; unbound ones are zero.
    pub fn param_grads(&self) -> ParamGrads {
        let mut out = ParamGrads::zeros_like(self.store);
        for (i, v) in self.bound.iter().enumerate() {
            if let Some(g) = v.and_then(|v| self.tape.grad(v)) {
                out.grads[i].copy_from_slice(g);
            }
        }
        out
    }

    /// Adds the gradients of bound parameters into `acc`.
    pub fn accumulate_grads(&self, acc: &mut ParamGrads) {
        for (i, v) in self.bound.iter().enumerate() {
            if let Some(g) = v.and_then(|v| self.tape.grad(v)) {
                crate::kernels::add_into(g, &mut acc.grads[i]);
            }
        }
    }

    pub fn into_tape(self) -> Tape {
        self.tape
    }
}

impl Deref for Session<'_> {
    type Target = Tape;

    fn deref(&self) -> &Tape {
        &self.tape
    }
}

impl DerefMut for Session<'_> {
    fn deref_mut(&mut self) -> &mut Tape {
        &mut self.tape
    }
}
