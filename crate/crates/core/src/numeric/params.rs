use std::ops::Index;
use std::sync::Arc;

use super::{Tape, Tensor, TensorError, Var};

/// Index of a parameter inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
struct Entry {
    name: String,
    value: Arc<Tensor>,
    grad: Vec<f64>,
}

/// Named, ordered model parameters with their accumulated gradients.
///
/// Insertion order is the canonical order used by optimizers and checkpoints.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    entries: Vec<Entry>,
}

/// Parameters bound as leaves of one tape.
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    /// Wraps leaves created elsewhere, in store order.
    pub fn from_vars(vars: Vec<Var>) -> Self {
        Self { vars }
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

impl Index<ParamId> for Bound {
    type Output = Var;

    fn index(&self, id: ParamId) -> &Var {
        &self.vars[id.0]
    }
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        let name = name.into();
        debug_assert!(self.entries.iter().all(|e| e.name != name), "duplicate parameter {name}");
        let grad = vec![0.0; value.len()];
        self.entries.push(Entry {
            name,
            value: Arc::new(value),
            grad,
        });
        ParamId(self.entries.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.entries.iter().map(|e| e.value.len()).sum()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.entries.iter().position(|e| e.name == name).map(ParamId)
    }

    /// Looks up `name` and checks its shape.
    pub fn require(&self, name: &str, shape: &[usize]) -> Result<ParamId, TensorError> {
        let id = self
            .find(name)
            .ok_or_else(|| TensorError::Contract(format!("missing parameter {name}")))?;
        if self.value(id).shape() != shape {
            return Err(TensorError::ShapeMismatch {
                op: format!("load {name}"),
                left: self.value(id).shape().to_vec(),
                right: shape.to_vec(),
            });
        }
        Ok(id)
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> &[f64] {
        &self.entries[id.0].grad
    }

    /// Replaces a parameter value; the shape must not change.
    pub fn set(&mut self, id: ParamId, value: Tensor) -> Result<(), TensorError> {
        let e = &mut self.entries[id.0];
        if e.value.shape() != value.shape() {
            return Err(TensorError::ShapeMismatch {
                op: format!("set {}", e.name),
                left: e.value.shape().to_vec(),
                right: value.shape().to_vec(),
            });
        }
        e.value = Arc::new(value);
        Ok(())
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        Arc::make_mut(&mut self.entries[id.0].value)
    }

    /// Binds every parameter as a leaf of `tape` without copying values.
    pub fn bind(&self, tape: &mut Tape, requires_grad: bool) -> Bound {
        let vars = self
            .entries
            .iter()
            .map(|e| tape.leaf_shared(Arc::clone(&e.value), requires_grad))
            .collect();
        Bound { vars }
    }

    /// Adds leaf gradients from a finished backward pass into the store.
    pub fn accumulate(&mut self, tape: &Tape, bound: &Bound) {
        for (e, &v) in self.entries.iter_mut().zip(&bound.vars) {
            if let Some(g) = tape.grad(v) {
                e.grad.iter_mut().zip(g).for_each(|(a, b)| *a += b);
            }
        }
    }

    pub fn scale_grads(&mut self, s: f64) {
        for e in &mut self.entries {
            e.grad.iter_mut().for_each(|g| *g *= s);
        }
    }

    pub fn zero_grad(&mut self) {
        for e in &mut self.entries {
            e.grad.iter_mut().for_each(|g| *g = 0.0);
        }
    }

    pub fn grad_norm(&self) -> f64 {
        self.entries
            .iter()
            .flat_map(|e| e.grad.iter())
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
    }

    pub(crate) fn split_mut(&mut self) -> impl Iterator<Item = (&mut Tensor, &[f64])> {
        self.entries
            .iter_mut()
            .map(|e| (Arc::make_mut(&mut e.value), e.grad.as_slice()))
    }
}
