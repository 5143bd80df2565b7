//! Differentiable models: small MLPs and closed-form test landscapes.

mod landscape;
mod mlp;

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use crate::data::Batch;
use crate::error::Result;
use crate::tensor::{Layout, ParamVector, Real, Tape, Var};

pub use landscape::{make_double_well, AnalyticLandscape, DoubleWell, Quadratic};
pub use mlp::{make_mlp, Activation, LossKind, Mlp, MlpSpec};

/// A map `(params, batch) → mean per-example loss` that can be recorded on a
/// tape in any [`Real`] scalar type.
pub trait Model: Sync {
    fn layout(&self) -> Arc<Layout>;

    /// Records `L_B(w) = (1/|B|) Σ l(w, x_i, y_i)` and returns the scalar node.
    /// `params` is the flat parameter vector of shape `[k]`.
    fn record_loss<S: Real>(&self, tape: &mut Tape<S>, params: Var, batch: &Batch) -> Result<Var>;

    /// Predicted class per example, for models that classify.
    fn predict(&self, _params: &ParamVector, _batch: &Batch) -> Result<Option<Vec<usize>>> {
        Ok(None)
    }

    /// Called once per completed gradient evaluation over `examples` examples.
    fn note_gradient(&self, _examples: usize) {}

    fn dim(&self) -> usize {
        self.layout().dim()
    }
}

impl<M: Model> Model for &M {
    fn layout(&self) -> Arc<Layout> {
        (**self).layout()
    }
    fn record_loss<S: Real>(&self, tape: &mut Tape<S>, params: Var, batch: &Batch) -> Result<Var> {
        (**self).record_loss(tape, params, batch)
    }
    fn predict(&self, params: &ParamVector, batch: &Batch) -> Result<Option<Vec<usize>>> {
        (**self).predict(params, batch)
    }
    fn note_gradient(&self, examples: usize) {
        (**self).note_gradient(examples)
    }
}

/// Wraps a model and counts gradient evaluations.
#[derive(Debug)]
pub struct Counted<'a, M> {
    inner: &'a M,
    calls: AtomicU64,
    examples: AtomicU64,
}

impl<'a, M: Model> Counted<'a, M> {
    pub fn new(inner: &'a M) -> Self {
        Self {
            inner,
            calls: AtomicU64::new(0),
            examples: AtomicU64::new(0),
        }
    }

    /// Number of gradient evaluations, of any batch size.
    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::Relaxed)
    }

    /// Total examples differentiated over.
    pub fn examples(&self) -> u64 {
        self.examples.load(Ordering::Relaxed)
    }
}

impl<M: Model> Model for Counted<'_, M> {
    fn layout(&self) -> Arc<Layout> {
        self.inner.layout()
    }
    fn record_loss<S: Real>(&self, tape: &mut Tape<S>, params: Var, batch: &Batch) -> Result<Var> {
        self.inner.record_loss(tape, params, batch)
    }
    fn predict(&self, params: &ParamVector, batch: &Batch) -> Result<Option<Vec<usize>>> {
        self.inner.predict(params, batch)
    }
    fn note_gradient(&self, examples: usize) {
        self.calls.fetch_add(1, Ordering::Relaxed);
        self.examples.fetch_add(examples as u64, Ordering::Relaxed);
        self.inner.note_gradient(examples);
    }
}

/// `weight · L(w)` for an inner model.
#[derive(Debug, Clone)]
pub struct Scaled<M> {
    pub inner: M,
    pub weight: f64,
}

impl<M: Model> Model for Scaled<M> {
    fn layout(&self) -> Arc<Layout> {
        self.inner.layout()
    }
    fn record_loss<S: Real>(&self, tape: &mut Tape<S>, params: Var, batch: &Batch) -> Result<Var> {
        let l = self.inner.record_loss(tape, params, batch)?;
        tape.scale(l, self.weight)
    }
    fn predict(&self, params: &ParamVector, batch: &Batch) -> Result<Option<Vec<usize>>> {
        self.inner.predict(params, batch)
    }
}
