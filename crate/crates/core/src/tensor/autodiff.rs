use serde::{Deserialize, Serialize};

use super::params::ParamVector;
use super::real::{Dual, Real};
use super::tape::{Tape, Tensor, Var};
use crate::data::Batch;
use crate::error::{Error, Result};
use crate::model::Model;

/// Floating-point width used for the forward and backward pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    F64,
    F32,
}

fn check<M: Model + ?Sized>(model: &M, params: &ParamVector, batch: &Batch) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::Config("batch is empty".into()));
    }
    let dim = model.layout().dim();
    if params.dim() != dim {
        return Err(Error::Shape(format!(
            "model has {dim} parameters, got a vector of {}",
            params.dim()
        )));
    }
    Ok(())
}

fn record<S: Real, M: Model + ?Sized>(
    model: &M,
    values: Vec<S>,
    batch: &Batch,
) -> Result<(Tape<S>, Var, Var)> {
    let mut tape = Tape::new();
    let n = values.len();
    let w = tape.input("params", Tensor::new(vec![n], values)?)?;
    let l = model.record_loss(&mut tape, w, batch)?;
    Ok((tape, w, l))
}

fn lift<S: Real>(params: &ParamVector) -> Vec<S> {
    params.as_slice().iter().map(|&v| S::from_f64(v)).collect()
}

fn gradient_of<S: Real, M: Model + ?Sized>(
    model: &M,
    params: &ParamVector,
    batch: &Batch,
) -> Result<(f64, ParamVector)> {
    let (tape, w, l) = record::<S, M>(model, lift(params), batch)?;
    let grads = tape.backward(l)?;
    let g = match grads.get(w) {
        Some(g) => g.iter().map(|v| v.value()).collect(),
        None => vec![0.0; params.dim()],
    };
    let g = params.with_values(g);
    if !g.is_finite() {
        return Err(Error::NonFinite {
            tensor: "gradient of params".into(),
        });
    }
    model.note_gradient(batch.len());
    Ok((tape.scalar_value(l).value(), g))
}

/// Mean per-example loss over `batch`.
pub fn loss<M: Model + ?Sized>(model: &M, params: &ParamVector, batch: &Batch) -> Result<f64> {
    check(model, params, batch)?;
    let (tape, _, l) = record::<f64, M>(model, lift(params), batch)?;
    Ok(tape.scalar_value(l))
}

/// Loss and gradient in the requested precision. The gradient is widened
/// back to `f64` either way.
pub fn value_and_grad_in<M: Model + ?Sized>(
    model: &M,
    params: &ParamVector,
    batch: &Batch,
    precision: Precision,
) -> Result<(f64, ParamVector)> {
    check(model, params, batch)?;
    match precision {
        Precision::F64 => gradient_of::<f64, M>(model, params, batch),
        Precision::F32 => gradient_of::<f32, M>(model, params, batch),
    }
}

pub fn value_and_grad<M: Model + ?Sized>(
    model: &M,
    params: &ParamVector,
    batch: &Batch,
) -> Result<(f64, ParamVector)> {
    value_and_grad_in(model, params, batch, Precision::F64)
}

/// `∇_w` of the mean per-example loss.
pub fn grad<M: Model + ?Sized>(
    model: &M,
    params: &ParamVector,
    batch: &Batch,
) -> Result<ParamVector> {
    value_and_grad(model, params, batch).map(|(_, g)| g)
}

/// Hessian-vector product `∇²L(w)·v`, by running the reverse pass over dual
/// numbers whose tangent is `v`.
pub fn hvp<M: Model + ?Sized>(
    model: &M,
    params: &ParamVector,
    batch: &Batch,
    v: &ParamVector,
) -> Result<ParamVector> {
    check(model, params, batch)?;
    if v.dim() != params.dim() {
        return Err(Error::Shape(format!(
            "hvp direction has {} entries, params have {}",
            v.dim(),
            params.dim()
        )));
    }
    let values: Vec<Dual<f64>> = params
        .as_slice()
        .iter()
        .zip(v.as_slice())
        .map(|(&w, &d)| Dual::new(w, d))
        .collect();
    let (tape, w, l) = record::<Dual<f64>, M>(model, values, batch)?;
    let grads = tape.backward(l)?;
    let hv = match grads.get(w) {
        Some(g) => g.iter().map(|d| d.eps).collect(),
        None => vec![0.0; params.dim()],
    };
    let hv = params.with_values(hv);
    if !hv.is_finite() {
        return Err(Error::NonFinite {
            tensor: "hessian-vector product".into(),
        });
    }
    Ok(hv)
}
