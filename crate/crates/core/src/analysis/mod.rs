//! Landscape diagnostics on fixed parameters: Hessian spectra, sharpness,
//! generalization bounds and update similarity.

mod bound;
mod lanczos;

use serde::Serialize;

use crate::data::Batch;
use crate::error::{config_err, Result};
use crate::model::Model;
use crate::optim::error_rate;
use crate::optim::{
    inner_maximize, sam_gradient, sam_gradient_second_order, AscentStep, PNorm, SamConfig,
};
use crate::tensor::ParamVector;

pub use bound::{pac_bayes_bound, BoundReport};
pub use lanczos::{
    dense_hessian, lanczos_operator, lanczos_spectrum, SpectrumReport, BREAKDOWN_TOL,
};

/// Loss and error increase at the best perturbation found by ascent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SharpnessReport {
    pub rho: f64,
    pub p_norm: PNorm,
    pub steps: usize,
    pub base_loss: f64,
    /// `max_k L(w + ε_k) − L(w)`, over the ascent iterates including `ε_0 = 0`.
    pub loss_sharpness: f64,
    /// Error-rate change at the loss-maximizing iterate; `NaN` without
    /// predictions.
    pub error_sharpness: f64,
}

/// Ascends on the loss over `batch` and reports both deltas.
pub fn sharpness_report<M: Model>(
    model: &M,
    params: &ParamVector,
    batch: &Batch,
    rho: f64,
    p: PNorm,
    steps: usize,
) -> Result<SharpnessReport> {
    if steps == 0 {
        return config_err("sharpness estimation needs at least one ascent step");
    }
    if rho == 0.0 {
        let base = crate::tensor::loss(model, params, batch)?;
        let err = error_rate(model, params, batch)?;
        return Ok(SharpnessReport {
            rho,
            p_norm: p,
            steps,
            base_loss: base,
            loss_sharpness: 0.0,
            error_sharpness: if err.is_nan() { f64::NAN } else { 0.0 },
        });
    }
    // Iterates are replayed so the arg-max perturbation is available.
    let mut best = (0usize, f64::NEG_INFINITY);
    let trace = inner_maximize(model, params, batch, rho, p, steps, AscentStep::default())?;
    for (k, &l) in trace.losses.iter().enumerate() {
        if l > best.1 {
            best = (k, l);
        }
    }
    let base = trace.losses[0];
    let base_err = error_rate(model, params, batch)?;
    let error_sharpness = if base_err.is_nan() || best.0 == 0 {
        if base_err.is_nan() {
            f64::NAN
        } else {
            0.0
        }
    } else {
        let at = inner_maximize(model, params, batch, rho, p, best.0, AscentStep::default())?;
        error_rate(model, &params.add(&at.epsilon), batch)? - base_err
    };
    Ok(SharpnessReport {
        rho,
        p_norm: p,
        steps,
        base_loss: base,
        loss_sharpness: best.1 - base,
        error_sharpness,
    })
}

/// `max_{‖ε‖_p ≤ ρ} L(w + ε) − L(w)` estimated by `steps` iterations of
/// projected ascent. The estimate is the best iterate, so it is never
/// negative and never decreases with more steps.
pub fn estimate_sharpness<M: Model>(
    model: &M,
    params: &ParamVector,
    batch: &Batch,
    rho: f64,
    p: PNorm,
    steps: usize,
) -> Result<f64> {
    if steps == 0 {
        return config_err("sharpness estimation needs at least one ascent step");
    }
    if rho == 0.0 {
        return Ok(0.0);
    }
    let trace = inner_maximize(model, params, batch, rho, p, steps, AscentStep::default())?;
    let best = trace
        .losses
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(best - trace.losses[0])
}

/// Cosine of the angle between two vectors, clamped to `[-1, 1]`; `NaN` if
/// either is zero.
pub fn cosine_similarity(a: &ParamVector, b: &ParamVector) -> f64 {
    let (na, nb) = (a.norm_sq(), b.norm_sq());
    if na == 0.0 || nb == 0.0 {
        return f64::NAN;
    }
    (a.dot(b) / (na * nb).sqrt()).clamp(-1.0, 1.0)
}

/// Cosine similarity between the first- and second-order SAM updates.
pub fn update_cosine_similarity<M: Model>(
    model: &M,
    params: &ParamVector,
    batch: &Batch,
    cfg: &SamConfig,
) -> Result<f64> {
    let first = sam_gradient(model, params, batch, cfg)?;
    let second = sam_gradient_second_order(model, params, batch, cfg)?;
    Ok(cosine_similarity(&first, &second))
}
