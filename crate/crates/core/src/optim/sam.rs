use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::dual::{epsilon_hat, epsilon_hat_jvp, project_onto_ball};
use super::{PNorm, SamConfig};
use crate::data::Batch;
use crate::error::{config_err, Result};
use crate::model::Model;
use crate::tensor::{hvp, loss, value_and_grad_in, ParamVector, Precision};

/// Step rule for projected gradient ascent on `ε ↦ L(w + ε)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum AscentStep {
    /// `ε ← Π(ε + α·g)` with a fixed multiplier `α` on the raw gradient.
    Fixed(f64),
    /// `ε ← Π(ε + ε̂(g, c·ρ, p))`: a move of p-norm length `c·ρ` along the
    /// dual direction. `Normalized(1.0)` makes the first step equal to ε̂.
    Normalized(f64),
}

impl Default for AscentStep {
    fn default() -> Self {
        AscentStep::Normalized(1.0)
    }
}

impl AscentStep {
    pub(crate) fn validate(&self) -> Result<()> {
        let v = match self {
            AscentStep::Fixed(v) | AscentStep::Normalized(v) => *v,
        };
        if !(v > 0.0 && v.is_finite()) {
            return config_err(format!("ascent step must be positive, got {v}"));
        }
        Ok(())
    }
}

/// Loss at the unperturbed point and the update direction.
#[derive(Debug, Clone, PartialEq)]
pub struct SamStep {
    pub loss: f64,
    pub gradient: ParamVector,
}

/// Result of [`inner_maximize`].
#[derive(Debug, Clone, PartialEq)]
pub struct AscentTrace {
    pub epsilon: ParamVector,
    /// `L(w + ε_k)` for `k = 0..=steps`, starting from `ε_0 = 0`.
    pub losses: Vec<f64>,
}

fn grad_at<M: Model>(
    model: &M,
    params: &ParamVector,
    eps: &ParamVector,
    batch: &Batch,
    precision: Precision,
) -> Result<(f64, ParamVector)> {
    if eps.is_zero() {
        value_and_grad_in(model, params, batch, precision)
    } else {
        value_and_grad_in(model, &params.add(eps), batch, precision)
    }
}

fn first_order<M: Model>(
    model: &M,
    params: &ParamVector,
    batch: &Batch,
    rho: f64,
    p: PNorm,
    precision: Precision,
) -> Result<SamStep> {
    let (l, g) = value_and_grad_in(model, params, batch, precision)?;
    let eps = epsilon_hat(&g, rho, p)?;
    let (_, gradient) = grad_at(model, params, &eps, batch, precision)?;
    Ok(SamStep { loss: l, gradient })
}

/// `∇L(w)|_{w+ε̂(w)}`: the gradient at the dual-norm perturbed point, with
/// the Hessian terms of `dε̂/dw` dropped. Costs two gradient evaluations;
/// with `ρ = 0` both are taken at `w` and the result equals the plain
/// gradient bit for bit.
pub fn sam_gradient<M: Model>(
    model: &M,
    params: &ParamVector,
    batch: &Batch,
    cfg: &SamConfig,
) -> Result<ParamVector> {
    cfg.validate()?;
    first_order(model, params, batch, cfg.rho, cfg.p_norm, Precision::F64).map(|s| s.gradient)
}

fn second_order<M: Model>(
    model: &M,
    params: &ParamVector,
    batch: &Batch,
    rho: f64,
    p: PNorm,
    precision: Precision,
) -> Result<SamStep> {
    let (l, g) = value_and_grad_in(model, params, batch, precision)?;
    let eps = epsilon_hat(&g, rho, p)?;
    let (_, u) = grad_at(model, params, &eps, batch, precision)?;
    let z = epsilon_hat_jvp(&g, rho, p, &u)?;
    if z.is_zero() {
        return Ok(SamStep {
            loss: l,
            gradient: u,
        });
    }
    let correction = hvp(model, params, batch, &z)?;
    Ok(SamStep {
        loss: l,
        gradient: u.add(&correction),
    })
}

/// Exact gradient of `w ↦ L(w + ε̂(w))`:
/// `∇L|_{w+ε̂} + (dε̂/dw)ᵀ ∇L|_{w+ε̂}`, where `dε̂/dw = (∂ε̂/∂g)·H(w)`.
/// The correction is one Hessian-vector product at `w`.
pub fn sam_gradient_second_order<M: Model>(
    model: &M,
    params: &ParamVector,
    batch: &Batch,
    cfg: &SamConfig,
) -> Result<ParamVector> {
    cfg.validate()?;
    second_order(model, params, batch, cfg.rho, cfg.p_norm, Precision::F64).map(|s| s.gradient)
}

fn ascend<M: Model>(
    model: &M,
    params: &ParamVector,
    batch: &Batch,
    rho: f64,
    p: PNorm,
    steps: usize,
    rule: AscentStep,
    precision: Precision,
    final_loss: bool,
) -> Result<AscentTrace> {
    if steps == 0 {
        return config_err("inner maximization needs at least one step");
    }
    rule.validate()?;
    let mut eps = params.map(|_| 0.0);
    let mut losses = Vec::with_capacity(steps + 1);
    for k in 0..steps {
        let (l, g) = grad_at(model, params, &eps, batch, precision)?;
        losses.push(l);
        eps = match rule {
            AscentStep::Normalized(c) => {
                let d = epsilon_hat(&g, c * rho, p)?;
                if k == 0 && c <= 1.0 {
                    // Already inside the ball.
                    d
                } else {
                    project_onto_ball(&eps.add(&d), rho, p)
                }
            }
            AscentStep::Fixed(alpha) => project_onto_ball(&eps.axpy(alpha, &g), rho, p),
        };
    }
    if final_loss {
        let l = if eps.is_zero() {
            loss(model, params, batch)?
        } else {
            loss(model, &params.add(&eps), batch)?
        };
        losses.push(l);
    }
    Ok(AscentTrace {
        epsilon: eps,
        losses,
    })
}

/// `steps` iterations of projected gradient ascent on `ε ↦ L(w + ε)` over
/// the ball `‖ε‖_p ≤ ρ`, starting at `ε = 0`.
pub fn inner_maximize<M: Model>(
    model: &M,
    params: &ParamVector,
    batch: &Batch,
    rho: f64,
    p: PNorm,
    steps: usize,
    step: AscentStep,
) -> Result<AscentTrace> {
    if !(rho >= 0.0) {
        return config_err(format!("rho must be >= 0, got {rho}"));
    }
    ascend(
        model,
        params,
        batch,
        rho,
        p,
        steps,
        step,
        Precision::F64,
        true,
    )
}

fn random_direction(dim: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..dim)
        .map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal))
        .collect()
}

fn random_step<M: Model>(
    model: &M,
    params: &ParamVector,
    batch: &Batch,
    rho: f64,
    seed: u64,
    precision: Precision,
) -> Result<SamStep> {
    let eps = if rho == 0.0 {
        params.map(|_| 0.0)
    } else {
        let z = params.with_values(random_direction(params.dim(), seed));
        z.scaled(rho / z.norm2())
    };
    let (l, gradient) = grad_at(model, params, &eps, batch, precision)?;
    Ok(SamStep { loss: l, gradient })
}

/// Gradient at `w + ρ·z/‖z‖₂` for a seeded standard Gaussian `z`.
pub fn random_perturbation_gradient<M: Model>(
    model: &M,
    params: &ParamVector,
    batch: &Batch,
    rho: f64,
    seed: u64,
) -> Result<ParamVector> {
    if !(rho >= 0.0) {
        return config_err(format!("rho must be >= 0, got {rho}"));
    }
    random_step(model, params, batch, rho, seed, Precision::F64).map(|s| s.gradient)
}

fn single_batch<M: Model>(
    model: &M,
    params: &ParamVector,
    batch: &Batch,
    cfg: &SamConfig,
    precision: Precision,
    seed: u64,
) -> Result<SamStep> {
    if cfg.random_perturbation {
        random_step(model, params, batch, cfg.rho, seed, precision)
    } else if cfg.second_order {
        second_order(model, params, batch, cfg.rho, cfg.p_norm, precision)
    } else if cfg.ascent_steps > 1 {
        let (l0, _) = (0.0, ());
        let trace = ascend(
            model,
            params,
            batch,
            cfg.rho,
            cfg.p_norm,
            cfg.ascent_steps,
            cfg.ascent_step,
            precision,
            false,
        )?;
        let (_, gradient) = grad_at(model, params, &trace.epsilon, batch, precision)?;
        let loss = trace.losses.first().copied().unwrap_or(l0);
        Ok(SamStep { loss, gradient })
    } else {
        first_order(model, params, batch, cfg.rho, cfg.p_norm, precision)
    }
}

/// The update direction for one batch under `cfg`, including m-sharpness
/// splitting. Sub-batch results are averaged in sub-batch index order, so
/// serial and parallel execution agree bit for bit.
pub fn sam_direction<M: Model>(
    model: &M,
    params: &ParamVector,
    batch: &Batch,
    cfg: &SamConfig,
    precision: Precision,
    seed: u64,
) -> Result<SamStep> {
    cfg.validate_for_batch(batch.len())?;
    if cfg.second_order && (cfg.random_perturbation || cfg.ascent_steps > 1) {
        return config_err("second-order updates need the single-step dual-norm perturbation");
    }
    if cfg.m == 0 || cfg.m == batch.len() {
        return single_batch(model, params, batch, cfg, precision, seed);
    }
    let parts = batch.chunks(cfg.m)?;
    let run = |(i, sub): (usize, &Batch)| {
        single_batch(
            model,
            params,
            sub,
            cfg,
            precision,
            seed.wrapping_add(i as u64),
        )
    };
    let steps: Vec<SamStep> = if cfg.parallel {
        parts
            .par_iter()
            .enumerate()
            .map(run)
            .collect::<Result<_>>()?
    } else {
        parts.iter().enumerate().map(run).collect::<Result<_>>()?
    };
    let count = steps.len() as f64;
    let mut grad = steps[0].gradient.clone();
    let mut loss_sum = steps[0].loss;
    for s in &steps[1..] {
        grad = grad.add(&s.gradient);
        loss_sum += s.loss;
    }
    Ok(SamStep {
        loss: loss_sum / count,
        gradient: grad.scaled(1.0 / count),
    })
}

/// Mean over disjoint size-`m` sub-batches of independently perturbed SAM
/// gradients.
pub fn msharpness_gradient<M: Model>(
    model: &M,
    params: &ParamVector,
    batch: &Batch,
    cfg: &SamConfig,
) -> Result<ParamVector> {
    if cfg.m == 0 {
        return config_err("m-sharpness needs m > 0");
    }
    sam_direction(model, params, batch, cfg, Precision::F64, 0).map(|s| s.gradient)
}
