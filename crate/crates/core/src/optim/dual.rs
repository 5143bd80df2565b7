//! The dual-norm solution of the linearized inner problem
//! `argmax_{‖ε‖_p ≤ ρ} εᵀg`, its derivative in `g`, and ball projections.

use super::PNorm;
use crate::error::{config_err, Error, Result};
use crate::tensor::ParamVector;

/// Gradients with dual norm at or below this are treated as zero.
const ZERO_GUARD: f64 = 1e-12;

pub fn p_norm(v: &[f64], p: PNorm) -> f64 {
    match p {
        PNorm::Two => v.iter().map(|x| x * x).sum::<f64>().sqrt(),
        PNorm::Inf => v.iter().fold(0.0, |m, x| m.max(x.abs())),
        PNorm::P(p) => {
            let scale = v.iter().fold(0.0, |m: f64, x| m.max(x.abs()));
            if scale == 0.0 {
                return 0.0;
            }
            scale
                * v.iter()
                    .map(|x| (x.abs() / scale).powf(p))
                    .sum::<f64>()
                    .powf(1.0 / p)
        }
    }
}

/// `‖v‖_q` for the exponent conjugate to `p`.
pub fn dual_norm(v: &[f64], p: PNorm) -> f64 {
    match p {
        PNorm::Two => p_norm(v, PNorm::Two),
        PNorm::Inf => v.iter().map(|x| x.abs()).sum(),
        PNorm::P(_) => {
            let q = p.dual_exponent();
            match PNorm::new(q) {
                Ok(qn) => p_norm(v, qn),
                Err(_) => f64::NAN,
            }
        }
    }
}

fn check_finite(g: &ParamVector) -> Result<()> {
    if let Some(i) = g.as_slice().iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            tensor: format!("perturbation gradient[{i}]"),
        });
    }
    Ok(())
}

/// `ε̂ = ρ·sign(g)·|g|^{q−1} / (‖g‖_q^q)^{1/p}`.
///
/// `p = 2` gives `ρ·g/‖g‖₂` and `p = ∞` gives `ρ·sign(g)`. Returns the zero
/// vector when `ρ = 0` or `‖g‖_q ≤ 1e-12`.
pub fn epsilon_hat(g: &ParamVector, rho: f64, p: PNorm) -> Result<ParamVector> {
    if !(rho >= 0.0) {
        return config_err(format!("rho must be >= 0, got {rho}"));
    }
    check_finite(g)?;
    let gs = g.as_slice();
    if rho == 0.0 || dual_norm(gs, p) <= ZERO_GUARD {
        return Ok(g.map(|_| 0.0));
    }
    let eps = match p {
        PNorm::Two => {
            let n = p_norm(gs, PNorm::Two);
            gs.iter().map(|x| rho * x / n).collect()
        }
        PNorm::Inf => gs
            .iter()
            .map(|&x| if x == 0.0 { 0.0 } else { rho * x.signum() })
            .collect(),
        PNorm::P(pv) => {
            // ε̂ is invariant to positive rescaling of g; normalize by max |g|
            // first so the powers stay in range.
            let q = p.dual_exponent();
            let scale = gs.iter().fold(0.0, |m: f64, x| m.max(x.abs()));
            let phi: Vec<f64> = gs
                .iter()
                .map(|&x| (x / scale).signum() * (x.abs() / scale).powf(q - 1.0))
                .collect();
            let sum_q: f64 = gs.iter().map(|x| (x.abs() / scale).powf(q)).sum();
            let denom = sum_q.powf(1.0 / pv);
            phi.iter()
                .zip(gs)
                .map(|(&f, &x)| if x == 0.0 { 0.0 } else { rho * f / denom })
                .collect()
        }
    };
    Ok(g.with_values(eps))
}

/// Jacobian-vector product `(∂ε̂/∂g)·u`. The Jacobian is symmetric, so this
/// is also the transpose product needed by the second-order update.
///
/// `p = ∞` has a piecewise-constant ε̂, so the product is zero.
pub fn epsilon_hat_jvp(
    g: &ParamVector,
    rho: f64,
    p: PNorm,
    u: &ParamVector,
) -> Result<ParamVector> {
    check_finite(g)?;
    let gs = g.as_slice();
    let us = u.as_slice();
    if rho == 0.0 || dual_norm(gs, p) <= ZERO_GUARD {
        return Ok(g.map(|_| 0.0));
    }
    let out = match p {
        PNorm::Inf => vec![0.0; gs.len()],
        PNorm::Two => {
            let n = p_norm(gs, PNorm::Two);
            let proj: f64 = gs.iter().zip(us).map(|(a, b)| a * b).sum::<f64>() / (n * n);
            gs.iter()
                .zip(us)
                .map(|(&gi, &ui)| rho / n * (ui - gi * proj))
                .collect()
        }
        PNorm::P(pv) => {
            // J = ρ[diag((q−1)|g|^{q−2})/N − (q/p)·s^{−1/p−1}·φφᵀ] with
            // s = Σ|g|^q, N = s^{1/p}, φ = sign(g)|g|^{q−1}. J is homogeneous
            // of degree −1, evaluated on g/scale and divided by scale.
            let q = p.dual_exponent();
            let scale = gs.iter().fold(0.0, |m: f64, x| m.max(x.abs()));
            let a: Vec<f64> = gs.iter().map(|x| x.abs() / scale).collect();
            let phi: Vec<f64> = gs
                .iter()
                .zip(&a)
                .map(|(x, ai)| x.signum() * ai.powf(q - 1.0))
                .collect();
            let s: f64 = a.iter().map(|ai| ai.powf(q)).sum();
            let n = s.powf(1.0 / pv);
            let phi_u: f64 = phi.iter().zip(us).map(|(f, u)| f * u).sum();
            let coupling = (q / pv) * s.powf(-1.0 / pv - 1.0) * phi_u;
            a.iter()
                .zip(&phi)
                .zip(us)
                .map(|((&ai, &fi), &ui)| {
                    let diag = if ai == 0.0 {
                        0.0
                    } else {
                        (q - 1.0) * ai.powf(q - 2.0) / n
                    };
                    rho * (diag * ui - coupling * fi) / scale
                })
                .collect()
        }
    };
    Ok(g.with_values(out))
}

/// Maps `eps` into `{‖ε‖_p ≤ ρ}`: a per-coordinate clamp for `p = ∞`, a
/// radial rescale otherwise (the Euclidean projection when `p = 2`).
pub fn project_onto_ball(eps: &ParamVector, rho: f64, p: PNorm) -> ParamVector {
    match p {
        PNorm::Inf => eps.map(|v| v.clamp(-rho, rho)),
        _ => {
            let n = p_norm(eps.as_slice(), p);
            if n > rho {
                eps.scaled(rho / n)
            } else {
                eps.clone()
            }
        }
    }
}
