use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::data::Batch;
use crate::error::{config_err, Result};
use crate::model::Model;
use crate::tensor::{hvp, ParamVector};

/// Off-diagonal magnitude below which the Krylov space is exhausted.
pub const BREAKDOWN_TOL: f64 = 1e-12;

/// Ritz approximation of the top of a Hessian spectrum.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpectrumReport {
    /// Descending.
    pub ritz_values: Vec<f64>,
    pub lambda_max: f64,
    /// `λ_max / λ_5`, when five Ritz values exist and `λ_5 > 0`.
    pub bulk_ratio: Option<f64>,
    pub iterations: usize,
    /// `|β_m · s_{m,i}|` for each Ritz pair, aligned with `ritz_values`.
    pub residuals: Vec<f64>,
    /// The Krylov space became invariant before `iterations` reached the
    /// requested count.
    pub breakdown: bool,
}

impl SpectrumReport {
    fn from_tridiagonal(alpha: &[f64], beta: &[f64], last_beta: f64, breakdown: bool) -> Self {
        let m = alpha.len();
        let mut t = DMatrix::<f64>::zeros(m, m);
        for i in 0..m {
            t[(i, i)] = alpha[i];
            if i + 1 < m {
                t[(i, i + 1)] = beta[i];
                t[(i + 1, i)] = beta[i];
            }
        }
        let eig = t.symmetric_eigen();
        let mut pairs: Vec<(f64, f64)> = (0..m)
            .map(|i| {
                let res = (last_beta * eig.eigenvectors[(m - 1, i)]).abs();
                (eig.eigenvalues[i], res)
            })
            .collect();
        pairs.sort_by(|a, b| b.0.total_cmp(&a.0));
        let ritz_values: Vec<f64> = pairs.iter().map(|p| p.0).collect();
        let lambda_max = ritz_values[0];
        let bulk_ratio = ritz_values
            .get(4)
            .filter(|&&l5| l5 > 0.0)
            .map(|&l5| lambda_max / l5);
        Self {
            residuals: pairs.iter().map(|p| p.1).collect(),
            lambda_max,
            bulk_ratio,
            iterations: m,
            ritz_values,
            breakdown,
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Lanczos with full reorthogonalization against an arbitrary symmetric
/// operator on `R^dim`.
pub fn lanczos_operator(
    dim: usize,
    k_iters: usize,
    seed: u64,
    mut apply: impl FnMut(&[f64]) -> Result<Vec<f64>>,
) -> Result<SpectrumReport> {
    if k_iters == 0 || k_iters > dim {
        return config_err(format!("k_iters must lie in [1, {dim}], got {k_iters}"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale = 1.0 / (dim as f64).sqrt();
    let q0: Vec<f64> = (0..dim)
        .map(|_| if rng.random::<bool>() { scale } else { -scale })
        .collect();
    let mut basis: Vec<Vec<f64>> = vec![q0];
    let (mut alpha, mut beta) = (Vec::new(), Vec::new());
    let mut breakdown = false;
    let mut last_beta = 0.0;
    for j in 0..k_iters {
        let q = &basis[j];
        let mut w = apply(q)?;
        let a = dot(q, &w);
        alpha.push(a);
        // Two passes of classical Gram-Schmidt against every basis vector.
        for _ in 0..2 {
            for v in &basis {
                let c = dot(v, &w);
                w.iter_mut().zip(v).for_each(|(wi, vi)| *wi -= c * vi);
            }
        }
        let b = dot(&w, &w).sqrt();
        last_beta = b;
        if j + 1 == k_iters {
            break;
        }
        if b < BREAKDOWN_TOL {
            breakdown = true;
            break;
        }
        beta.push(b);
        basis.push(w.into_iter().map(|x| x / b).collect());
    }
    Ok(SpectrumReport::from_tridiagonal(
        &alpha, &beta, last_beta, breakdown,
    ))
}

/// Top of the Hessian spectrum of the mean loss over `batch` at `params`,
/// using Hessian-vector products as the only access to the Hessian.
pub fn lanczos_spectrum<M: Model>(
    model: &M,
    params: &ParamVector,
    batch: &Batch,
    k_iters: usize,
    seed: u64,
) -> Result<SpectrumReport> {
    lanczos_operator(params.dim(), k_iters, seed, |v| {
        hvp(model, params, batch, &params.with_values(v.to_vec())).map(ParamVector::into_vec)
    })
}

/// Dense Hessian assembled column by column from Hessian-vector products.
pub fn dense_hessian<M: Model>(model: &M, params: &ParamVector, batch: &Batch) -> Result<Vec<f64>> {
    let d = params.dim();
    let mut h = vec![0.0; d * d];
    for j in 0..d {
        let mut e = vec![0.0; d];
        e[j] = 1.0;
        let col = hvp(model, params, batch, &params.with_values(e))?;
        for i in 0..d {
            h[i * d + j] = col.as_slice()[i];
        }
    }
    Ok(h)
}
