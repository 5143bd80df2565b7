//! Closed-form landscapes with analytic derivatives. They ignore the batch.

use std::sync::Arc;

use super::Model;
use crate::data::Batch;
use crate::error::{config_err, Error, Result};
use crate::tensor::{Layout, Real, Tape, Tensor, Var};

/// A scalar function with closed-form gradient and Hessian.
pub trait AnalyticLandscape {
    fn dim(&self) -> usize;
    fn value(&self, w: &[f64]) -> f64;
    fn gradient(&self, w: &[f64]) -> Vec<f64>;
    /// Row-major `dim × dim` Hessian.
    fn hessian(&self, w: &[f64]) -> Vec<f64>;
}

/// `L(w) = ½ wᵀ A w` for symmetric `A`.
#[derive(Debug, Clone)]
pub struct Quadratic {
    matrix: Vec<f64>,
    dim: usize,
    layout: Arc<Layout>,
}

impl Quadratic {
    pub fn new(dim: usize, matrix: Vec<f64>) -> Result<Self> {
        if dim == 0 || matrix.len() != dim * dim {
            return Err(Error::Shape(format!(
                "quadratic of dimension {dim} needs {} matrix entries, got {}",
                dim * dim,
                matrix.len()
            )));
        }
        for i in 0..dim {
            for j in 0..i {
                if matrix[i * dim + j] != matrix[j * dim + i] {
                    return config_err("quadratic form matrix must be symmetric");
                }
            }
        }
        Ok(Self {
            matrix,
            dim,
            layout: Arc::new(Layout::flat(dim)),
        })
    }

    pub fn diagonal(diag: &[f64]) -> Self {
        let d = diag.len();
        let mut m = vec![0.0; d * d];
        for (i, &v) in diag.iter().enumerate() {
            m[i * d + i] = v;
        }
        Self::new(d, m).expect("diagonal matrices are symmetric")
    }

    pub fn matrix(&self) -> &[f64] {
        &self.matrix
    }
}

impl AnalyticLandscape for Quadratic {
    fn dim(&self) -> usize {
        self.dim
    }

    fn value(&self, w: &[f64]) -> f64 {
        0.5 * w
            .iter()
            .zip(self.gradient(w))
            .map(|(a, b)| a * b)
            .sum::<f64>()
    }

    fn gradient(&self, w: &[f64]) -> Vec<f64> {
        self.matrix
            .chunks(self.dim)
            .map(|row| row.iter().zip(w).map(|(a, b)| a * b).sum())
            .collect()
    }

    fn hessian(&self, _w: &[f64]) -> Vec<f64> {
        self.matrix.clone()
    }
}

impl Model for Quadratic {
    fn layout(&self) -> Arc<Layout> {
        Arc::clone(&self.layout)
    }

    fn record_loss<S: Real>(&self, tape: &mut Tape<S>, params: Var, _batch: &Batch) -> Result<Var> {
        let a = tape.input(
            "quadratic_form",
            Tensor::from_f64(vec![self.dim, self.dim], &self.matrix)?,
        )?;
        let w = tape.view(params, 0, vec![self.dim, 1])?;
        let aw = tape.matmul(a, w)?;
        let wtaw = tape.mul(w, aw)?;
        let s = tape.sum(wtaw)?;
        tape.scale(s, 0.5)
    }
}

/// One-dimensional landscape with a sharp and a flat global minimum.
///
/// With `q_s(x) = ½·a·(x − x_s)²` and `q_f(x) = ½·b·(x − x_f)²` the loss is
/// the harmonic blend
///
/// ```text
/// L(x) = q_s·q_f / (q_s + q_f)        (1/L = 1/q_s + 1/q_f)
/// ```
///
/// so `L ≥ 0`, `L(x_s) = L(x_f) = 0`, and because `L = q_s − q_s²/q_f + …`
/// near `x_s` the curvature there is exactly `a` (and `b` at `x_f`).
/// The sharp minimum sits at 0 and the flat one at `separation`.
#[derive(Debug, Clone)]
pub struct DoubleWell {
    sharp_curv: f64,
    flat_curv: f64,
    separation: f64,
    layout: Arc<Layout>,
}

pub fn make_double_well(sharp_curv: f64, flat_curv: f64, separation: f64) -> Result<DoubleWell> {
    if !(flat_curv > 0.0 && sharp_curv > flat_curv && sharp_curv.is_finite()) {
        return config_err(format!(
            "double well needs sharp_curv > flat_curv > 0, got {sharp_curv} and {flat_curv}"
        ));
    }
    if !(separation > 0.0 && separation.is_finite()) {
        return config_err(format!("separation must be positive, got {separation}"));
    }
    Ok(DoubleWell {
        sharp_curv,
        flat_curv,
        separation,
        layout: Arc::new(Layout::flat(1)),
    })
}

impl DoubleWell {
    pub fn sharp_min(&self) -> f64 {
        0.0
    }

    pub fn flat_min(&self) -> f64 {
        self.separation
    }

    pub fn sharp_curv(&self) -> f64 {
        self.sharp_curv
    }

    pub fn flat_curv(&self) -> f64 {
        self.flat_curv
    }

    fn parts(&self, x: f64) -> [f64; 4] {
        let (ds, df) = (x - self.sharp_min(), x - self.flat_min());
        [
            0.5 * self.sharp_curv * ds * ds,
            0.5 * self.flat_curv * df * df,
            self.sharp_curv * ds,
            self.flat_curv * df,
        ]
    }

    pub fn value_at(&self, x: f64) -> f64 {
        let [qs, qf, _, _] = self.parts(x);
        let s = qs + qf;
        if s == 0.0 {
            0.0
        } else {
            qs * qf / s
        }
    }

    pub fn slope_at(&self, x: f64) -> f64 {
        let [qs, qf, dqs, dqf] = self.parts(x);
        let s = qs + qf;
        (dqs * qf * qf + dqf * qs * qs) / (s * s)
    }

    pub fn curvature_at(&self, x: f64) -> f64 {
        let [qs, qf, dqs, dqf] = self.parts(x);
        let (a, b) = (self.sharp_curv, self.flat_curv);
        let s = qs + qf;
        let p = dqs * qf * qf + dqf * qs * qs;
        let dp = a * qf * qf + b * qs * qs + 2.0 * dqs * dqf * s;
        dp / (s * s) - 2.0 * p * (dqs + dqf) / (s * s * s)
    }
}

impl AnalyticLandscape for DoubleWell {
    fn dim(&self) -> usize {
        1
    }
    fn value(&self, w: &[f64]) -> f64 {
        self.value_at(w[0])
    }
    fn gradient(&self, w: &[f64]) -> Vec<f64> {
        vec![self.slope_at(w[0])]
    }
    fn hessian(&self, w: &[f64]) -> Vec<f64> {
        vec![self.curvature_at(w[0])]
    }
}

impl Model for DoubleWell {
    fn layout(&self) -> Arc<Layout> {
        Arc::clone(&self.layout)
    }

    fn record_loss<S: Real>(&self, tape: &mut Tape<S>, params: Var, _batch: &Batch) -> Result<Var> {
        let x = tape.view(params, 0, vec![1])?;
        let ds = tape.shift(x, -self.sharp_min())?;
        let ds2 = tape.mul(ds, ds)?;
        let qs = tape.scale(ds2, 0.5 * self.sharp_curv)?;
        let df = tape.shift(x, -self.flat_min())?;
        let df2 = tape.mul(df, df)?;
        let qf = tape.scale(df2, 0.5 * self.flat_curv)?;
        let num = tape.mul(qs, qf)?;
        let den = tape.add(qs, qf)?;
        let l = tape.div(num, den)?;
        tape.sum(l)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{grad, hvp, loss, ParamVector};

    fn well() -> DoubleWell {
        make_double_well(100.0, 1.0, 4.0).unwrap()
    }

    #[test]
    fn both_minima_are_zero_with_stated_curvature() {
        let w = well();
        assert_eq!(w.value_at(w.sharp_min()), 0.0);
        assert_eq!(w.value_at(w.flat_min()), 0.0);
        assert!((w.curvature_at(w.sharp_min()) - 100.0).abs() < 1e-12);
        assert!((w.curvature_at(w.flat_min()) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn curvature_matches_finite_difference_of_slope() {
        let w = well();
        let h = 1e-6;
        for &x in &[-1.0, -0.2, 0.05, 0.3, 0.7, 2.0, 3.9, 5.0] {
            let fd = (w.slope_at(x + h) - w.slope_at(x - h)) / (2.0 * h);
            assert!(
                (fd - w.curvature_at(x)).abs() < 1e-5 * (1.0 + fd.abs()),
                "x={x}"
            );
            let fd1 = (w.value_at(x + h) - w.value_at(x - h)) / (2.0 * h);
            assert!(
                (fd1 - w.slope_at(x)).abs() < 1e-6 * (1.0 + fd1.abs()),
                "x={x}"
            );
        }
    }

    #[test]
    fn sharp_neighbourhood_max_exceeds_flat() {
        // Dense grid over |ε| ≤ 0.5.
        let w = well();
        let neighbourhood_max = |c: f64| {
            (0..=10_000)
                .map(|i| w.value_at(c - 0.5 + i as f64 * 1e-4))
                .fold(f64::MIN, f64::max)
        };
        let sharp = neighbourhood_max(w.sharp_min());
        let flat = neighbourhood_max(w.flat_min());
        assert!(sharp > flat, "sharp {sharp} vs flat {flat}");
        assert!((flat - w.value_at(w.flat_min() - 0.5)).abs() < 0.05);
    }

    #[test]
    fn ordering_is_enforced() {
        assert!(make_double_well(1.0, 100.0, 4.0).is_err());
        assert!(make_double_well(1.0, 1.0, 4.0).is_err());
        assert!(make_double_well(100.0, 0.0, 4.0).is_err());
        assert!(make_double_well(100.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn analytic_derivatives_agree_with_autodiff() {
        let w = well();
        let b = Batch::unit();
        for &x in &[-0.7, -0.01, 0.2, 0.71, 1.5, 4.2] {
            let p = ParamVector::from_vec(vec![x]);
            assert!((loss(&w, &p, &b).unwrap() - w.value_at(x)).abs() < 1e-12);
            let g = grad(&w, &p, &b).unwrap();
            assert!((g.as_slice()[0] - w.slope_at(x)).abs() < 1e-10 * (1.0 + w.slope_at(x).abs()));
            let hv = hvp(&w, &p, &b, &ParamVector::from_vec(vec![1.0])).unwrap();
            let c = w.curvature_at(x);
            assert!(
                (hv.as_slice()[0] - c).abs() < 1e-10 * (1.0 + c.abs()),
                "x={x}"
            );
        }
    }

    #[test]
    fn quadratic_analytic_matches_autodiff() {
        let q = Quadratic::new(3, vec![2.0, 0.5, 0.0, 0.5, 3.0, -1.0, 0.0, -1.0, 4.0]).unwrap();
        let w = [0.3, -1.2, 0.8];
        let p = ParamVector::from_vec(w.to_vec());
        let b = Batch::unit();
        assert!((loss(&q, &p, &b).unwrap() - q.value(&w)).abs() < 1e-12);
        let g = grad(&q, &p, &b).unwrap();
        for (a, e) in g.as_slice().iter().zip(q.gradient(&w)) {
            assert!((a - e).abs() < 1e-12);
        }
        let h = q.hessian(&w);
        for j in 0..3 {
            let mut e = vec![0.0; 3];
            e[j] = 1.0;
            let col = hvp(&q, &p, &b, &ParamVector::from_vec(e)).unwrap();
            for i in 0..3 {
                assert!((col.as_slice()[i] - h[i * 3 + j]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn asymmetric_matrix_rejected() {
        assert!(Quadratic::new(2, vec![1.0, 2.0, 3.0, 1.0]).is_err());
    }
}
