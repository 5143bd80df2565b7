use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::tape::Tensor;
use crate::error::{Error, Result};

/// A named, shaped window into the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl Segment {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Ordered segment table. Order is fixed by the model that builds it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Layout {
    segments: Vec<Segment>,
    dim: usize,
}

impl Layout {
    pub fn new<N: Into<String>>(shapes: impl IntoIterator<Item = (N, Vec<usize>)>) -> Self {
        let mut offset = 0;
        let segments = shapes
            .into_iter()
            .map(|(name, shape)| {
                let seg = Segment {
                    name: name.into(),
                    shape,
                    offset,
                };
                offset += seg.len();
                seg
            })
            .collect();
        Self {
            segments,
            dim: offset,
        }
    }

    /// A single flat segment named `w`.
    pub fn flat(dim: usize) -> Self {
        Self::new([("w", vec![dim])])
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn segment(&self, name: &str) -> Option<&Segment> {
        self.segments.iter().find(|s| s.name == name)
    }
}

/// Flat view of every model parameter, `w ∈ R^k`.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    layout: Arc<Layout>,
    values: Vec<f64>,
}

impl ParamVector {
    pub fn new(layout: Arc<Layout>, values: Vec<f64>) -> Result<Self> {
        if values.len() != layout.dim() {
            return Err(Error::Shape(format!(
                "layout expects {} parameters, got {}",
                layout.dim(),
                values.len()
            )));
        }
        Ok(Self { layout, values })
    }

    pub fn zeros(layout: Arc<Layout>) -> Self {
        let values = vec![0.0; layout.dim()];
        Self { layout, values }
    }

    pub fn from_vec(values: Vec<f64>) -> Self {
        let layout = Arc::new(Layout::flat(values.len()));
        Self { layout, values }
    }

    /// Concatenates segments in the given order.
    pub fn flatten(segments: Vec<(String, Tensor<f64>)>) -> Self {
        let layout = Layout::new(
            segments
                .iter()
                .map(|(n, t)| (n.clone(), t.shape().to_vec())),
        );
        let values = segments
            .into_iter()
            .flat_map(|(_, t)| t.data().to_vec())
            .collect();
        Self {
            layout: Arc::new(layout),
            values,
        }
    }

    pub fn unflatten(&self) -> Vec<(String, Tensor<f64>)> {
        self.layout
            .segments()
            .iter()
            .map(|s| {
                let data = self.values[s.offset..s.offset + s.len()].to_vec();
                let t = Tensor::new(s.shape.clone(), data).expect("segment shape matches layout");
                (s.name.clone(), t)
            })
            .collect()
    }

    pub fn layout(&self) -> &Arc<Layout> {
        &self.layout
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.values
    }

    pub fn segment(&self, name: &str) -> Option<&[f64]> {
        self.layout
            .segment(name)
            .map(|s| &self.values[s.offset..s.offset + s.len()])
    }

    /// Same layout, new values.
    pub fn with_values(&self, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), self.dim(), "dimension mismatch");
        Self {
            layout: Arc::clone(&self.layout),
            values,
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        self.with_values(self.values.iter().map(|&v| f(v)).collect())
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Self {
        assert_eq!(self.dim(), other.dim(), "dimension mismatch");
        self.with_values(
            self.values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        )
    }

    pub fn add(&self, other: &Self) -> Self {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn scaled(&self, c: f64) -> Self {
        self.map(|v| v * c)
    }

    /// `self + alpha * x`
    pub fn axpy(&self, alpha: f64, x: &Self) -> Self {
        self.zip_map(x, |a, b| a + alpha * b)
    }

    pub fn dot(&self, other: &Self) -> f64 {
        assert_eq!(self.dim(), other.dim(), "dimension mismatch");
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a * b)
            .sum()
    }

    pub fn norm_sq(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum()
    }

    pub fn norm2(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn norm_inf(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0)
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Bitwise equality, distinguishing `-0.0` from `0.0`.
    pub fn bit_eq(&self, other: &Self) -> bool {
        self.values.len() == other.values.len()
            && self
                .values
                .iter()
                .zip(&other.values)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}
