//! Labeled datasets, batching, label-noise injection and file formats.

mod io;
mod noise;
mod synthetic;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use io::{export_csv, load_csv, load_idx, load_idx_or_csv};
pub use noise::{bootstrap_relabel, inject_label_noise, NoiseSpec, NoisyDataset};
pub use synthetic::{add_nuisance_features, make_synthetic, SyntheticKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

/// Row-major examples with integer labels.
///
/// `clean_labels` keeps the labels as generated or loaded; noise injection
/// and relabeling only touch `labels`. Training never reads `clean_labels`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Vec<f64>,
    labels: Vec<usize>,
    clean_labels: Vec<usize>,
    dim: usize,
    num_classes: usize,
    pub split: Split,
    pub provenance: String,
}

impl Dataset {
    pub fn new(
        features: Vec<f64>,
        labels: Vec<usize>,
        dim: usize,
        num_classes: usize,
        split: Split,
        provenance: impl Into<String>,
    ) -> Result<Self> {
        if features.len() != labels.len() * dim {
            return Err(Error::Shape(format!(
                "{} feature values for {} examples of dimension {dim}",
                features.len(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= num_classes) {
            return Err(Error::Config(format!(
                "label {bad} outside [0, {num_classes})"
            )));
        }
        Ok(Self {
            clean_labels: labels.clone(),
            features,
            labels,
            dim,
            num_classes,
            split,
            provenance: provenance.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn clean_labels(&self) -> &[usize] {
        &self.clean_labels
    }

    pub fn example(&self, i: usize) -> (&[f64], usize) {
        (
            &self.features[i * self.dim..(i + 1) * self.dim],
            self.labels[i],
        )
    }

    /// Replaces the training labels, keeping the clean copy.
    pub fn with_labels(&self, labels: Vec<usize>) -> Result<Self> {
        if labels.len() != self.len() {
            return Err(Error::Shape(format!(
                "{} labels for {} examples",
                labels.len(),
                self.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= self.num_classes) {
            return Err(Error::Config(format!(
                "label {bad} outside [0, {})",
                self.num_classes
            )));
        }
        Ok(Self {
            labels,
            ..self.clone()
        })
    }

    /// Same examples and labels, with the clean copy reset to `clean`.
    pub(crate) fn with_clean_labels(mut self, clean: Vec<usize>) -> Self {
        debug_assert_eq!(clean.len(), self.len());
        self.clean_labels = clean;
        self
    }

    /// Fraction of labels that disagree with the clean copy.
    pub fn label_disagreement(&self) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        let diff = self
            .labels
            .iter()
            .zip(&self.clean_labels)
            .filter(|(a, b)| a != b)
            .count();
        diff as f64 / self.len() as f64
    }

    pub fn batch(&self) -> Batch {
        Batch {
            features: self.features.clone(),
            labels: self.labels.clone(),
            dim: self.dim,
        }
    }

    /// Batch scored against the clean labels, for evaluation.
    pub fn clean_batch(&self) -> Batch {
        Batch {
            features: self.features.clone(),
            labels: self.clean_labels.clone(),
            dim: self.dim,
        }
    }

    /// Gathers the examples at `indices` in the given order.
    pub fn gather(&self, indices: &[usize]) -> Batch {
        let mut features = Vec::with_capacity(indices.len() * self.dim);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            let (x, y) = self.example(i);
            features.extend_from_slice(x);
            labels.push(y);
        }
        Batch {
            features,
            labels,
            dim: self.dim,
        }
    }
}

/// The fixed train / validation / test partition of one dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct Splits {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
}

impl Splits {
    /// One feature-less example per split; for analytic landscapes that ignore
    /// the data.
    pub fn placeholder() -> Self {
        let mk = |split| Dataset::new(Vec::new(), vec![0], 0, 1, split, "placeholder").unwrap();
        Self {
            train: mk(Split::Train),
            val: mk(Split::Val),
            test: mk(Split::Test),
        }
    }
}

/// Shuffles `ds` with `seed` and cuts it 80/10/10 into train, validation
/// and test.
pub fn split_dataset(ds: &Dataset, seed: u64) -> Result<Splits> {
    let n = ds.len();
    if n < 10 {
        return Err(Error::Config(format!(
            "need at least 10 examples to split, got {n}"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = n * 8 / 10;
    let n_val = n / 10;
    let build = |idx: &[usize], split| {
        let b = ds.gather(idx);
        let clean = idx.iter().map(|&i| ds.clean_labels[i]).collect();
        Dataset::new(
            b.features,
            b.labels,
            ds.dim,
            ds.num_classes,
            split,
            format!("{} (split seed {seed})", ds.provenance),
        )
        .map(|d| d.with_clean_labels(clean))
    };
    Ok(Splits {
        train: build(&order[..n_train], Split::Train)?,
        val: build(&order[n_train..n_train + n_val], Split::Val)?,
        test: build(&order[n_train + n_val..], Split::Test)?,
    })
}

/// A contiguous block of examples fed to one loss evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    features: Vec<f64>,
    labels: Vec<usize>,
    dim: usize,
}

impl Batch {
    pub fn new(features: Vec<f64>, labels: Vec<usize>, dim: usize) -> Result<Self> {
        if features.len() != labels.len() * dim {
            return Err(Error::Shape(format!(
                "{} feature values for {} examples of dimension {dim}",
                features.len(),
                labels.len()
            )));
        }
        Ok(Self {
            features,
            labels,
            dim,
        })
    }

    /// A single empty example. Analytic landscapes accept it as their batch.
    pub fn unit() -> Self {
        Self {
            features: Vec::new(),
            labels: vec![0],
            dim: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// Examples `[start, end)` as a new batch.
    pub fn slice(&self, start: usize, end: usize) -> Batch {
        Batch {
            features: self.features[start * self.dim..end * self.dim].to_vec(),
            labels: self.labels[start..end].to_vec(),
            dim: self.dim,
        }
    }

    /// Disjoint contiguous sub-batches of `m` examples, in index order.
    pub fn chunks(&self, m: usize) -> Result<Vec<Batch>> {
        if m == 0 || self.len() % m != 0 {
            return Err(Error::Config(format!(
                "sub-batch size {m} does not divide batch size {}",
                self.len()
            )));
        }
        Ok((0..self.len() / m)
            .map(|c| self.slice(c * m, (c + 1) * m))
            .collect())
    }
}
