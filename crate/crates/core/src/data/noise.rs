use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Dataset, Split};
use crate::error::{config_err, Error, Result};
use crate::model::Model;
use crate::tensor::ParamVector;

/// Symmetric label noise: a fixed fraction of training labels is replaced by
/// a uniformly drawn different class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub rate: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoisyDataset {
    pub dataset: Dataset,
    /// `true` where the label was flipped.
    pub flip_mask: Vec<bool>,
}

impl NoisyDataset {
    pub fn flipped(&self) -> usize {
        self.flip_mask.iter().filter(|&&f| f).count()
    }
}

/// Number of flipped labels for `rate` over `n` examples, `⌊rate·n⌋`.
pub(crate) fn flip_count(rate: f64, n: usize) -> usize {
    // The nudge keeps e.g. 0.29 * 100 from flooring to 28.
    ((rate * n as f64) + 1e-9).floor() as usize
}

pub fn inject_label_noise(ds: &Dataset, spec: NoiseSpec) -> Result<NoisyDataset> {
    if !(0.0..=1.0).contains(&spec.rate) {
        return config_err(format!("noise rate {} outside [0, 1]", spec.rate));
    }
    if ds.split != Split::Train {
        return config_err("label noise is only injected into the training split");
    }
    let n = ds.len();
    let k = flip_count(spec.rate, n).min(n);
    let classes = ds.num_classes();
    if k > 0 && classes < 2 {
        return config_err("label noise needs at least two classes");
    }

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut picked = rand::seq::index::sample(&mut rng, n, k).into_vec();
    // Draw replacement labels in index order so the output does not depend on
    // the sampler's internal ordering.
    picked.sort_unstable();
    let mut labels = ds.labels().to_vec();
    let mut flip_mask = vec![false; n];
    for i in picked {
        let old = labels[i];
        let mut new = rng.random_range(0..classes - 1);
        if new >= old {
            new += 1;
        }
        labels[i] = new;
        flip_mask[i] = true;
    }
    Ok(NoisyDataset {
        dataset: ds.with_labels(labels)?,
        flip_mask,
    })
}

/// Replaces every label by the model's predicted class. The clean copy is kept.
pub fn bootstrap_relabel<M: Model>(
    model: &M,
    params: &ParamVector,
    ds: &Dataset,
) -> Result<Dataset> {
    if ds.is_empty() {
        return Ok(ds.clone());
    }
    let predicted = model.predict(params, &ds.batch())?.ok_or_else(|| {
        Error::Config("bootstrap relabeling needs a model that predicts classes".into())
    })?;
    ds.with_labels(predicted)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{make_synthetic, SyntheticKind};

    fn moons() -> Dataset {
        make_synthetic(SyntheticKind::Moons, 1250, 0.1, 5)
            .unwrap()
            .train
    }

    #[test]
    fn zero_rate_is_identity() {
        let ds = moons();
        let out = inject_label_noise(&ds, NoiseSpec { rate: 0.0, seed: 1 }).unwrap();
        assert_eq!(out.dataset, ds);
        assert_eq!(out.flipped(), 0);
    }

    #[test]
    fn forty_percent_flips_exactly_400_of_1000() {
        let ds = moons();
        assert_eq!(ds.len(), 1000);
        let out = inject_label_noise(&ds, NoiseSpec { rate: 0.4, seed: 9 }).unwrap();
        assert_eq!(out.flipped(), 400);
        for i in 0..ds.len() {
            let changed = out.dataset.labels()[i] != ds.labels()[i];
            assert_eq!(changed, out.flip_mask[i]);
        }
        assert_eq!(out.dataset.clean_labels(), ds.labels());
        assert!((out.dataset.label_disagreement() - 0.4).abs() < 1e-12);
    }

    #[test]
    fn full_rate_two_classes_inverts_every_label() {
        let ds = moons();
        let out = inject_label_noise(&ds, NoiseSpec { rate: 1.0, seed: 2 }).unwrap();
        for (a, b) in out.dataset.labels().iter().zip(ds.labels()) {
            assert_eq!(*a, 1 - *b);
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let ds = moons();
        let spec = NoiseSpec { rate: 0.3, seed: 4 };
        assert_eq!(
            inject_label_noise(&ds, spec).unwrap(),
            inject_label_noise(&ds, spec).unwrap()
        );
    }

    #[test]
    fn rejects_bad_rate_and_non_train_split() {
        let s = make_synthetic(SyntheticKind::Moons, 100, 0.1, 1).unwrap();
        assert!(inject_label_noise(&s.train, NoiseSpec { rate: 1.5, seed: 0 }).is_err());
        assert!(inject_label_noise(
            &s.train,
            NoiseSpec {
                rate: -0.1,
                seed: 0
            }
        )
        .is_err());
        assert!(inject_label_noise(&s.test, NoiseSpec { rate: 0.2, seed: 0 }).is_err());
    }

    #[test]
    fn flip_count_floors_exactly() {
        assert_eq!(flip_count(0.29, 100), 29);
        assert_eq!(flip_count(0.4, 1000), 400);
        assert_eq!(flip_count(0.333, 10), 3);
        assert_eq!(flip_count(1.0, 7), 7);
    }
}
