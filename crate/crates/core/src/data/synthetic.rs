use std::f64::consts::PI;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{Dataset, Split, Splits};
use crate::error::{Error, Result};

/// Two-dimensional toy generators.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SyntheticKind {
    /// Two interleaved half circles.
    Moons,
    /// Three isotropic Gaussian clusters on a circle of radius 4.
    Blobs,
    /// Three interleaved spiral arms.
    Spiral,
}

impl SyntheticKind {
    pub fn num_classes(self) -> usize {
        match self {
            SyntheticKind::Moons => 2,
            SyntheticKind::Blobs | SyntheticKind::Spiral => 3,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            SyntheticKind::Moons => "moons",
            SyntheticKind::Blobs => "blobs",
            SyntheticKind::Spiral => "spiral",
        }
    }
}

impl FromStr for SyntheticKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "moons" => Ok(SyntheticKind::Moons),
            "blobs" => Ok(SyntheticKind::Blobs),
            "spiral" => Ok(SyntheticKind::Spiral),
            other => Err(Error::Config(format!(
                "unknown synthetic dataset `{other}`"
            ))),
        }
    }
}

fn sample_point(kind: SyntheticKind, class: usize, noise: f64, rng: &mut ChaCha8Rng) -> [f64; 2] {
    let clean = match kind {
        SyntheticKind::Moons => {
            let t: f64 = PI * rng.random::<f64>();
            if class == 0 {
                [t.cos(), t.sin()]
            } else {
                [1.0 - t.cos(), 0.5 - t.sin()]
            }
        }
        SyntheticKind::Blobs => {
            let angle = 2.0 * PI * class as f64 / 3.0;
            [4.0 * angle.cos(), 4.0 * angle.sin()]
        }
        SyntheticKind::Spiral => {
            let r: f64 = rng.random::<f64>();
            let theta = 4.0 * r + 2.0 * PI * class as f64 / 3.0;
            [r * theta.cos(), r * theta.sin()]
        }
    };
    let dx = noise * rng.sample::<f64, _>(StandardNormal);
    let dy = noise * rng.sample::<f64, _>(StandardNormal);
    [clean[0] + dx, clean[1] + dy]
}

/// Generates `n` balanced examples and splits them 80/10/10.
///
/// Classes are interleaved round-robin before the split, so every split is
/// balanced to within one example per class.
pub fn make_synthetic(kind: SyntheticKind, n: usize, noise: f64, seed: u64) -> Result<Splits> {
    let classes = kind.num_classes();
    if n < 4 * classes {
        return Err(Error::Config(format!(
            "{} needs at least {} examples, got {n}",
            kind.name(),
            4 * classes
        )));
    }
    if !(noise >= 0.0 && noise.is_finite()) {
        return Err(Error::Config(format!(
            "noise must be finite and >= 0, got {noise}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut per_class: Vec<Vec<[f64; 2]>> = (0..classes)
        .map(|c| {
            let count = n / classes + usize::from(c < n % classes);
            (0..count)
                .map(|_| sample_point(kind, c, noise, &mut rng))
                .collect()
        })
        .collect();
    for pts in &mut per_class {
        pts.shuffle(&mut rng);
    }

    let mut order: Vec<([f64; 2], usize)> = Vec::with_capacity(n);
    let longest = per_class.iter().map(Vec::len).max().unwrap_or(0);
    for i in 0..longest {
        for (c, pts) in per_class.iter().enumerate() {
            if let Some(&p) = pts.get(i) {
                order.push((p, c));
            }
        }
    }

    let n_train = n * 8 / 10;
    let n_val = n / 10;
    let provenance = format!("{}(n={n}, noise={noise}, seed={seed})", kind.name());
    let build = |range: std::ops::Range<usize>, split| {
        let rows = &order[range];
        let features = rows.iter().flat_map(|(p, _)| p.iter().copied()).collect();
        let labels = rows.iter().map(|&(_, c)| c).collect();
        Dataset::new(features, labels, 2, classes, split, provenance.clone())
    };
    Ok(Splits {
        train: build(0..n_train, Split::Train)?,
        val: build(n_train..n_train + n_val, Split::Val)?,
        test: build(n_train + n_val..n, Split::Test)?,
    })
}

/// Appends `dims` independent standard-normal features to every example of
/// every split. The labels do not depend on them.
pub fn add_nuisance_features(splits: Splits, dims: usize, seed: u64) -> Result<Splits> {
    if dims == 0 {
        return Ok(splits);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut widen = |ds: Dataset| -> Result<Dataset> {
        let d = ds.dim();
        let mut features = Vec::with_capacity(ds.len() * (d + dims));
        for i in 0..ds.len() {
            features.extend_from_slice(ds.example(i).0);
            features.extend((0..dims).map(|_| rng.sample::<f64, _>(StandardNormal)));
        }
        let clean = ds.clean_labels().to_vec();
        Dataset::new(
            features,
            ds.labels().to_vec(),
            d + dims,
            ds.num_classes(),
            ds.split,
            format!("{} + {dims} nuisance dims (seed {seed})", ds.provenance),
        )
        .map(|w| w.with_clean_labels(clean))
    };
    Ok(Splits {
        train: widen(splits.train)?,
        val: widen(splits.val)?,
        test: widen(splits.test)?,
    })
}
