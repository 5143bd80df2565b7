use std::path::PathBuf;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{
    add_nuisance_features, inject_label_noise, load_idx_or_csv, make_synthetic, split_dataset,
    Batch, NoiseSpec, Splits, SyntheticKind,
};
use crate::error::{config_err, Result};
use crate::model::{
    make_double_well, Activation, DoubleWell, LossKind, Mlp, MlpSpec, Model, Quadratic,
};
use crate::optim::{SamConfig, TrainConfig};
use crate::tensor::{Layout, ParamVector, Real, Tape, Var};

/// Where the examples come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetSpec {
    /// Every replica sees the same draw.
    Synthetic {
        shape: SyntheticKind,
        n: usize,
        noise: f64,
        seed: u64,
        /// Extra standard-normal input features unrelated to the label.
        #[serde(default)]
        nuisance_dims: usize,
    },
    /// An IDX or CSV file, split 80/10/10 after a shuffle with `seed`.
    File { path: PathBuf, seed: u64 },
    /// No data; for analytic landscapes.
    None,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec::Synthetic {
            shape: SyntheticKind::Moons,
            n: 1000,
            noise: 0.1,
            seed: 0,
            nuisance_dims: 0,
        }
    }
}

/// Which model to train. MLP input and output sizes come from the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelSpec {
    Mlp {
        #[serde(default = "default_hidden")]
        hidden: Vec<usize>,
        #[serde(default)]
        activation: Activation,
        #[serde(default)]
        loss: LossKind,
        #[serde(default)]
        label_smoothing: f64,
    },
    /// Initial point drawn uniformly from `[init_low, init_high]`.
    DoubleWell {
        sharp_curv: f64,
        flat_curv: f64,
        separation: f64,
        init_low: f64,
        init_high: f64,
    },
    /// `½ Σ d_i w_i²` started from a uniform draw in `[-init_scale, init_scale]^k`.
    Quadratic { diagonal: Vec<f64>, init_scale: f64 },
}

fn default_hidden() -> Vec<usize> {
    vec![16, 16]
}

impl Default for ModelSpec {
    fn default() -> Self {
        ModelSpec::Mlp {
            hidden: default_hidden(),
            activation: Activation::Tanh,
            loss: LossKind::CrossEntropy,
            label_smoothing: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Sgd,
    #[default]
    Sam,
}

/// Post-training diagnostics, run per replica on the final parameters over
/// the full training set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Analyses {
    pub spectrum: bool,
    pub sharpness: bool,
    pub bound: bool,
    pub cosine: bool,
    pub lanczos_iters: usize,
    /// Radius for the sharpness and bound analyses; the SAM radius if unset.
    pub rho: Option<f64>,
    pub ascent_steps: usize,
    pub delta: f64,
}

impl Default for Analyses {
    fn default() -> Self {
        Self {
            spectrum: false,
            sharpness: false,
            bound: false,
            cosine: false,
            lanczos_iters: 20,
            rho: None,
            ascent_steps: 5,
            delta: 0.05,
        }
    }
}

impl Analyses {
    pub fn any(&self) -> bool {
        self.spectrum || self.sharpness || self.bound || self.cosine
    }
}

/// Everything needed to reproduce one experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub dataset: DatasetSpec,
    pub model: ModelSpec,
    /// `train.seed` is the base seed; replica `i` uses `seed + i`.
    pub train: TrainConfig,
    pub method: Method,
    pub sam: SamConfig,
    pub replicas: usize,
    /// Candidate radii; the one with the lowest mean validation error is
    /// reported.
    pub rho_grid: Option<Vec<f64>>,
    /// Symmetric label noise applied to the training split. Validation and
    /// test keep their clean labels.
    pub label_noise: f64,
    /// For SGD, also train for twice the epochs and report, per replica,
    /// whichever run has the lower validation error.
    pub budget_match: bool,
    pub analyses: Analyses,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dataset: DatasetSpec::default(),
            model: ModelSpec::default(),
            train: TrainConfig::default(),
            method: Method::Sam,
            sam: SamConfig::default(),
            replicas: 1,
            rho_grid: None,
            label_noise: 0.0,
            budget_match: false,
            analyses: Analyses::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.replicas == 0 {
            return config_err("replicas must be at least 1");
        }
        self.train.validate()?;
        self.sam.validate_for_batch(self.train.batch_size)?;
        if let Some(grid) = &self.rho_grid {
            if grid.is_empty() {
                return config_err("rho_grid is empty");
            }
            if let Some(bad) = grid.iter().find(|r| !(**r >= 0.0 && r.is_finite())) {
                return config_err(format!("rho_grid entry {bad} is not a finite radius >= 0"));
            }
            if self.method == Method::Sgd {
                return config_err("rho_grid needs method = sam");
            }
        }
        if !(0.0..=1.0).contains(&self.label_noise) {
            return config_err(format!("label_noise {} outside [0, 1]", self.label_noise));
        }
        if self.analyses.ascent_steps == 0 {
            return config_err("analyses.ascent_steps must be at least 1");
        }
        Ok(())
    }

    pub fn replica_seed(&self, replica: usize) -> u64 {
        self.train.seed.wrapping_add(replica as u64)
    }

    /// The SAM settings for the configured method, or `None` for SGD.
    pub fn sam_config(&self) -> Option<SamConfig> {
        match self.method {
            Method::Sgd => None,
            Method::Sam => Some(self.sam.clone()),
        }
    }
}

/// A constructed model of any configured kind.
#[derive(Debug, Clone)]
pub enum AnyModel {
    Mlp(Mlp),
    DoubleWell(DoubleWell),
    Quadratic(Quadratic),
}

impl Model for AnyModel {
    fn layout(&self) -> Arc<Layout> {
        match self {
            AnyModel::Mlp(m) => m.layout(),
            AnyModel::DoubleWell(m) => m.layout(),
            AnyModel::Quadratic(m) => m.layout(),
        }
    }

    fn record_loss<S: Real>(&self, tape: &mut Tape<S>, params: Var, batch: &Batch) -> Result<Var> {
        match self {
            AnyModel::Mlp(m) => m.record_loss(tape, params, batch),
            AnyModel::DoubleWell(m) => m.record_loss(tape, params, batch),
            AnyModel::Quadratic(m) => m.record_loss(tape, params, batch),
        }
    }

    fn predict(&self, params: &ParamVector, batch: &Batch) -> Result<Option<Vec<usize>>> {
        match self {
            AnyModel::Mlp(m) => m.predict(params, batch),
            AnyModel::DoubleWell(m) => m.predict(params, batch),
            AnyModel::Quadratic(m) => m.predict(params, batch),
        }
    }
}

/// Data, model and initial parameters for one replica.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub splits: Splits,
    pub model: AnyModel,
    pub init: ParamVector,
    pub seed: u64,
}

/// Deterministically builds replica `replica` of `cfg`.
pub fn prepare(cfg: &ExperimentConfig, replica: usize) -> Result<Prepared> {
    let seed = cfg.replica_seed(replica);
    let mut splits = match &cfg.dataset {
        DatasetSpec::Synthetic {
            shape,
            n,
            noise,
            seed: s,
            nuisance_dims,
        } => add_nuisance_features(
            make_synthetic(*shape, *n, *noise, *s)?,
            *nuisance_dims,
            s.wrapping_add(1),
        )?,
        DatasetSpec::File { path, seed: s } => split_dataset(&load_idx_or_csv(path)?, *s)?,
        DatasetSpec::None => Splits::placeholder(),
    };
    if cfg.label_noise > 0.0 {
        let spec = NoiseSpec {
            rate: cfg.label_noise,
            seed: seed ^ 0x6E6F_6973_655F_7365,
        };
        splits.train = inject_label_noise(&splits.train, spec)?.dataset;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (model, init) = match &cfg.model {
        ModelSpec::Mlp {
            hidden,
            activation,
            loss,
            label_smoothing,
        } => {
            if matches!(cfg.dataset, DatasetSpec::None) {
                return config_err("an MLP needs a dataset");
            }
            let mut layers = vec![splits.train.dim()];
            layers.extend(hidden);
            layers.push(splits.train.num_classes());
            let mlp = Mlp::new(MlpSpec {
                layers,
                activation: *activation,
                loss: *loss,
                label_smoothing: *label_smoothing,
            })?;
            let init = mlp.init(seed);
            (AnyModel::Mlp(mlp), init)
        }
        ModelSpec::DoubleWell {
            sharp_curv,
            flat_curv,
            separation,
            init_low,
            init_high,
        } => {
            if !(init_low < init_high) {
                return config_err("double well needs init_low < init_high");
            }
            let well = make_double_well(*sharp_curv, *flat_curv, *separation)?;
            let x = rng.random_range(*init_low..*init_high);
            (AnyModel::DoubleWell(well), ParamVector::from_vec(vec![x]))
        }
        ModelSpec::Quadratic {
            diagonal,
            init_scale,
        } => {
            if diagonal.is_empty() || !(*init_scale > 0.0) {
                return config_err("quadratic needs a diagonal and init_scale > 0");
            }
            let q = Quadratic::diagonal(diagonal);
            let w = (0..diagonal.len())
                .map(|_| rng.random_range(-*init_scale..*init_scale))
                .collect();
            (AnyModel::Quadratic(q), ParamVector::from_vec(w))
        }
    };
    if !matches!(cfg.model, ModelSpec::Mlp { .. }) && !matches!(cfg.dataset, DatasetSpec::None) {
        return config_err("analytic landscapes take dataset kind none");
    }
    Ok(Prepared {
        splits,
        model,
        init,
        seed,
    })
}

/// The training settings replica `replica` runs with.
pub fn replica_train_config(cfg: &ExperimentConfig, replica: usize, epochs: usize) -> TrainConfig {
    let mut t = cfg.train.clone();
    t.seed = cfg.replica_seed(replica);
    t.epochs = epochs;
    if matches!(cfg.dataset, DatasetSpec::None) {
        t.batch_size = 1;
    }
    t
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_roundtrip_through_json() {
        let cfg = ExperimentConfig::default();
        let text = serde_json::to_string(&cfg).unwrap();
        let back: ExperimentConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back, cfg);
        let partial: ExperimentConfig = serde_json::from_str(r#"{"replicas": 3}"#).unwrap();
        assert_eq!(partial.replicas, 3);
        assert_eq!(partial.sam, SamConfig::default());
    }

    #[test]
    fn prepare_is_deterministic_and_sizes_the_mlp() {
        let cfg = ExperimentConfig {
            dataset: DatasetSpec::Synthetic {
                shape: SyntheticKind::Blobs,
                n: 90,
                noise: 0.3,
                seed: 1,
                nuisance_dims: 0,
            },
            ..ExperimentConfig::default()
        };
        let a = prepare(&cfg, 2).unwrap();
        let b = prepare(&cfg, 2).unwrap();
        assert!(a.init.bit_eq(&b.init));
        assert_eq!(a.splits, b.splits);
        assert_eq!(a.model.dim(), 2 * 16 + 16 + 16 * 16 + 16 + 16 * 3 + 3);
    }

    #[test]
    fn bad_configs_are_rejected() {
        let mut cfg = ExperimentConfig {
            replicas: 0,
            ..ExperimentConfig::default()
        };
        assert!(cfg.validate().is_err());
        cfg.replicas = 1;
        cfg.method = Method::Sgd;
        cfg.rho_grid = Some(vec![0.1]);
        assert!(cfg.validate().is_err());
        let well = ExperimentConfig {
            model: ModelSpec::DoubleWell {
                sharp_curv: 100.0,
                flat_curv: 1.0,
                separation: 4.0,
                init_low: -0.2,
                init_high: 0.2,
            },
            ..ExperimentConfig::default()
        };
        assert!(prepare(&well, 0).is_err());
    }
}
