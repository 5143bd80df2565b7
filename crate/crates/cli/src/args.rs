use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;

use sharpmin::harness::{DatasetSpec, ExperimentConfig, Method, ModelSpec};
use sharpmin::model::Activation;
use sharpmin::optim::{PNorm, Schedule};
use sharpmin::{Error, Result};

#[derive(Debug, Parser)]
#[command(
    name = "sharpmin",
    version,
    about = "Sharpness-aware training experiments on small models"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train replicas and write metrics.csv and summary.json.
    Train(ExperimentArgs),
    /// SGD, SAM and bootstrapped SAM at each label-noise rate.
    NoiseSuite {
        #[command(flatten)]
        exp: ExperimentArgs,
        #[arg(long, value_delimiter = ',', default_values_t = [0.2, 0.4])]
        rates: Vec<f64>,
    },
    /// SAM test error for each sub-batch size m and radius.
    MsharpSweep {
        #[command(flatten)]
        exp: ExperimentArgs,
        #[arg(long = "m-values", value_delimiter = ',', required = true)]
        m_values: Vec<usize>,
    },
    /// Train, then write the Hessian spectrum to spectrum.json.
    Spectrum(ExperimentArgs),
    /// Train, then report the sharpness of the final parameters.
    Sharpness(ExperimentArgs),
    /// Evaluate the generalization bound, directly from `--max-loss` and
    /// friends or on trained parameters.
    Bound {
        #[command(flatten)]
        exp: ExperimentArgs,
        #[command(flatten)]
        direct: DirectBound,
    },
}

#[derive(Debug, Args, Default)]
pub struct DirectBound {
    /// Maximum training loss over the neighbourhood.
    #[arg(long, requires_all = ["w_norm_sq", "k", "n_train"])]
    pub max_loss: Option<f64>,
    #[arg(long)]
    pub w_norm_sq: Option<f64>,
    /// Number of parameters.
    #[arg(long)]
    pub k: Option<u64>,
    /// Number of training examples.
    #[arg(long)]
    pub n_train: Option<u64>,
}

/// Flags that override fields of the JSON config.
#[derive(Debug, Args, Default)]
pub struct ExperimentArgs {
    /// JSON experiment config; flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Base seed; replica i uses seed + i. Beats the environment variable.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub replicas: Option<usize>,

    /// moons, blobs, spiral, none, or a path to an IDX or CSV file.
    #[arg(long)]
    pub dataset: Option<String>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub data_noise: Option<f64>,
    #[arg(long)]
    pub data_seed: Option<u64>,
    #[arg(long)]
    pub nuisance_dims: Option<usize>,

    #[arg(long, value_delimiter = ',')]
    pub hidden: Option<Vec<usize>>,
    #[arg(long)]
    pub activation: Option<Activation>,
    /// cross_entropy or mse.
    #[arg(long)]
    pub loss: Option<String>,
    #[arg(long)]
    pub label_smoothing: Option<f64>,

    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub momentum: Option<f64>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    #[arg(long)]
    pub schedule: Option<Schedule>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// f64 or f32.
    #[arg(long)]
    pub precision: Option<String>,

    /// sgd or sam.
    #[arg(long)]
    pub method: Option<String>,
    #[arg(long)]
    pub rho: Option<f64>,
    /// 2, inf, or any p > 1.
    #[arg(long)]
    pub p_norm: Option<PNorm>,
    #[arg(long)]
    pub m: Option<usize>,
    #[arg(long)]
    pub ascent_steps: Option<usize>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub second_order: Option<bool>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub random_perturbation: Option<bool>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub parallel: Option<bool>,
    #[arg(long, value_delimiter = ',')]
    pub rho_grid: Option<Vec<f64>>,
    #[arg(long)]
    pub label_noise: Option<f64>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub budget_match: Option<bool>,

    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub spectrum: Option<bool>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub sharpness: Option<bool>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub bound: Option<bool>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub cosine: Option<bool>,
    #[arg(long)]
    pub lanczos_iters: Option<usize>,
    /// Radius for the sharpness and bound analyses.
    #[arg(long)]
    pub analysis_rho: Option<f64>,
    #[arg(long)]
    pub analysis_steps: Option<usize>,
    #[arg(long)]
    pub delta: Option<f64>,
}

fn parse_named<T: DeserializeOwned>(what: &str, s: &str) -> Result<T> {
    serde_json::from_value(serde_json::Value::String(s.to_owned()))
        .map_err(|_| Error::Config(format!("unknown {what} `{s}`")))
}

fn synthetic_parts(spec: &DatasetSpec) -> Option<(usize, f64, u64, usize)> {
    match *spec {
        DatasetSpec::Synthetic {
            n,
            noise,
            seed,
            nuisance_dims,
            ..
        } => Some((n, noise, seed, nuisance_dims)),
        _ => None,
    }
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

/// Base seed: the flag, then the environment variable, then the config.
pub fn resolve_seed(flag: Option<u64>, env: Option<&str>, config: u64) -> Result<u64> {
    if let Some(s) = flag {
        return Ok(s);
    }
    match env {
        Some(v) => v.trim().parse().map_err(|_| {
            Error::Config(format!(
                "{} = `{v}` is not an unsigned integer",
                sharpmin::harness::SEED_ENV
            ))
        }),
        None => Ok(config),
    }
}

impl ExperimentArgs {
    /// Loads `--config` (or the defaults) and applies every given flag.
    pub fn build(&self, env_seed: Option<&str>) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
                serde_json::from_str(&text)
                    .map_err(|e| Error::Config(format!("bad config {}: {e}", path.display())))?
            }
            None => ExperimentConfig::default(),
        };
        self.apply(&mut cfg)?;
        cfg.train.seed = resolve_seed(self.seed, env_seed, cfg.train.seed)?;
        cfg.validate()?;
        Ok(cfg)
    }

    fn apply(&self, cfg: &mut ExperimentConfig) -> Result<()> {
        set(&mut cfg.replicas, self.replicas);
        self.apply_dataset(cfg)?;
        self.apply_model(cfg)?;

        let t = &mut cfg.train;
        set(&mut t.lr, self.lr);
        set(&mut t.momentum, self.momentum);
        set(&mut t.weight_decay, self.weight_decay);
        set(&mut t.schedule, self.schedule);
        set(&mut t.epochs, self.epochs);
        set(&mut t.batch_size, self.batch_size);
        if let Some(p) = &self.precision {
            t.precision = parse_named("precision", p)?;
        }

        if let Some(m) = &self.method {
            cfg.method = parse_named::<Method>("method", m)?;
        }
        let s = &mut cfg.sam;
        set(&mut s.rho, self.rho);
        set(&mut s.p_norm, self.p_norm);
        set(&mut s.m, self.m);
        set(&mut s.ascent_steps, self.ascent_steps);
        set(&mut s.second_order, self.second_order);
        set(&mut s.random_perturbation, self.random_perturbation);
        set(&mut s.parallel, self.parallel);
        if let Some(g) = &self.rho_grid {
            cfg.rho_grid = Some(g.clone());
        }
        set(&mut cfg.label_noise, self.label_noise);
        set(&mut cfg.budget_match, self.budget_match);

        let a = &mut cfg.analyses;
        set(&mut a.spectrum, self.spectrum);
        set(&mut a.sharpness, self.sharpness);
        set(&mut a.bound, self.bound);
        set(&mut a.cosine, self.cosine);
        set(&mut a.lanczos_iters, self.lanczos_iters);
        if self.analysis_rho.is_some() {
            a.rho = self.analysis_rho;
        }
        set(&mut a.ascent_steps, self.analysis_steps);
        set(&mut a.delta, self.delta);
        Ok(())
    }

    fn apply_dataset(&self, cfg: &mut ExperimentConfig) -> Result<()> {
        if let Some(name) = &self.dataset {
            cfg.dataset = match name.as_str() {
                "none" => DatasetSpec::None,
                "moons" | "blobs" | "spiral" => {
                    let (n, noise, seed, nuisance_dims) = synthetic_parts(&cfg.dataset)
                        .or_else(|| synthetic_parts(&DatasetSpec::default()))
                        .expect("the default dataset is synthetic");
                    DatasetSpec::Synthetic {
                        shape: name.parse()?,
                        n,
                        noise,
                        seed,
                        nuisance_dims,
                    }
                }
                path => DatasetSpec::File {
                    path: PathBuf::from(path),
                    seed: 0,
                },
            };
        }
        match &mut cfg.dataset {
            DatasetSpec::Synthetic {
                n,
                noise,
                seed,
                nuisance_dims,
                ..
            } => {
                set(n, self.n);
                set(noise, self.data_noise);
                set(seed, self.data_seed);
                set(nuisance_dims, self.nuisance_dims);
            }
            DatasetSpec::File { seed, .. } => {
                set(seed, self.data_seed);
                if self.n.is_some() || self.data_noise.is_some() || self.nuisance_dims.is_some() {
                    return Err(Error::Config(
                        "--n, --data-noise and --nuisance-dims need a synthetic dataset".into(),
                    ));
                }
            }
            DatasetSpec::None => {
                if self.n.is_some()
                    || self.data_noise.is_some()
                    || self.data_seed.is_some()
                    || self.nuisance_dims.is_some()
                {
                    return Err(Error::Config(
                        "dataset flags given with --dataset none".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    fn apply_model(&self, cfg: &mut ExperimentConfig) -> Result<()> {
        let touched = self.hidden.is_some()
            || self.activation.is_some()
            || self.loss.is_some()
            || self.label_smoothing.is_some();
        match &mut cfg.model {
            ModelSpec::Mlp {
                hidden,
                activation,
                loss,
                label_smoothing,
            } => {
                if let Some(h) = &self.hidden {
                    *hidden = h.clone();
                }
                set(activation, self.activation);
                if let Some(l) = &self.loss {
                    *loss = parse_named("loss", l)?;
                }
                set(label_smoothing, self.label_smoothing);
            }
            _ if touched => {
                return Err(Error::Config("MLP flags given for a non-MLP model".into()));
            }
            _ => {}
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(argv: &[&str]) -> ExperimentArgs {
        match Cli::parse_from(std::iter::once("sharpmin").chain(argv.iter().copied())).command {
            Command::Train(a) => a,
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn seed_precedence() {
        assert_eq!(resolve_seed(Some(3), Some("9"), 1).unwrap(), 3);
        assert_eq!(resolve_seed(None, Some(" 9 "), 1).unwrap(), 9);
        assert_eq!(resolve_seed(None, None, 1).unwrap(), 1);
        assert!(resolve_seed(None, Some("x"), 1).is_err());
    }

    #[test]
    fn flags_override_defaults() {
        let a = parse(&[
            "train",
            "--dataset",
            "spiral",
            "--n",
            "300",
            "--hidden",
            "8,4",
            "--rho",
            "0.2",
            "--p-norm",
            "inf",
            "--method",
            "sgd",
            "--schedule",
            "cosine",
            "--budget-match",
            "--loss",
            "mse",
            "--precision",
            "f32",
        ]);
        let cfg = a.build(None).unwrap();
        assert_eq!(cfg.method, Method::Sgd);
        assert!(cfg.budget_match);
        assert_eq!(cfg.sam.rho, 0.2);
        assert_eq!(cfg.sam.p_norm, PNorm::Inf);
        assert_eq!(cfg.train.schedule, Schedule::Cosine);
        match cfg.dataset {
            DatasetSpec::Synthetic { shape, n, .. } => {
                assert_eq!(shape, sharpmin::data::SyntheticKind::Spiral);
                assert_eq!(n, 300);
            }
            other => panic!("{other:?}"),
        }
        match cfg.model {
            ModelSpec::Mlp { hidden, loss, .. } => {
                assert_eq!(hidden, vec![8, 4]);
                assert_eq!(loss, sharpmin::model::LossKind::Mse);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn explicit_false_overrides() {
        let cfg = parse(&["train", "--budget-match=false"])
            .build(None)
            .unwrap();
        assert!(!cfg.budget_match);
    }

    #[test]
    fn bad_names_are_config_errors() {
        assert!(matches!(
            parse(&["train", "--method", "adam"]).build(None),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            parse(&["train", "--dataset", "none", "--n", "5"]).build(None),
            Err(Error::Config(_))
        ));
    }
}
