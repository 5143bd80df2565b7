use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::sam::sam_direction;
use super::{step, OptimizerState, SamConfig, TrainConfig};
use crate::data::{Batch, Dataset, Splits};
use crate::error::{Error, Result};
use crate::model::{Counted, Model};
use crate::tensor::{loss, value_and_grad_in, ParamVector};

/// Losses above this count as divergence.
pub const DIVERGENCE_LOSS: f64 = 1e6;

/// Column order of `metrics.csv`.
pub const METRICS_HEADER: &str = "step,epoch,train_loss,train_err,val_err,test_err,lr,grad_evals";

/// Metrics after one epoch. Errors are `NaN` for models that do not classify.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EpochRow {
    /// Optimizer steps taken so far.
    pub step: u64,
    /// 1-based epoch index.
    pub epoch: usize,
    /// Full training-set loss against the labels trained on.
    pub train_loss: f64,
    pub train_err: f64,
    pub val_err: f64,
    /// Error on the test split against its clean labels.
    pub test_err: f64,
    /// Learning rate of the last step in the epoch.
    pub lr: f64,
    /// Gradient evaluations so far, in units of one full-batch gradient.
    pub grad_evals: u64,
}

impl EpochRow {
    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{}",
            self.step,
            self.epoch,
            self.train_loss,
            self.train_err,
            self.val_err,
            self.test_err,
            self.lr,
            self.grad_evals
        )
    }
}

/// Per-epoch training record.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct MetricsLog {
    pub rows: Vec<EpochRow>,
}

impl MetricsLog {
    pub fn last(&self) -> Option<&EpochRow> {
        self.rows.last()
    }

    /// Header line followed by one line per row.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        writeln!(out, "{METRICS_HEADER}").unwrap();
        for r in &self.rows {
            writeln!(out, "{}", r.csv_line()).unwrap();
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ParamVector,
    pub log: MetricsLog,
    pub steps: u64,
    pub grad_evals: u64,
}

/// Misclassification rate of `params` on `batch`, or `NaN` without
/// predictions.
pub fn error_rate<M: Model>(model: &M, params: &ParamVector, batch: &Batch) -> Result<f64> {
    Ok(match model.predict(params, batch)? {
        Some(pred) => {
            let wrong = pred
                .iter()
                .zip(batch.labels())
                .filter(|(a, b)| a != b)
                .count();
            wrong as f64 / batch.len() as f64
        }
        None => f64::NAN,
    })
}

fn diverged(step: u64, err: Error) -> Error {
    match err {
        Error::NonFinite { .. } => Error::Divergence {
            step,
            loss: f64::NAN,
        },
        other => other,
    }
}

fn step_seed(seed: u64, t: u64) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ t.wrapping_add(1).wrapping_mul(0xD1B5_4A32_D192_ED03)
}

fn evaluate<M: Model>(model: &M, params: &ParamVector, ds: &Dataset, clean: bool) -> Result<f64> {
    let b = if clean { ds.clean_batch() } else { ds.batch() };
    error_rate(model, params, &b)
}

/// Runs `tcfg.epochs` epochs of minibatch training from `init`, calling
/// `observe` after each epoch. `scfg = None` is plain SGD.
///
/// The final incomplete batch of each epoch is dropped. On divergence the
/// rows already passed to `observe` remain valid.
pub fn train_observed<M: Model>(
    model: &M,
    init: ParamVector,
    splits: &Splits,
    tcfg: &TrainConfig,
    scfg: Option<&SamConfig>,
    mut observe: impl FnMut(&EpochRow),
) -> Result<TrainOutcome> {
    tcfg.validate()?;
    let train = &splits.train;
    let b = tcfg.batch_size;
    if train.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    if b > train.len() {
        return Err(Error::Config(format!(
            "batch size {b} exceeds training set size {}",
            train.len()
        )));
    }
    if let Some(s) = scfg {
        s.validate_for_batch(b)?;
    }
    let per_epoch = (train.len() / b) as u64;
    let total = per_epoch * tcfg.epochs as u64;
    let counted = Counted::new(model);
    let mut state = OptimizerState::new(init, total);
    let mut rng = ChaCha8Rng::seed_from_u64(tcfg.seed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let full_train = train.batch();
    let mut log = MetricsLog::default();
    let mut lr = tcfg.lr;

    for epoch in 1..=tcfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks_exact(b) {
            let batch = train.gather(chunk);
            let t = state.t;
            let (l, g) = match scfg {
                None => value_and_grad_in(&counted, &state.params, &batch, tcfg.precision),
                Some(s) => sam_direction(
                    &counted,
                    &state.params,
                    &batch,
                    s,
                    tcfg.precision,
                    step_seed(tcfg.seed, t),
                )
                .map(|s| (s.loss, s.gradient)),
            }
            .map_err(|e| diverged(t, e))?;
            if !(l.is_finite() && l <= DIVERGENCE_LOSS) {
                return Err(Error::Divergence { step: t, loss: l });
            }
            lr = state.lr(tcfg);
            state = step(state, &g, tcfg);
            if !state.params.is_finite() {
                return Err(Error::Divergence {
                    step: t,
                    loss: f64::NAN,
                });
            }
        }
        let train_loss =
            loss(model, &state.params, &full_train).map_err(|e| diverged(state.t, e))?;
        if !(train_loss.is_finite() && train_loss <= DIVERGENCE_LOSS) {
            return Err(Error::Divergence {
                step: state.t,
                loss: train_loss,
            });
        }
        let row = EpochRow {
            step: state.t,
            epoch,
            train_loss,
            train_err: evaluate(model, &state.params, train, false)?,
            val_err: evaluate(model, &state.params, &splits.val, false)?,
            test_err: evaluate(model, &state.params, &splits.test, true)?,
            lr,
            grad_evals: counted.examples() / b as u64,
        };
        observe(&row);
        log.rows.push(row);
    }
    Ok(TrainOutcome {
        params: state.params,
        log,
        steps: state.t,
        grad_evals: counted.examples() / b as u64,
    })
}

/// [`train_observed`] without an observer.
pub fn train<M: Model>(
    model: &M,
    init: ParamVector,
    splits: &Splits,
    tcfg: &TrainConfig,
    scfg: Option<&SamConfig>,
) -> Result<TrainOutcome> {
    train_observed(model, init, splits, tcfg, scfg, |_| {})
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{make_synthetic, SyntheticKind};
    use crate::model::{make_double_well, make_mlp, Activation, Quadratic};

    fn small() -> TrainConfig {
        TrainConfig {
            lr: 0.1,
            epochs: 3,
            batch_size: 16,
            seed: 5,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn sam_rho_zero_matches_sgd_bitwise() {
        let splits = make_synthetic(SyntheticKind::Moons, 200, 0.1, 1).unwrap();
        let (mlp, p) = make_mlp(&[2, 8, 2], Activation::Tanh, 2).unwrap();
        let sgd = train(&mlp, p.clone(), &splits, &small(), None).unwrap();
        let sam = train(&mlp, p, &splits, &small(), Some(&SamConfig::with_rho(0.0))).unwrap();
        assert!(sgd.params.bit_eq(&sam.params));
        assert_eq!(sam.grad_evals, 2 * sgd.grad_evals);
        assert_eq!(sgd.grad_evals, sgd.steps);
    }

    #[test]
    fn rows_are_well_formed() {
        let splits = make_synthetic(SyntheticKind::Blobs, 120, 0.2, 4).unwrap();
        let (mlp, p) = make_mlp(&[2, 6, 3], Activation::Relu, 0).unwrap();
        let cfg = SamConfig {
            m: 4,
            ..SamConfig::with_rho(0.05)
        };
        let out = train(&mlp, p, &splits, &small(), Some(&cfg)).unwrap();
        assert_eq!(out.log.rows.len(), 3);
        for w in out.log.rows.windows(2) {
            assert!(w[1].grad_evals > w[0].grad_evals);
            assert!(w[1].step > w[0].step);
        }
        let csv = out.log.to_csv();
        assert!(csv.starts_with(METRICS_HEADER));
        assert_eq!(csv.lines().count(), 4);
    }

    #[test]
    fn divergence_reports_step() {
        let q = Quadratic::diagonal(&[1.0]);
        let tcfg = TrainConfig {
            lr: 5.0,
            momentum: 0.0,
            epochs: 100,
            batch_size: 1,
            ..TrainConfig::default()
        };
        let err = train(
            &q,
            ParamVector::from_vec(vec![1.0]),
            &Splits::placeholder(),
            &tcfg,
            None,
        )
        .unwrap_err();
        match err {
            Error::Divergence { step, .. } => assert!(step > 0 && step < 100),
            other => panic!("{other}"),
        }
    }

    #[test]
    fn landscape_errors_are_nan() {
        let w = make_double_well(100.0, 1.0, 4.0).unwrap();
        let tcfg = TrainConfig {
            lr: 0.005,
            epochs: 4,
            batch_size: 1,
            ..TrainConfig::default()
        };
        let out = train(
            &w,
            ParamVector::from_vec(vec![0.1]),
            &Splits::placeholder(),
            &tcfg,
            None,
        )
        .unwrap();
        assert!(out.log.rows[0].test_err.is_nan());
        assert_eq!(out.steps, 4);
    }
}
