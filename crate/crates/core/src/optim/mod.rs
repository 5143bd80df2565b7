//! SGD with momentum and the sharpness-aware gradient variants built on it.

mod dual;
mod sam;
mod train;

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{config_err, Error, Result};
use crate::tensor::{ParamVector, Precision};

pub use dual::{dual_norm, epsilon_hat, epsilon_hat_jvp, p_norm, project_onto_ball};
pub use sam::{
    inner_maximize, msharpness_gradient, random_perturbation_gradient, sam_direction, sam_gradient,
    sam_gradient_second_order, AscentStep, AscentTrace, SamStep,
};
pub use train::{
    error_rate, train, train_observed, EpochRow, MetricsLog, TrainOutcome, DIVERGENCE_LOSS,
    METRICS_HEADER,
};

/// The `p` of the perturbation ball `‖ε‖_p ≤ ρ`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum PNorm {
    #[default]
    Two,
    Inf,
    /// General `p ∈ (1, ∞)`.
    P(f64),
}

impl PNorm {
    pub fn new(p: f64) -> Result<Self> {
        if p == 2.0 {
            Ok(PNorm::Two)
        } else if p == f64::INFINITY {
            Ok(PNorm::Inf)
        } else if p > 1.0 && p.is_finite() {
            Ok(PNorm::P(p))
        } else {
            config_err(format!("p-norm must lie in (1, inf], got {p}"))
        }
    }

    pub fn p(self) -> f64 {
        match self {
            PNorm::Two => 2.0,
            PNorm::Inf => f64::INFINITY,
            PNorm::P(p) => p,
        }
    }

    /// Conjugate exponent `q` with `1/p + 1/q = 1`.
    pub fn dual_exponent(self) -> f64 {
        match self {
            PNorm::Two => 2.0,
            PNorm::Inf => 1.0,
            PNorm::P(p) => p / (p - 1.0),
        }
    }
}

impl fmt::Display for PNorm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PNorm::Inf => write!(f, "inf"),
            other => write!(f, "{}", other.p()),
        }
    }
}

impl FromStr for PNorm {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "inf" | "infinity" => Ok(PNorm::Inf),
            other => other
                .parse::<f64>()
                .map_err(|_| Error::Config(format!("bad p-norm `{other}`")))
                .and_then(PNorm::new),
        }
    }
}

impl Serialize for PNorm {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            PNorm::Inf => s.serialize_str("inf"),
            other => s.serialize_f64(other.p()),
        }
    }
}

impl<'de> Deserialize<'de> for PNorm {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        let parsed = match Raw::deserialize(d)? {
            Raw::Num(p) => PNorm::new(p),
            Raw::Text(t) => t.parse(),
        };
        parsed.map_err(serde::de::Error::custom)
    }
}

/// Perturbation settings for one sharpness-aware update.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamConfig {
    pub rho: f64,
    pub p_norm: PNorm,
    /// Sub-batch size for m-sharpness; 0 uses the whole batch.
    pub m: usize,
    pub ascent_steps: usize,
    /// Inner ascent step; defaults to a full step of length ρ.
    pub ascent_step: AscentStep,
    pub second_order: bool,
    /// Replace ε̂ by a random direction of the same Euclidean norm.
    pub random_perturbation: bool,
    /// Compute m-sharpness sub-batches on the rayon pool. Results are identical
    /// either way, so the flag is not written to reports.
    #[serde(skip_serializing)]
    pub parallel: bool,
}

impl Default for SamConfig {
    fn default() -> Self {
        Self {
            rho: 0.05,
            p_norm: PNorm::Two,
            m: 0,
            ascent_steps: 1,
            ascent_step: AscentStep::default(),
            second_order: false,
            random_perturbation: false,
            parallel: false,
        }
    }
}

impl SamConfig {
    pub fn with_rho(rho: f64) -> Self {
        Self {
            rho,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rho >= 0.0 && self.rho.is_finite()) {
            return config_err(format!("rho must be finite and >= 0, got {}", self.rho));
        }
        if self.ascent_steps == 0 {
            return config_err("ascent_steps must be at least 1");
        }
        self.ascent_step.validate()
    }

    /// Checks that `m` divides `batch_size` (or is 0).
    pub fn validate_for_batch(&self, batch_size: usize) -> Result<()> {
        self.validate()?;
        if self.m != 0 && batch_size % self.m != 0 {
            return config_err(format!(
                "m = {} does not divide batch size {batch_size}",
                self.m
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Schedule {
    #[default]
    Constant,
    /// Half-cosine from the base rate down to exactly 0 at the last step.
    Cosine,
}

impl Schedule {
    /// Learning rate for 0-based step `t` of `total`.
    pub fn rate(self, base: f64, t: u64, total: u64) -> f64 {
        match self {
            Schedule::Constant => base,
            Schedule::Cosine => {
                if total <= 1 {
                    return base;
                }
                let frac = t.min(total - 1) as f64 / (total - 1) as f64;
                base * 0.5 * (1.0 + (PI * frac).cos())
            }
        }
    }
}

impl FromStr for Schedule {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "constant" => Ok(Schedule::Constant),
            "cosine" => Ok(Schedule::Cosine),
            other => config_err(format!("unknown schedule `{other}`")),
        }
    }
}

/// Base optimizer settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub schedule: Schedule,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub precision: Precision,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 0.1,
            momentum: 0.9,
            weight_decay: 0.0,
            schedule: Schedule::Constant,
            epochs: 20,
            batch_size: 32,
            seed: 0,
            precision: Precision::F64,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return config_err(format!("learning rate must be > 0, got {}", self.lr));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return config_err(format!(
                "momentum must lie in [0, 1), got {}",
                self.momentum
            ));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return config_err(format!(
                "weight decay must be >= 0, got {}",
                self.weight_decay
            ));
        }
        if self.batch_size == 0 {
            return config_err("batch size must be positive");
        }
        Ok(())
    }
}

/// Parameters, momentum buffer and step counter of heavy-ball SGD.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub params: ParamVector,
    pub momentum: ParamVector,
    pub t: u64,
    /// Step count the learning-rate schedule spans.
    pub total_steps: u64,
}

impl OptimizerState {
    pub fn new(params: ParamVector, total_steps: u64) -> Self {
        let momentum = ParamVector::zeros(params.layout().clone());
        Self {
            params,
            momentum,
            t: 0,
            total_steps,
        }
    }

    pub fn lr(&self, tcfg: &TrainConfig) -> f64 {
        tcfg.schedule.rate(tcfg.lr, self.t, self.total_steps)
    }
}

/// One update: `g ← g + λw`, `buf ← β·buf + g`, `w ← w − η_t·buf`.
pub fn step(state: OptimizerState, g: &ParamVector, tcfg: &TrainConfig) -> OptimizerState {
    assert_eq!(g.dim(), state.params.dim(), "gradient dimension");
    let lr = state.lr(tcfg);
    let w = state.params.as_slice();
    let mut buf = state.momentum.into_vec();
    let mut next = Vec::with_capacity(w.len());
    for i in 0..w.len() {
        let gi = g.as_slice()[i] + tcfg.weight_decay * w[i];
        buf[i] = tcfg.momentum * buf[i] + gi;
        next.push(w[i] - lr * buf[i]);
    }
    OptimizerState {
        momentum: state.params.with_values(buf),
        params: state.params.with_values(next),
        t: state.t + 1,
        total_steps: state.total_steps,
    }
}
