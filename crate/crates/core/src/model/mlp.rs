use std::str::FromStr;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::Model;
use crate::data::Batch;
use crate::error::{config_err, Error, Result};
use crate::tensor::{Layout, ParamVector, Real, Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Tanh,
    Relu,
    Softplus,
}

impl FromStr for Activation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tanh" => Ok(Activation::Tanh),
            "relu" => Ok(Activation::Relu),
            "softplus" => Ok(Activation::Softplus),
            other => config_err(format!("unknown activation `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    #[default]
    CrossEntropy,
    /// Squared error against one-hot targets, averaged over outputs.
    Mse,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MlpSpec {
    /// Layer widths, input first and number of classes last.
    pub layers: Vec<usize>,
    pub activation: Activation,
    pub loss: LossKind,
    /// Cross-entropy targets become `(1 - α)·onehot + α/C`.
    pub label_smoothing: f64,
}

impl Default for MlpSpec {
    fn default() -> Self {
        Self {
            layers: vec![2, 16, 16, 2],
            activation: Activation::Tanh,
            loss: LossKind::CrossEntropy,
            label_smoothing: 0.0,
        }
    }
}

/// Fully connected network without normalization layers.
#[derive(Debug, Clone)]
pub struct Mlp {
    spec: MlpSpec,
    layout: Arc<Layout>,
}

impl Mlp {
    pub fn new(spec: MlpSpec) -> Result<Self> {
        if spec.layers.len() < 2 {
            return config_err(format!(
                "an MLP needs input and output sizes, got {:?}",
                spec.layers
            ));
        }
        if spec.layers.contains(&0) {
            return config_err(format!(
                "layer sizes must be positive, got {:?}",
                spec.layers
            ));
        }
        if !(0.0..1.0).contains(&spec.label_smoothing) {
            return config_err(format!(
                "label smoothing {} outside [0, 1)",
                spec.label_smoothing
            ));
        }
        let layout = Layout::new(spec.layers.windows(2).enumerate().flat_map(|(l, w)| {
            [
                (format!("W{l}"), vec![w[0], w[1]]),
                (format!("b{l}"), vec![w[1]]),
            ]
        }));
        Ok(Self {
            spec,
            layout: Arc::new(layout),
        })
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn num_classes(&self) -> usize {
        *self.spec.layers.last().expect("validated")
    }

    pub fn input_dim(&self) -> usize {
        self.spec.layers[0]
    }

    /// Weights and biases drawn from `U(-1/√fan_in, 1/√fan_in)`.
    pub fn init(&self, seed: u64) -> ParamVector {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut values = Vec::with_capacity(self.layout.dim());
        for seg in self.layout.segments() {
            let fan_in = if seg.name.starts_with('W') {
                seg.shape[0]
            } else {
                // Bias `b{l}` shares the fan-in of `W{l}`.
                let w = self
                    .layout
                    .segment(&format!("W{}", &seg.name[1..]))
                    .expect("every bias has a weight");
                w.shape[0]
            };
            let bound = 1.0 / (fan_in as f64).sqrt();
            values.extend((0..seg.len()).map(|_| rng.random_range(-bound..bound)));
        }
        ParamVector::new(Arc::clone(&self.layout), values).expect("layout dimension")
    }

    fn record_logits<S: Real>(
        &self,
        tape: &mut Tape<S>,
        params: Var,
        batch: &Batch,
    ) -> Result<Var> {
        if batch.dim() != self.input_dim() {
            return Err(Error::Shape(format!(
                "model expects {} input features, batch has {}",
                self.input_dim(),
                batch.dim()
            )));
        }
        let x = Tensor::from_f64(vec![batch.len(), batch.dim()], batch.features())?;
        let mut h = tape.input("features", x)?;
        let segs = self.layout.segments();
        let depth = self.spec.layers.len() - 1;
        for l in 0..depth {
            let (ws, bs) = (&segs[2 * l], &segs[2 * l + 1]);
            let w = tape.view(params, ws.offset, ws.shape.clone())?;
            let b = tape.view(params, bs.offset, bs.shape.clone())?;
            let z = tape.matmul(h, w)?;
            h = tape.add_row(z, b)?;
            if l + 1 < depth {
                h = match self.spec.activation {
                    Activation::Tanh => tape.tanh(h)?,
                    Activation::Relu => tape.relu(h)?,
                    Activation::Softplus => tape.softplus(h)?,
                };
            }
        }
        Ok(h)
    }

    /// Output scores, row-major `[n, classes]`.
    pub fn logits(&self, params: &ParamVector, batch: &Batch) -> Result<Vec<f64>> {
        let mut tape = Tape::<f64>::new();
        let w = tape.input(
            "params",
            Tensor::new(vec![params.dim()], params.as_slice().to_vec())?,
        )?;
        let out = self.record_logits(&mut tape, w, batch)?;
        Ok(tape.value(out).data().to_vec())
    }

    fn targets(&self, labels: &[usize]) -> Result<Vec<f64>> {
        let c = self.num_classes();
        let (on, off) = match self.spec.loss {
            LossKind::CrossEntropy => {
                let a = self.spec.label_smoothing;
                (1.0 - a + a / c as f64, a / c as f64)
            }
            LossKind::Mse => (1.0, 0.0),
        };
        let mut t = vec![off; labels.len() * c];
        for (i, &y) in labels.iter().enumerate() {
            if y >= c {
                return Err(Error::Shape(format!("label {y} for a {c}-class model")));
            }
            t[i * c + y] = on;
        }
        Ok(t)
    }
}

impl Model for Mlp {
    fn layout(&self) -> Arc<Layout> {
        Arc::clone(&self.layout)
    }

    fn record_loss<S: Real>(&self, tape: &mut Tape<S>, params: Var, batch: &Batch) -> Result<Var> {
        let logits = self.record_logits(tape, params, batch)?;
        let targets = self.targets(batch.labels())?;
        match self.spec.loss {
            LossKind::CrossEntropy => tape.softmax_cross_entropy(logits, targets),
            LossKind::Mse => tape.mse(logits, targets),
        }
    }

    fn predict(&self, params: &ParamVector, batch: &Batch) -> Result<Option<Vec<usize>>> {
        let c = self.num_classes();
        let z = self.logits(params, batch)?;
        let pred = z
            .chunks(c)
            .map(|row| {
                let mut best = 0;
                for (j, &v) in row.iter().enumerate() {
                    if v > row[best] {
                        best = j;
                    }
                }
                best
            })
            .collect();
        Ok(Some(pred))
    }
}

/// Builds an MLP with cross-entropy loss and its seeded initial parameters.
pub fn make_mlp(layers: &[usize], activation: Activation, seed: u64) -> Result<(Mlp, ParamVector)> {
    let mlp = Mlp::new(MlpSpec {
        layers: layers.to_vec(),
        activation,
        ..MlpSpec::default()
    })?;
    let params = mlp.init(seed);
    Ok((mlp, params))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{grad, loss};

    #[test]
    fn param_count_2_8_2() {
        let (m, p) = make_mlp(&[2, 8, 2], Activation::Tanh, 7).unwrap();
        assert_eq!(p.dim(), 2 * 8 + 8 + 8 * 2 + 2);
        assert_eq!(m.dim(), 42);
        let names: Vec<_> = p
            .layout()
            .segments()
            .iter()
            .map(|s| s.name.as_str())
            .collect();
        assert_eq!(names, ["W0", "b0", "W1", "b1"]);
    }

    #[test]
    fn same_seed_same_params() {
        let (_, a) = make_mlp(&[2, 8, 2], Activation::Tanh, 7).unwrap();
        let (_, b) = make_mlp(&[2, 8, 2], Activation::Tanh, 7).unwrap();
        assert!(a.bit_eq(&b));
        let (_, c) = make_mlp(&[2, 8, 2], Activation::Tanh, 8).unwrap();
        assert!(!a.bit_eq(&c));
    }

    #[test]
    fn invalid_sizes_are_config_errors() {
        assert!(matches!(
            make_mlp(&[2, 0, 2], Activation::Tanh, 0),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            make_mlp(&[2], Activation::Tanh, 0),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn uniform_predictor_loss_is_ln_c() {
        let (m, p) = make_mlp(&[2, 4, 5], Activation::Tanh, 1).unwrap();
        let zero = p.map(|_| 0.0);
        let batch = Batch::new(vec![0.3, -1.0, 2.0, 0.5], vec![1, 4], 2).unwrap();
        assert_eq!(loss(&m, &zero, &batch).unwrap(), 5f64.ln());
    }

    #[test]
    fn label_smoothing_keeps_perfect_predictor_loss_positive() {
        // Single-layer model whose bias yields a near one-hot prediction.
        let spec = MlpSpec {
            layers: vec![1, 2],
            label_smoothing: 0.1,
            ..MlpSpec::default()
        };
        let m = Mlp::new(spec).unwrap();
        let p = ParamVector::new(m.layout(), vec![0.0, 0.0, 50.0, -50.0]).unwrap();
        let batch = Batch::new(vec![1.0], vec![0], 1).unwrap();
        let smoothed = loss(&m, &p, &batch).unwrap();
        assert!(smoothed > 0.0);
        assert!(
            smoothed > 1.0,
            "smoothing penalizes overconfidence: {smoothed}"
        );
        let plain = Mlp::new(MlpSpec {
            layers: vec![1, 2],
            ..MlpSpec::default()
        })
        .unwrap();
        assert!(loss(&plain, &p, &batch).unwrap() < 1e-40);
    }

    #[test]
    fn loss_is_nonnegative_and_mean_of_examples() {
        for kind in [LossKind::CrossEntropy, LossKind::Mse] {
            let m = Mlp::new(MlpSpec {
                layers: vec![2, 3, 2],
                loss: kind,
                ..MlpSpec::default()
            })
            .unwrap();
            let p = m.init(3);
            let batch = Batch::new(vec![0.1, 0.2, -0.4, 0.9, 1.5, -2.0], vec![0, 1, 1], 2).unwrap();
            let total = loss(&m, &p, &batch).unwrap();
            let parts: f64 = (0..3)
                .map(|i| loss(&m, &p, &batch.slice(i, i + 1)).unwrap())
                .sum();
            assert!(total >= 0.0);
            assert!((total - parts / 3.0).abs() < 1e-14);
        }
    }

    #[test]
    fn wrong_feature_dim_is_shape_error() {
        let (m, p) = make_mlp(&[3, 2], Activation::Tanh, 0).unwrap();
        let batch = Batch::new(vec![0.0, 1.0], vec![0], 2).unwrap();
        assert!(matches!(grad(&m, &p, &batch), Err(Error::Shape(_))));
    }
}
