//! Reverse-mode tape over dense tensors.

use super::real::Real;
use crate::error::{Error, Result};

/// Dense row-major tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<S> {
    shape: Vec<usize>,
    data: Vec<S>,
}

impl<S: Real> Tensor<S> {
    pub fn new(shape: Vec<usize>, data: Vec<S>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::Shape(format!(
                "shape {shape:?} needs {expected} values, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn from_f64(shape: Vec<usize>, data: &[f64]) -> Result<Self> {
        Self::new(shape, data.iter().map(|&v| S::from_f64(v)).collect())
    }

    pub fn scalar(v: S) -> Self {
        Self {
            shape: Vec::new(),
            data: vec![v],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[S] {
        &self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    fn matrix_dims(&self) -> Option<(usize, usize)> {
        match self.shape.as_slice() {
            [r, c] => Some((*r, *c)),
            _ => None,
        }
    }
}

/// Handle to a node recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<S> {
    Input,
    View {
        src: Var,
        offset: usize,
    },
    MatMul(Var, Var),
    AddRow(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Scale(Var, f64),
    Shift(Var),
    Tanh(Var),
    Relu(Var),
    Softplus(Var),
    Sum(Var),
    SoftmaxXent {
        logits: Var,
        targets: Vec<f64>,
        probs: Vec<S>,
    },
    Mse {
        pred: Var,
        targets: Vec<f64>,
    },
}

impl<S> Op<S> {
    fn name(&self) -> &'static str {
        match self {
            Op::Input => "input",
            Op::View { .. } => "view",
            Op::MatMul(..) => "matmul",
            Op::AddRow(..) => "add_row",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Div(..) => "div",
            Op::Scale(..) => "scale",
            Op::Shift(..) => "shift",
            Op::Tanh(..) => "tanh",
            Op::Relu(..) => "relu",
            Op::Softplus(..) => "softplus",
            Op::Sum(..) => "sum",
            Op::SoftmaxXent { .. } => "softmax_cross_entropy",
            Op::Mse { .. } => "mse",
        }
    }
}

#[derive(Debug)]
struct Node<S> {
    op: Op<S>,
    label: Option<String>,
    value: Tensor<S>,
}

/// Records a straight-line program for one forward pass.
#[derive(Debug, Default)]
pub struct Tape<S> {
    nodes: Vec<Node<S>>,
}

/// Adjoints produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients<S> {
    grads: Vec<Option<Vec<S>>>,
}

impl<S: Real> Gradients<S> {
    /// Adjoint of `var`; `None` when the output does not depend on it.
    pub fn get(&self, var: Var) -> Option<&[S]> {
        self.grads.get(var.0).and_then(|g| g.as_deref())
    }
}

fn accumulate<S: Real>(slot: &mut Option<Vec<S>>, len: usize, f: impl Fn(usize) -> S) {
    let buf = slot.get_or_insert_with(|| vec![S::zero(); len]);
    for (i, b) in buf.iter_mut().enumerate() {
        *b += f(i);
    }
}

impl<S: Real> Tape<S> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<S> {
        &self.nodes[v.0].value
    }

    pub fn scalar_value(&self, v: Var) -> S {
        self.nodes[v.0].value.data[0]
    }

    fn push(&mut self, op: Op<S>, value: Tensor<S>) -> Result<Var> {
        let idx = self.nodes.len();
        if value.data.iter().any(|x| !x.is_finite()) {
            let label = match &op {
                Op::Input => "input".to_string(),
                other => other.name().to_string(),
            };
            return Err(Error::NonFinite {
                tensor: format!("{label} (node {idx})"),
            });
        }
        self.nodes.push(Node {
            op,
            label: None,
            value,
        });
        Ok(Var(idx))
    }

    /// Records a leaf tensor. The name is reported if the value is non-finite.
    pub fn input(&mut self, name: &str, value: Tensor<S>) -> Result<Var> {
        if let Some(pos) = value.data.iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFinite {
                tensor: format!("{name}[{pos}]"),
            });
        }
        let v = self.push(Op::Input, value)?;
        self.nodes[v.0].label = Some(name.to_string());
        Ok(v)
    }

    /// Contiguous reshaped window `src[offset .. offset + prod(shape)]`.
    pub fn view(&mut self, src: Var, offset: usize, shape: Vec<usize>) -> Result<Var> {
        let len: usize = shape.iter().product();
        let source = &self.nodes[src.0].value.data;
        if offset + len > source.len() {
            return Err(Error::Shape(format!(
                "view [{offset}, {}) exceeds tensor of length {}",
                offset + len,
                source.len()
            )));
        }
        let data = source[offset..offset + len].to_vec();
        self.push(Op::View { src, offset }, Tensor { shape, data })
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (n, k) = self.dims2(a)?;
        let (k2, m) = self.dims2(b)?;
        if k != k2 {
            return Err(Error::Shape(format!("matmul [{n},{k}] x [{k2},{m}]")));
        }
        let ad = &self.nodes[a.0].value.data;
        let bd = &self.nodes[b.0].value.data;
        let mut out = vec![S::zero(); n * m];
        for i in 0..n {
            for p in 0..k {
                let aip = ad[i * k + p];
                let row = &bd[p * m..(p + 1) * m];
                for (o, &bv) in out[i * m..(i + 1) * m].iter_mut().zip(row) {
                    *o += aip * bv;
                }
            }
        }
        self.push(
            Op::MatMul(a, b),
            Tensor {
                shape: vec![n, m],
                data: out,
            },
        )
    }

    /// `x[i, j] + b[j]` for a matrix `x` and a vector `b`.
    pub fn add_row(&mut self, x: Var, b: Var) -> Result<Var> {
        let (n, m) = self.dims2(x)?;
        if self.nodes[b.0].value.len() != m {
            return Err(Error::Shape(format!(
                "add_row: bias length {} vs {m} columns",
                self.nodes[b.0].value.len()
            )));
        }
        let xd = &self.nodes[x.0].value.data;
        let bd = &self.nodes[b.0].value.data;
        let data = (0..n * m).map(|idx| xd[idx] + bd[idx % m]).collect();
        self.push(
            Op::AddRow(x, b),
            Tensor {
                shape: vec![n, m],
                data,
            },
        )
    }

    fn binary(&mut self, a: Var, b: Var, op: Op<S>, f: impl Fn(S, S) -> S) -> Result<Var> {
        let av = &self.nodes[a.0].value;
        let bv = &self.nodes[b.0].value;
        if av.shape != bv.shape {
            return Err(Error::Shape(format!(
                "{}: {:?} vs {:?}",
                op.name(),
                av.shape,
                bv.shape
            )));
        }
        let data = av
            .data
            .iter()
            .zip(&bv.data)
            .map(|(&x, &y)| f(x, y))
            .collect();
        let shape = av.shape.clone();
        self.push(op, Tensor { shape, data })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Mul(a, b), |x, y| x * y)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Div(a, b), |x, y| x / y)
    }

    fn unary(&mut self, x: Var, op: Op<S>, f: impl Fn(S) -> S) -> Result<Var> {
        let xv = &self.nodes[x.0].value;
        let data = xv.data.iter().map(|&v| f(v)).collect();
        let shape = xv.shape.clone();
        self.push(op, Tensor { shape, data })
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var> {
        self.unary(x, Op::Scale(x, c), |v| v.scale(c))
    }

    pub fn shift(&mut self, x: Var, c: f64) -> Result<Var> {
        let cs = S::from_f64(c);
        self.unary(x, Op::Shift(x), |v| v + cs)
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Op::Tanh(x), |v| v.tanh())
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.unary(
            x,
            Op::Relu(x),
            |v| if v.value() > 0.0 { v } else { S::zero() },
        )
    }

    pub fn softplus(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Op::Softplus(x), softplus)
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let mut acc = S::zero();
        for &v in &self.nodes[x.0].value.data {
            acc += v;
        }
        self.push(Op::Sum(x), Tensor::scalar(acc))
    }

    /// Mean softmax cross-entropy of `logits [n, c]` against soft target rows.
    pub fn softmax_cross_entropy(&mut self, logits: Var, targets: Vec<f64>) -> Result<Var> {
        let (n, c) = self.dims2(logits)?;
        if targets.len() != n * c {
            return Err(Error::Shape(format!(
                "cross-entropy targets: {} values for [{n},{c}] logits",
                targets.len()
            )));
        }
        let z = &self.nodes[logits.0].value.data;
        let mut probs = Vec::with_capacity(n * c);
        let mut total = S::zero();
        for i in 0..n {
            let row = &z[i * c..(i + 1) * c];
            let mut max = row[0];
            for &v in &row[1..] {
                if v.value() > max.value() {
                    max = v;
                }
            }
            let mut denom = S::zero();
            let exps: Vec<S> = row.iter().map(|&v| (v - max).exp()).collect();
            for &e in &exps {
                denom += e;
            }
            let lse = max + denom.ln();
            let mut dot = S::zero();
            for (j, &v) in row.iter().enumerate() {
                let t = targets[i * c + j];
                if t != 0.0 {
                    dot += v.scale(t);
                }
            }
            total += lse - dot;
            probs.extend(exps.into_iter().map(|e| e / denom));
        }
        let loss = total.scale(1.0 / n as f64);
        self.push(
            Op::SoftmaxXent {
                logits,
                targets,
                probs,
            },
            Tensor::scalar(loss),
        )
    }

    /// Mean over examples of the per-example mean squared error across outputs.
    pub fn mse(&mut self, pred: Var, targets: Vec<f64>) -> Result<Var> {
        let (n, c) = self.dims2(pred)?;
        if targets.len() != n * c {
            return Err(Error::Shape(format!(
                "mse targets: {} values for [{n},{c}] predictions",
                targets.len()
            )));
        }
        let p = &self.nodes[pred.0].value.data;
        let mut total = S::zero();
        for (&pv, &t) in p.iter().zip(&targets) {
            let d = pv - S::from_f64(t);
            total += d * d;
        }
        let loss = total.scale(1.0 / (n * c) as f64);
        self.push(Op::Mse { pred, targets }, Tensor::scalar(loss))
    }

    fn dims2(&self, v: Var) -> Result<(usize, usize)> {
        self.nodes[v.0].value.matrix_dims().ok_or_else(|| {
            Error::Shape(format!(
                "expected a matrix, got shape {:?}",
                self.nodes[v.0].value.shape
            ))
        })
    }

    /// Reverse sweep from a scalar `output`.
    pub fn backward(&self, output: Var) -> Result<Gradients<S>> {
        if self.nodes[output.0].value.len() != 1 {
            return Err(Error::Shape(format!(
                "backward needs a scalar output, got shape {:?}",
                self.nodes[output.0].value.shape
            )));
        }
        let mut grads: Vec<Option<Vec<S>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[output.0] = Some(vec![S::one()]);

        for idx in (0..=output.0).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            let len_of = |v: Var| self.nodes[v.0].value.len();
            let val = |v: Var| &self.nodes[v.0].value.data;
            match &node.op {
                Op::Input => {}
                Op::View { src, offset } => {
                    let buf = grads[src.0].get_or_insert_with(|| vec![S::zero(); len_of(*src)]);
                    for (b, &gv) in buf[*offset..*offset + g.len()].iter_mut().zip(&g) {
                        *b += gv;
                    }
                }
                Op::MatMul(a, b) => {
                    let (n, k) = self.dims2(*a)?;
                    let (_, m) = self.dims2(*b)?;
                    let (ad, bd) = (val(*a), val(*b));
                    let mut ga = vec![S::zero(); n * k];
                    for i in 0..n {
                        for p in 0..k {
                            let mut acc = S::zero();
                            for j in 0..m {
                                acc += g[i * m + j] * bd[p * m + j];
                            }
                            ga[i * k + p] = acc;
                        }
                    }
                    let mut gb = vec![S::zero(); k * m];
                    for i in 0..n {
                        for p in 0..k {
                            let aip = ad[i * k + p];
                            for j in 0..m {
                                gb[p * m + j] += aip * g[i * m + j];
                            }
                        }
                    }
                    accumulate(&mut grads[a.0], n * k, |i| ga[i]);
                    accumulate(&mut grads[b.0], k * m, |i| gb[i]);
                }
                Op::AddRow(x, b) => {
                    let (n, m) = self.dims2(*x)?;
                    accumulate(&mut grads[x.0], n * m, |i| g[i]);
                    let mut gb = vec![S::zero(); m];
                    for i in 0..n {
                        for j in 0..m {
                            gb[j] += g[i * m + j];
                        }
                    }
                    accumulate(&mut grads[b.0], m, |j| gb[j]);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads[a.0], g.len(), |i| g[i]);
                    accumulate(&mut grads[b.0], g.len(), |i| g[i]);
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads[a.0], g.len(), |i| g[i]);
                    accumulate(&mut grads[b.0], g.len(), |i| -g[i]);
                }
                Op::Mul(a, b) => {
                    let (ad, bd) = (val(*a), val(*b));
                    accumulate(&mut grads[a.0], g.len(), |i| g[i] * bd[i]);
                    accumulate(&mut grads[b.0], g.len(), |i| g[i] * ad[i]);
                }
                Op::Div(a, b) => {
                    let (ad, bd) = (val(*a), val(*b));
                    accumulate(&mut grads[a.0], g.len(), |i| g[i] / bd[i]);
                    accumulate(&mut grads[b.0], g.len(), |i| {
                        -(g[i] * ad[i] / (bd[i] * bd[i]))
                    });
                }
                Op::Scale(x, c) => {
                    accumulate(&mut grads[x.0], g.len(), |i| g[i].scale(*c));
                }
                Op::Shift(x) => {
                    accumulate(&mut grads[x.0], g.len(), |i| g[i]);
                }
                Op::Tanh(x) => {
                    let y = &node.value.data;
                    accumulate(&mut grads[x.0], g.len(), |i| {
                        g[i] * (S::one() - y[i] * y[i])
                    });
                }
                Op::Relu(x) => {
                    let xd = val(*x);
                    accumulate(&mut grads[x.0], g.len(), |i| {
                        if xd[i].value() > 0.0 {
                            g[i]
                        } else {
                            S::zero()
                        }
                    });
                }
                Op::Softplus(x) => {
                    let xd = val(*x);
                    accumulate(&mut grads[x.0], g.len(), |i| g[i] * sigmoid(xd[i]));
                }
                Op::Sum(x) => {
                    let g0 = g[0];
                    accumulate(&mut grads[x.0], len_of(*x), |_| g0);
                }
                Op::SoftmaxXent {
                    logits,
                    targets,
                    probs,
                } => {
                    let (n, _) = self.dims2(*logits)?;
                    let g0 = g[0].scale(1.0 / n as f64);
                    accumulate(&mut grads[logits.0], probs.len(), |i| {
                        g0 * (probs[i] - S::from_f64(targets[i]))
                    });
                }
                Op::Mse { pred, targets } => {
                    let pd = val(*pred);
                    let g0 = g[0].scale(2.0 / pd.len() as f64);
                    accumulate(&mut grads[pred.0], pd.len(), |i| {
                        g0 * (pd[i] - S::from_f64(targets[i]))
                    });
                }
            }
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }
}

fn softplus<S: Real>(x: S) -> S {
    // max(x, 0) + ln(1 + exp(-|x|))
    if x.value() > 0.0 {
        x + (S::one() + (-x).exp()).ln()
    } else {
        (S::one() + x.exp()).ln()
    }
}

fn sigmoid<S: Real>(x: S) -> S {
    if x.value() >= 0.0 {
        S::one() / (S::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (S::one() + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tensor_shape_mismatch_is_rejected() {
        assert!(Tensor::<f64>::new(vec![2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::<f64>::new(vec![2, 3], vec![0.0; 6]).is_ok());
    }

    #[test]
    fn matmul_backward_matches_hand_computation() {
        let mut tape = Tape::<f64>::new();
        let a = tape
            .input("a", Tensor::new(vec![1, 2], vec![1.0, 2.0]).unwrap())
            .unwrap();
        let b = tape
            .input("b", Tensor::new(vec![2, 1], vec![3.0, 4.0]).unwrap())
            .unwrap();
        let c = tape.matmul(a, b).unwrap();
        let s = tape.sum(c).unwrap();
        assert_eq!(tape.scalar_value(s), 11.0);
        let grads = tape.backward(s).unwrap();
        assert_eq!(grads.get(a).unwrap(), &[3.0, 4.0]);
        assert_eq!(grads.get(b).unwrap(), &[1.0, 2.0]);
    }

    #[test]
    fn non_finite_input_names_tensor() {
        let mut tape = Tape::<f64>::new();
        let err = tape
            .input(
                "weights",
                Tensor::new(vec![2], vec![1.0, f64::NAN]).unwrap(),
            )
            .unwrap_err();
        assert!(matches!(err, Error::NonFinite { ref tensor } if tensor == "weights[1]"));
    }

    #[test]
    fn non_finite_intermediate_names_op() {
        let mut tape = Tape::<f64>::new();
        let a = tape
            .input("a", Tensor::new(vec![1], vec![1.0]).unwrap())
            .unwrap();
        let z = tape
            .input("z", Tensor::new(vec![1], vec![0.0]).unwrap())
            .unwrap();
        let err = tape.div(a, z).unwrap_err();
        assert!(matches!(err, Error::NonFinite { ref tensor } if tensor.starts_with("div")));
    }

    #[test]
    fn cross_entropy_of_uniform_logits_is_ln_c() {
        for c in [2usize, 3, 10] {
            let mut tape = Tape::<f64>::new();
            let z = tape
                .input("z", Tensor::new(vec![1, c], vec![0.0; c]).unwrap())
                .unwrap();
            let mut t = vec![0.0; c];
            t[0] = 1.0;
            let l = tape.softmax_cross_entropy(z, t).unwrap();
            assert_eq!(tape.scalar_value(l), (c as f64).ln());
        }
    }

    #[test]
    fn softplus_is_stable_for_large_inputs() {
        assert!((softplus(800.0_f64) - 800.0).abs() < 1e-12);
        assert!(softplus(-800.0_f64) >= 0.0);
        assert!((sigmoid(-800.0_f64)).abs() < 1e-300);
    }
}
