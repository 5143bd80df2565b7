//! WebAssembly bindings for the browser demo. Every export returns a JSON
//! string; the `*_json` functions are the same computations for native use.

use serde::Serialize;
use wasm_bindgen::prelude::*;

use sharpmin::analysis::lanczos_spectrum;
use sharpmin::data::{make_synthetic, Batch, SyntheticKind};
use sharpmin::model::{make_double_well, AnalyticLandscape, Mlp, MlpSpec, Model};
use sharpmin::optim::{
    epsilon_hat, p_norm, sam_gradient, step, train, OptimizerState, PNorm, SamConfig, TrainConfig,
};
use sharpmin::tensor::{grad, ParamVector};
use sharpmin::{Error, Result};

#[derive(Serialize)]
struct Trajectories {
    /// `(x, L(x))` samples of the landscape.
    curve: Vec<[f64; 2]>,
    sgd: Vec<f64>,
    sam: Vec<f64>,
    sharp_min: f64,
    flat_min: f64,
}

/// SGD and SAM iterates on a double well with minima at 0 (curvature 100)
/// and 4 (curvature 1).
pub fn double_well_json(
    rho: f64,
    lr: f64,
    momentum: f64,
    steps: usize,
    init: f64,
) -> Result<String> {
    let well = make_double_well(100.0, 1.0, 4.0)?;
    let tcfg = TrainConfig {
        lr,
        momentum,
        ..TrainConfig::default()
    };
    tcfg.validate()?;
    let sam_cfg = SamConfig::with_rho(rho);
    sam_cfg.validate()?;
    let unit = Batch::unit();
    let run = |sam: bool| -> Result<Vec<f64>> {
        let mut state = OptimizerState::new(ParamVector::from_vec(vec![init]), steps as u64);
        let mut xs = vec![init];
        for _ in 0..steps {
            let g = if sam {
                sam_gradient(&well, &state.params, &unit, &sam_cfg)?
            } else {
                grad(&well, &state.params, &unit)?
            };
            state = step(state, &g, &tcfg);
            let x = state.params.as_slice()[0];
            if !x.is_finite() || x.abs() > 1e3 {
                return Err(Error::Divergence {
                    step: state.t,
                    loss: f64::INFINITY,
                });
            }
            xs.push(x);
        }
        Ok(xs)
    };
    let curve = (0..=400)
        .map(|i| {
            let x = -2.0 + 8.0 * i as f64 / 400.0;
            [x, well.value(&[x])]
        })
        .collect();
    let out = Trajectories {
        curve,
        sgd: run(false)?,
        sam: run(true)?,
        sharp_min: well.sharp_min(),
        flat_min: well.flat_min(),
    };
    Ok(serde_json::to_string(&out)?)
}

#[derive(Serialize)]
struct Perturbation {
    epsilon: [f64; 2],
    /// Boundary of the radius-ρ ball in the chosen norm.
    ball: Vec<[f64; 2]>,
    /// `⟨ε̂, g⟩`, the first-order loss increase.
    gain: f64,
}

/// The worst-case first-order perturbation for gradient `(gx, gy)` in a
/// `p`-norm ball; `p` is a number above 1 or `inf`.
pub fn perturbation_json(gx: f64, gy: f64, rho: f64, p: &str) -> Result<String> {
    let p: PNorm = p.parse()?;
    let e = epsilon_hat(&ParamVector::from_vec(vec![gx, gy]), rho, p)?;
    let e = [e.as_slice()[0], e.as_slice()[1]];
    let ball = (0..=256)
        .map(|i| {
            let t = std::f64::consts::TAU * i as f64 / 256.0;
            let d = [t.cos(), t.sin()];
            let n = p_norm(&d, p);
            [rho * d[0] / n, rho * d[1] / n]
        })
        .collect();
    let out = Perturbation {
        epsilon: e,
        ball,
        gain: e[0] * gx + e[1] * gy,
    };
    Ok(serde_json::to_string(&out)?)
}

#[derive(Serialize)]
struct Boundary {
    /// Predicted class on a `resolution × resolution` grid, row-major from
    /// the top-left corner.
    grid: Vec<usize>,
    resolution: usize,
    extent: [f64; 4],
    /// Training points as `(x, y, label)`.
    points: Vec<(f64, f64, usize)>,
    test_err: f64,
    train_loss: f64,
    lambda_max: f64,
}

/// Trains a small MLP on two moons, with SAM when `rho > 0`, and returns its
/// decision regions and top Hessian eigenvalue.
pub fn moons_json(rho: f64, epochs: usize, seed: u64, resolution: usize) -> Result<String> {
    if !(2..=200).contains(&resolution) {
        return Err(Error::Config(format!(
            "resolution {resolution} outside [2, 200]"
        )));
    }
    let splits = make_synthetic(SyntheticKind::Moons, 400, 0.2, seed)?;
    let model = Mlp::new(MlpSpec {
        layers: vec![2, 16, 16, 2],
        ..MlpSpec::default()
    })?;
    let tcfg = TrainConfig {
        epochs,
        seed,
        ..TrainConfig::default()
    };
    let sam = SamConfig::with_rho(rho);
    let outcome = train(
        &model,
        model.init(seed),
        &splits,
        &tcfg,
        (rho > 0.0).then_some(&sam),
    )?;
    let extent = [-1.5, 2.5, -1.0, 1.5];
    let mut features = Vec::with_capacity(2 * resolution * resolution);
    for r in 0..resolution {
        let y = extent[3] - (extent[3] - extent[2]) * r as f64 / (resolution - 1) as f64;
        for c in 0..resolution {
            let x = extent[0] + (extent[1] - extent[0]) * c as f64 / (resolution - 1) as f64;
            features.extend([x, y]);
        }
    }
    let grid_batch = Batch::new(features, vec![0; resolution * resolution], 2)?;
    let grid = model
        .predict(&outcome.params, &grid_batch)?
        .expect("an MLP classifies");
    let train = &splits.train;
    let points = (0..train.len())
        .map(|i| {
            let (x, y) = train.example(i);
            (x[0], x[1], y)
        })
        .collect();
    let spectrum = lanczos_spectrum(&model, &outcome.params, &train.batch(), 10, seed)?;
    let last = outcome.log.last().expect("at least one epoch");
    let out = Boundary {
        grid,
        resolution,
        extent,
        points,
        test_err: last.test_err,
        train_loss: last.train_loss,
        lambda_max: spectrum.lambda_max,
    };
    Ok(serde_json::to_string(&out)?)
}

fn js(r: Result<String>) -> std::result::Result<String, JsError> {
    r.map_err(|e| JsError::new(&e.to_string()))
}

#[wasm_bindgen]
pub fn double_well(
    rho: f64,
    lr: f64,
    momentum: f64,
    steps: usize,
    init: f64,
) -> std::result::Result<String, JsError> {
    js(double_well_json(rho, lr, momentum, steps, init))
}

#[wasm_bindgen]
pub fn perturbation(gx: f64, gy: f64, rho: f64, p: &str) -> std::result::Result<String, JsError> {
    js(perturbation_json(gx, gy, rho, p))
}

#[wasm_bindgen]
pub fn moons(
    rho: f64,
    epochs: usize,
    seed: u64,
    resolution: usize,
) -> std::result::Result<String, JsError> {
    js(moons_json(rho, epochs, seed, resolution))
}
