use std::fmt;

use rayon::prelude::*;
use serde::Serialize;

use super::config::{prepare, replica_train_config, ExperimentConfig, Method};
use super::stats::Stat;
use crate::analysis::{
    lanczos_spectrum, pac_bayes_bound, sharpness_report, update_cosine_similarity, BoundReport,
    SharpnessReport, SpectrumReport,
};
use crate::data::bootstrap_relabel;
use crate::error::{config_err, Error, Result};
use crate::optim::{train_observed, EpochRow, MetricsLog, SamConfig};
use crate::tensor::ParamVector;

/// One training run to execute.
#[derive(Debug, Clone)]
struct RunSpec {
    cfg: ExperimentConfig,
    label: String,
    replica: usize,
    sam: Option<SamConfig>,
    epochs: usize,
    /// Index of an earlier run whose final model relabels the training set.
    bootstrap_from: Option<usize>,
}

#[derive(Debug)]
struct RunResult {
    spec: RunSpec,
    seed: u64,
    rows: Vec<EpochRow>,
    params: Option<ParamVector>,
    grad_evals: u64,
    error: Option<Error>,
}

impl RunResult {
    fn last(&self) -> &EpochRow {
        self.rows.last().expect("successful runs log every epoch")
    }

    /// Validation error, or the training loss for models that do not
    /// classify.
    fn selection_score(&self) -> f64 {
        let r = self.last();
        if r.val_err.is_nan() {
            r.train_loss
        } else {
            r.val_err
        }
    }
}

/// A run as recorded in `summary.json`; `rows` is the `[start, end)` range of
/// its lines in `metrics.csv`, counting data lines from 0.
#[derive(Debug, Clone, Serialize)]
pub struct RunRecord {
    pub label: String,
    pub replica: usize,
    pub seed: u64,
    pub rho: Option<f64>,
    pub m: Option<usize>,
    pub label_noise: f64,
    pub epochs: usize,
    pub rows: [usize; 2],
    pub final_metrics: Option<EpochRow>,
    pub grad_evals: u64,
}

/// Training failed; `partial` holds every row logged before the failure.
#[derive(Debug)]
pub struct RunFailure {
    pub error: Error,
    pub partial: MetricsLog,
}

impl fmt::Display for RunFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.error.fmt(f)
    }
}

impl std::error::Error for RunFailure {}

impl From<Error> for RunFailure {
    fn from(error: Error) -> Self {
        Self {
            error,
            partial: MetricsLog::default(),
        }
    }
}

fn execute_one(spec: RunSpec, prior: &[RunResult]) -> RunResult {
    let seed = spec.cfg.replica_seed(spec.replica);
    let mut rows = Vec::new();
    let outcome = (|| {
        let mut prep = prepare(&spec.cfg, spec.replica)?;
        if let Some(src) = spec.bootstrap_from {
            let Some(p) = prior[src].params.as_ref() else {
                return config_err("bootstrap source run failed");
            };
            prep.splits.train = bootstrap_relabel(&prep.model, p, &prep.splits.train)?;
        }
        let tcfg = replica_train_config(&spec.cfg, spec.replica, spec.epochs);
        train_observed(
            &prep.model,
            prep.init,
            &prep.splits,
            &tcfg,
            spec.sam.as_ref(),
            |r| rows.push(*r),
        )
    })();
    match outcome {
        Ok(out) => RunResult {
            spec,
            seed,
            rows,
            grad_evals: out.grad_evals,
            params: Some(out.params),
            error: None,
        },
        Err(e) => RunResult {
            spec,
            seed,
            rows,
            grad_evals: 0,
            params: None,
            error: Some(e),
        },
    }
}

/// Runs `specs` concurrently, appending results to `runs` in spec order.
fn execute(specs: Vec<RunSpec>, runs: &mut Vec<RunResult>) {
    let prior: &[RunResult] = runs;
    let done: Vec<RunResult> = specs
        .into_par_iter()
        .map(|s| execute_one(s, prior))
        .collect();
    runs.extend(done);
}

/// Concatenated rows and per-run records, or the first failure in run order.
fn collect(runs: &mut [RunResult]) -> Result<(MetricsLog, Vec<RunRecord>), RunFailure> {
    let mut log = MetricsLog::default();
    let mut records = Vec::with_capacity(runs.len());
    let mut failure = None;
    for r in runs.iter_mut() {
        let start = log.rows.len();
        log.rows.extend_from_slice(&r.rows);
        if failure.is_none() {
            failure = r.error.take();
        }
        records.push(RunRecord {
            label: r.spec.label.clone(),
            replica: r.spec.replica,
            seed: r.seed,
            rho: r.spec.sam.as_ref().map(|s| s.rho),
            m: r.spec.sam.as_ref().map(|s| s.m),
            label_noise: r.spec.cfg.label_noise,
            epochs: r.spec.epochs,
            rows: [start, log.rows.len()],
            final_metrics: r.rows.last().copied(),
            grad_evals: r.grad_evals,
        });
    }
    match failure {
        Some(error) => Err(RunFailure {
            error,
            partial: log,
        }),
        None => Ok((log, records)),
    }
}

fn spec(cfg: &ExperimentConfig, label: String, replica: usize, sam: Option<SamConfig>) -> RunSpec {
    RunSpec {
        cfg: cfg.clone(),
        label,
        replica,
        sam,
        epochs: cfg.train.epochs,
        bootstrap_from: None,
    }
}

fn push_sgd(cfg: &ExperimentConfig, replica: usize, specs: &mut Vec<RunSpec>) {
    specs.push(spec(cfg, "sgd".into(), replica, None));
    if cfg.budget_match {
        let mut long = spec(cfg, "sgd_2x".into(), replica, None);
        long.epochs *= 2;
        specs.push(long);
    }
}

/// Per replica, the index of the reported SGD run among `candidates`.
fn pick_budget(runs: &[RunResult], candidates: &[usize]) -> usize {
    let mut best = candidates[0];
    for &c in &candidates[1..] {
        if runs[c].selection_score() < runs[best].selection_score() {
            best = c;
        }
    }
    best
}

/// Diagnostics for one replica's final parameters.
#[derive(Debug, Clone, Serialize)]
pub struct ReplicaAnalysis {
    pub replica: usize,
    pub seed: u64,
    pub spectrum: Option<SpectrumReport>,
    pub sharpness: Option<SharpnessReport>,
    pub bound: Option<BoundReport>,
    pub cosine_similarity: Option<f64>,
    /// Test error of the analysed parameters.
    pub test_err: f64,
}

fn analyse(cfg: &ExperimentConfig, run: &RunResult) -> Result<ReplicaAnalysis> {
    let a = &cfg.analyses;
    let prep = prepare(cfg, run.spec.replica)?;
    let params = run
        .params
        .as_ref()
        .expect("only successful runs are analysed");
    let batch = prep.splits.train.batch();
    let rho = a
        .rho
        .unwrap_or_else(|| run.spec.sam.as_ref().map_or(cfg.sam.rho, |s| s.rho));
    let p = cfg.sam.p_norm;
    let spectrum = if a.spectrum {
        let k = a.lanczos_iters.min(params.dim());
        Some(lanczos_spectrum(&prep.model, params, &batch, k, run.seed)?)
    } else {
        None
    };
    let need_sharpness = a.sharpness || a.bound;
    let sharpness = if need_sharpness {
        Some(sharpness_report(
            &prep.model,
            params,
            &batch,
            rho,
            p,
            a.ascent_steps,
        )?)
    } else {
        None
    };
    let bound = if a.bound {
        let s = sharpness.expect("computed above");
        Some(pac_bayes_bound(
            s.base_loss + s.loss_sharpness,
            params.norm_sq(),
            rho,
            params.dim() as u64,
            prep.splits.train.len() as u64,
            a.delta,
        )?)
    } else {
        None
    };
    let cosine_similarity = if a.cosine {
        let sc = SamConfig {
            rho,
            ..cfg.sam.clone()
        };
        Some(update_cosine_similarity(&prep.model, params, &batch, &sc)?)
    } else {
        None
    };
    Ok(ReplicaAnalysis {
        replica: run.spec.replica,
        seed: run.seed,
        spectrum,
        sharpness: if a.sharpness { sharpness } else { None },
        bound,
        cosine_similarity,
        test_err: run.last().test_err,
    })
}

/// Mean validation score of one candidate radius.
#[derive(Debug, Clone, Serialize)]
pub struct RhoScore {
    pub rho: f64,
    pub val_err: Stat,
}

#[derive(Debug, Clone, Serialize)]
pub struct ExperimentSummary {
    pub config: ExperimentConfig,
    pub selected_rho: Option<f64>,
    pub rho_search: Vec<RhoScore>,
    pub runs: Vec<RunRecord>,
    /// Indices into `runs` of the reported run of each replica.
    pub reported: Vec<usize>,
    pub test_err: Stat,
    pub val_err: Stat,
    pub train_err: Stat,
    pub train_loss: Stat,
    pub grad_evals: Stat,
    pub analyses: Vec<ReplicaAnalysis>,
}

#[derive(Debug, Clone)]
pub struct ExperimentReport {
    /// Every run's rows, in the order of `summary.runs`.
    pub metrics: MetricsLog,
    pub summary: ExperimentSummary,
    /// Final parameters of the reported runs, by replica.
    pub params: Vec<ParamVector>,
}

fn stat_of(runs: &[RunResult], idx: &[usize], f: impl Fn(&EpochRow) -> f64) -> Stat {
    Stat::of(&idx.iter().map(|&i| f(runs[i].last())).collect::<Vec<_>>())
}

/// Trains every replica of `cfg`, selects ρ or the SGD budget by validation
/// score, and runs the configured analyses on the reported runs.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport, RunFailure> {
    cfg.validate()?;
    let reps = cfg.replicas;
    let mut specs = Vec::new();
    let grid: Vec<f64> = match (&cfg.method, &cfg.rho_grid) {
        (Method::Sam, Some(g)) => g.clone(),
        (Method::Sam, None) => vec![cfg.sam.rho],
        (Method::Sgd, _) => Vec::new(),
    };
    match cfg.method {
        Method::Sam => {
            for &rho in &grid {
                for i in 0..reps {
                    let sam = SamConfig {
                        rho,
                        ..cfg.sam.clone()
                    };
                    specs.push(spec(cfg, format!("sam_rho_{rho}"), i, Some(sam)));
                }
            }
        }
        Method::Sgd => (0..reps).for_each(|i| push_sgd(cfg, i, &mut specs)),
    }
    let mut runs = Vec::new();
    execute(specs, &mut runs);
    let (metrics, records) = collect(&mut runs)?;

    let mut rho_search: Vec<RhoScore> = Vec::new();
    let (reported, selected_rho) = match cfg.method {
        Method::Sam => {
            let mut best = 0;
            for (g, &rho) in grid.iter().enumerate() {
                let idx: Vec<usize> = (0..reps).map(|i| g * reps + i).collect();
                let scores: Vec<f64> = idx.iter().map(|&i| runs[i].selection_score()).collect();
                let val_err = Stat::of(&scores);
                if g > 0 && val_err.mean < rho_search[best].val_err.mean {
                    best = g;
                }
                rho_search.push(RhoScore { rho, val_err });
            }
            (
                (0..reps).map(|i| best * reps + i).collect(),
                Some(grid[best]),
            )
        }
        Method::Sgd => {
            let per = if cfg.budget_match { 2 } else { 1 };
            let picked: Vec<usize> = (0..reps)
                .map(|i| pick_budget(&runs, &(i * per..(i + 1) * per).collect::<Vec<_>>()))
                .collect();
            (picked, None)
        }
    };
    if cfg.rho_grid.is_none() {
        rho_search.clear();
    }

    let analyses = if cfg.analyses.any() {
        reported
            .par_iter()
            .map(|&i| analyse(cfg, &runs[i]))
            .collect::<Result<Vec<_>>>()
            .map_err(|error| RunFailure {
                error,
                partial: metrics.clone(),
            })?
    } else {
        Vec::new()
    };

    let summary = ExperimentSummary {
        config: cfg.clone(),
        selected_rho,
        rho_search,
        test_err: stat_of(&runs, &reported, |r| r.test_err),
        val_err: stat_of(&runs, &reported, |r| r.val_err),
        train_err: stat_of(&runs, &reported, |r| r.train_err),
        train_loss: stat_of(&runs, &reported, |r| r.train_loss),
        grad_evals: stat_of(&runs, &reported, |r| r.grad_evals as f64),
        runs: records,
        analyses,
        reported: reported.clone(),
    };
    let params = reported
        .iter()
        .map(|&i| runs[i].params.clone().expect("successful"))
        .collect();
    Ok(ExperimentReport {
        metrics,
        summary,
        params,
    })
}

/// Clean-test accuracy of one method at one noise rate.
#[derive(Debug, Clone, Serialize)]
pub struct NoiseCell {
    pub rate: f64,
    pub method: String,
    pub accuracy: Stat,
    /// Trainings behind each replica's number.
    pub trainings: usize,
    pub reported: Vec<usize>,
}

#[derive(Debug, Clone, Serialize)]
pub struct NoiseSuiteSummary {
    pub config: ExperimentConfig,
    pub rates: Vec<f64>,
    pub runs: Vec<RunRecord>,
    pub cells: Vec<NoiseCell>,
}

#[derive(Debug, Clone)]
pub struct NoiseSuiteReport {
    pub metrics: MetricsLog,
    pub summary: NoiseSuiteSummary,
}

pub const NOISE_METHODS: [&str; 3] = ["sgd", "sam", "bootstrap_sam"];

impl NoiseSuiteReport {
    pub fn cell(&self, rate: f64, method: &str) -> Option<&NoiseCell> {
        self.summary
            .cells
            .iter()
            .find(|c| c.rate == rate && c.method == method)
    }

    /// Rows are methods, columns are noise rates.
    pub fn table_csv(&self) -> String {
        let mut out = String::from("method");
        for r in &self.summary.rates {
            out.push_str(&format!(",{r}_mean,{r}_ci"));
        }
        out.push('\n');
        for m in NOISE_METHODS {
            out.push_str(m);
            for &r in &self.summary.rates {
                let c = self.cell(r, m).expect("every cell is filled");
                out.push_str(&format!(
                    ",{},{}",
                    c.accuracy.mean,
                    fmt_opt(c.accuracy.ci_half_width)
                ));
            }
            out.push('\n');
        }
        out
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// For each noise rate: SGD (budget-matched if configured), SAM, and SAM
/// retrained on the labels predicted by the SAM model.
pub fn run_noise_suite(
    cfg: &ExperimentConfig,
    rates: &[f64],
) -> Result<NoiseSuiteReport, RunFailure> {
    cfg.validate()?;
    if rates.is_empty() {
        return Err(Error::Config("no noise rates given".into()).into());
    }
    if let Some(bad) = rates.iter().find(|r| !(0.0..=1.0).contains(*r)) {
        return Err(Error::Config(format!("noise rate {bad} outside [0, 1]")).into());
    }
    if cfg.rho_grid.is_some() {
        return Err(
            Error::Config("the noise suite trains with sam.rho; drop rho_grid".into()).into(),
        );
    }
    let reps = cfg.replicas;
    let per_sgd = if cfg.budget_match { 2 } else { 1 };
    let mut specs = Vec::new();
    let mut sgd_idx = Vec::new();
    let mut sam_idx = Vec::new();
    for &rate in rates {
        let c = ExperimentConfig {
            label_noise: rate,
            ..cfg.clone()
        };
        let mut s = Vec::new();
        let mut m = Vec::new();
        for i in 0..reps {
            s.push((specs.len()..specs.len() + per_sgd).collect::<Vec<_>>());
            push_sgd(&c, i, &mut specs);
            m.push(specs.len());
            specs.push(spec(&c, "sam".into(), i, Some(cfg.sam.clone())));
        }
        sgd_idx.push(s);
        sam_idx.push(m);
    }
    let mut runs = Vec::new();
    execute(specs, &mut runs);
    let mut boot = Vec::new();
    let mut boot_idx = Vec::new();
    let offset = runs.len();
    for (ri, _) in rates.iter().enumerate() {
        let mut b = Vec::new();
        for i in 0..reps {
            let src = sam_idx[ri][i];
            let mut s = runs[src].spec.clone();
            s.label = "bootstrap_sam".into();
            s.bootstrap_from = Some(src);
            b.push(offset + boot.len());
            boot.push(s);
        }
        boot_idx.push(b);
    }
    execute(boot, &mut runs);
    let (metrics, records) = collect(&mut runs)?;

    let acc = |idx: &[usize]| {
        Stat::of(
            &idx.iter()
                .map(|&i| 1.0 - runs[i].last().test_err)
                .collect::<Vec<_>>(),
        )
    };
    let mut cells = Vec::new();
    for (ri, &rate) in rates.iter().enumerate() {
        let sgd: Vec<usize> = sgd_idx[ri].iter().map(|c| pick_budget(&runs, c)).collect();
        cells.push(NoiseCell {
            rate,
            method: "sgd".into(),
            accuracy: acc(&sgd),
            trainings: 1,
            reported: sgd,
        });
        cells.push(NoiseCell {
            rate,
            method: "sam".into(),
            accuracy: acc(&sam_idx[ri]),
            trainings: 1,
            reported: sam_idx[ri].clone(),
        });
        // Stage one is the SAM run above; stage two retrains from scratch.
        cells.push(NoiseCell {
            rate,
            method: "bootstrap_sam".into(),
            accuracy: acc(&boot_idx[ri]),
            trainings: 2,
            reported: boot_idx[ri].clone(),
        });
    }
    Ok(NoiseSuiteReport {
        metrics,
        summary: NoiseSuiteSummary {
            config: cfg.clone(),
            rates: rates.to_vec(),
            runs: records,
            cells,
        },
    })
}

/// Test error of SAM with sub-batch size `m` and radius `rho`.
#[derive(Debug, Clone, Serialize)]
pub struct SweepCell {
    pub m: usize,
    pub rho: f64,
    pub test_err: Stat,
    pub reported: Vec<usize>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepSummary {
    pub config: ExperimentConfig,
    pub m_values: Vec<usize>,
    pub rhos: Vec<f64>,
    pub runs: Vec<RunRecord>,
    pub cells: Vec<SweepCell>,
}

#[derive(Debug, Clone)]
pub struct SweepReport {
    pub metrics: MetricsLog,
    pub summary: SweepSummary,
}

impl SweepReport {
    pub fn cell(&self, m: usize, rho: f64) -> Option<&SweepCell> {
        self.summary.cells.iter().find(|c| c.m == m && c.rho == rho)
    }

    /// Rows are values of `m`, columns are radii.
    pub fn table_csv(&self) -> String {
        let mut out = String::from("m");
        for r in &self.summary.rhos {
            out.push_str(&format!(",{r}_mean,{r}_ci"));
        }
        out.push('\n');
        for &m in &self.summary.m_values {
            out.push_str(&m.to_string());
            for &r in &self.summary.rhos {
                let c = self.cell(m, r).expect("every cell is filled");
                out.push_str(&format!(
                    ",{},{}",
                    c.test_err.mean,
                    fmt_opt(c.test_err.ci_half_width)
                ));
            }
            out.push('\n');
        }
        out
    }
}

/// SAM test error for every `(m, ρ)` pair, ρ from `rho_grid` or `sam.rho`.
pub fn run_msharpness_sweep(
    cfg: &ExperimentConfig,
    m_values: &[usize],
) -> Result<SweepReport, RunFailure> {
    cfg.validate()?;
    if m_values.is_empty() {
        return Err(Error::Config("no m values given".into()).into());
    }
    let b = cfg.train.batch_size;
    if let Some(bad) = m_values.iter().find(|&&m| m == 0 || b % m != 0) {
        return Err(Error::Config(format!("m = {bad} does not divide batch size {b}")).into());
    }
    let rhos = cfg.rho_grid.clone().unwrap_or_else(|| vec![cfg.sam.rho]);
    let reps = cfg.replicas;
    let mut specs = Vec::new();
    let mut cells = Vec::new();
    for &m in m_values {
        for &rho in &rhos {
            let sam = SamConfig {
                rho,
                m,
                ..cfg.sam.clone()
            };
            let idx: Vec<usize> = (specs.len()..specs.len() + reps).collect();
            for i in 0..reps {
                specs.push(spec(
                    cfg,
                    format!("sam_m_{m}_rho_{rho}"),
                    i,
                    Some(sam.clone()),
                ));
            }
            cells.push((m, rho, idx));
        }
    }
    let mut runs = Vec::new();
    execute(specs, &mut runs);
    let (metrics, records) = collect(&mut runs)?;
    let cells = cells
        .into_iter()
        .map(|(m, rho, idx)| SweepCell {
            m,
            rho,
            test_err: stat_of(&runs, &idx, |r| r.test_err),
            reported: idx,
        })
        .collect();
    Ok(SweepReport {
        metrics,
        summary: SweepSummary {
            config: cfg.clone(),
            m_values: m_values.to_vec(),
            rhos,
            runs: records,
            cells,
        },
    })
}
