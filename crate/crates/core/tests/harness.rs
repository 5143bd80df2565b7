use std::fs;
use std::path::Path;

use sharpmin::data::SyntheticKind;
use sharpmin::harness::{
    run_experiment, run_msharpness_sweep, run_noise_suite, write_experiment, write_noise_suite,
    write_partial, write_sweep, DatasetSpec, ExperimentConfig, Method, ModelSpec,
};
use sharpmin::optim::{SamConfig, TrainConfig, METRICS_HEADER};
use sharpmin::Error;

fn small(method: Method) -> ExperimentConfig {
    ExperimentConfig {
        dataset: DatasetSpec::Synthetic {
            shape: SyntheticKind::Blobs,
            n: 200,
            noise: 0.8,
            seed: 3,
            nuisance_dims: 0,
        },
        model: ModelSpec::Mlp {
            hidden: vec![8],
            activation: Default::default(),
            loss: Default::default(),
            label_smoothing: 0.0,
        },
        train: TrainConfig {
            epochs: 4,
            batch_size: 16,
            lr: 0.05,
            seed: 11,
            ..TrainConfig::default()
        },
        method,
        sam: SamConfig::with_rho(0.05),
        replicas: 2,
        ..ExperimentConfig::default()
    }
}

fn read_all(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            (
                p.file_name().unwrap().to_string_lossy().into_owned(),
                fs::read(&p).unwrap(),
            )
        })
        .collect();
    files.sort();
    files
}

#[test]
fn smoke_run_writes_metrics_and_summary() {
    let mut cfg = small(Method::Sgd);
    cfg.replicas = 1;
    let report = run_experiment(&cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_experiment(&report, dir.path()).unwrap();
    let csv = fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some(METRICS_HEADER));
    assert_eq!(lines.count(), cfg.train.epochs);
    let summary: serde_json::Value =
        serde_json::from_slice(&fs::read(dir.path().join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["test_err"]["n"], 1);
    assert!(!dir.path().join("spectrum.json").exists());
}

#[test]
fn grad_evals_strictly_increase_within_each_run() {
    let report = run_experiment(&small(Method::Sam)).unwrap();
    for run in &report.summary.runs {
        let rows = &report.metrics.rows[run.rows[0]..run.rows[1]];
        assert!(rows.windows(2).all(|w| w[1].grad_evals > w[0].grad_evals));
        assert!(rows.windows(2).all(|w| w[1].step > w[0].step));
    }
}

#[test]
fn summary_numbers_trace_to_metric_rows() {
    let report = run_experiment(&small(Method::Sam)).unwrap();
    let s = &report.summary;
    let finals: Vec<_> = s
        .reported
        .iter()
        .map(|&i| {
            let run = &s.runs[i];
            let row = report.metrics.rows[run.rows[1] - 1];
            assert_eq!(Some(row), run.final_metrics);
            row
        })
        .collect();
    let mean = finals.iter().map(|r| r.test_err).sum::<f64>() / finals.len() as f64;
    assert_eq!(s.test_err.mean, mean);
    assert_eq!(
        s.grad_evals.mean,
        finals.iter().map(|r| r.grad_evals as f64).sum::<f64>() / 2.0
    );
}

#[test]
fn identical_configs_give_identical_bytes() {
    let mut cfg = small(Method::Sam);
    cfg.sam.m = 4;
    cfg.analyses.spectrum = true;
    cfg.analyses.bound = true;
    cfg.analyses.sharpness = true;
    cfg.analyses.lanczos_iters = 8;
    let mut outputs = Vec::new();
    for parallel in [false, false, true] {
        cfg.sam.parallel = parallel;
        let dir = tempfile::tempdir().unwrap();
        write_experiment(&run_experiment(&cfg).unwrap(), dir.path()).unwrap();
        outputs.push(read_all(dir.path()));
    }
    let names: Vec<_> = outputs[0].iter().map(|f| f.0.as_str()).collect();
    assert_eq!(
        names,
        ["bound.json", "metrics.csv", "spectrum.json", "summary.json"]
    );
    assert_eq!(outputs[0], outputs[1]);
    assert_eq!(outputs[0], outputs[2]);
}

#[test]
fn rho_grid_selects_the_validation_argmin() {
    let mut cfg = small(Method::Sam);
    cfg.rho_grid = Some(vec![0.0, 0.05, 2.0]);
    let s = run_experiment(&cfg).unwrap().summary;
    assert_eq!(s.rho_search.len(), 3);
    let best = s.rho_search.iter().fold(&s.rho_search[0], |b, r| {
        if r.val_err.mean < b.val_err.mean {
            r
        } else {
            b
        }
    });
    assert_eq!(s.selected_rho, Some(best.rho));
    for &i in &s.reported {
        assert_eq!(s.runs[i].rho, Some(best.rho));
    }
}

#[test]
fn budget_matched_sgd_logs_the_same_gradient_evaluations_as_sam() {
    let sam = run_experiment(&small(Method::Sam)).unwrap();
    let mut cfg = small(Method::Sgd);
    cfg.budget_match = true;
    let sgd = run_experiment(&cfg).unwrap();
    let long: Vec<_> = sgd
        .summary
        .runs
        .iter()
        .filter(|r| r.label == "sgd_2x")
        .collect();
    assert_eq!(long.len(), cfg.replicas);
    for (l, s) in long.iter().zip(&sam.summary.runs) {
        assert_eq!(l.epochs, 2 * s.epochs);
        assert_eq!(l.grad_evals, s.grad_evals);
    }
}

#[test]
fn noise_suite_layout_and_stage_count() {
    let mut cfg = small(Method::Sam);
    cfg.budget_match = true;
    let report = run_noise_suite(&cfg, &[0.0, 0.4]).unwrap();
    assert_eq!(report.summary.cells.len(), 6);
    for rate in [0.0, 0.4] {
        assert_eq!(report.cell(rate, "bootstrap_sam").unwrap().trainings, 2);
        assert_eq!(report.cell(rate, "sam").unwrap().trainings, 1);
    }
    let table = report.table_csv();
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines[0], "method,0_mean,0_ci,0.4_mean,0.4_ci");
    assert_eq!(lines.len(), 4);
    assert!(
        lines[1].starts_with("sgd,")
            && lines[2].starts_with("sam,")
            && lines[3].starts_with("bootstrap_sam,")
    );
    let dir = tempfile::tempdir().unwrap();
    write_noise_suite(&report, dir.path()).unwrap();
    assert!(dir.path().join("noise_suite.csv").exists());
    assert!(dir.path().join("metrics.csv").exists());
}

#[test]
fn noise_suite_rejects_bad_input() {
    let cfg = small(Method::Sam);
    assert!(matches!(
        run_noise_suite(&cfg, &[1.5]).unwrap_err().error,
        Error::Config(_)
    ));
    assert!(matches!(
        run_noise_suite(&cfg, &[]).unwrap_err().error,
        Error::Config(_)
    ));
}

#[test]
fn sweep_with_full_batch_matches_plain_sam_bitwise() {
    let cfg = small(Method::Sam);
    let plain = run_experiment(&cfg).unwrap();
    let sweep = run_msharpness_sweep(&cfg, &[cfg.train.batch_size]).unwrap();
    assert_eq!(plain.metrics.rows, sweep.metrics.rows);
}

#[test]
fn sweep_table_shape_and_divisibility() {
    let mut cfg = small(Method::Sam);
    cfg.replicas = 1;
    cfg.train.epochs = 2;
    cfg.rho_grid = Some(vec![0.01, 0.1]);
    let b = cfg.train.batch_size;
    let sweep = run_msharpness_sweep(&cfg, &[1, b / 2, b]).unwrap();
    let table = sweep.table_csv();
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines.len(), 4);
    assert_eq!(lines[0], "m,0.01_mean,0.01_ci,0.1_mean,0.1_ci");
    assert!(lines[1..].iter().all(|l| l.split(',').count() == 5));
    let dir = tempfile::tempdir().unwrap();
    write_sweep(&sweep, dir.path()).unwrap();
    assert!(dir.path().join("msharpness.csv").exists());
    let err = run_msharpness_sweep(&cfg, &[3]).unwrap_err();
    assert!(matches!(err.error, Error::Config(_)));
}

#[test]
fn divergence_keeps_partial_logs() {
    let mut cfg = small(Method::Sgd);
    cfg.train.lr = 1e4;
    cfg.train.momentum = 0.0;
    cfg.model = ModelSpec::Mlp {
        hidden: vec![8],
        activation: Default::default(),
        loss: sharpmin::model::LossKind::Mse,
        label_smoothing: 0.0,
    };
    let failure = run_experiment(&cfg).unwrap_err();
    assert!(
        matches!(failure.error, Error::Divergence { .. }),
        "{:?}",
        failure.error
    );
    let dir = tempfile::tempdir().unwrap();
    write_partial(&failure, dir.path()).unwrap();
    let csv = fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    assert!(csv.starts_with(METRICS_HEADER));
}

#[test]
fn config_round_trips_through_json() {
    let cfg = small(Method::Sam);
    let text = serde_json::to_string(&cfg).unwrap();
    let back: ExperimentConfig = serde_json::from_str(&text).unwrap();
    assert_eq!(cfg, back);
    let empty: ExperimentConfig = serde_json::from_str("{}").unwrap();
    assert_eq!(empty, ExperimentConfig::default());
}

#[test]
fn bound_dominates_held_out_error() {
    let mut cfg = small(Method::Sam);
    cfg.replicas = 10;
    cfg.analyses.bound = true;
    let s = run_experiment(&cfg).unwrap().summary;
    let held = s
        .analyses
        .iter()
        .filter(|a| a.bound.unwrap().total >= a.test_err)
        .count();
    assert!(
        held * 100 >= 95 * s.analyses.len(),
        "{held}/{}",
        s.analyses.len()
    );
}

#[test]
fn clean_noise_suite_methods_agree_within_ci() {
    let mut cfg = small(Method::Sam);
    cfg.replicas = 5;
    cfg.budget_match = true;
    let r = run_noise_suite(&cfg, &[0.0]).unwrap();
    let sam = r.cell(0.0, "sam").unwrap().accuracy;
    for m in ["sgd", "bootstrap_sam"] {
        let other = r.cell(0.0, m).unwrap().accuracy;
        let tol = sam.half_width() + other.half_width();
        assert!(
            (sam.mean - other.mean).abs() <= tol.max(0.02),
            "{m}: {other:?} vs {sam:?}"
        );
    }
}
