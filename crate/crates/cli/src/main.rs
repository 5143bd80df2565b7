mod args;

use std::path::Path;
use std::process::ExitCode;

use clap::Parser;

use sharpmin::analysis::pac_bayes_bound;
use sharpmin::harness::{
    run_experiment, run_msharpness_sweep, run_noise_suite, write_experiment, write_json_file,
    write_noise_suite, write_partial, write_sweep, ExperimentConfig, RunFailure, Stat, SEED_ENV,
};
use sharpmin::{Error, Result};

use args::{Cli, Command, DirectBound, ExperimentArgs};

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => 2,
        Error::Divergence { .. } => 3,
        _ => 1,
    }
}

fn fmt_stat(s: &Stat) -> String {
    match s.ci_half_width {
        Some(h) => format!("{:.4} ± {:.4} (n={})", s.mean, h, s.n),
        None => format!("{:.4} (n={})", s.mean, s.n),
    }
}

/// Flushes the partial log and passes the error on.
fn fail(out: &Path, f: RunFailure) -> Result<()> {
    write_partial(&f, out)?;
    eprintln!(
        "partial metrics written to {}",
        out.join("metrics.csv").display()
    );
    Err(f.error)
}

fn experiment(out: &Path, cfg: ExperimentConfig) -> Result<()> {
    let report = match run_experiment(&cfg) {
        Ok(r) => r,
        Err(f) => return fail(out, f),
    };
    write_experiment(&report, out)?;
    let s = &report.summary;
    println!("test_err {}", fmt_stat(&s.test_err));
    if let Some(rho) = s.selected_rho {
        println!("rho {rho}");
    }
    let spectra: Vec<f64> = s
        .analyses
        .iter()
        .filter_map(|a| a.spectrum.as_ref().map(|r| r.lambda_max))
        .collect();
    if !spectra.is_empty() {
        println!("lambda_max {}", fmt_stat(&Stat::of(&spectra)));
    }
    let sharp: Vec<f64> = s
        .analyses
        .iter()
        .filter_map(|a| a.sharpness.map(|r| r.loss_sharpness))
        .collect();
    if !sharp.is_empty() {
        println!("sharpness {}", fmt_stat(&Stat::of(&sharp)));
    }
    let bounds: Vec<f64> = s
        .analyses
        .iter()
        .filter_map(|a| a.bound.map(|b| b.total))
        .collect();
    if !bounds.is_empty() {
        println!("bound {}", fmt_stat(&Stat::of(&bounds)));
    }
    println!("wrote {}", out.display());
    Ok(())
}

fn direct_bound(exp: &ExperimentArgs, d: &DirectBound, max_loss: f64) -> Result<()> {
    let missing = |what: &str| Error::Config(format!("direct bound evaluation needs --{what}"));
    let rho = exp.rho.ok_or_else(|| missing("rho"))?;
    let report = pac_bayes_bound(
        max_loss,
        d.w_norm_sq.ok_or_else(|| missing("w-norm-sq"))?,
        rho,
        d.k.ok_or_else(|| missing("k"))?,
        d.n_train.ok_or_else(|| missing("n-train"))?,
        exp.delta.unwrap_or(0.05),
    )?;
    let path = exp.out.join("bound.json");
    write_json_file(&path, &report)?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    println!("wrote {}", path.display());
    Ok(())
}

fn run(command: Command) -> Result<()> {
    let env = std::env::var(SEED_ENV).ok();
    let env = env.as_deref();
    match command {
        Command::Train(exp) => experiment(&exp.out, exp.build(env)?),
        Command::Spectrum(exp) => {
            let mut cfg = exp.build(env)?;
            cfg.analyses.spectrum = true;
            experiment(&exp.out, cfg)
        }
        Command::Sharpness(exp) => {
            let mut cfg = exp.build(env)?;
            cfg.analyses.sharpness = true;
            experiment(&exp.out, cfg)
        }
        Command::Bound { exp, direct } => match direct.max_loss {
            Some(max_loss) => direct_bound(&exp, &direct, max_loss),
            None => {
                let mut cfg = exp.build(env)?;
                cfg.analyses.bound = true;
                experiment(&exp.out, cfg)
            }
        },
        Command::NoiseSuite { exp, rates } => {
            let cfg = exp.build(env)?;
            match run_noise_suite(&cfg, &rates) {
                Ok(r) => {
                    write_noise_suite(&r, &exp.out)?;
                    print!("{}", r.table_csv());
                    println!("wrote {}", exp.out.display());
                    Ok(())
                }
                Err(f) => fail(&exp.out, f),
            }
        }
        Command::MsharpSweep { exp, m_values } => {
            let cfg = exp.build(env)?;
            match run_msharpness_sweep(&cfg, &m_values) {
                Ok(r) => {
                    write_sweep(&r, &exp.out)?;
                    print!("{}", r.table_csv());
                    println!("wrote {}", exp.out.display());
                    Ok(())
                }
                Err(f) => fail(&exp.out, f),
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
