use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde_json::json;

use scatrec::coefficient::{Coefficient, CoefficientModel, CoefficientProfile};
use scatrec::gaussian::{approx_identity_error, ApproxIdentity, GaussianProbe};
use scatrec::harness::{fit_slope, load_config, render_csv, resolve_workers, run_experiment, Cell, ConfigError, Transform};
use scatrec::special::lambda_const;
use scatrec::spectral::load_field;

/// Exit status when a run completes but a check fails.
const EXIT_CHECK_FAILED: u8 = 1;
const EXIT_INVALID_CONFIG: u8 = 2;
const EXIT_RUNTIME: u8 = 3;

#[derive(Parser)]
#[command(name = "scatrec", version, about = "Scattering map experiments for the inhomogeneous NLS")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct RunArgs {
    /// JSON experiment configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Worker threads; falls back to SCATREC_WORKERS, then the configuration.
    #[arg(long)]
    workers: Option<usize>,
    /// Output directory, overriding the configuration.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Kernel normalization; inline with --d/--p or a sweep with --config.
    Lambda {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, default_value_t = 3)]
        d: usize,
        #[arg(long, num_args = 1.., value_delimiter = ',')]
        p: Vec<f64>,
        /// Include the derivative in p.
        #[arg(long)]
        derivative: bool,
    },
    /// Approximate-identity defect; inline with --p/--sigma-list/--coeff or with --config.
    ApproxId {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        p: Option<f64>,
        #[arg(long, value_delimiter = ',')]
        sigma_list: Vec<f64>,
        /// Coefficient as a JSON model (.json) or a binary field file.
        #[arg(long)]
        coeff: Option<PathBuf>,
        #[arg(long, default_value_t = 3)]
        d: usize,
        #[arg(long, value_delimiter = ',')]
        x0: Vec<f64>,
    },
    /// One scattering-map solve.
    Scatter(RunArgs),
    /// Nonlinear versus first-order pairing across probe widths.
    BornGap(RunArgs),
    /// Pointwise coefficient recovery.
    Reconstruct(RunArgs),
    /// Power recovery from a constant coefficient.
    EstimateP(RunArgs),
    /// Coefficient perturbation sweep.
    Stability(RunArgs),
    /// Time-step refinement study.
    Convergence(RunArgs),
    /// Validate a configuration without running it.
    Check {
        #[arg(long)]
        config: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            if let Some(ConfigError::Invalid(list)) = e.downcast_ref::<ConfigError>() {
                eprintln!("invalid configuration:");
                for v in list {
                    eprintln!("  {}: {}", if v.path.is_empty() { "/" } else { &v.path }, v.message);
                }
                return ExitCode::from(EXIT_INVALID_CONFIG);
            }
            if e.downcast_ref::<ConfigError>().is_some() {
                eprintln!("error: {e:#}");
                return ExitCode::from(EXIT_INVALID_CONFIG);
            }
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_RUNTIME)
        }
    }
}

fn dispatch(command: Command) -> anyhow::Result<ExitCode> {
    match command {
        Command::Lambda { run, d, p, derivative } => match run.config {
            Some(_) => run_config(&run),
            None => inline_lambda(d, &p, derivative),
        },
        Command::ApproxId {
            run,
            p,
            sigma_list,
            coeff,
            d,
            x0,
        } => match run.config {
            Some(_) => run_config(&run),
            None => inline_approx_id(d, p, &sigma_list, coeff.as_deref(), &x0),
        },
        Command::Scatter(run)
        | Command::BornGap(run)
        | Command::Reconstruct(run)
        | Command::EstimateP(run)
        | Command::Stability(run)
        | Command::Convergence(run) => run_config(&run),
        Command::Check { config } => {
            let cfg = load_config(&config)?;
            println!("{}: valid {} configuration", config.display(), cfg.experiment.name());
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn run_config(run: &RunArgs) -> anyhow::Result<ExitCode> {
    let path = run.config.as_deref().context("--config is required")?;
    let mut cfg = load_config(path)?;
    if let Some(out) = &run.out {
        let cwd = std::env::current_dir()?;
        cfg.output.dir = Some(cwd.join(out));
    }
    let workers = resolve_workers(run.workers, &cfg);
    let result = run_experiment(&cfg, workers)?;
    for check in &result.checks {
        println!("[{}] {}: {}", if check.pass { "PASS" } else { "FAIL" }, check.name, check.detail);
    }
    for file in &result.files {
        println!("wrote {}", file.display());
    }
    Ok(if result.pass {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(EXIT_CHECK_FAILED)
    })
}

fn inline_lambda(d: usize, ps: &[f64], derivative: bool) -> anyhow::Result<ExitCode> {
    if ps.is_empty() {
        bail!("give --p or --config");
    }
    let values: Vec<_> = ps
        .iter()
        .map(|&p| {
            let v = lambda_const(d, p)?;
            Ok(if derivative {
                json!({ "d": d, "p": p, "lambda": v.value, "derivative": v.derivative })
            } else {
                json!({ "d": d, "p": p, "lambda": v.value })
            })
        })
        .collect::<anyhow::Result<_>>()?;
    let out = if values.len() == 1 { values[0].clone() } else { json!(values) };
    println!("{}", serde_json::to_string_pretty(&out)?);
    Ok(ExitCode::SUCCESS)
}

fn load_coefficient(path: &Path) -> anyhow::Result<Box<dyn Coefficient>> {
    if path.extension().is_some_and(|e| e == "json") {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let model: CoefficientModel =
            serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        model.validate()?;
        return Ok(Box::new(model));
    }
    let field = load_field(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(Box::new(CoefficientProfile::from_field(&field, None)?))
}

fn inline_approx_id(
    d: usize,
    p: Option<f64>,
    sigmas: &[f64],
    coeff: Option<&Path>,
    x0: &[f64],
) -> anyhow::Result<ExitCode> {
    let p = p.context("give --p or --config")?;
    let coeff = load_coefficient(coeff.context("give --coeff or --config")?)?;
    if sigmas.is_empty() {
        bail!("give --sigma-list");
    }
    let mut center = [0.0; 3];
    for (c, v) in center.iter_mut().zip(x0) {
        *c = *v;
    }
    let results: Vec<ApproxIdentity> = sigmas
        .par_iter()
        .map(|&s| {
            let probe = GaussianProbe::new(d, s, center)?;
            Ok(approx_identity_error(coeff.as_ref(), &probe, p)?)
        })
        .collect::<anyhow::Result<_>>()?;
    let points: Vec<(f64, f64)> = sigmas.iter().zip(&results).map(|(&s, a)| (s, a.error)).collect();
    let slope = fit_slope(&points, Transform::LogLog).map(|f| f.slope).unwrap_or(f64::NAN);
    let rows: Vec<Vec<Cell>> = sigmas
        .iter()
        .zip(&results)
        .map(|(&s, a)| vec![s.into(), a.integral.into(), a.main_term.into(), a.error.into(), slope.into()])
        .collect();
    let header: Vec<String> = ["sigma", "integral", "main_term", "error", "fitted_slope"].map(String::from).to_vec();
    print!("{}", render_csv(&header, &rows));
    Ok(ExitCode::SUCCESS)
}
