//! Experiment configuration, orchestration and persistence.

pub mod config;
pub mod fit;
pub mod output;

use std::path::PathBuf;
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

pub use config::{load_config, parse_config, ConfigError, ExperimentConfig, ExperimentKind, Violation};
pub use fit::{fit_slope, FitError, SlopeFit, Transform};
pub use output::{render_csv, write_atomic, Cell};

use crate::coefficient::{Bump, Coefficient, CoefficientModel, CoefficientProfile};
use crate::gaussian::{approx_identity_error, probe_field, quad_lambda, GaussianProbe};
use crate::inverse::{
    estimate_power, reconstruct_field, stability_report, NlsOracle, ProbeFamily, SolverSettings,
};
use crate::nls::{born_approximation, duhamel_residual, scattering_map, solve_from_past, SolveSpec, MASS_TOLERANCE};
use crate::special::{lambda_const, lambda_prime_floor, P_MAX, P_MIN};
use crate::spectral::{sobolev_norm, write_field, SpectralGrid};

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("cannot write {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Setup(String),
}

fn setup<E: std::fmt::Display>(context: &str) -> impl FnOnce(E) -> HarnessError + '_ {
    move |e| HarnessError::Setup(format!("{context}: {e}"))
}

/// One named pass/fail verdict.
#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

impl Check {
    fn new(name: &str, pass: bool, detail: String) -> Self {
        Self {
            name: name.to_string(),
            pass,
            detail,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct NamedSlope {
    pub name: String,
    #[serde(flatten)]
    pub fit: SlopeFit,
}

#[derive(Debug, Clone, Serialize)]
pub struct Provenance {
    pub experiment: String,
    pub config_sha256: String,
    pub code_version: String,
    pub workers: usize,
    pub seed: Option<u64>,
    pub started_unix: u64,
    pub finished_unix: u64,
}

/// Everything an experiment produced.
#[derive(Debug, Clone, Serialize)]
pub struct SweepResult {
    pub experiment: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
    pub slopes: Vec<NamedSlope>,
    pub checks: Vec<Check>,
    /// `true` iff every check passed.
    pub pass: bool,
    pub details: Value,
    pub provenance: Provenance,
    pub files: Vec<PathBuf>,
}

impl SweepResult {
    /// Values of a numeric column, skipping rows where it is not a number.
    pub fn column(&self, name: &str) -> Vec<f64> {
        let Some(i) = self.header.iter().position(|h| h == name) else {
            return Vec::new();
        };
        self.rows.iter().filter_map(|r| r.get(i).and_then(Cell::as_f64)).collect()
    }

    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }
}

/// Intermediate output of one experiment before persistence.
#[derive(Default)]
struct Outcome {
    header: Vec<&'static str>,
    rows: Vec<Vec<Cell>>,
    slopes: Vec<NamedSlope>,
    checks: Vec<Check>,
    details: Value,
    extra_files: Vec<(String, Vec<u8>)>,
}

fn now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

/// Worker count: explicit value, else `SCATREC_WORKERS`, else the configuration, else all cores.
pub fn resolve_workers(explicit: Option<usize>, config: &ExperimentConfig) -> usize {
    explicit
        .or_else(|| std::env::var("SCATREC_WORKERS").ok().and_then(|v| v.parse().ok()))
        .or(config.workers)
        .unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1))
        .max(1)
}

/// Runs the configured experiment on `workers` threads and writes
/// `<experiment>.csv` and `<experiment>.json` into the output directory.
pub fn run_experiment(config: &ExperimentConfig, workers: usize) -> Result<SweepResult, HarnessError> {
    let started = now();
    config.check_output().map_err(|v| ConfigError::Invalid(vec![v]))?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(setup("thread pool"))?;
    let outcome = pool.install(|| match config.experiment {
        ExperimentKind::Lambda => run_lambda(config),
        ExperimentKind::ApproxId => run_approx_id(config),
        ExperimentKind::Scatter => run_scatter(config),
        ExperimentKind::BornGap => run_born_gap(config),
        ExperimentKind::Reconstruct => run_reconstruct(config),
        ExperimentKind::EstimateP => run_estimate_p(config),
        ExperimentKind::Stability => run_stability(config),
        ExperimentKind::Convergence => run_convergence(config),
    })?;
    let name = config.experiment.name();
    let dir = config.output_dir();
    let mut result = SweepResult {
        experiment: name.to_string(),
        header: outcome.header.iter().map(|s| s.to_string()).collect(),
        rows: outcome.rows,
        slopes: outcome.slopes,
        pass: outcome.checks.iter().all(|c| c.pass),
        checks: outcome.checks,
        details: outcome.details,
        provenance: Provenance {
            experiment: name.to_string(),
            config_sha256: config.hash.clone(),
            code_version: env!("CARGO_PKG_VERSION").to_string(),
            workers,
            seed: config.seed,
            started_unix: started,
            finished_unix: 0,
        },
        files: Vec::new(),
    };
    let write = |path: PathBuf, bytes: &[u8]| {
        write_atomic(&path, bytes).map_err(|source| HarnessError::Io {
            path: path.clone(),
            source,
        })?;
        Ok::<_, HarnessError>(path)
    };
    let csv_path = dir.join(format!("{name}.csv"));
    result
        .files
        .push(write(csv_path, render_csv(&result.header, &result.rows).as_bytes())?);
    for (file, bytes) in outcome.extra_files {
        result.files.push(write(dir.join(file), &bytes)?);
    }
    let json_path = dir.join(format!("{name}.json"));
    result.files.push(json_path.clone());
    result.provenance.finished_unix = now();
    let text = serde_json::to_string_pretty(&result).map_err(setup("serialize result"))?;
    write(json_path, text.as_bytes())?;
    Ok(result)
}

fn error_row(width: usize, leading: Vec<Cell>, message: String) -> Vec<Cell> {
    let mut row = leading;
    while row.len() + 1 < width {
        row.push(Cell::Num(f64::NAN));
    }
    row.push(Cell::Text(format!("error: {message}")));
    row
}

fn slope_check(out: &mut Outcome, name: &str, points: &[(f64, f64)], min_slope: f64) {
    match fit_slope(points, Transform::LogLog) {
        Ok(fit) => {
            out.checks.push(Check::new(
                name,
                fit.slope >= min_slope,
                format!("fitted slope {:.4} (residual {:.2e}), required >= {min_slope}", fit.slope, fit.residual),
            ));
            out.slopes.push(NamedSlope {
                name: name.to_string(),
                fit,
            });
        }
        Err(e) => out.checks.push(Check::new(name, false, e.to_string())),
    }
}

/// Row cells, the quadrature discrepancy and the (|derivative|, floor) pair.
type LambdaRow = (Vec<Cell>, Option<f64>, Option<(f64, f64)>);

fn run_lambda(cfg: &ExperimentConfig) -> Result<Outcome, HarnessError> {
    let dims = cfg.dims.clone().unwrap_or_else(|| vec![cfg.dimension()]);
    let ps = cfg.p_list.clone().unwrap_or_default();
    let jobs: Vec<(usize, f64)> = dims.iter().flat_map(|&d| ps.iter().map(move |&p| (d, p))).collect();
    let header = vec![
        "d",
        "p",
        "lambda",
        "derivative",
        "lambda_quadrature",
        "relative_difference",
        "derivative_floor",
        "status",
    ];
    let max_rel = cfg.thresholds.max_relative.unwrap_or(1e-6);
    let rows: Vec<LambdaRow> = jobs
        .par_iter()
        .map(|&(d, p)| {
            let value = match lambda_const(d, p) {
                Ok(v) => v,
                Err(e) => return (error_row(header.len(), vec![d.into(), p.into()], e.to_string()), None, None),
            };
            let quad = cfg.quadrature_tol.map(|tol| quad_lambda(d, p, tol));
            let (q, rel) = match quad {
                Some(Ok(q)) => (q, ((q - value.value) / value.value).abs()),
                Some(Err(e)) => {
                    return (error_row(header.len(), vec![d.into(), p.into()], e.to_string()), Some(f64::INFINITY), None)
                }
                None => (f64::NAN, f64::NAN),
            };
            let floor = if d == 3 && (P_MIN..=P_MAX).contains(&p) {
                lambda_prime_floor(p).ok()
            } else {
                None
            };
            let ok_quad = quad.is_none() || rel <= max_rel;
            let ok_floor = floor.is_none_or(|f| value.derivative.abs() >= f);
            let row = vec![
                d.into(),
                p.into(),
                value.value.into(),
                value.derivative.into(),
                q.into(),
                rel.into(),
                floor.unwrap_or(f64::NAN).into(),
                if ok_quad && ok_floor { "ok" } else { "fail" }.into(),
            ];
            (row, quad.map(|_| rel), floor.map(|f| (value.derivative.abs(), f)))
        })
        .collect();
    let mut out = Outcome {
        header,
        ..Default::default()
    };
    let rels: Vec<f64> = rows.iter().filter_map(|r| r.1).collect();
    if cfg.quadrature_tol.is_some() {
        let worst = rels.iter().cloned().fold(0.0, f64::max);
        out.checks.push(Check::new(
            "quadrature agreement",
            rels.len() == jobs.len() && worst <= max_rel,
            format!("max relative difference {worst:.3e}, required <= {max_rel:e}"),
        ));
    }
    let floors: Vec<(f64, f64)> = rows.iter().filter_map(|r| r.2).collect();
    if !floors.is_empty() {
        let violations = floors.iter().filter(|(v, f)| v < f).count();
        out.checks.push(Check::new(
            "derivative floor",
            violations == 0,
            format!("{violations} of {} points below the floor", floors.len()),
        ));
    }
    out.checks.push(Check::new(
        "all rows evaluated",
        rows.iter().all(|r| !matches!(r.0.last(), Some(Cell::Text(s)) if s.starts_with("error"))),
        format!("{} rows", rows.len()),
    ));
    out.rows = rows.into_iter().map(|r| r.0).collect();
    Ok(out)
}

/// The configured coefficient as a trait object, or constant 1 when `default_one`.
fn coefficient(cfg: &ExperimentConfig, default_one: bool) -> Result<Source, HarnessError> {
    if let Some(m) = &cfg.coefficient {
        return Ok(Source::Model(m.clone()));
    }
    if let Some(p) = cfg.coefficient_profile().map_err(HarnessError::Setup)? {
        return Ok(Source::Profile(p));
    }
    if default_one {
        return Ok(Source::Model(CoefficientModel::Constant { value: 1.0 }));
    }
    Err(HarnessError::Setup("no coefficient configured".into()))
}

enum Source {
    Model(CoefficientModel),
    Profile(Arc<CoefficientProfile>),
}

impl Source {
    fn as_dyn(&self) -> &dyn Coefficient {
        match self {
            Self::Model(m) => m,
            Self::Profile(p) => p.as_ref(),
        }
    }

    fn oracle(&self, dim: usize, p: f64, settings: SolverSettings) -> Result<NlsOracle, HarnessError> {
        match self {
            Self::Model(m) => NlsOracle::from_model(dim, p, m.clone(), settings),
            Self::Profile(prof) => NlsOracle::from_profile(p, prof.clone(), settings),
        }
        .map_err(setup("oracle"))
    }
}

fn settings(cfg: &ExperimentConfig) -> Result<SolverSettings, HarnessError> {
    cfg.solver_settings()
        .ok_or_else(|| HarnessError::Setup("no solver settings configured".into()))
}

fn required<T: Copy>(v: Option<T>, name: &str) -> Result<T, HarnessError> {
    v.ok_or_else(|| HarnessError::Setup(format!("missing {name}")))
}

fn run_approx_id(cfg: &ExperimentConfig) -> Result<Outcome, HarnessError> {
    let d = cfg.dimension();
    let p = required(cfg.p, "p")?;
    let source = coefficient(cfg, false)?;
    let center = cfg.center();
    let sigmas = cfg.sigma_list();
    let header = vec!["sigma", "integral", "main_term", "error", "fitted_slope"];
    let results: Vec<Result<_, String>> = sigmas
        .par_iter()
        .map(|&s| {
            let probe = GaussianProbe::new(d, s, center).map_err(|e| e.to_string())?;
            approx_identity_error(source.as_dyn(), &probe, p).map_err(|e| e.to_string())
        })
        .collect();
    let mut out = Outcome {
        header,
        ..Default::default()
    };
    let points: Vec<(f64, f64)> = sigmas
        .iter()
        .zip(&results)
        .filter_map(|(&s, r)| r.as_ref().ok().map(|a| (s, a.error)))
        .collect();
    let min_slope = cfg.thresholds.min_slope.unwrap_or(5.2);
    slope_check(&mut out, "approximate identity rate", &points, min_slope);
    let slope = out.slopes.first().map(|s| s.fit.slope).unwrap_or(f64::NAN);
    for (&s, r) in sigmas.iter().zip(results) {
        out.rows.push(match r {
            Ok(a) => vec![s.into(), a.integral.into(), a.main_term.into(), a.error.into(), slope.into()],
            Err(e) => error_row(out.header.len(), vec![s.into()], e),
        });
    }
    Ok(out)
}

fn run_scatter(cfg: &ExperimentConfig) -> Result<Outcome, HarnessError> {
    let d = cfg.dimension();
    let p = required(cfg.p, "p")?;
    let sigma = required(cfg.sigma, "sigma")?;
    let oracle = coefficient(cfg, false)?.oracle(d, p, settings(cfg)?)?;
    let probe = GaussianProbe::new(d, sigma, cfg.center()).map_err(setup("probe"))?;
    let (field, mut spec) = oracle.prepare(&probe).map_err(setup("probe setup"))?;
    spec.record_strichartz = cfg.record_strichartz;
    let mut record = scattering_map(&field, &spec).map_err(setup("scattering map"))?;
    record.probe = Some(probe);
    let mut out = Outcome {
        header: vec!["sigma", "x1", "x2", "x3", "pairing_re", "pairing_im", "mass_drift", "cauchy_difference", "accepted"],
        ..Default::default()
    };
    let c = probe.center;
    out.rows.push(vec![
        sigma.into(),
        c[0].into(),
        c[1].into(),
        c[2].into(),
        record.pairing.re.into(),
        record.pairing.im.into(),
        record.diagnostics.mass_drift.into(),
        record.diagnostics.cauchy_difference.into(),
        record.accepted.into(),
    ]);
    out.checks.push(Check::new("record accepted", record.accepted, record.flags.join("; ")));
    out.details = json!({ "record": record });
    let record_json = serde_json::to_vec_pretty(&record).map_err(setup("serialize record"))?;
    out.extra_files.push(("record.json".into(), record_json));
    if cfg.save_field {
        let mut bytes = Vec::new();
        write_field(&mut bytes, &record.u_plus).map_err(setup("encode field"))?;
        out.extra_files.push(("u_plus.nlsf".into(), bytes));
    }
    Ok(out)
}

fn run_born_gap(cfg: &ExperimentConfig) -> Result<Outcome, HarnessError> {
    let d = cfg.dimension();
    let p = required(cfg.p, "p")?;
    let oracle = coefficient(cfg, true)?.oracle(d, p, settings(cfg)?)?;
    let sigmas = cfg.sigma_list();
    let center = cfg.center();
    let header = vec![
        "sigma",
        "pairing_re",
        "pairing_im",
        "born_re",
        "born_im",
        "gap",
        "accepted",
        "strichartz_l2",
        "strichartz_gradient",
        "strichartz_critical",
        "status",
    ];
    let results: Vec<Result<Vec<Cell>, String>> = sigmas
        .par_iter()
        .map(|&s| {
            let probe = GaussianProbe::new(d, s, center).map_err(|e| e.to_string())?;
            let (field, mut spec) = oracle.prepare(&probe).map_err(|e| e.to_string())?;
            if spec.dt > 0.25 * s * s * (1.0 + 1e-12) {
                return Err(format!("dt = {} exceeds sigma^2/4 = {}", spec.dt, 0.25 * s * s));
            }
            spec.record_strichartz = cfg.record_strichartz;
            let full = scattering_map(&field, &spec).map_err(|e| e.to_string())?;
            let born = born_approximation(&field, &spec).map_err(|e| e.to_string())?;
            let ratios = full.diagnostics.strichartz;
            let r = |f: fn(&crate::nls::StrichartzRatios) -> f64| ratios.as_ref().map(f).unwrap_or(f64::NAN);
            Ok(vec![
                s.into(),
                full.pairing.re.into(),
                full.pairing.im.into(),
                born.pairing.re.into(),
                born.pairing.im.into(),
                (full.pairing - born.pairing).norm().into(),
                full.accepted.into(),
                r(|x| x.l2).into(),
                r(|x| x.gradient).into(),
                r(|x| x.critical).into(),
                "ok".into(),
            ])
        })
        .collect();
    let mut out = Outcome {
        header,
        ..Default::default()
    };
    for (&s, r) in sigmas.iter().zip(results) {
        out.rows.push(r.unwrap_or_else(|e| error_row(out.header.len(), vec![s.into()], e)));
    }
    let gap_points: Vec<(f64, f64)> = out
        .rows
        .iter()
        .filter_map(|r| Some((r[0].as_f64()?, r[5].as_f64()?)))
        .filter(|(_, g)| g.is_finite())
        .collect();
    let min_slope = cfg.thresholds.min_slope.unwrap_or(6.5);
    slope_check(&mut out, "born gap rate", &gap_points, min_slope);
    if cfg.record_strichartz {
        for (k, name) in [(7, "l2"), (8, "gradient"), (9, "critical")] {
            let vals: Vec<f64> = out.rows.iter().filter_map(|r| r[k].as_f64()).filter(|v| v.is_finite()).collect();
            let (lo, hi) = vals.iter().fold((f64::INFINITY, 0.0f64), |(a, b), &v| (a.min(v), b.max(v)));
            out.checks.push(Check::new(
                &format!("strichartz uniformity ({name})"),
                vals.len() == sigmas.len() && hi <= 2.0 * lo,
                format!("ratios in [{lo:.4}, {hi:.4}], spread {:.3} (limit 2)", hi / lo),
            ));
        }
    }
    Ok(out)
}

fn run_reconstruct(cfg: &ExperimentConfig) -> Result<Outcome, HarnessError> {
    let d = cfg.dimension();
    let p = required(cfg.p, "p")?;
    let source = coefficient(cfg, false)?;
    let oracle = source.oracle(d, p, settings(cfg)?)?;
    let centers = cfg.center_list();
    let mut sigmas = cfg.sigma_list();
    sigmas.sort_by(|a, b| b.total_cmp(a));
    let mut out = Outcome {
        header: vec![
            "sigma",
            "x1",
            "x2",
            "x3",
            "a_hat",
            "a_true",
            "abs_error",
            "mass_drift",
            "cauchy_difference",
            "status",
        ],
        ..Default::default()
    };
    let mut sup_errors = Vec::new();
    for &s in &sigmas {
        let mut sup = 0.0f64;
        let mut failures = 0;
        for (c, r) in centers.iter().zip(reconstruct_field(&oracle, s, &centers)) {
            let truth = source.as_dyn().value(*c);
            let lead = vec![s.into(), c[0].into(), c[1].into(), c[2].into()];
            match r {
                Ok(e) => {
                    let err = (e.a_hat - truth).abs();
                    sup = sup.max(err);
                    let mut row = lead;
                    row.extend([
                        e.a_hat.into(),
                        truth.into(),
                        err.into(),
                        e.mass_drift.into(),
                        e.cauchy_difference.into(),
                        "ok".into(),
                    ]);
                    out.rows.push(row);
                }
                Err(e) => {
                    failures += 1;
                    out.rows.push(error_row(out.header.len(), lead, e.to_string()));
                }
            }
        }
        if failures > 0 {
            sup = f64::INFINITY;
        }
        sup_errors.push((s, sup));
        out.checks.push(Check::new(
            &format!("all centers reconstructed (sigma = {s})"),
            failures == 0,
            format!("{failures} of {} centers failed", centers.len()),
        ));
    }
    if let (Some(limit), Some(&(s, e))) = (cfg.thresholds.max_error, sup_errors.last()) {
        out.checks.push(Check::new(
            "sup error",
            e <= limit,
            format!("sup error {e:.4} at sigma = {s}, required <= {limit}"),
        ));
    }
    if sup_errors.len() >= 2 {
        let decreasing = sup_errors.windows(2).all(|w| w[1].1 < w[0].1);
        out.checks.push(Check::new(
            "error decreases with sigma",
            decreasing,
            format!("sup errors by sigma: {sup_errors:?}"),
        ));
    }
    out.details = json!({ "sup_error": sup_errors });
    Ok(out)
}

fn run_estimate_p(cfg: &ExperimentConfig) -> Result<Outcome, HarnessError> {
    let sigma = required(cfg.sigma, "sigma")?;
    let settings = settings(cfg)?;
    let ps = cfg.p_list.clone().unwrap_or_default();
    let limit = cfg.thresholds.max_error.unwrap_or(0.05);
    let header = vec!["p", "sigma", "lambda", "lambda_hat", "p_hat", "clamp", "abs_error", "status"];
    let results: Vec<Result<Vec<Cell>, String>> = ps
        .par_iter()
        .map(|&p| {
            let oracle = NlsOracle::from_model(3, p, CoefficientModel::Constant { value: 1.0 }, settings)
                .map_err(|e| e.to_string())?;
            let est = estimate_power(&oracle, sigma).map_err(|e| e.to_string())?;
            let lambda = lambda_const(3, p).map_err(|e| e.to_string())?.value;
            let err = (est.p_hat - p).abs();
            Ok(vec![
                p.into(),
                sigma.into(),
                lambda.into(),
                est.lambda_hat.into(),
                est.p_hat.into(),
                est.clamp.map(|c| format!("{c:?}").to_lowercase()).unwrap_or_else(|| "none".into()).into(),
                err.into(),
                if err <= limit { "ok" } else { "fail" }.into(),
            ])
        })
        .collect();
    let mut out = Outcome {
        header,
        ..Default::default()
    };
    for (&p, r) in ps.iter().zip(results) {
        let row = r.unwrap_or_else(|e| error_row(out.header.len(), vec![p.into(), sigma.into()], e));
        let err = row[6].as_f64().unwrap_or(f64::NAN);
        out.checks.push(Check::new(
            &format!("power recovery (p = {p:.4})"),
            err <= limit,
            format!("|p_hat - p| = {err:.4}, required <= {limit}"),
        ));
        out.rows.push(row);
    }
    Ok(out)
}

fn run_stability(cfg: &ExperimentConfig) -> Result<Outcome, HarnessError> {
    let d = cfg.dimension();
    let p = required(cfg.p, "p")?;
    let sigma = required(cfg.sigma, "sigma")?;
    let settings = settings(cfg)?;
    let base = cfg
        .coefficient
        .clone()
        .ok_or_else(|| HarnessError::Setup("stability needs an analytic coefficient".into()))?;
    let pert = cfg
        .perturbation
        .clone()
        .ok_or_else(|| HarnessError::Setup("missing perturbation".into()))?;
    let g_center = pert.center.as_deref().map(|c| cfg.point(c)).unwrap_or([0.0; 3]);
    let family = ProbeFamily {
        dim: d,
        sigmas: vec![sigma],
        centers: cfg.center_list(),
    };
    let oracle_a = NlsOracle::from_model(d, p, base.clone(), settings).map_err(setup("oracle"))?;
    let mut amplitudes = pert.amplitudes.clone();
    amplitudes.sort_by(f64::total_cmp);
    let mut out = Outcome {
        header: vec![
            "h",
            "sup_diff",
            "true_sup_diff",
            "tracking_ratio",
            "op_norm_est",
            "rhs_bound",
            "constant",
            "status",
        ],
        ..Default::default()
    };
    let mut reports = Vec::new();
    for &h in &amplitudes {
        let bump = Bump {
            amplitude: h,
            width: pert.width,
            center: g_center,
        };
        let result = base
            .with_bump(bump)
            .ok_or_else(|| "the coefficient model cannot take a bump".to_string())
            .and_then(|b| NlsOracle::from_model(d, p, b, settings).map_err(|e| e.to_string()))
            .and_then(|ob| stability_report(&oracle_a, &ob, &family, sigma).map_err(|e| e.to_string()));
        match result {
            Ok(r) => {
                out.rows.push(vec![
                    h.into(),
                    r.sup_diff.into(),
                    r.true_sup_diff.into(),
                    (r.sup_diff / r.true_sup_diff).into(),
                    r.op_norm_est.into(),
                    r.rhs_bound.into(),
                    (r.true_sup_diff / r.rhs_bound).into(),
                    "ok".into(),
                ]);
                reports.push((h, r));
            }
            Err(e) => out.rows.push(error_row(out.header.len(), vec![h.into()], e)),
        }
    }
    let complete = reports.len() == amplitudes.len();
    out.checks.push(Check::new(
        "all perturbations evaluated",
        complete,
        format!("{} of {}", reports.len(), amplitudes.len()),
    ));
    let monotone = reports.windows(2).all(|w| w[1].1.op_norm_est > w[0].1.op_norm_est);
    out.checks.push(Check::new(
        "op norm monotone in h",
        complete && monotone,
        format!(
            "op_norm_est by h: {:?}",
            reports.iter().map(|(h, r)| (*h, r.op_norm_est)).collect::<Vec<_>>()
        ),
    ));
    let tolerance = cfg.thresholds.tracking.unwrap_or(0.1);
    let worst = reports
        .iter()
        .map(|(_, r)| (r.sup_diff / r.true_sup_diff - 1.0).abs())
        .fold(0.0, f64::max);
    out.checks.push(Check::new(
        "sup-diff tracks h",
        complete && worst <= tolerance,
        format!("max |sup_diff / sup|a-b| - 1| = {worst:.4}, required <= {tolerance}"),
    ));
    let constant = reports
        .iter()
        .map(|(_, r)| r.true_sup_diff / r.rhs_bound)
        .fold(0.0, f64::max);
    let holds = reports
        .iter()
        .all(|(_, r)| r.true_sup_diff <= constant * r.rhs_bound * (1.0 + 1e-12));
    out.checks.push(Check::new(
        "stability inequality",
        complete && holds && constant.is_finite() && constant > 0.0,
        format!("sup|a-b| <= C rhs with fitted C = {constant:.6}"),
    ));
    let pts: Vec<(f64, f64)> = reports.iter().map(|(_, r)| (r.op_norm_est, r.sup_diff)).collect();
    if let Ok(fit) = fit_slope(&pts, Transform::LogLog) {
        out.slopes.push(NamedSlope {
            name: "sup_diff vs op_norm".into(),
            fit,
        });
    }
    let mut list = Vec::new();
    for (h, mut r) in reports {
        r.slopes = out.slopes.iter().map(|s| (s.name.clone(), s.fit.slope)).collect();
        list.push(json!({ "h": h, "report": r }));
    }
    out.details = json!({ "fitted_constant": constant, "reports": list });
    Ok(out)
}

fn run_convergence(cfg: &ExperimentConfig) -> Result<Outcome, HarnessError> {
    let p = required(cfg.p, "p")?;
    let sigma = required(cfg.sigma, "sigma")?;
    let horizon = required(cfg.horizon, "T")?;
    let g = required(cfg.grid, "grid")?;
    let grid = SpectralGrid::new(g.d, g.n, g.l).map_err(setup("grid"))?;
    let profile = match coefficient(cfg, false)? {
        Source::Model(m) => CoefficientProfile::from_model(&m, grid),
        Source::Profile(prof) => prof.resample(grid),
    }
    .map_err(setup("coefficient"))?;
    let profile = Arc::new(profile);
    let probe = GaussianProbe::new(g.d, sigma, cfg.center()).map_err(setup("probe"))?;
    let field = probe_field(&probe, &grid).map_err(setup("probe"))?;
    let dts = cfg.dt_list.clone().unwrap_or_default();
    let solves: Vec<Result<_, String>> = dts
        .par_iter()
        .map(|&dt| {
            let mut spec = SolveSpec::new(p, profile.clone(), horizon, dt).map_err(|e| e.to_string())?;
            spec.record_duhamel = true;
            spec.monitor_stride = (spec.total_steps() / 20).max(1);
            let traj = solve_from_past(&field, &spec).map_err(|e| e.to_string())?;
            let residual = duhamel_residual(&traj, &spec).map_err(|e| e.to_string())?;
            Ok((traj.mass_drift(), residual, traj.end))
        })
        .collect();
    let mut out = Outcome {
        header: vec!["dt", "mass_drift", "duhamel_residual", "h1_gap_to_next", "richardson_ratio", "status"],
        ..Default::default()
    };
    let mut gaps = vec![f64::NAN; dts.len()];
    for i in 0..dts.len().saturating_sub(1) {
        if let (Ok(a), Ok(b)) = (&solves[i], &solves[i + 1]) {
            let diff = a.2.difference(&b.2).and_then(|df| sobolev_norm(&df, 1.0, false));
            let norm = sobolev_norm(&b.2, 1.0, false);
            if let (Ok(df), Ok(n)) = (diff, norm) {
                gaps[i] = df / n;
            }
        }
    }
    let ratios: Vec<f64> = (0..dts.len()).map(|i| gaps[i] / gaps.get(i + 1).copied().unwrap_or(f64::NAN)).collect();
    for (i, (&dt, s)) in dts.iter().zip(&solves).enumerate() {
        out.rows.push(match s {
            Ok((drift, residual, _)) => vec![
                dt.into(),
                (*drift).into(),
                (*residual).into(),
                gaps[i].into(),
                ratios[i].into(),
                "ok".into(),
            ],
            Err(e) => error_row(out.header.len(), vec![dt.into()], e.clone()),
        });
    }
    let (lo, hi) = (cfg.thresholds.ratio_min.unwrap_or(3.5), cfg.thresholds.ratio_max.unwrap_or(4.5));
    let finite: Vec<f64> = ratios.iter().copied().filter(|r| r.is_finite()).collect();
    out.checks.push(Check::new(
        "richardson ratio",
        !finite.is_empty() && finite.len() + 2 == dts.len() && finite.iter().all(|r| (lo..=hi).contains(r)),
        format!("ratios {finite:?}, required in [{lo}, {hi}]"),
    ));
    let drifts: Vec<f64> = solves.iter().filter_map(|s| s.as_ref().ok().map(|x| x.0)).collect();
    let worst = drifts.iter().cloned().fold(0.0, f64::max);
    out.checks.push(Check::new(
        "mass conservation",
        drifts.len() == dts.len() && worst <= MASS_TOLERANCE,
        format!("max relative drift {worst:.2e}, required <= {MASS_TOLERANCE:e}"),
    ));
    let limit = cfg.thresholds.max_error.unwrap_or(1e-4);
    let finest = dts
        .iter()
        .zip(&solves)
        .filter_map(|(&dt, s)| s.as_ref().ok().map(|x| (dt, x.1)))
        .min_by(|a, b| a.0.total_cmp(&b.0));
    out.checks.push(Check::new(
        "duhamel residual",
        finest.is_some_and(|f| f.1 <= limit),
        format!("residual at the finest dt: {finest:?}, required <= {limit:e}"),
    ));
    Ok(out)
}
