use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::coefficient::{CoefficientModel, CoefficientProfile};
use crate::inverse::{GridPolicy, SolverSettings, TimePolicy};
use crate::spectral::{load_field, SpectralGrid};

/// The published configuration schema.
pub const CONFIG_SCHEMA: &str = include_str!("../../schema/config.schema.json");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Lambda,
    ApproxId,
    Scatter,
    BornGap,
    Reconstruct,
    EstimateP,
    Stability,
    Convergence,
}

impl ExperimentKind {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Lambda => "lambda",
            Self::ApproxId => "approx-id",
            Self::Scatter => "scatter",
            Self::BornGap => "born-gap",
            Self::Reconstruct => "reconstruct",
            Self::EstimateP => "estimate-p",
            Self::Stability => "stability",
            Self::Convergence => "convergence",
        }
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub d: usize,
    pub n: usize,
    #[serde(rename = "L")]
    pub l: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Lattice {
    pub min: f64,
    pub max: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Perturbation {
    pub amplitudes: Vec<f64>,
    pub width: f64,
    #[serde(default)]
    pub center: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Thresholds {
    pub min_slope: Option<f64>,
    pub max_error: Option<f64>,
    pub max_relative: Option<f64>,
    pub ratio_min: Option<f64>,
    pub ratio_max: Option<f64>,
    pub tracking: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    pub dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    #[serde(default)]
    pub dim: Option<usize>,
    #[serde(default)]
    pub dims: Option<Vec<usize>>,
    #[serde(default)]
    pub p: Option<f64>,
    #[serde(default)]
    pub p_list: Option<Vec<f64>>,
    #[serde(default)]
    pub sigma: Option<f64>,
    #[serde(default)]
    pub sigmas: Option<Vec<f64>>,
    #[serde(default)]
    pub x0: Option<Vec<f64>>,
    #[serde(default)]
    pub centers: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub lattice: Option<Lattice>,
    #[serde(default)]
    pub coefficient: Option<CoefficientModel>,
    #[serde(default)]
    pub coeff_file: Option<PathBuf>,
    #[serde(default)]
    pub grid: Option<GridSpec>,
    #[serde(default, rename = "T")]
    pub horizon: Option<f64>,
    #[serde(default)]
    pub dt: Option<f64>,
    #[serde(default)]
    pub dt_list: Option<Vec<f64>>,
    #[serde(default)]
    pub solver: Option<SolverSettings>,
    #[serde(default)]
    pub perturbation: Option<Perturbation>,
    #[serde(default)]
    pub quadrature_tol: Option<f64>,
    #[serde(default)]
    pub save_field: bool,
    #[serde(default)]
    pub record_strichartz: bool,
    #[serde(default)]
    pub thresholds: Thresholds,
    #[serde(default)]
    pub output: OutputSpec,
    #[serde(default)]
    pub workers: Option<usize>,
    #[serde(default)]
    pub seed: Option<u64>,
    /// Directory that relative paths are resolved against.
    #[serde(skip)]
    pub base_dir: PathBuf,
    /// SHA-256 of the configuration text.
    #[serde(skip)]
    pub hash: String,
}

/// One problem found in a configuration.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    /// JSON pointer or comma-separated field names.
    pub path: String,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.path.is_empty() {
            write!(f, "{}", self.message)
        } else {
            write!(f, "{}: {}", self.path, self.message)
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid JSON: {0}")]
    Parse(String),
    #[error("{} configuration violation(s):\n{}", .0.len(), list(.0))]
    Invalid(Vec<Violation>),
}

fn list(v: &[Violation]) -> String {
    v.iter().map(|x| format!("  - {x}")).collect::<Vec<_>>().join("\n")
}

impl ConfigError {
    pub fn violations(&self) -> &[Violation] {
        match self {
            Self::Invalid(v) => v,
            _ => &[],
        }
    }
}

fn violation(path: &str, message: impl Into<String>) -> Violation {
    Violation {
        path: path.to_string(),
        message: message.into(),
    }
}

/// Reads, schema-checks and semantically checks a configuration file.
pub fn load_config(path: &Path) -> Result<ExperimentConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    parse_config(&text, &base)
}

/// As [`load_config`] for configuration text; relative paths resolve against `base_dir`.
pub fn parse_config(text: &str, base_dir: &Path) -> Result<ExperimentConfig, ConfigError> {
    let value: Value = serde_json::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
    let schema: Value = serde_json::from_str(CONFIG_SCHEMA).expect("bundled schema is valid JSON");
    let validator = jsonschema::validator_for(&schema).expect("bundled schema compiles");
    let mut violations: Vec<Violation> = validator
        .iter_errors(&value)
        .map(|e| violation(&e.instance_path().to_string(), e.to_string()))
        .collect();
    if !violations.is_empty() {
        violations.sort_by(|a, b| (&a.path, &a.message).cmp(&(&b.path, &b.message)));
        violations.dedup();
        return Err(ConfigError::Invalid(violations));
    }
    let mut config: ExperimentConfig =
        serde_json::from_value(value).map_err(|e| ConfigError::Invalid(vec![violation("", e.to_string())]))?;
    config.base_dir = base_dir.to_path_buf();
    config.hash = hex(&Sha256::digest(text.as_bytes()));
    let violations = config.check();
    if !violations.is_empty() {
        return Err(ConfigError::Invalid(violations));
    }
    Ok(config)
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn divides(horizon: f64, dt: f64) -> bool {
    let r = horizon / dt;
    r >= 1.0 && (r - r.round()).abs() <= 1e-9 * r.max(1.0)
}

fn power_ok(d: usize, p: f64) -> Result<(), String> {
    if d == 3 {
        if !(4.0 / 3.0 - 1e-12..=4.0 + 1e-12).contains(&p) {
            return Err(format!("p = {p} is outside [4/3, 4] for d = 3"));
        }
    } else if p <= 2.0 / d as f64 {
        return Err(format!("p = {p} must exceed 2/d = {} for d = {d}", 2.0 / d as f64));
    }
    Ok(())
}

impl ExperimentConfig {
    /// Spatial dimension: `dim`, else `grid.d`, else 3.
    pub fn dimension(&self) -> usize {
        self.dim.or(self.grid.map(|g| g.d)).unwrap_or(3)
    }

    /// Pads a point to three components.
    pub fn point(&self, v: &[f64]) -> [f64; 3] {
        let mut out = [0.0; 3];
        out[..v.len().min(3)].copy_from_slice(&v[..v.len().min(3)]);
        out
    }

    pub fn center(&self) -> [f64; 3] {
        self.x0.as_deref().map(|v| self.point(v)).unwrap_or([0.0; 3])
    }

    /// Explicit centers, else the lattice, else `x0`.
    pub fn center_list(&self) -> Vec<[f64; 3]> {
        if let Some(c) = &self.centers {
            return c.iter().map(|v| self.point(v)).collect();
        }
        if let Some(l) = self.lattice {
            let d = self.dimension();
            let axis: Vec<f64> = (0..l.count)
                .map(|k| {
                    if l.count == 1 {
                        0.5 * (l.min + l.max)
                    } else {
                        l.min + (l.max - l.min) * k as f64 / (l.count - 1) as f64
                    }
                })
                .collect();
            let total = l.count.pow(d as u32);
            return (0..total)
                .map(|mut flat| {
                    let mut x = [0.0; 3];
                    for xi in x.iter_mut().take(d) {
                        *xi = axis[flat % l.count];
                        flat /= l.count;
                    }
                    x
                })
                .collect();
        }
        vec![self.center()]
    }

    pub fn sigma_list(&self) -> Vec<f64> {
        self.sigmas.clone().or(self.sigma.map(|s| vec![s])).unwrap_or_default()
    }

    pub fn resolve(&self, path: &Path) -> PathBuf {
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.base_dir.join(path)
        }
    }

    pub fn output_dir(&self) -> PathBuf {
        self.output
            .dir
            .as_deref()
            .map(|d| self.resolve(d))
            .unwrap_or_else(|| self.base_dir.join("out"))
    }

    /// Solver settings from `solver`, else from the `grid`/`T`/`dt` shorthand.
    pub fn solver_settings(&self) -> Option<SolverSettings> {
        if let Some(s) = self.solver {
            return Some(s);
        }
        match (self.grid, self.horizon, self.dt) {
            (Some(g), Some(horizon), Some(dt)) => Some(SolverSettings::new(
                GridPolicy::Fixed { n: g.n, half_width: g.l },
                TimePolicy::Fixed { horizon, dt },
            )),
            _ => None,
        }
    }

    /// The coefficient profile from `coeff_file`, if one is named.
    pub fn coefficient_profile(&self) -> Result<Option<Arc<CoefficientProfile>>, String> {
        let Some(file) = &self.coeff_file else {
            return Ok(None);
        };
        let path = self.resolve(file);
        let field = load_field(&path).map_err(|e| format!("{}: {e}", path.display()))?;
        let profile = CoefficientProfile::from_field(&field, None).map_err(|e| format!("{}: {e}", path.display()))?;
        Ok(Some(Arc::new(profile)))
    }

    /// Creates the output directory and checks that files can be written there.
    pub fn check_output(&self) -> Result<(), Violation> {
        let dir = self.output_dir();
        std::fs::create_dir_all(&dir)
            .and_then(|_| tempfile::NamedTempFile::new_in(&dir).map(drop))
            .map_err(|e| violation("/output/dir", format!("{} is not writable: {e}", dir.display())))
    }

    /// Semantic checks beyond the schema; every violation is reported.
    pub fn check(&self) -> Vec<Violation> {
        let mut v = Vec::new();
        let d = self.dimension();
        if let (Some(dim), Some(g)) = (self.dim, self.grid) {
            if dim != g.d {
                v.push(violation("dim, grid.d", format!("dim = {dim} disagrees with grid.d = {}", g.d)));
            }
        }
        let dims = self.dims.clone().unwrap_or_else(|| vec![d]);
        for (name, ps) in [("p", self.p.map(|p| vec![p])), ("p_list", self.p_list.clone())] {
            for p in ps.unwrap_or_default() {
                let checked: Vec<usize> = if self.experiment == ExperimentKind::Lambda { dims.clone() } else { vec![d] };
                for dd in checked {
                    let test = if self.experiment == ExperimentKind::Lambda {
                        if p > 2.0 / dd as f64 { Ok(()) } else { Err(format!("p = {p} must exceed 2/d for d = {dd}")) }
                    } else {
                        power_ok(dd, p)
                    };
                    if let Err(m) = test {
                        v.push(violation(&format!("/{name}"), m));
                    }
                }
            }
        }
        if self.experiment == ExperimentKind::EstimateP && d != 3 {
            v.push(violation("/dim", "power recovery needs d = 3"));
        }
        for (name, pts) in [("x0", self.x0.iter().cloned().collect::<Vec<_>>()), ("centers", self.centers.clone().unwrap_or_default())] {
            for pt in pts {
                if pt.len() > d {
                    v.push(violation(&format!("/{name}"), format!("point {pt:?} has more than d = {d} components")));
                }
            }
        }
        if let (Some(t), Some(dt)) = (self.horizon, self.dt) {
            if !divides(t, dt) {
                v.push(violation("T, dt", format!("dt = {dt} does not divide T = {t}")));
            }
        }
        if let (Some(t), Some(list)) = (self.horizon, &self.dt_list) {
            for &dt in list {
                if !divides(t, dt) {
                    v.push(violation("T, dt_list", format!("dt = {dt} does not divide T = {t}")));
                }
            }
        }
        if let Some(g) = self.grid {
            if let Err(e) = SpectralGrid::new(g.d, g.n, g.l) {
                v.push(violation("/grid", e.to_string()));
            }
        }
        if let Some(s) = self.solver {
            match s.time {
                TimePolicy::Fixed { horizon, dt } if !divides(horizon, dt) => v.push(violation(
                    "solver.time.horizon, solver.time.dt",
                    format!("dt = {dt} does not divide horizon = {horizon}"),
                )),
                TimePolicy::Scaled { tau, delta } if !divides(tau, delta) => v.push(violation(
                    "solver.time.tau, solver.time.delta",
                    format!("delta = {delta} does not divide tau = {tau}"),
                )),
                _ => {}
            }
            let n = match s.grid {
                GridPolicy::Fixed { n, half_width } => {
                    if let Err(e) = SpectralGrid::new(d, n, half_width) {
                        v.push(violation("/solver/grid", e.to_string()));
                    }
                    n
                }
                GridPolicy::Scaled { n, .. } => n,
            };
            if n % 2 != 0 {
                v.push(violation("/solver/grid/n", format!("n = {n} must be even")));
            }
        }
        if let Some(m) = &self.coefficient {
            if let Err(e) = m.validate() {
                v.push(violation("/coefficient", e.to_string()));
            }
        }
        if self.coefficient.is_some() && self.coeff_file.is_some() {
            v.push(violation("coefficient, coeff_file", "give at most one of the two"));
        }
        if let Err(m) = self.coefficient_profile() {
            v.push(violation("/coeff_file", m));
        }
        let needs_coefficient = matches!(
            self.experiment,
            ExperimentKind::ApproxId | ExperimentKind::Scatter | ExperimentKind::Reconstruct | ExperimentKind::Stability | ExperimentKind::Convergence
        );
        if needs_coefficient && self.coefficient.is_none() && self.coeff_file.is_none() {
            v.push(violation("coefficient", "one of coefficient or coeff_file is required"));
        }
        if self.experiment == ExperimentKind::Stability && self.coefficient.is_none() {
            v.push(violation("coefficient", "stability experiments perturb an analytic coefficient model"));
        }
        if self.experiment == ExperimentKind::Scatter && self.solver_settings().is_none() {
            v.push(violation("solver", "give solver, or grid together with T and dt"));
        }
        if matches!(self.experiment, ExperimentKind::Reconstruct | ExperimentKind::Stability)
            && self.centers.is_none()
            && self.lattice.is_none()
        {
            v.push(violation("centers", "one of centers or lattice is required"));
        }
        if let Err(e) = self.check_output() {
            v.push(e);
        }
        v
    }
}
