//! Pairing-based reconstruction of the coefficient and the power, operator
//! norm estimates and the stability bound.
//!
//! A probe `phi_{sigma,x0}` sent through the scattering map gives
//! `<S(phi) - phi, phi> ~ -i sigma^{d+2} lambda(d,p) a(x0)`, so the imaginary
//! part of the pairing reads off a smoothed value of `a` near `x0`.

use std::sync::Arc;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coefficient::{Coefficient, CoefficientError, CoefficientModel, CoefficientProfile};
use crate::gaussian::{probe_field, GaussianError, GaussianProbe};
use crate::nls::{scattering_map, NlsError, ScatteringRecord, SolveSpec};
use crate::special::{invert_lambda, lambda_const, Clamp, SpecialError, P_MAX, P_MIN};
use crate::spectral::{sobolev_norm, SpectralError, SpectralGrid};

#[derive(Debug, thiserror::Error)]
pub enum InverseError {
    #[error("record rejected: {}", .0.join("; "))]
    Rejected(Vec<String>),
    #[error("probe family is empty")]
    EmptyFamily,
    #[error("probe at {center:?} with sigma = {sigma} is closer than 4 sigma to the box boundary")]
    Untrusted { center: [f64; 3], sigma: f64 },
    #[error("probe H1 norm {norm} exceeds the smallness threshold {threshold}")]
    Smallness { norm: f64, threshold: f64 },
    #[error("oracles disagree on {0}")]
    Incompatible(&'static str),
    #[error("lambda estimate {lambda_hat} is more than 10% outside [{low}, {high}]")]
    PowerOutOfRange { lambda_hat: f64, low: f64, high: f64 },
    #[error("power recovery needs d = 3 (got d = {0})")]
    PowerDimension(usize),
    #[error("{name} must be {requirement} (got {value})")]
    Argument {
        name: &'static str,
        requirement: &'static str,
        value: f64,
    },
    #[error(transparent)]
    Nls(#[from] NlsError),
    #[error(transparent)]
    Gaussian(#[from] GaussianError),
    #[error(transparent)]
    Coefficient(#[from] CoefficientError),
    #[error(transparent)]
    Special(#[from] SpecialError),
    #[error(transparent)]
    Spectral(#[from] SpectralError),
}

/// Anything that returns scattering records for Gaussian probes.
pub trait ScatteringOracle: Send + Sync {
    fn dim(&self) -> usize;
    fn power(&self) -> f64;
    fn scatter(&self, probe: &GaussianProbe) -> Result<ScatteringRecord, InverseError>;
}

/// Where the solver grid comes from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GridPolicy {
    /// One box for every probe.
    Fixed { n: usize, half_width: f64 },
    /// A box of half-width `box_factor * sigma` centered on the probe, with
    /// the coefficient translated so that `x0` sits at the origin.
    Scaled { n: usize, box_factor: f64 },
}

/// Where the time window comes from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TimePolicy {
    Fixed { horizon: f64, dt: f64 },
    /// `T = tau sigma^2`, `dt = delta sigma^2`.
    Scaled { tau: f64, delta: f64 },
}

impl TimePolicy {
    pub fn window(&self, sigma: f64) -> (f64, f64) {
        match *self {
            Self::Fixed { horizon, dt } => (horizon, dt),
            Self::Scaled { tau, delta } => (tau * sigma * sigma, delta * sigma * sigma),
        }
    }
}

/// Solver settings shared by every probe of an oracle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverSettings {
    pub grid: GridPolicy,
    pub time: TimePolicy,
    #[serde(default = "default_smallness")]
    pub smallness: f64,
    #[serde(default = "default_cauchy")]
    pub cauchy_tolerance: f64,
    #[serde(default)]
    pub tail_tolerance: Option<f64>,
}

fn default_smallness() -> f64 {
    4.0
}

fn default_cauchy() -> f64 {
    1e-3
}

impl SolverSettings {
    pub fn new(grid: GridPolicy, time: TimePolicy) -> Self {
        Self {
            grid,
            time,
            smallness: default_smallness(),
            cauchy_tolerance: default_cauchy(),
            tail_tolerance: None,
        }
    }
}

#[derive(Debug, Clone)]
enum Source {
    Model(CoefficientModel),
    Profile(Arc<CoefficientProfile>),
}

/// `x -> a(x + shift)`.
struct Shifted<'a> {
    inner: &'a dyn Coefficient,
    shift: [f64; 3],
}

impl Coefficient for Shifted<'_> {
    fn value(&self, x: [f64; 3]) -> f64 {
        self.inner
            .value([x[0] + self.shift[0], x[1] + self.shift[1], x[2] + self.shift[2]])
    }
    fn sup_norm(&self) -> f64 {
        self.inner.sup_norm()
    }
    fn lip_norm(&self) -> f64 {
        self.inner.lip_norm()
    }
}

/// Scattering map of `(i d_t + Delta) u = a |u|^p u` evaluated by the split-step solver.
#[derive(Debug, Clone)]
pub struct NlsOracle {
    dim: usize,
    p: f64,
    source: Source,
    settings: SolverSettings,
    /// Sampled coefficient for [`GridPolicy::Fixed`].
    fixed: Option<Arc<CoefficientProfile>>,
}

impl NlsOracle {
    pub fn from_model(dim: usize, p: f64, model: CoefficientModel, settings: SolverSettings) -> Result<Self, InverseError> {
        model.validate()?;
        let fixed = match settings.grid {
            GridPolicy::Fixed { n, half_width } => Some(Arc::new(CoefficientProfile::from_model(
                &model,
                SpectralGrid::new(dim, n, half_width)?,
            )?)),
            GridPolicy::Scaled { .. } => None,
        };
        Ok(Self {
            dim,
            p,
            source: Source::Model(model),
            settings,
            fixed,
        })
    }

    /// Oracle for a sampled coefficient; scaled grids interpolate it.
    pub fn from_profile(p: f64, profile: Arc<CoefficientProfile>, settings: SolverSettings) -> Result<Self, InverseError> {
        let dim = profile.grid().dim();
        let fixed = match settings.grid {
            GridPolicy::Fixed { n, half_width } => {
                Some(Arc::new(profile.resample(SpectralGrid::new(dim, n, half_width)?)?))
            }
            GridPolicy::Scaled { .. } => None,
        };
        Ok(Self {
            dim,
            p,
            source: Source::Profile(profile),
            settings,
            fixed,
        })
    }

    pub fn settings(&self) -> &SolverSettings {
        &self.settings
    }

    /// `||a||_inf + ||grad a||_inf` of the underlying coefficient.
    pub fn w1inf(&self) -> f64 {
        match &self.source {
            Source::Model(m) => m.w1inf(),
            Source::Profile(p) => p.w1inf(),
        }
    }

    /// Coefficient value at `x`.
    pub fn coefficient_value(&self, x: [f64; 3]) -> f64 {
        match &self.source {
            Source::Model(m) => m.value(x),
            Source::Profile(p) => p.value(x),
        }
    }

    fn coefficient(&self) -> &dyn Coefficient {
        match &self.source {
            Source::Model(m) => m,
            Source::Profile(p) => p.as_ref(),
        }
    }

    /// Grid, coefficient sample and solver-frame probe for `probe`.
    fn setup(&self, probe: &GaussianProbe) -> Result<(Arc<CoefficientProfile>, GaussianProbe), InverseError> {
        match self.settings.grid {
            GridPolicy::Fixed { .. } => Ok((self.fixed.clone().expect("fixed grid sampled at construction"), *probe)),
            GridPolicy::Scaled { n, box_factor } => {
                let grid = SpectralGrid::new(self.dim, n, box_factor * probe.sigma)?;
                let shifted = Shifted {
                    inner: self.coefficient(),
                    shift: probe.center,
                };
                let profile = match &self.source {
                    Source::Model(m) => CoefficientProfile::from_model(&m.translated(neg(probe.center)), grid)?,
                    Source::Profile(_) => CoefficientProfile::sample(&shifted, grid)?,
                };
                Ok((Arc::new(profile), GaussianProbe::centered(self.dim, probe.sigma)?))
            }
        }
    }

    pub fn solve_spec(&self, profile: Arc<CoefficientProfile>, sigma: f64) -> Result<SolveSpec, InverseError> {
        let (horizon, dt) = self.settings.time.window(sigma);
        let mut spec = SolveSpec::new(self.p, profile, horizon, dt)?;
        spec.smallness = self.settings.smallness;
        spec.cauchy_tolerance = self.settings.cauchy_tolerance;
        spec.tail_tolerance = self.settings.tail_tolerance;
        Ok(spec)
    }

    /// The probe sampled on the solver grid together with the solve parameters.
    pub fn prepare(&self, probe: &GaussianProbe) -> Result<(crate::spectral::ComplexField, SolveSpec), InverseError> {
        if probe.dim != self.dim {
            return Err(InverseError::Incompatible("dimension"));
        }
        let (profile, local) = self.setup(probe)?;
        let field = probe_field(&local, profile.grid())?;
        let spec = self.solve_spec(profile, probe.sigma)?;
        Ok((field, spec))
    }
}

fn neg(x: [f64; 3]) -> [f64; 3] {
    [-x[0], -x[1], -x[2]]
}

impl ScatteringOracle for NlsOracle {
    fn dim(&self) -> usize {
        self.dim
    }

    fn power(&self) -> f64 {
        self.p
    }

    fn scatter(&self, probe: &GaussianProbe) -> Result<ScatteringRecord, InverseError> {
        let (field, spec) = self.prepare(probe)?;
        let mut record = scattering_map(&field, &spec)?;
        record.probe = Some(*probe);
        Ok(record)
    }
}

/// The stored pairing `<u_+ - u_-, u_->`, without normalization by `||u_-||`.
pub fn pairing_functional(record: &ScatteringRecord) -> Result<Complex64, InverseError> {
    if !record.accepted {
        return Err(InverseError::Rejected(record.flags.clone()));
    }
    Ok(record.pairing)
}

#[derive(Debug, Clone, Serialize)]
pub struct PointEstimate {
    pub center: [f64; 3],
    pub sigma: f64,
    pub a_hat: f64,
    pub pairing: Complex64,
    pub mass_drift: f64,
    pub cauchy_difference: f64,
}

/// `a_hat(x0) = -Im<S(phi) - phi, phi> / (sigma^{d+2} lambda(d, p))`.
pub fn reconstruct_point(oracle: &dyn ScatteringOracle, sigma: f64, center: [f64; 3]) -> Result<PointEstimate, InverseError> {
    let d = oracle.dim();
    let probe = GaussianProbe::new(d, sigma, center)?;
    let record = oracle.scatter(&probe)?;
    let pairing = pairing_functional(&record)?;
    let lambda = lambda_const(d, oracle.power())?.value;
    Ok(PointEstimate {
        center,
        sigma,
        a_hat: -pairing.im / (sigma.powi(d as i32 + 2) * lambda),
        pairing,
        mass_drift: record.diagnostics.mass_drift,
        cauchy_difference: record.diagnostics.cauchy_difference,
    })
}

/// Reconstruction at every center, in input order. Failures stay in place.
pub fn reconstruct_field(
    oracle: &dyn ScatteringOracle,
    sigma: f64,
    centers: &[[f64; 3]],
) -> Vec<Result<PointEstimate, InverseError>> {
    centers
        .par_iter()
        .map(|&c| reconstruct_point(oracle, sigma, c))
        .collect()
}

/// Gaussian probes `phi_{sigma, x0}` over a product of widths and centers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeFamily {
    pub dim: usize,
    pub sigmas: Vec<f64>,
    pub centers: Vec<[f64; 3]>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ProbeNorms {
    pub h1: f64,
    /// `||phi||_{H^{-1} dot}`, defined for `d >= 3`.
    pub h_minus_one: Option<f64>,
}

impl ProbeFamily {
    pub fn probes(&self) -> Result<Vec<GaussianProbe>, InverseError> {
        let mut out = Vec::with_capacity(self.sigmas.len() * self.centers.len());
        for &s in &self.sigmas {
            for &c in &self.centers {
                out.push(GaussianProbe::new(self.dim, s, c)?);
            }
        }
        Ok(out)
    }

    /// Continuum normalizations of every probe, in [`Self::probes`] order.
    pub fn norms(&self) -> Result<Vec<ProbeNorms>, InverseError> {
        self.probes()?
            .iter()
            .map(|p| {
                Ok(ProbeNorms {
                    h1: p.h1_norm(),
                    h_minus_one: p.homogeneous_norm(-1.0).ok(),
                })
            })
            .collect()
    }

    /// Smallness of every probe and, for a fixed box of half-width `trusted`,
    /// distance at least `4 sigma` from its boundary.
    pub fn validate(&self, smallness: f64, trusted: Option<f64>) -> Result<(), InverseError> {
        let probes = self.probes()?;
        if probes.is_empty() {
            return Err(InverseError::EmptyFamily);
        }
        for p in &probes {
            let norm = p.h1_norm();
            if norm > smallness {
                return Err(InverseError::Smallness {
                    norm,
                    threshold: smallness,
                });
            }
            if let Some(l) = trusted {
                let reach = p.center.iter().map(|c| c.abs()).fold(0.0, f64::max) + 4.0 * p.sigma;
                if reach > l {
                    return Err(InverseError::Untrusted {
                        center: p.center,
                        sigma: p.sigma,
                    });
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OperatorNorm {
    /// `max ||S_a(phi) - S_b(phi)||_H1 / ||phi||_H1` over the family.
    pub value: f64,
    pub argmax: GaussianProbe,
}

/// Lower estimate of `||S_a - S_b||` over a finite probe family.
pub fn operator_norm_estimate(
    oracle_a: &dyn ScatteringOracle,
    oracle_b: &dyn ScatteringOracle,
    family: &ProbeFamily,
) -> Result<OperatorNorm, InverseError> {
    if oracle_a.dim() != oracle_b.dim() || oracle_a.dim() != family.dim {
        return Err(InverseError::Incompatible("dimension"));
    }
    let probes = family.probes()?;
    if probes.is_empty() {
        return Err(InverseError::EmptyFamily);
    }
    let ratios: Vec<Result<f64, InverseError>> = probes
        .par_iter()
        .map(|probe| {
            let ra = oracle_a.scatter(probe)?;
            let rb = oracle_b.scatter(probe)?;
            pairing_functional(&ra)?;
            pairing_functional(&rb)?;
            if ra.u_plus.grid() != rb.u_plus.grid() {
                return Err(InverseError::Incompatible("grid"));
            }
            let gap = sobolev_norm(&ra.u_plus.difference(&rb.u_plus)?, 1.0, false)?;
            Ok(gap / ra.diagnostics.h1_minus)
        })
        .collect();
    let mut best: Option<OperatorNorm> = None;
    for (probe, r) in probes.iter().zip(ratios) {
        let value = r?;
        if best.is_none_or(|b| value > b.value) {
            best = Some(OperatorNorm { value, argmax: *probe });
        }
    }
    Ok(best.expect("family is nonempty"))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SigmaChoice {
    pub sigma: f64,
    /// `true` when the formula fell below `sigma_min`.
    pub clamped: bool,
}

/// `sigma = epsilon (N / M)^{4/9}`, never below `sigma_min`.
pub fn optimal_sigma(op_norm: f64, w1inf_sum: f64, epsilon: f64, sigma_min: f64) -> Result<SigmaChoice, InverseError> {
    if !(op_norm >= 0.0 && op_norm.is_finite()) {
        return Err(InverseError::Argument {
            name: "op_norm",
            requirement: "finite and nonnegative",
            value: op_norm,
        });
    }
    if !(w1inf_sum > 0.0 && w1inf_sum.is_finite()) {
        return Err(InverseError::Argument {
            name: "w1inf_sum",
            requirement: "positive",
            value: w1inf_sum,
        });
    }
    if !(epsilon > 0.0 && epsilon <= 1.0) {
        return Err(InverseError::Argument {
            name: "epsilon",
            requirement: "in (0, 1]",
            value: epsilon,
        });
    }
    let sigma = epsilon * (op_norm / w1inf_sum).powf(4.0 / 9.0);
    if sigma < sigma_min {
        return Ok(SigmaChoice {
            sigma: sigma_min,
            clamped: true,
        });
    }
    Ok(SigmaChoice { sigma, clamped: false })
}

/// `M^{8/9} N^{1/9} + M^{10/9} N^{8/9}` with `M = w1inf_a + w1inf_b`, `N = op_norm`, constant 1.
pub fn stability_bound_rhs(w1inf_a: f64, w1inf_b: f64, op_norm: f64) -> Result<f64, InverseError> {
    for (name, v) in [("w1inf_a", w1inf_a), ("w1inf_b", w1inf_b), ("op_norm", op_norm)] {
        if !(v >= 0.0 && v.is_finite()) {
            return Err(InverseError::Argument {
                name,
                requirement: "finite and nonnegative",
                value: v,
            });
        }
    }
    let m = w1inf_a + w1inf_b;
    let n = op_norm;
    Ok(m.powf(8.0 / 9.0) * n.powf(1.0 / 9.0) + m.powf(10.0 / 9.0) * n.powf(8.0 / 9.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PowerEstimate {
    pub sigma: f64,
    pub lambda_hat: f64,
    pub p_hat: f64,
    pub clamp: Option<Clamp>,
}

/// Relative band outside `[lambda(3,4), lambda(3,4/3)]` that is clamped rather than rejected.
pub const POWER_CLAMP_BAND: f64 = 0.1;

/// Inverts a measured `lambda_hat`.
pub fn power_from_lambda(lambda_hat: f64, sigma: f64) -> Result<PowerEstimate, InverseError> {
    let low = lambda_const(3, P_MAX)?.value;
    let high = lambda_const(3, P_MIN)?.value;
    if !(lambda_hat >= low * (1.0 - POWER_CLAMP_BAND) && lambda_hat <= high * (1.0 + POWER_CLAMP_BAND)) {
        return Err(InverseError::PowerOutOfRange { lambda_hat, low, high });
    }
    let inv = invert_lambda(lambda_hat)?;
    Ok(PowerEstimate {
        sigma,
        lambda_hat,
        p_hat: inv.p,
        clamp: inv.clamp,
    })
}

fn measured_lambda(oracle: &dyn ScatteringOracle, sigma: f64) -> Result<f64, InverseError> {
    if oracle.dim() != 3 {
        return Err(InverseError::PowerDimension(oracle.dim()));
    }
    let probe = GaussianProbe::centered(3, sigma)?;
    let pairing = pairing_functional(&oracle.scatter(&probe)?)?;
    Ok(-pairing.im / sigma.powi(5))
}

/// `p_hat = lambda^{-1}(-Im pairing / sigma^5)` from one probe at the origin.
pub fn estimate_power(oracle: &dyn ScatteringOracle, sigma: f64) -> Result<PowerEstimate, InverseError> {
    power_from_lambda(measured_lambda(oracle, sigma)?, sigma)
}

/// Richardson combination of two widths assuming a leading `sigma^2` bias in `lambda_hat`.
pub fn estimate_power_extrapolated(
    oracle: &dyn ScatteringOracle,
    sigma_coarse: f64,
    sigma_fine: f64,
) -> Result<PowerEstimate, InverseError> {
    if !(sigma_coarse > sigma_fine && sigma_fine > 0.0) {
        return Err(InverseError::Argument {
            name: "sigma_fine",
            requirement: "positive and below sigma_coarse",
            value: sigma_fine,
        });
    }
    let (lc, lf) = (measured_lambda(oracle, sigma_coarse)?, measured_lambda(oracle, sigma_fine)?);
    let (c2, f2) = (sigma_coarse * sigma_coarse, sigma_fine * sigma_fine);
    power_from_lambda((c2 * lf - f2 * lc) / (c2 - f2), sigma_fine)
}

/// Outcome of a stability experiment on one pair `(a, b)`.
#[derive(Debug, Clone, Serialize)]
pub struct StabilityReport {
    /// `max |a_hat - b_hat|` over the centers.
    pub sup_diff: f64,
    /// `max |a - b|` over the centers.
    pub true_sup_diff: f64,
    pub op_norm_est: f64,
    pub rhs_bound: f64,
    pub sigma_used: f64,
    /// Named fitted exponents, filled in by sweeps.
    pub slopes: Vec<(String, f64)>,
}

/// Reconstructs both coefficients on `centers` at `sigma` and compares them.
pub fn stability_report(
    oracle_a: &NlsOracle,
    oracle_b: &NlsOracle,
    family: &ProbeFamily,
    sigma: f64,
) -> Result<StabilityReport, InverseError> {
    let op = operator_norm_estimate(oracle_a, oracle_b, family)?;
    let ra = reconstruct_field(oracle_a, sigma, &family.centers);
    let rb = reconstruct_field(oracle_b, sigma, &family.centers);
    let mut sup_diff = 0.0f64;
    let mut true_sup_diff = 0.0f64;
    for ((a, b), c) in ra.into_iter().zip(rb).zip(&family.centers) {
        sup_diff = sup_diff.max((a?.a_hat - b?.a_hat).abs());
        true_sup_diff = true_sup_diff.max((oracle_a.coefficient_value(*c) - oracle_b.coefficient_value(*c)).abs());
    }
    Ok(StabilityReport {
        sup_diff,
        true_sup_diff,
        op_norm_est: op.value,
        rhs_bound: stability_bound_rhs(oracle_a.w1inf(), oracle_b.w1inf(), op.value)?,
        sigma_used: sigma,
        slopes: Vec::new(),
    })
}
