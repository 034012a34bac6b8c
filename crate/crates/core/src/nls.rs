//! Split-step integration of `(i d_t + Delta) u = a(x) |u|^p u` on the torus,
//! final-state extraction, the Born approximation and solver diagnostics.
//!
//! One Strang step is a half kick `exp(-i dt/2 a |u|^p)`, an exact free step
//! `e^{i dt Delta}` and another half kick. Kicks keep `|u|` fixed, so two
//! consecutive half kicks are fused into one full kick whenever nothing needs
//! to look at the state in between.

use std::sync::Arc;

use num_complex::Complex64;
use serde::Serialize;

use crate::coefficient::{CoefficientError, CoefficientProfile};
use crate::gaussian::{probe_field, GaussianError, GaussianProbe};
use crate::special::{strichartz_exponents, ExponentSet, SpecialError};
use crate::spectral::{
    free_propagate, lebesgue_norm_of, sobolev_norm, time_norm, with_transform,
    ComplexField, Space, SpectralError, SpectralGrid,
};

#[derive(Debug, thiserror::Error)]
pub enum NlsError {
    #[error("horizon T must be positive and finite (got {0})")]
    Horizon(f64),
    #[error("time step must be positive and finite (got {0})")]
    Step(f64),
    #[error("T = {horizon} is not an integer multiple of dt = {dt}")]
    NotIntegral { horizon: f64, dt: f64 },
    #[error("power p = {p} is outside the admissible range for d = {d}")]
    Power { p: f64, d: usize },
    #[error("coefficient grid differs from the field grid")]
    GridMismatch,
    #[error("||u_-||_H1 = {norm} exceeds the smallness threshold {threshold}")]
    Smallness { norm: f64, threshold: f64 },
    #[error("mass fraction {fraction:e} outside the half box at t = -T exceeds {tolerance:e}")]
    Tail { fraction: f64, tolerance: f64 },
    #[error("blow-up sentinel: H1 norm grew by a factor {ratio} at t = {time}")]
    BlowUp { time: f64, ratio: f64 },
    #[error("the trajectory did not record {0}")]
    NotRecorded(&'static str),
    #[error(transparent)]
    Spectral(#[from] SpectralError),
    #[error(transparent)]
    Gaussian(#[from] GaussianError),
    #[error(transparent)]
    Coefficient(#[from] CoefficientError),
    #[error(transparent)]
    Special(#[from] SpecialError),
}

/// Growth of the H1 norm that trips the blow-up sentinel.
pub const BLOW_UP_FACTOR: f64 = 10.0;
/// Relative mass drift allowed for an accepted record.
pub const MASS_TOLERANCE: f64 = 1e-8;
/// Strichartz ratios of an accepted record stay within this factor of the free ones.
pub const STRICHARTZ_FACTOR: f64 = 4.0;

/// Parameters of one solve on the window `[-T, T]`.
#[derive(Debug, Clone)]
pub struct SolveSpec {
    pub p: f64,
    pub coeff: Arc<CoefficientProfile>,
    /// Half window `T`.
    pub horizon: f64,
    pub dt: f64,
    /// Keep every `k`-th state in memory; 0 keeps none.
    pub snapshot_stride: usize,
    /// Sampling stride of the streaming monitors (Strichartz norms, Duhamel checkpoints).
    pub monitor_stride: usize,
    pub record_strichartz: bool,
    pub record_duhamel: bool,
    /// Upper limit on `||u_-||_H1`.
    pub smallness: f64,
    /// Optional hard limit on the mass fraction outside `|x - x0| <= L/2` at `t = -T`.
    pub tail_tolerance: Option<f64>,
    /// Limit on the relative H1 gap between the final states at `T/2` and `T`.
    pub cauchy_tolerance: f64,
}

impl SolveSpec {
    pub fn new(p: f64, coeff: Arc<CoefficientProfile>, horizon: f64, dt: f64) -> Result<Self, NlsError> {
        let spec = Self {
            p,
            coeff,
            horizon,
            dt,
            snapshot_stride: 0,
            monitor_stride: 10,
            record_strichartz: false,
            record_duhamel: false,
            smallness: 4.0,
            tail_tolerance: None,
            cauchy_tolerance: 1e-3,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), NlsError> {
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(NlsError::Horizon(self.horizon));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(NlsError::Step(self.dt));
        }
        let ratio = self.horizon / self.dt;
        if (ratio - ratio.round()).abs() > 1e-9 * ratio.max(1.0) || ratio.round() < 1.0 {
            return Err(NlsError::NotIntegral {
                horizon: self.horizon,
                dt: self.dt,
            });
        }
        let d = self.coeff.grid().dim();
        let admissible = if d == 3 {
            (4.0 / 3.0 - 1e-12..=4.0 + 1e-12).contains(&self.p)
        } else {
            self.p > 2.0 / d as f64 && self.p.is_finite()
        };
        if !admissible {
            return Err(NlsError::Power { p: self.p, d });
        }
        Ok(())
    }

    /// Number of steps in `[0, T]`.
    pub fn half_steps(&self) -> usize {
        (self.horizon / self.dt).round() as usize
    }

    pub fn total_steps(&self) -> usize {
        2 * self.half_steps()
    }

    pub fn grid(&self) -> &SpectralGrid {
        self.coeff.grid()
    }

    fn monitor_stride(&self) -> usize {
        self.monitor_stride.max(1)
    }
}

/// Pointwise nonlinearity `a |u|^p u`.
fn nonlinearity(a: f64, u: Complex64, p: f64) -> Complex64 {
    let m2 = u.norm_sqr();
    let mag = if p == 2.0 { m2 } else { m2.powf(0.5 * p) };
    u * (a * mag)
}

fn kick(values: &mut [Complex64], a: &[f64], p: f64, tau: f64) {
    for (u, &ai) in values.iter_mut().zip(a) {
        if ai == 0.0 {
            continue;
        }
        let m2 = u.norm_sqr();
        let mag = if p == 2.0 { m2 } else { m2.powf(0.5 * p) };
        *u *= Complex64::from_polar(1.0, -tau * ai * mag);
    }
}

/// One Strang step of size `dt` (negative steps run backwards).
pub fn strang_step(field: &ComplexField, dt: f64, coeff: &CoefficientProfile, p: f64) -> Result<ComplexField, NlsError> {
    evolve(field, coeff, p, dt, 1)
}

/// `steps` Strang steps of size `dt` with fused inner kicks.
pub fn evolve(
    field: &ComplexField,
    coeff: &CoefficientProfile,
    p: f64,
    dt: f64,
    steps: usize,
) -> Result<ComplexField, NlsError> {
    field.expect_space(Space::Physical)?;
    if coeff.grid() != field.grid() {
        return Err(NlsError::GridMismatch);
    }
    let grid = *field.grid();
    let mut values = field.clone().into_values();
    let a = coeff.values();
    let linear = coeff.is_identically_zero();
    let prop = multiplier(&grid, dt);
    for k in 0..steps {
        if !linear {
            kick(&mut values, a, p, if k == 0 { 0.5 * dt } else { dt });
        }
        free_step(&grid, &mut values, &prop, |_| {});
    }
    if !linear && steps > 0 {
        kick(&mut values, a, p, 0.5 * dt);
    }
    Ok(ComplexField::new(grid, values, Space::Physical)?)
}

fn multiplier(grid: &SpectralGrid, t: f64) -> Vec<Complex64> {
    grid.xi_squared()
        .into_iter()
        .map(|k2| Complex64::from_polar(1.0, -t * k2))
        .collect()
}

/// Forward transform, `inspect` the spectrum, multiply, transform back.
fn free_step(grid: &SpectralGrid, values: &mut [Complex64], prop: &[Complex64], inspect: impl FnOnce(&[Complex64])) {
    with_transform(grid, |f| {
        f.forward(values);
        inspect(values);
        values.iter_mut().zip(prop).for_each(|(v, m)| *v *= m);
        f.inverse(values);
    });
}

fn spectral_h1(grid: &SpectralGrid, spec: &[Complex64], xi2: &[f64]) -> f64 {
    let sum: f64 = spec.iter().zip(xi2).map(|(v, k2)| (1.0 + k2) * v.norm_sqr()).sum();
    (sum * grid.cell_volume() / grid.len() as f64).sqrt()
}

/// Norms sampled along a trajectory for the Strichartz ratios.
#[derive(Debug, Clone, Default, Serialize)]
pub struct StrichartzSamples {
    pub times: Vec<f64>,
    /// `||u(t)||_{L^r}`.
    pub plain: Vec<f64>,
    /// `|| |grad u(t)| ||_{L^r}`.
    pub gradient: Vec<f64>,
    /// `|| |grad|^{s_c} u(t) ||_{L^r}`.
    pub critical: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StrichartzRatios {
    /// `||u||_{L^q L^r} / ||u_-||_{L^2}`.
    pub l2: f64,
    /// `||grad u||_{L^q L^r} / ||u_-||_{H^1}`.
    pub gradient: f64,
    /// `|| |grad|^{s_c} u ||_{L^q L^r} / ||u_-||_{H^{s_c} dot}`.
    pub critical: f64,
}

struct StrichartzMonitor {
    exponents: ExponentSet,
    xi: Vec<[f64; 3]>,
    critical_weight: Vec<f64>,
    samples: StrichartzSamples,
    buffer: Vec<Complex64>,
    gradient: Vec<f64>,
}

impl StrichartzMonitor {
    fn new(grid: &SpectralGrid, exponents: ExponentSet) -> Self {
        let xi: Vec<[f64; 3]> = (0..grid.len()).map(|i| grid.wave_vector(i)).collect();
        let s_c = exponents.s_c;
        let critical_weight = xi
            .iter()
            .map(|k| {
                let k2: f64 = k.iter().map(|c| c * c).sum();
                if s_c == 0.0 {
                    1.0
                } else {
                    k2.powf(0.5 * s_c)
                }
            })
            .collect();
        Self {
            exponents,
            xi,
            critical_weight,
            samples: StrichartzSamples::default(),
            buffer: vec![Complex64::new(0.0, 0.0); grid.len()],
            gradient: vec![0.0; grid.len()],
        }
    }

    /// Records the norms of the state whose physical values are `u` and spectrum `spec`.
    fn record(&mut self, grid: &SpectralGrid, t: f64, u: &[Complex64], spec: &[Complex64]) {
        let r = self.exponents.r;
        let cell = grid.cell_volume();
        let plain = lebesgue_norm_of(u, cell, r).expect("r >= 1");
        self.gradient.iter_mut().for_each(|g| *g = 0.0);
        for axis in 0..grid.dim() {
            for ((b, s), k) in self.buffer.iter_mut().zip(spec).zip(&self.xi) {
                *b = s * Complex64::new(0.0, k[axis]);
            }
            with_transform(grid, |f| f.inverse(&mut self.buffer));
            for (g, b) in self.gradient.iter_mut().zip(&self.buffer) {
                *g += b.norm_sqr();
            }
        }
        let half = 0.5 * r;
        let grad = (self.gradient.iter().map(|g| g.powf(half)).sum::<f64>() * cell).powf(1.0 / r);
        let critical = if self.exponents.s_c == 0.0 {
            plain
        } else {
            for ((b, s), w) in self.buffer.iter_mut().zip(spec).zip(&self.critical_weight) {
                *b = s * w;
            }
            with_transform(grid, |f| f.inverse(&mut self.buffer));
            lebesgue_norm_of(&self.buffer, cell, r).expect("r >= 1")
        };
        self.samples.times.push(t);
        self.samples.plain.push(plain);
        self.samples.gradient.push(grad);
        self.samples.critical.push(critical);
    }
}

/// Streaming Duhamel bookkeeping in the current-time picture.
///
/// `acc` holds `sum_j w_j e^{i(t_k - t_j) Delta} N_j` with the trapezoid's
/// half weight on the first sample, `free` holds `e^{i(t_k + T) Delta} u(-T)`;
/// both are spectral.
struct DuhamelMonitor {
    acc: Vec<Complex64>,
    free: Vec<Complex64>,
    last: Vec<Complex64>,
    checkpoints: Vec<(f64, f64)>,
}

impl DuhamelMonitor {
    fn new(grid: &SpectralGrid, start: &[Complex64], a: &[f64], p: f64, dt: f64) -> Self {
        let mut free = start.to_vec();
        with_transform(grid, |f| f.forward(&mut free));
        let mut last: Vec<Complex64> = start.iter().zip(a).map(|(&u, &ai)| nonlinearity(ai, u, p)).collect();
        with_transform(grid, |f| f.forward(&mut last));
        let acc = last.iter().map(|v| v * (0.5 * dt)).collect();
        Self {
            acc,
            free,
            last,
            checkpoints: Vec::new(),
        }
    }

    fn advance(&mut self, grid: &SpectralGrid, u: &[Complex64], a: &[f64], p: f64, dt: f64, prop: &[Complex64]) {
        for ((n, &ui), &ai) in self.last.iter_mut().zip(u).zip(a) {
            *n = nonlinearity(ai, ui, p);
        }
        with_transform(grid, |f| f.forward(&mut self.last));
        for (((s, fr), n), m) in self.acc.iter_mut().zip(self.free.iter_mut()).zip(&self.last).zip(prop) {
            *s = *s * m + n * dt;
            *fr *= m;
        }
    }

    /// `||u(t) - e^{i(t+T)Delta} u(-T) + i int e^{i(t-s)Delta} N ds||_2 / ||u(t)||_2`.
    fn checkpoint(&mut self, grid: &SpectralGrid, t: f64, u: &[Complex64], dt: f64) {
        let mut spec = u.to_vec();
        with_transform(grid, |f| f.forward(&mut spec));
        let i = Complex64::new(0.0, 1.0);
        let (mut num, mut den) = (0.0, 0.0);
        for (((s, fr), n), v) in self.acc.iter().zip(&self.free).zip(&self.last).zip(&spec) {
            let trapezoid = s - n * (0.5 * dt);
            num += (v - fr + i * trapezoid).norm_sqr();
            den += v.norm_sqr();
        }
        self.checkpoints.push((t, (num / den).sqrt()));
    }
}

/// States and monitor output of one solve.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub grid: SpectralGrid,
    pub p: f64,
    pub horizon: f64,
    pub dt: f64,
    /// `u(-T) = e^{-iT Delta} u_-`.
    pub start: ComplexField,
    /// `u(T)`.
    pub end: ComplexField,
    /// State at the step nearest `t = T/2`.
    pub halfway: (f64, ComplexField),
    pub snapshots: Vec<(f64, ComplexField)>,
    /// `(t, ||u(t)||_2^2)` at every observed step.
    pub masses: Vec<(f64, f64)>,
    pub h1_initial: f64,
    pub h1_max: f64,
    pub strichartz: Option<StrichartzSamples>,
    pub duhamel: Option<Vec<(f64, f64)>>,
}

impl Trajectory {
    pub fn mass_drift(&self) -> f64 {
        let m0 = self.masses.first().map(|m| m.1).unwrap_or(0.0);
        if m0 == 0.0 {
            return 0.0;
        }
        self.masses.iter().map(|m| ((m.1 - m0) / m0).abs()).fold(0.0, f64::max)
    }
}

fn peak_location(field: &ComplexField) -> [f64; 3] {
    let (idx, _) = field
        .values()
        .iter()
        .enumerate()
        .fold((0, -1.0), |best, (i, v)| if v.norm_sqr() > best.1 { (i, v.norm_sqr()) } else { best });
    field.grid().point(idx)
}

/// Mass fraction outside the ball of radius `L/2` around `center`, periodic distance.
pub fn tail_fraction(field: &ComplexField, center: [f64; 3]) -> f64 {
    let grid = field.grid();
    let l = grid.half_width();
    let period = 2.0 * l;
    let (mut outside, mut total) = (0.0, 0.0);
    for (i, v) in field.values().iter().enumerate() {
        let x = grid.point(i);
        let r2: f64 = (0..grid.dim())
            .map(|a| {
                let dx = (x[a] - center[a] + l).rem_euclid(period) - l;
                dx * dx
            })
            .sum();
        let m = v.norm_sqr();
        total += m;
        if r2 > 0.25 * l * l {
            outside += m;
        }
    }
    if total == 0.0 {
        0.0
    } else {
        outside / total
    }
}

/// Integrates from the incoming state `u_-` over `[-T, T]`.
pub fn solve_from_past(u_minus: &ComplexField, spec: &SolveSpec) -> Result<Trajectory, NlsError> {
    spec.validate()?;
    u_minus.expect_space(Space::Physical)?;
    let grid = *u_minus.grid();
    if spec.grid() != &grid {
        return Err(NlsError::GridMismatch);
    }
    let h1_minus = sobolev_norm(u_minus, 1.0, false)?;
    if h1_minus > spec.smallness {
        return Err(NlsError::Smallness {
            norm: h1_minus,
            threshold: spec.smallness,
        });
    }
    let t_start = -spec.horizon;
    let start = free_propagate(u_minus, t_start)?;
    if let Some(tolerance) = spec.tail_tolerance {
        let fraction = tail_fraction(&start, peak_location(u_minus));
        if fraction > tolerance {
            return Err(NlsError::Tail { fraction, tolerance });
        }
    }

    let p = spec.p;
    let dt = spec.dt;
    let steps = spec.total_steps();
    let a = spec.coeff.values();
    let linear = spec.coeff.is_identically_zero();
    let prop = multiplier(&grid, dt);
    let xi2 = grid.xi_squared();
    let stride = spec.monitor_stride();
    let half_index = steps * 3 / 4;
    let time_of = |k: usize| t_start + k as f64 * dt;

    let mut values = start.values().to_vec();
    let mut masses = vec![(t_start, start.mass())];
    let mut snapshots = Vec::new();
    if spec.snapshot_stride > 0 {
        snapshots.push((t_start, start.clone()));
    }
    let mut strichartz = if spec.record_strichartz {
        let exponents = strichartz_exponents(grid.dim(), p)?;
        let mut monitor = StrichartzMonitor::new(&grid, exponents);
        let mut s = values.clone();
        with_transform(&grid, |f| f.forward(&mut s));
        monitor.record(&grid, t_start, &values, &s);
        Some(monitor)
    } else {
        None
    };
    let mut duhamel = spec
        .record_duhamel
        .then(|| DuhamelMonitor::new(&grid, &values, a, p, dt));
    if let Some(d) = duhamel.as_mut() {
        d.checkpoint(&grid, t_start, &values, dt);
    }

    let h1_initial = h1_minus;
    let mut h1_max = h1_initial;
    let mut halfway = None;
    let mut pending_half = true;
    let mut spectrum = Vec::new();
    for k in 1..=steps {
        if !linear && pending_half {
            kick(&mut values, a, p, 0.5 * dt);
        }
        let mut h1 = 0.0;
        free_step(&grid, &mut values, &prop, |s| h1 = spectral_h1(&grid, s, &xi2));
        let t = time_of(k);
        if !h1.is_finite() || h1 > BLOW_UP_FACTOR * h1_initial {
            return Err(NlsError::BlowUp {
                time: t,
                ratio: h1 / h1_initial,
            });
        }
        h1_max = h1_max.max(h1);
        let monitor_step = k % stride == 0 || k == steps;
        let snapshot_step = spec.snapshot_stride > 0 && (k % spec.snapshot_stride == 0 || k == steps);
        let observe = k == steps || k == half_index || monitor_step || snapshot_step || duhamel.is_some();
        if linear {
            pending_half = false;
        } else if observe {
            kick(&mut values, a, p, 0.5 * dt);
            pending_half = true;
        } else {
            kick(&mut values, a, p, dt);
            pending_half = false;
        }
        if !observe {
            continue;
        }
        if let Some(d) = duhamel.as_mut() {
            d.advance(&grid, &values, a, p, dt, &prop);
            if monitor_step {
                d.checkpoint(&grid, t, &values, dt);
            }
        }
        if monitor_step {
            masses.push((t, values.iter().map(|v| v.norm_sqr()).sum::<f64>() * grid.cell_volume()));
            if let Some(m) = strichartz.as_mut() {
                spectrum.clear();
                spectrum.extend_from_slice(&values);
                with_transform(&grid, |f| f.forward(&mut spectrum));
                m.record(&grid, t, &values, &spectrum);
            }
        }
        if snapshot_step || k == half_index || k == steps {
            let field = ComplexField::new(grid, values.clone(), Space::Physical)?;
            if k == half_index {
                halfway = Some((t, field.clone()));
            }
            if snapshot_step {
                snapshots.push((t, field));
            }
        }
    }
    let end = ComplexField::new(grid, values, Space::Physical)?;
    let halfway = halfway.unwrap_or_else(|| (time_of(steps), end.clone()));
    Ok(Trajectory {
        grid,
        p,
        horizon: spec.horizon,
        dt,
        start,
        end,
        halfway,
        snapshots,
        masses,
        h1_initial,
        h1_max,
        strichartz: strichartz.map(|m| m.samples),
        duhamel: duhamel.map(|d| d.checkpoints),
    })
}

/// Largest relative Duhamel residual over the recorded checkpoints.
pub fn duhamel_residual(trajectory: &Trajectory, _spec: &SolveSpec) -> Result<f64, NlsError> {
    let checkpoints = trajectory
        .duhamel
        .as_ref()
        .ok_or(NlsError::NotRecorded("Duhamel checkpoints"))?;
    Ok(checkpoints.iter().map(|c| c.1).fold(0.0, f64::max))
}

fn ratios_from(samples: &StrichartzSamples, u_minus: &ComplexField, q: f64, s_c: f64) -> Result<StrichartzRatios, NlsError> {
    let series = |v: &[f64]| -> Vec<(f64, f64)> { samples.times.iter().copied().zip(v.iter().copied()).collect() };
    let l2 = sobolev_norm(u_minus, 0.0, false)?;
    let h1 = sobolev_norm(u_minus, 1.0, false)?;
    let crit = if s_c == 0.0 { l2 } else { sobolev_norm(u_minus, s_c, true)? };
    Ok(StrichartzRatios {
        l2: time_norm(&series(&samples.plain), q)? / l2,
        gradient: time_norm(&series(&samples.gradient), q)? / h1,
        critical: time_norm(&series(&samples.critical), q)? / crit,
    })
}

/// Strichartz ratios of a recorded trajectory.
pub fn strichartz_ratio(trajectory: &Trajectory, u_minus: &ComplexField, p: f64) -> Result<StrichartzRatios, NlsError> {
    let samples = trajectory
        .strichartz
        .as_ref()
        .ok_or(NlsError::NotRecorded("Strichartz samples"))?;
    let e = strichartz_exponents(trajectory.grid.dim(), p)?;
    ratios_from(samples, u_minus, e.q, e.s_c)
}

/// The same ratios for the free evolution `e^{it Delta} u_-` sampled at `times`.
pub fn free_strichartz_ratio(u_minus: &ComplexField, p: f64, times: &[f64]) -> Result<StrichartzRatios, NlsError> {
    let grid = *u_minus.grid();
    let e = strichartz_exponents(grid.dim(), p)?;
    let mut monitor = StrichartzMonitor::new(&grid, e);
    let mut base = u_minus.values().to_vec();
    with_transform(&grid, |f| f.forward(&mut base));
    let xi2 = grid.xi_squared();
    let mut spec = vec![Complex64::new(0.0, 0.0); grid.len()];
    let mut phys = spec.clone();
    for &t in times {
        for ((s, b), k2) in spec.iter_mut().zip(&base).zip(&xi2) {
            *s = b * Complex64::from_polar(1.0, -t * k2);
        }
        phys.copy_from_slice(&spec);
        with_transform(&grid, |f| f.inverse(&mut phys));
        monitor.record(&grid, t, &phys, &spec);
    }
    ratios_from(&monitor.samples, u_minus, e.q, e.s_c)
}

#[derive(Debug, Clone, Serialize)]
pub struct Diagnostics {
    pub mass_initial: f64,
    /// `||u_-||_H1` on the grid.
    pub h1_minus: f64,
    pub mass_drift: f64,
    /// Mass fraction outside `|x - x0| <= L/2` at `t = -T` and `t = T`.
    pub tail_start: f64,
    pub tail_end: f64,
    /// `||u_+(T) - u_+(T/2)||_H1 / ||u_+(T)||_H1`.
    pub cauchy_difference: f64,
    pub h1_growth: f64,
    pub strichartz: Option<StrichartzRatios>,
    pub free_strichartz: Option<StrichartzRatios>,
    pub duhamel_residual: Option<f64>,
}

/// Outcome of one scattering experiment.
#[derive(Debug, Clone, Serialize)]
pub struct ScatteringRecord {
    pub probe: Option<GaussianProbe>,
    #[serde(skip)]
    pub u_plus: ComplexField,
    /// `<u_+ - u_-, u_->` in the discrete `L^2` product.
    pub pairing: Complex64,
    pub diagnostics: Diagnostics,
    pub accepted: bool,
    /// Reasons for rejection, empty when accepted.
    pub flags: Vec<String>,
}

/// Scattering map `u_- -> u_+ = e^{-iT Delta} u(T)` with its diagnostics.
pub fn scattering_map(u_minus: &ComplexField, spec: &SolveSpec) -> Result<ScatteringRecord, NlsError> {
    let trajectory = solve_from_past(u_minus, spec)?;
    record_from_trajectory(u_minus, spec, &trajectory)
}

pub fn record_from_trajectory(
    u_minus: &ComplexField,
    spec: &SolveSpec,
    trajectory: &Trajectory,
) -> Result<ScatteringRecord, NlsError> {
    let u_plus = free_propagate(&trajectory.end, -spec.horizon)?;
    let (t_half, u_half) = &trajectory.halfway;
    let u_plus_half = free_propagate(u_half, -t_half)?;
    let h1_plus = sobolev_norm(&u_plus, 1.0, false)?;
    let cauchy = sobolev_norm(&u_plus.difference(&u_plus_half)?, 1.0, false)? / h1_plus.max(f64::MIN_POSITIVE);
    let pairing = u_plus.difference(u_minus)?.inner(u_minus)?;
    let center = peak_location(u_minus);
    let strichartz = match &trajectory.strichartz {
        Some(_) => Some(strichartz_ratio(trajectory, u_minus, spec.p)?),
        None => None,
    };
    let free_strichartz = match &trajectory.strichartz {
        Some(s) => Some(free_strichartz_ratio(u_minus, spec.p, &s.times)?),
        None => None,
    };
    let diagnostics = Diagnostics {
        mass_initial: trajectory.masses[0].1,
        h1_minus: trajectory.h1_initial,
        mass_drift: trajectory.mass_drift(),
        tail_start: tail_fraction(&trajectory.start, center),
        tail_end: tail_fraction(&trajectory.end, center),
        cauchy_difference: cauchy,
        h1_growth: trajectory.h1_max / trajectory.h1_initial,
        strichartz,
        free_strichartz,
        duhamel_residual: trajectory.duhamel.as_ref().map(|c| c.iter().map(|x| x.1).fold(0.0, f64::max)),
    };
    let mut flags = Vec::new();
    if !(cauchy <= spec.cauchy_tolerance) {
        flags.push(format!(
            "horizon not converged: H1 gap {cauchy:e} exceeds {:e}",
            spec.cauchy_tolerance
        ));
    }
    if !(diagnostics.mass_drift <= MASS_TOLERANCE) {
        flags.push(format!("mass drift {:e} exceeds {MASS_TOLERANCE:e}", diagnostics.mass_drift));
    }
    if let (Some(s), Some(f)) = (&diagnostics.strichartz, &diagnostics.free_strichartz) {
        for (name, a, b) in [
            ("L2", s.l2, f.l2),
            ("gradient", s.gradient, f.gradient),
            ("critical", s.critical, f.critical),
        ] {
            if !(a <= STRICHARTZ_FACTOR * b) {
                flags.push(format!("{name} Strichartz ratio {a} exceeds {STRICHARTZ_FACTOR} x free {b}"));
            }
        }
    }
    Ok(ScatteringRecord {
        probe: None,
        u_plus,
        pairing,
        diagnostics,
        accepted: flags.is_empty(),
        flags,
    })
}

/// Runs the scattering map on a sampled Gaussian probe.
pub fn scatter_probe(probe: &GaussianProbe, spec: &SolveSpec) -> Result<ScatteringRecord, NlsError> {
    let u_minus = probe_field(probe, spec.grid())?;
    let mut record = scattering_map(&u_minus, spec)?;
    record.probe = Some(*probe);
    Ok(record)
}

#[derive(Debug, Clone)]
pub struct BornResult {
    pub u_plus: ComplexField,
    pub pairing: Complex64,
}

/// Born approximation `u_- - i int e^{-it Delta}[a |v|^p v] dt` with
/// `v = e^{it Delta} u_-`, trapezoid rule on the solver's time grid.
pub fn born_approximation(u_minus: &ComplexField, spec: &SolveSpec) -> Result<BornResult, NlsError> {
    spec.validate()?;
    u_minus.expect_space(Space::Physical)?;
    let grid = *u_minus.grid();
    if spec.grid() != &grid {
        return Err(NlsError::GridMismatch);
    }
    if spec.coeff.is_identically_zero() {
        return Ok(BornResult {
            u_plus: u_minus.clone(),
            pairing: Complex64::new(0.0, 0.0),
        });
    }
    let p = spec.p;
    let dt = spec.dt;
    let steps = spec.total_steps();
    let a = spec.coeff.values();
    let prop = multiplier(&grid, dt);
    // Free state in spectral space, starting at -T.
    let mut v_hat = free_propagate(u_minus, -spec.horizon)?.into_values();
    with_transform(&grid, |f| f.forward(&mut v_hat));
    let mut acc = vec![Complex64::new(0.0, 0.0); grid.len()];
    let mut work = vec![Complex64::new(0.0, 0.0); grid.len()];
    for k in 0..=steps {
        if k > 0 {
            for (v, m) in v_hat.iter_mut().zip(&prop) {
                *v *= m;
            }
        }
        work.copy_from_slice(&v_hat);
        with_transform(&grid, |f| f.inverse(&mut work));
        for (w, &ai) in work.iter_mut().zip(a) {
            *w = nonlinearity(ai, *w, p);
        }
        with_transform(&grid, |f| f.forward(&mut work));
        let weight = if k == 0 || k == steps { 0.5 * dt } else { dt };
        for ((s, n), m) in acc.iter_mut().zip(&work).zip(&prop) {
            if k > 0 {
                *s *= m;
            }
            *s += n * weight;
        }
    }
    // acc = int e^{i(T-s)Delta} N(s) ds; pull back by e^{-iT Delta}.
    let back = multiplier(&grid, -spec.horizon);
    let minus_i = Complex64::new(0.0, -1.0);
    for (s, m) in acc.iter_mut().zip(&back) {
        *s *= m * minus_i;
    }
    with_transform(&grid, |f| f.inverse(&mut acc));
    let correction = ComplexField::new(grid, acc, Space::Physical)?;
    let pairing = correction.inner(u_minus)?;
    let values = u_minus
        .values()
        .iter()
        .zip(correction.values())
        .map(|(u, c)| u + c)
        .collect();
    Ok(BornResult {
        u_plus: ComplexField::new(grid, values, Space::Physical)?,
        pairing,
    })
}

pub fn born_final_state(u_minus: &ComplexField, spec: &SolveSpec) -> Result<ComplexField, NlsError> {
    Ok(born_approximation(u_minus, spec)?.u_plus)
}

/// `H^1` norm of the gap between two final states over the probe's norm.
pub fn relative_h1_gap(a: &ComplexField, b: &ComplexField) -> Result<f64, NlsError> {
    let gap = sobolev_norm(&a.difference(b)?, 1.0, false)?;
    Ok(gap / sobolev_norm(b, 1.0, false)?)
}
