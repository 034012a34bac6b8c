//! Gaussian probes `exp(-|x - x0|^2 / (4 sigma^2))`, their exact free
//! evolution, the intensity kernel `K` and quadrature oracles built on it.

use std::f64::consts::{FRAC_PI_2, PI};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::coefficient::Coefficient;
use crate::quadrature::{gauss_legendre, QuadratureError, Quadrature};
use crate::special::{lambda_const, log_gamma, SpecialError};
use crate::spectral::{ComplexField, Space, SpectralGrid};

#[derive(Debug, thiserror::Error)]
pub enum GaussianError {
    #[error("probe width must be positive and finite (got {0})")]
    Sigma(f64),
    #[error("dimension must be 1, 2 or 3 (got {0})")]
    Dimension(usize),
    #[error("probe centre has a nonzero component beyond dimension {0}")]
    Center(usize),
    #[error("probe is too wide for the grid: boundary value {0:e} is not below 1e-12")]
    TooWide(f64),
    #[error("probe and grid dimensions differ ({probe} vs {grid})")]
    GridDimension { probe: usize, grid: usize },
    #[error("homogeneous Sobolev order {s} needs s + d/2 > 0 (d = {d})")]
    SobolevOrder { s: f64, d: usize },
    #[error("tail moment order s = {s} must lie in (0, {bound})")]
    TailOrder { s: f64, bound: f64 },
    #[error("tail radius must be positive (got {0})")]
    Radius(f64),
    #[error("probe core [x0 - 4 sigma, x0 + 4 sigma] leaves the coefficient box of half width {0}")]
    Domain(f64),
    #[error("coefficient spacing {spacing} exceeds sigma/4 = {limit}")]
    Resolution { spacing: f64, limit: f64 },
    #[error(transparent)]
    Special(#[from] SpecialError),
    #[error(transparent)]
    Quadrature(#[from] QuadratureError),
}

/// Largest admissible probe value on the box boundary.
pub const BOUNDARY_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianProbe {
    pub sigma: f64,
    pub center: [f64; 3],
    pub dim: usize,
}

fn unit_sphere_area(d: usize) -> f64 {
    match d {
        1 => 2.0,
        2 => 2.0 * PI,
        _ => 4.0 * PI,
    }
}

impl GaussianProbe {
    pub fn new(dim: usize, sigma: f64, center: [f64; 3]) -> Result<Self, GaussianError> {
        if !(1..=3).contains(&dim) {
            return Err(GaussianError::Dimension(dim));
        }
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(GaussianError::Sigma(sigma));
        }
        if center[dim..].iter().any(|&c| c != 0.0) || center.iter().any(|c| !c.is_finite()) {
            return Err(GaussianError::Center(dim));
        }
        Ok(Self { sigma, center, dim })
    }

    pub fn centered(dim: usize, sigma: f64) -> Result<Self, GaussianError> {
        Self::new(dim, sigma, [0.0; 3])
    }

    fn offset_squared(&self, x: [f64; 3]) -> f64 {
        (0..self.dim).map(|i| (x[i] - self.center[i]).powi(2)).sum()
    }

    pub fn value(&self, x: [f64; 3]) -> f64 {
        (-self.offset_squared(x) / (4.0 * self.sigma * self.sigma)).exp()
    }

    /// `||phi||_{H^s dot}` from the continuum transform
    /// `(4 pi sigma^2)^{d/2} exp(-sigma^2 |xi|^2)`.
    pub fn homogeneous_norm(&self, s: f64) -> Result<f64, GaussianError> {
        let d = self.dim as f64;
        let order = s + 0.5 * d;
        if !(order > 0.0) {
            return Err(GaussianError::SobolevOrder { s, d: self.dim });
        }
        let s2 = self.sigma * self.sigma;
        // |S^{d-1}| Gamma(s + d/2) / 2 (2 sigma^2)^{-(s + d/2)} (4 pi sigma^2)^d (2 pi)^{-d}
        let ln = -order * (2.0 * s2).ln()
            + log_gamma(order)?
            + (unit_sphere_area(self.dim) / 2.0).ln()
            + d * (4.0 * PI * s2).ln()
            - d * (2.0 * PI).ln();
        Ok((0.5 * ln).exp())
    }

    pub fn l2_norm(&self) -> f64 {
        (2.0 * PI * self.sigma * self.sigma).powf(0.25 * self.dim as f64)
    }

    /// Inhomogeneous `H^1` norm, `sqrt(||phi||^2 + ||grad phi||^2)`.
    pub fn h1_norm(&self) -> f64 {
        let grad = self.homogeneous_norm(1.0).expect("order 1 is always admissible");
        (self.l2_norm().powi(2) + grad * grad).sqrt()
    }

    /// Exact free evolution `[sigma^2/(sigma^2 + i t)]^{d/2} exp(-|x - x0|^2 / (4(sigma^2 + i t)))`.
    pub fn free_evolution(&self, t: f64, x: [f64; 3]) -> Complex64 {
        let s2 = self.sigma * self.sigma;
        let z = Complex64::new(s2, t);
        let amplitude = (Complex64::new(s2, 0.0) / z).powf(0.5 * self.dim as f64);
        amplitude * (-self.offset_squared(x) / (4.0 * z)).exp()
    }

    /// `exp(-min_i (L - |x0_i|)^2 / (4 sigma^2))`, the largest value on the box boundary.
    pub fn boundary_value(&self, grid: &SpectralGrid) -> f64 {
        let l = grid.half_width();
        let gap = (0..self.dim)
            .map(|i| l - self.center[i].abs())
            .fold(f64::INFINITY, f64::min)
            .max(0.0);
        (-gap * gap / (4.0 * self.sigma * self.sigma)).exp()
    }

    fn check_grid(&self, grid: &SpectralGrid) -> Result<(), GaussianError> {
        if grid.dim() != self.dim {
            return Err(GaussianError::GridDimension {
                probe: self.dim,
                grid: grid.dim(),
            });
        }
        let edge = self.boundary_value(grid);
        if edge >= BOUNDARY_TOLERANCE {
            return Err(GaussianError::TooWide(edge));
        }
        Ok(())
    }
}

/// Samples the probe on `grid`.
pub fn probe_field(probe: &GaussianProbe, grid: &SpectralGrid) -> Result<ComplexField, GaussianError> {
    probe.check_grid(grid)?;
    Ok(ComplexField::from_fn(*grid, |x| Complex64::new(probe.value(x), 0.0)))
}

/// Pointwise closed form of `e^{it Delta} phi`.
pub fn probe_free_evolution(probe: &GaussianProbe, t: f64, x: [f64; 3]) -> Complex64 {
    probe.free_evolution(t, x)
}

/// Free evolution of the probe on the torus: the closed form summed over
/// periodic images until the added images fall below `1e-17` relative.
///
/// The sum factorizes over axes, so it costs `O(d n)` image sums.
pub fn periodic_free_evolution(
    probe: &GaussianProbe,
    t: f64,
    grid: &SpectralGrid,
) -> Result<ComplexField, GaussianError> {
    probe.check_grid(grid)?;
    let n = grid.points_per_axis();
    let period = 2.0 * grid.half_width();
    let s2 = probe.sigma * probe.sigma;
    let z = Complex64::new(s2, t);
    let root = (Complex64::new(s2, 0.0) / z).sqrt();
    // |exp(-y^2/(4z))| = exp(-y^2 sigma^2 / (4 |z|^2))
    let decay = s2 / (4.0 * z.norm_sqr());
    let factors: Vec<Vec<Complex64>> = (0..probe.dim)
        .map(|axis| {
            (0..n)
                .map(|j| {
                    let y = grid.coordinate(j) - probe.center[axis];
                    let mut sum = (-y * y / (4.0 * z)).exp();
                    let mut m = 1.0f64;
                    loop {
                        let (a, b) = (y + m * period, y - m * period);
                        let term = (-a * a / (4.0 * z)).exp() + (-b * b / (4.0 * z)).exp();
                        sum += term;
                        let nearest = a.abs().min(b.abs());
                        if (-nearest * nearest * decay).exp() < 1e-17 {
                            break;
                        }
                        m += 1.0;
                    }
                    root * sum
                })
                .collect()
        })
        .collect();
    let values = (0..grid.len())
        .map(|flat| {
            let idx = grid.multi_index(flat);
            (0..probe.dim).fold(Complex64::new(1.0, 0.0), |acc, axis| acc * factors[axis][idx[axis]])
        })
        .collect();
    Ok(ComplexField::new(*grid, values, Space::Physical).expect("length matches grid"))
}

/// The intensity kernel `K(t, x) = (1+t^2)^{-d(p+2)/4} exp(-|x|^2 (p+2) / (4(1+t^2)))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub d: usize,
    pub p: f64,
}

impl KernelSpec {
    pub fn value(&self, t: f64, x: [f64; 3]) -> f64 {
        let r2: f64 = x[..self.d.min(3)].iter().map(|c| c * c).sum();
        self.radial(t, r2.sqrt())
    }

    pub fn radial(&self, t: f64, r: f64) -> f64 {
        let q = self.p + 2.0;
        let w = 1.0 + t * t;
        w.powf(-0.25 * self.d as f64 * q) * (-r * r * q / (4.0 * w)).exp()
    }
}

/// Space-time integral of `K` by nested adaptive quadrature.
///
/// The outer time integral uses `t = tan(theta)`; the inner radial integral
/// is rescaled by the Gaussian width `sqrt(1+t^2)`.
pub fn quad_lambda(d: usize, p: f64, tol: f64) -> Result<f64, GaussianError> {
    radial_moment_integral(d, p, 0.0, 0.0, tol)
}

// int dt int_{|x| > r_min} |x|^s K dx
fn radial_moment_integral(d: usize, p: f64, r_min: f64, s: f64, tol: f64) -> Result<f64, GaussianError> {
    if !(1..=3).contains(&d) {
        return Err(GaussianError::Dimension(d));
    }
    let bound = 2.0 / d as f64;
    if !(p > bound) {
        return Err(SpecialError::PowerTooSmall { d, p, bound }.into());
    }
    let kernel = KernelSpec { d, p };
    let area = unit_sphere_area(d);
    let df = d as f64;
    let c2 = 0.25 * (p + 2.0);
    let inner_q = Quadrature::with_tolerance(0.0, 0.05 * tol);
    let outer_q = Quadrature::with_tolerance(0.0, tol);
    let mut failure = None;
    let time_integrand = |t: f64| {
        if failure.is_some() {
            return 0.0;
        }
        let w2 = 1.0 + t * t;
        let w = w2.sqrt();
        // r = w u
        let inner = inner_q.integrate_upper(|u| (-c2 * u * u).exp() * u.powf(df - 1.0 + s), r_min / w);
        match inner {
            Ok(r) => kernel.radial(t, 0.0) * area * w.powf(df + s) * r.value,
            Err(e) => {
                failure = Some(e);
                0.0
            }
        }
    };
    // K is even in t.
    let half = outer_q.integrate_upper(time_integrand, 0.0);
    if let Some(e) = failure {
        return Err(e.into());
    }
    Ok(2.0 * half?.value)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TailMass {
    /// `int dt int_{|x|>R} K dx`.
    pub mass: f64,
    /// Chebyshev bound `R^{-s} int int |x|^s K`.
    pub moment_bound: f64,
}

pub fn tail_mass(d: usize, p: f64, radius: f64, s: f64) -> Result<TailMass, GaussianError> {
    if !(radius > 0.0 && radius.is_finite()) {
        return Err(GaussianError::Radius(radius));
    }
    let bound = 0.5 * d as f64 * p - 1.0;
    if !(s > 0.0 && s < bound) {
        return Err(GaussianError::TailOrder { s, bound });
    }
    let mass = radial_moment_integral(d, p, radius, 0.0, 1e-10)?;
    let moment = radial_moment_integral(d, p, 0.0, s, 1e-10)?;
    Ok(TailMass {
        mass,
        moment_bound: radius.powf(-s) * moment,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ApproxIdentity {
    /// `int int |e^{it Delta} phi|^{p+2} a dx dt`.
    pub integral: f64,
    /// `sigma^{d+2} lambda(d, p) a(x0)`.
    pub main_term: f64,
    /// `|integral - main_term|`.
    pub error: f64,
}

/// Angular points used for spherical averages.
const MU_NODES: usize = 24;
const PHI_NODES: usize = 48;

/// Product rule on the unit sphere: Gauss-Legendre in `cos(theta)`, trapezoid in the azimuth.
struct SphereRule {
    directions: Vec<([f64; 3], f64)>,
}

impl SphereRule {
    fn new(d: usize) -> Self {
        let directions = match d {
            1 => vec![([1.0, 0.0, 0.0], 1.0), ([-1.0, 0.0, 0.0], 1.0)],
            2 => (0..PHI_NODES)
                .map(|k| {
                    let phi = 2.0 * PI * k as f64 / PHI_NODES as f64;
                    ([phi.cos(), phi.sin(), 0.0], 2.0 * PI / PHI_NODES as f64)
                })
                .collect(),
            _ => {
                let (mu, wmu) = gauss_legendre(MU_NODES);
                let mut dirs = Vec::with_capacity(MU_NODES * PHI_NODES);
                for (m, wm) in mu.iter().zip(&wmu) {
                    let rho = (1.0 - m * m).sqrt();
                    for k in 0..PHI_NODES {
                        let phi = 2.0 * PI * (k as f64 + 0.5) / PHI_NODES as f64;
                        dirs.push(([rho * phi.cos(), rho * phi.sin(), *m], wm * 2.0 * PI / PHI_NODES as f64));
                    }
                }
                dirs
            }
        };
        Self { directions }
    }

    /// `int_{S^{d-1}} (a(x0 + r w) - a0) dw`.
    fn deviation(&self, coeff: &dyn Coefficient, x0: [f64; 3], a0: f64, r: f64) -> f64 {
        self.directions
            .iter()
            .map(|(w, weight)| weight * (coeff.value([x0[0] + r * w[0], x0[1] + r * w[1], x0[2] + r * w[2]]) - a0))
            .sum()
    }
}

/// Time-integrated kernel at radius `rho = |x - x0| / sigma`, divided by `sigma^2`:
/// `int cos^{2c1-2}(theta) exp(-c2 rho^2 cos^2(theta)) dtheta` over `(-pi/2, pi/2)`.
fn time_profile(q: &Quadrature, c1: f64, c2: f64, rho: f64) -> Result<f64, QuadratureError> {
    let half = q.integrate(
        |theta: f64| {
            let c = theta.cos();
            c.powf(2.0 * c1 - 2.0) * (-c2 * rho * rho * c * c).exp()
        },
        0.0,
        FRAC_PI_2,
    )?;
    Ok(2.0 * half.value)
}

/// Approximate-identity defect of the probe intensity against `coeff`.
///
/// The space-time integral is reduced to a radial one around `x0`; the
/// integrand carries the spherical integral of `a - a(x0)`, so constant
/// coefficients cancel exactly rather than through subtraction of two large numbers.
pub fn approx_identity_error(
    coeff: &dyn Coefficient,
    probe: &GaussianProbe,
    p: f64,
) -> Result<ApproxIdentity, GaussianError> {
    let d = probe.dim;
    let sigma = probe.sigma;
    if let Some(grid) = coeff.domain() {
        let reach = (0..d).map(|i| probe.center[i].abs()).fold(0.0, f64::max) + 4.0 * sigma;
        if reach > grid.half_width() {
            return Err(GaussianError::Domain(grid.half_width()));
        }
        let limit = 0.25 * sigma;
        if grid.spacing() > limit * (1.0 + 1e-12) {
            return Err(GaussianError::Resolution {
                spacing: grid.spacing(),
                limit,
            });
        }
    }
    let lambda = lambda_const(d, p)?.value;
    let a0 = coeff.value(probe.center);
    let main_term = sigma.powi(d as i32 + 2) * lambda * a0;
    let df = d as f64;
    let c1 = 0.25 * df * (p + 2.0);
    let c2 = 0.25 * (p + 2.0);
    let sphere = SphereRule::new(d);
    let inner_q = Quadrature::with_tolerance(0.0, 1e-12);
    let outer_q = Quadrature {
        abs_tol: 1e-14 * main_term.abs().max(f64::MIN_POSITIVE),
        rel_tol: 1e-9,
        max_intervals: 20_000,
    };
    let mut failure = None;
    // r = sigma u; the sigma^2 of the time substitution and sigma^d of dr r^{d-1}
    // are applied outside.
    let integrand = |u: f64| {
        if failure.is_some() {
            return 0.0;
        }
        let shell = sphere.deviation(coeff, probe.center, a0, sigma * u);
        if shell == 0.0 {
            return 0.0;
        }
        match time_profile(&inner_q, c1, c2, u) {
            Ok(g) => g * u.powf(df - 1.0) * shell,
            Err(e) => {
                failure = Some(e);
                0.0
            }
        }
    };
    let defect = outer_q.integrate_upper(integrand, 0.0);
    if let Some(e) = failure {
        return Err(e.into());
    }
    let defect = defect?.value * sigma.powi(d as i32 + 2);
    Ok(ApproxIdentity {
        integral: main_term + defect,
        main_term,
        error: defect.abs(),
    })
}
