//! Gamma-function machinery and the normalization constant of the Gaussian
//! intensity kernel.
//!
//! `lambda(d, p)` is the space-time integral of
//! `K(t, x) = (1+t^2)^{-d(p+2)/4} exp(-|x|^2 (p+2) / (4(1+t^2)))`:
//! the Gaussian integral in `x` gives `(4 pi (1+t^2)/(p+2))^{d/2}` and the
//! remaining time integral is the Beta integral
//! `int (1+t^2)^{-c} dt = sqrt(pi) Gamma(c-1/2)/Gamma(c)` with `c = dp/4`.
//! Hence `lambda(d, p) = pi^{(d+1)/2} (4/(p+2))^{d/2} Gamma(dp/4-1/2)/Gamma(dp/4)`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SpecialError {
    #[error("argument must be positive (got {0})")]
    NonPositive(f64),
    #[error("power p = {p} is not above the bound {bound} for d = {d}")]
    PowerTooSmall { d: usize, p: f64, bound: f64 },
    #[error("dimension must be at least 1")]
    Dimension,
    #[error("power p = {0} is outside [4/3, 4]")]
    PowerRange(f64),
}

/// Lower end of the intercritical range in three dimensions.
pub const P_MIN: f64 = 4.0 / 3.0;
/// Upper end of the intercritical range in three dimensions.
pub const P_MAX: f64 = 4.0;

// Lanczos approximation, g = 10.900511, eleven terms (Pugh 2004).
const LANCZOS_G: f64 = 10.900511;
#[allow(clippy::excessive_precision)]
const LANCZOS: [f64; 11] = [
    2.48574089138753565546e-5,
    1.05142378581721974210,
    -3.45687097222016235469,
    4.51227709466894823700,
    -2.98285225323576655721,
    1.05639711577126713077,
    -1.95428773191645869583e-1,
    1.70970543404441224307e-2,
    -5.71926117404305781283e-4,
    4.63399473359905636708e-6,
    -2.71994908488607703910e-9,
];
// ln(2 sqrt(e/pi))
const LN_2_SQRT_E_OVER_PI: f64 = 0.620_782_237_635_245_2;

fn ln_gamma_lanczos(x: f64) -> f64 {
    let sum = LANCZOS
        .iter()
        .enumerate()
        .skip(1)
        .fold(LANCZOS[0], |s, (k, c)| s + c / (x + k as f64 - 1.0));
    sum.ln() + LN_2_SQRT_E_OVER_PI + (x - 0.5) * ((x - 0.5 + LANCZOS_G) / std::f64::consts::E).ln()
}

/// `ln Gamma(x)` for `x > 0`.
pub fn log_gamma(x: f64) -> Result<f64, SpecialError> {
    if !(x > 0.0) {
        return Err(SpecialError::NonPositive(x));
    }
    if x < 0.5 {
        // Reflection: Gamma(x) Gamma(1-x) = pi / sin(pi x).
        return Ok((PI / (PI * x).sin()).ln() - ln_gamma_lanczos(1.0 - x));
    }
    Ok(ln_gamma_lanczos(x))
}

/// Digamma `psi(x) = Gamma'(x)/Gamma(x)` for `x > 0`.
///
/// Upward recurrence to `x >= 10`, then the asymptotic Bernoulli series.
pub fn digamma(x: f64) -> Result<f64, SpecialError> {
    if !(x > 0.0) {
        return Err(SpecialError::NonPositive(x));
    }
    let mut shift = 0.0;
    let mut z = x;
    while z < 10.0 {
        shift -= 1.0 / z;
        z += 1.0;
    }
    let r = 1.0 / (z * z);
    let series = r
        * (1.0 / 12.0
            - r * (1.0 / 120.0
                - r * (1.0 / 252.0 - r * (1.0 / 240.0 - r * (1.0 / 132.0 - r * 691.0 / 32760.0)))));
    Ok(shift + z.ln() - 0.5 / z - series)
}

/// `ln B(a, b)`.
pub fn log_beta(a: f64, b: f64) -> Result<f64, SpecialError> {
    Ok(log_gamma(a)? + log_gamma(b)? - log_gamma(a + b)?)
}

/// Kernel normalization with its derivative in `p`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LambdaValue {
    pub d: usize,
    pub p: f64,
    pub value: f64,
    /// `d lambda / d p`.
    pub derivative: f64,
}

pub fn lambda_const(d: usize, p: f64) -> Result<LambdaValue, SpecialError> {
    if d == 0 {
        return Err(SpecialError::Dimension);
    }
    let df = d as f64;
    let bound = 2.0 / df;
    if !(p > bound) {
        return Err(SpecialError::PowerTooSmall { d, p, bound });
    }
    let c = df * p / 4.0;
    let ln_ratio = log_gamma(c - 0.5)? - log_gamma(c)?;
    let value = PI.powf(0.5 * (df + 1.0)) * (4.0 / (p + 2.0)).powf(0.5 * df) * ln_ratio.exp();
    let log_derivative = -0.5 * df / (p + 2.0) + 0.25 * df * (digamma(c - 0.5)? - digamma(c)?);
    Ok(LambdaValue {
        d,
        p,
        value,
        derivative: value * log_derivative,
    })
}

/// Prefactor `c` in `lambda(3, p) = c (p+2)^{-3/2} Gamma(3p/4-1/2)/Gamma(3p/4)`.
pub const LAMBDA3_PREFACTOR: f64 = 8.0 * PI * PI;

fn check_range(p: f64) -> Result<(), SpecialError> {
    if !(P_MIN - 1e-12..=P_MAX + 1e-12).contains(&p) {
        return Err(SpecialError::PowerRange(p));
    }
    Ok(())
}

/// `lambda'(p)` in three dimensions written through the digamma function.
pub fn lambda_prime(p: f64) -> Result<f64, SpecialError> {
    check_range(p)?;
    let c = 0.75 * p;
    let ratio = (log_gamma(c - 0.5)? - log_gamma(c)?).exp();
    let bracket = 1.5 / (p + 2.0) + 0.75 * (digamma(c)? - digamma(c - 0.5)?);
    Ok(-LAMBDA3_PREFACTOR * (p + 2.0).powf(-1.5) * ratio * bracket)
}

/// Pointwise lower bound on `|lambda'(p)|` from Gautschi's inequality and
/// the monotonicity of `psi`.
pub fn lambda_prime_floor(p: f64) -> Result<f64, SpecialError> {
    check_range(p)?;
    Ok(1.5 * LAMBDA3_PREFACTOR * (p + 2.0).powf(-2.5) * (0.75 * p).powf(-0.5))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Clamp {
    /// Target above `lambda(3, 4/3)`; `p` saturated at 4/3.
    Low,
    /// Target below `lambda(3, 4)`; `p` saturated at 4.
    High,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Inversion {
    pub p: f64,
    pub clamp: Option<Clamp>,
}

/// Solves `lambda(3, p) = target` on `[4/3, 4]` by bisection to `|dp| <= 1e-10`.
///
/// Targets outside the range saturate at the nearer endpoint with a flag.
pub fn invert_lambda(target: f64) -> Result<Inversion, SpecialError> {
    let lam = |p: f64| lambda_const(3, p).map(|v| v.value);
    let (hi_val, lo_val) = (lam(P_MIN)?, lam(P_MAX)?);
    if target >= hi_val {
        let clamp = (target > hi_val).then_some(Clamp::Low);
        return Ok(Inversion { p: P_MIN, clamp });
    }
    if target <= lo_val {
        let clamp = (target < lo_val).then_some(Clamp::High);
        return Ok(Inversion { p: P_MAX, clamp });
    }
    // lambda is strictly decreasing.
    let (mut a, mut b) = (P_MIN, P_MAX);
    while b - a > 1e-11 {
        let mid = 0.5 * (a + b);
        if lam(mid)? > target {
            a = mid;
        } else {
            b = mid;
        }
    }
    Ok(Inversion {
        p: 0.5 * (a + b),
        clamp: None,
    })
}

/// Admissible Strichartz pair and critical exponents for power `p` (d = 3).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExponentSet {
    pub p: f64,
    pub q: f64,
    pub r: f64,
    pub s_c: f64,
    pub r_c: f64,
}

impl ExponentSet {
    /// `2/q + 3/r - 3/2`, zero for an admissible pair.
    pub fn admissibility_defect(&self) -> f64 {
        2.0 / self.q + 3.0 / self.r - 1.5
    }
}

pub fn scattering_exponents(p: f64) -> Result<ExponentSet, SpecialError> {
    check_range(p)?;
    Ok(ExponentSet {
        p,
        q: p + 2.0,
        r: 6.0 * (p + 2.0) / (3.0 * (p + 2.0) - 4.0),
        s_c: 1.5 - 2.0 / p,
        r_c: 3.0 * p * (p + 2.0) / 4.0,
    })
}

/// Strichartz pair `(p+2, 2d(p+2)/(d(p+2)-4))` and critical exponents in
/// dimension `d`, for any `p >= 4/d` (no upper limit).
pub fn strichartz_exponents(d: usize, p: f64) -> Result<ExponentSet, SpecialError> {
    if d == 0 {
        return Err(SpecialError::Dimension);
    }
    let df = d as f64;
    let bound = 4.0 / df;
    if !(p >= bound - 1e-12) {
        return Err(SpecialError::PowerTooSmall { d, p, bound });
    }
    let q = p + 2.0;
    let r = 2.0 * df * q / (df * q - 4.0);
    let s_c = 0.5 * df - 2.0 / p;
    // Sobolev embedding H^{s_c} into L^{r_c}.
    let r_c = 1.0 / (1.0 / r - s_c / df);
    Ok(ExponentSet { p, q, r, s_c, r_c })
}
