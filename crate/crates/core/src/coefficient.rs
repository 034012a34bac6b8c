//! Real coefficients `a(x)` of the nonlinearity, either as analytic models or
//! as sampled profiles with certified `W^{1,inf}` bounds.

use serde::{Deserialize, Serialize};

use crate::spectral::{ComplexField, Space, SpectralError, SpectralGrid};

#[derive(Debug, thiserror::Error)]
pub enum CoefficientError {
    #[error("profile has {found} values but the grid holds {expected}")]
    Length { expected: usize, found: usize },
    #[error("coefficient value at index {0} is not finite")]
    NonFinite(usize),
    #[error("{which} bound {bound} is below the measured value {measured}")]
    Bound {
        which: &'static str,
        bound: f64,
        measured: f64,
    },
    #[error("coefficient field has an imaginary part of size {0}")]
    Imaginary(f64),
    #[error("model parameter {0} must be positive and finite")]
    Parameter(&'static str),
    #[error(transparent)]
    Spectral(#[from] SpectralError),
}

/// Anything that can be evaluated as a real coefficient.
pub trait Coefficient: Send + Sync {
    fn value(&self, x: [f64; 3]) -> f64;
    /// `||a||_inf` upper bound.
    fn sup_norm(&self) -> f64;
    /// `||grad a||_inf` upper bound.
    fn lip_norm(&self) -> f64;
    /// Box outside which values are only defined by periodic extension.
    fn domain(&self) -> Option<SpectralGrid> {
        None
    }
    fn w1inf(&self) -> f64 {
        self.sup_norm() + self.lip_norm()
    }
}

fn distance_squared(x: [f64; 3], c: [f64; 3]) -> f64 {
    x.iter().zip(&c).map(|(a, b)| (a - b) * (a - b)).sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bump {
    pub amplitude: f64,
    pub width: f64,
    #[serde(default)]
    pub center: [f64; 3],
}

/// Closed-form coefficient families.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CoefficientModel {
    Constant {
        value: f64,
    },
    /// `base + sum_k A_k exp(-|x - c_k|^2 / w_k^2)`.
    Gaussian {
        base: f64,
        bumps: Vec<Bump>,
    },
    /// `base + height * max(0, 1 - |x - c| / radius)`; Lipschitz, not smooth.
    Cone {
        base: f64,
        height: f64,
        radius: f64,
        #[serde(default)]
        center: [f64; 3],
    },
}

impl CoefficientModel {
    pub fn validate(&self) -> Result<(), CoefficientError> {
        let finite = |v: f64, name| if v.is_finite() { Ok(()) } else { Err(CoefficientError::Parameter(name)) };
        let positive = |v: f64, name| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(CoefficientError::Parameter(name))
            }
        };
        match self {
            Self::Constant { value } => finite(*value, "value"),
            Self::Gaussian { base, bumps } => {
                finite(*base, "base")?;
                for b in bumps {
                    finite(b.amplitude, "amplitude")?;
                    positive(b.width, "width")?;
                    b.center.iter().try_for_each(|&c| finite(c, "center"))?;
                }
                Ok(())
            }
            Self::Cone {
                base,
                height,
                radius,
                center,
            } => {
                finite(*base, "base")?;
                finite(*height, "height")?;
                positive(*radius, "radius")?;
                center.iter().try_for_each(|&c| finite(c, "center"))
            }
        }
    }

    /// The same model shifted by `h`, i.e. `x -> a(x - h)`.
    pub fn translated(&self, h: [f64; 3]) -> Self {
        let shift = |c: [f64; 3]| [c[0] + h[0], c[1] + h[1], c[2] + h[2]];
        match self {
            Self::Constant { .. } => self.clone(),
            Self::Gaussian { base, bumps } => Self::Gaussian {
                base: *base,
                bumps: bumps
                    .iter()
                    .map(|b| Bump {
                        center: shift(b.center),
                        ..b.clone()
                    })
                    .collect(),
            },
            Self::Cone {
                base,
                height,
                radius,
                center,
            } => Self::Cone {
                base: *base,
                height: *height,
                radius: *radius,
                center: shift(*center),
            },
        }
    }

    /// `self + h * exp(-|x - c|^2 / w^2)`, available for constant and Gaussian models.
    pub fn with_bump(&self, bump: Bump) -> Option<Self> {
        match self {
            Self::Constant { value } => Some(Self::Gaussian {
                base: *value,
                bumps: vec![bump],
            }),
            Self::Gaussian { base, bumps } => {
                let mut bumps = bumps.clone();
                bumps.push(bump);
                Some(Self::Gaussian { base: *base, bumps })
            }
            Self::Cone { .. } => None,
        }
    }

    pub fn is_zero(&self) -> bool {
        match self {
            Self::Constant { value } => *value == 0.0,
            Self::Gaussian { base, bumps } => *base == 0.0 && bumps.iter().all(|b| b.amplitude == 0.0),
            Self::Cone { base, height, .. } => *base == 0.0 && *height == 0.0,
        }
    }
}

impl Coefficient for CoefficientModel {
    fn value(&self, x: [f64; 3]) -> f64 {
        match self {
            Self::Constant { value } => *value,
            Self::Gaussian { base, bumps } => bumps.iter().fold(*base, |acc, b| {
                acc + b.amplitude * (-distance_squared(x, b.center) / (b.width * b.width)).exp()
            }),
            Self::Cone {
                base,
                height,
                radius,
                center,
            } => base + height * (1.0 - distance_squared(x, *center).sqrt() / radius).max(0.0),
        }
    }

    fn sup_norm(&self) -> f64 {
        match self {
            Self::Constant { value } => value.abs(),
            Self::Gaussian { base, bumps } => bumps.iter().fold(base.abs(), |acc, b| acc + b.amplitude.abs()),
            Self::Cone { base, height, .. } => base.abs() + height.abs(),
        }
    }

    fn lip_norm(&self) -> f64 {
        // max_r (2r/w^2) exp(-r^2/w^2) = sqrt(2)/w * exp(-1/2)
        match self {
            Self::Constant { .. } => 0.0,
            Self::Gaussian { bumps, .. } => bumps
                .iter()
                .map(|b| b.amplitude.abs() * std::f64::consts::SQRT_2 / b.width * (-0.5f64).exp())
                .sum(),
            Self::Cone { height, radius, .. } => height.abs() / radius,
        }
    }
}

/// Sampled coefficient on a grid with certified bounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientProfile {
    grid: SpectralGrid,
    values: Vec<f64>,
    sup_norm: f64,
    lip_norm: f64,
}

/// Safety factor on finite-difference gradient estimates.
pub const LIPSCHITZ_SLACK: f64 = 1.1;

impl CoefficientProfile {
    /// Samples an analytic model; bounds come from the model.
    pub fn from_model(model: &CoefficientModel, grid: SpectralGrid) -> Result<Self, CoefficientError> {
        model.validate()?;
        let values = (0..grid.len()).map(|i| model.value(grid.point(i))).collect();
        Self::from_values(grid, values, Some((model.sup_norm(), model.lip_norm())))
    }

    /// Wraps raw samples. Supplied bounds are checked against the samples:
    /// every one-axis difference quotient is a lower bound for `||grad a||_inf`
    /// by the mean value theorem. Missing bounds are measured, the gradient
    /// with [`LIPSCHITZ_SLACK`].
    pub fn from_values(
        grid: SpectralGrid,
        values: Vec<f64>,
        bounds: Option<(f64, f64)>,
    ) -> Result<Self, CoefficientError> {
        if values.len() != grid.len() {
            return Err(CoefficientError::Length {
                expected: grid.len(),
                found: values.len(),
            });
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(CoefficientError::NonFinite(i));
        }
        let max_abs = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let max_slope = max_axis_slope(&grid, &values);
        let (sup_norm, lip_norm) = match bounds {
            Some((sup, lip)) => {
                // Tiny tolerance for the rounding of sampled values.
                if !(sup >= max_abs * (1.0 - 1e-14)) {
                    return Err(CoefficientError::Bound {
                        which: "sup",
                        bound: sup,
                        measured: max_abs,
                    });
                }
                if !(lip >= max_slope * (1.0 - 1e-12)) {
                    return Err(CoefficientError::Bound {
                        which: "Lipschitz",
                        bound: lip,
                        measured: max_slope,
                    });
                }
                (sup, lip)
            }
            None => (
                max_abs,
                LIPSCHITZ_SLACK * max_slope.max(max_central_gradient(&grid, &values)),
            ),
        };
        Ok(Self {
            grid,
            values,
            sup_norm,
            lip_norm,
        })
    }

    /// Real part of a physical field, e.g. loaded from an NLSF file.
    pub fn from_field(field: &ComplexField, bounds: Option<(f64, f64)>) -> Result<Self, CoefficientError> {
        field.expect_space(Space::Physical)?;
        let scale = field.values().iter().fold(0.0f64, |m, v| m.max(v.re.abs()));
        let imag = field.values().iter().fold(0.0f64, |m, v| m.max(v.im.abs()));
        if imag > 1e-12 * scale.max(1.0) {
            return Err(CoefficientError::Imaginary(imag));
        }
        let values = field.values().iter().map(|v| v.re).collect();
        Self::from_values(*field.grid(), values, bounds)
    }

    /// Samples any coefficient on `grid`, keeping its bounds.
    pub fn sample(coeff: &dyn Coefficient, grid: SpectralGrid) -> Result<Self, CoefficientError> {
        let values = (0..grid.len()).map(|i| coeff.value(grid.point(i))).collect();
        Self::from_values(grid, values, Some((coeff.sup_norm(), coeff.lip_norm())))
    }

    pub fn grid(&self) -> &SpectralGrid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn to_field(&self) -> ComplexField {
        let values = self.values.iter().map(|&v| v.into()).collect();
        ComplexField::new(self.grid, values, Space::Physical).expect("length checked at construction")
    }

    pub fn is_identically_zero(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0)
    }

    /// Periodic multilinear interpolation.
    pub fn interpolate(&self, x: [f64; 3]) -> f64 {
        let n = self.grid.points_per_axis();
        let h = self.grid.spacing();
        let l = self.grid.half_width();
        let d = self.grid.dim();
        let mut base = [0usize; 3];
        let mut frac = [0.0; 3];
        for axis in 0..d {
            let s = ((x[axis] + l) / h).rem_euclid(n as f64);
            let i = s.floor();
            base[axis] = (i as usize) % n;
            frac[axis] = s - i;
        }
        let mut acc = 0.0;
        for corner in 0..(1usize << d) {
            let mut idx = [0usize; 3];
            let mut w = 1.0;
            for axis in 0..d {
                let up = (corner >> axis) & 1 == 1;
                idx[axis] = if up { (base[axis] + 1) % n } else { base[axis] };
                w *= if up { frac[axis] } else { 1.0 - frac[axis] };
            }
            if w != 0.0 {
                acc += w * self.values[self.grid.flat_index(idx)];
            }
        }
        acc
    }

    /// Values on another grid, reusing samples when the grids agree.
    pub fn resample(&self, grid: SpectralGrid) -> Result<Self, CoefficientError> {
        if grid == self.grid {
            return Ok(self.clone());
        }
        let values = (0..grid.len()).map(|i| self.interpolate(grid.point(i))).collect();
        Self::from_values(grid, values, Some((self.sup_norm, self.lip_norm)))
    }
}

impl Coefficient for CoefficientProfile {
    fn value(&self, x: [f64; 3]) -> f64 {
        self.interpolate(x)
    }
    fn sup_norm(&self) -> f64 {
        self.sup_norm
    }
    fn lip_norm(&self) -> f64 {
        self.lip_norm
    }
    fn domain(&self) -> Option<SpectralGrid> {
        Some(self.grid)
    }
}

fn neighbour(grid: &SpectralGrid, idx: [usize; 3], axis: usize, up: bool) -> usize {
    let n = grid.points_per_axis();
    let mut next = idx;
    next[axis] = if up { (idx[axis] + 1) % n } else { (idx[axis] + n - 1) % n };
    grid.flat_index(next)
}

/// Largest one-axis forward difference quotient, periodic wrap.
fn max_axis_slope(grid: &SpectralGrid, values: &[f64]) -> f64 {
    let h = grid.spacing();
    (0..values.len())
        .flat_map(|flat| {
            let idx = grid.multi_index(flat);
            (0..grid.dim()).map(move |axis| ((values[neighbour(grid, idx, axis, true)] - values[flat]) / h).abs())
        })
        .fold(0.0, f64::max)
}

/// Largest magnitude of the central-difference gradient, periodic wrap.
fn max_central_gradient(grid: &SpectralGrid, values: &[f64]) -> f64 {
    let h = grid.spacing();
    (0..values.len())
        .map(|flat| {
            let idx = grid.multi_index(flat);
            let sq: f64 = (0..grid.dim())
                .map(|axis| {
                    let diff = (values[neighbour(grid, idx, axis, true)] - values[neighbour(grid, idx, axis, false)])
                        / (2.0 * h);
                    diff * diff
                })
                .sum();
            sq.sqrt()
        })
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn bump_model() -> CoefficientModel {
        CoefficientModel::Gaussian {
            base: 1.0,
            bumps: vec![Bump {
                amplitude: 0.5,
                width: 1.0,
                center: [0.0; 3],
            }],
        }
    }

    #[test]
    fn model_values_and_bounds() {
        let m = bump_model();
        assert_eq!(m.value([0.0; 3]), 1.5);
        assert!((m.value([1.0, 0.0, 0.0]) - (1.0 + 0.5 * (-1.0f64).exp())).abs() < 1e-15);
        assert_eq!(m.sup_norm(), 1.5);
        assert!((m.lip_norm() - 0.5 * 2f64.sqrt() * (-0.5f64).exp()).abs() < 1e-15);
        let cone = CoefficientModel::Cone {
            base: 1.0,
            height: 1.0,
            radius: 1.0,
            center: [0.5, 0.0, 0.0],
        };
        assert_eq!(cone.value([0.5, 0.0, 0.0]), 2.0);
        assert_eq!(cone.value([3.0, 0.0, 0.0]), 1.0);
        assert_eq!((cone.sup_norm(), cone.lip_norm()), (2.0, 1.0));
        assert!(CoefficientModel::Cone {
            base: 1.0,
            height: 1.0,
            radius: 0.0,
            center: [0.0; 3]
        }
        .validate()
        .is_err());
    }

    #[test]
    fn model_json_round_trip() {
        let text = r#"{"kind":"gaussian","base":1.0,"bumps":[{"amplitude":0.5,"width":1.0}]}"#;
        let m: CoefficientModel = serde_json::from_str(text).unwrap();
        assert_eq!(m, bump_model());
        let back: CoefficientModel = serde_json::from_str(&serde_json::to_string(&m).unwrap()).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn profile_bounds_are_certified() {
        let grid = SpectralGrid::new(3, 16, 4.0).unwrap();
        let p = CoefficientProfile::from_model(&bump_model(), grid).unwrap();
        assert!(p.sup_norm() >= 1.5 - 1e-12);
        assert!(p.lip_norm() >= max_axis_slope(&grid, p.values()));
        assert!(p.lip_norm() >= max_central_gradient(&grid, p.values()));
        let err = CoefficientProfile::from_values(grid, p.values().to_vec(), Some((1.0, 10.0))).unwrap_err();
        assert!(matches!(err, CoefficientError::Bound { which: "sup", .. }));
        let err = CoefficientProfile::from_values(grid, p.values().to_vec(), Some((2.0, 0.01))).unwrap_err();
        assert!(matches!(err, CoefficientError::Bound { which: "Lipschitz", .. }));
        let measured = CoefficientProfile::from_values(grid, p.values().to_vec(), None).unwrap();
        let raw = max_axis_slope(&grid, p.values()).max(max_central_gradient(&grid, p.values()));
        assert!((measured.lip_norm() / raw - LIPSCHITZ_SLACK).abs() < 1e-12);
        assert!(CoefficientProfile::from_values(grid, vec![1.0; 5], None).is_err());
    }

    #[test]
    fn interpolation_reproduces_nodes_and_linear_data() {
        let grid = SpectralGrid::new(2, 8, 2.0).unwrap();
        let f = |x: [f64; 3]| 0.3 * x[0] - 0.7 * x[1] + 2.0;
        let values: Vec<f64> = (0..grid.len()).map(|i| f(grid.point(i))).collect();
        let p = CoefficientProfile::from_values(grid, values, None).unwrap();
        for i in 0..grid.len() {
            assert!((p.interpolate(grid.point(i)) - p.values()[i]).abs() < 1e-14);
        }
        // Interior of the box, away from the periodic seam.
        let x = [0.13, -0.71, 0.0];
        assert!((p.interpolate(x) - f(x)).abs() < 1e-13);
        // Periodic image.
        let y = [0.13 + 4.0, -0.71 - 8.0, 0.0];
        assert!((p.interpolate(y) - f(x)).abs() < 1e-12);
    }

    #[test]
    fn field_round_trip_and_imaginary_rejection() {
        let grid = SpectralGrid::new(1, 16, 3.0).unwrap();
        let p = CoefficientProfile::from_model(&bump_model(), grid).unwrap();
        let back = CoefficientProfile::from_field(&p.to_field(), Some((p.sup_norm(), p.lip_norm()))).unwrap();
        assert_eq!(back, p);
        let mut f = p.to_field();
        f.values_mut()[3].im = 0.1;
        assert!(matches!(
            CoefficientProfile::from_field(&f, None),
            Err(CoefficientError::Imaginary(_))
        ));
    }

    #[test]
    fn translation_and_bumps() {
        let m = bump_model().translated([1.0, 2.0, 0.0]);
        assert_eq!(m.value([1.0, 2.0, 0.0]), 1.5);
        let c = CoefficientModel::Constant { value: 1.0 };
        let b = c
            .with_bump(Bump {
                amplitude: 0.1,
                width: 0.5,
                center: [0.0; 3],
            })
            .unwrap();
        assert!((b.value([0.0; 3]) - 1.1).abs() < 1e-15);
        assert!(CoefficientModel::Constant { value: 0.0 }.is_zero());
    }

    proptest! {
        #[test]
        fn interpolant_within_sample_range(x in -5.0f64..5.0, y in -5.0f64..5.0, z in -5.0f64..5.0) {
            let grid = SpectralGrid::new(3, 8, 2.0).unwrap();
            let p = CoefficientProfile::from_model(&bump_model(), grid).unwrap();
            let lo = p.values().iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = p.values().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let v = p.interpolate([x, y, z]);
            prop_assert!(v >= lo - 1e-12 && v <= hi + 1e-12);
        }

        #[test]
        fn model_respects_lipschitz_bound(x in -3.0f64..3.0, y in -3.0f64..3.0, dx in -0.5f64..0.5, dy in -0.5f64..0.5) {
            for m in [bump_model(), CoefficientModel::Cone { base: 0.0, height: 2.0, radius: 1.5, center: [0.2, 0.0, 0.0] }] {
                let a = m.value([x, y, 0.0]);
                let b = m.value([x + dx, y + dy, 0.0]);
                prop_assert!((a - b).abs() <= m.lip_norm() * (dx * dx + dy * dy).sqrt() + 1e-12);
                prop_assert!(a.abs() <= m.sup_norm());
            }
        }
    }
}
