//! Periodic spectral discretization of the box `[-L, L)^d`.
//!
//! A [`SpectralGrid`] carries the physical lattice `x_j = -L + j h` with
//! `h = 2L/n` and the dual lattice `xi_k = pi k / L`. Fields are stored
//! row-major with the first axis fastest. The discrete Fourier transform is
//! unscaled in the forward direction and divided by `n^d` on the way back,
//! so `from_spectral(to_spectral(u)) == u`. All norms are reported with the
//! physical quadrature weight `h^d`, which makes them independent of that
//! convention.

use std::cell::RefCell;
use std::collections::HashMap;
use std::f64::consts::PI;
use std::io::{Read, Write};
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

#[derive(Debug, thiserror::Error)]
pub enum SpectralError {
    #[error("dimension must be 1, 2 or 3 (got {0})")]
    Dimension(usize),
    #[error("points per axis must be even and at least 8 (got {0})")]
    Points(usize),
    #[error("half width must be positive and finite (got {0})")]
    HalfWidth(f64),
    #[error("expected a field in {expected:?} space, found {found:?}")]
    WrongSpace { expected: Space, found: Space },
    #[error("field has {found} samples but the grid holds {expected}")]
    Length { expected: usize, found: usize },
    #[error("fields live on different grids")]
    GridMismatch,
    #[error("Lebesgue exponent must be at least 1 (got {0})")]
    Exponent(f64),
    #[error(
        "homogeneous Sobolev norm of order {0} < 0 needs a vanishing zero mode; \
         use the closed-form Gaussian norms instead"
    )]
    NonzeroMean(f64),
    #[error("space-time norm needs at least two snapshots (got {0})")]
    TooFewSnapshots(usize),
    #[error("snapshot times must be strictly increasing")]
    UnsortedTimes,
    #[error("malformed field file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Which representation a [`ComplexField`] currently holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Space {
    Physical,
    Spectral,
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SpectralGrid {
    dim: usize,
    points_per_axis: usize,
    half_width: f64,
}

impl SpectralGrid {
    pub fn new(dim: usize, points_per_axis: usize, half_width: f64) -> Result<Self, SpectralError> {
        if !(1..=3).contains(&dim) {
            return Err(SpectralError::Dimension(dim));
        }
        if points_per_axis < 8 || !points_per_axis.is_multiple_of(2) {
            return Err(SpectralError::Points(points_per_axis));
        }
        if !(half_width.is_finite() && half_width > 0.0) {
            return Err(SpectralError::HalfWidth(half_width));
        }
        Ok(Self {
            dim,
            points_per_axis,
            half_width,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn points_per_axis(&self) -> usize {
        self.points_per_axis
    }

    pub fn half_width(&self) -> f64 {
        self.half_width
    }

    pub fn spacing(&self) -> f64 {
        2.0 * self.half_width / self.points_per_axis as f64
    }

    /// Total number of lattice points, `n^d`.
    pub fn len(&self) -> usize {
        self.points_per_axis.pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Quadrature weight of one cell, `h^d`.
    pub fn cell_volume(&self) -> f64 {
        self.spacing().powi(self.dim as i32)
    }

    pub fn volume(&self) -> f64 {
        (2.0 * self.half_width).powi(self.dim as i32)
    }

    pub fn coordinate(&self, i: usize) -> f64 {
        -self.half_width + i as f64 * self.spacing()
    }

    /// Angular wavenumber of FFT-ordered index `i`.
    pub fn wavenumber(&self, i: usize) -> f64 {
        let n = self.points_per_axis as isize;
        let i = i as isize;
        let k = if i < n / 2 { i } else { i - n };
        PI * k as f64 / self.half_width
    }

    /// Frequency lattice of one axis in natural order, `k = -n/2 .. n/2-1`.
    pub fn frequencies(&self) -> Vec<f64> {
        let n = self.points_per_axis as isize;
        (-n / 2..n / 2)
            .map(|k| PI * k as f64 / self.half_width)
            .collect()
    }

    pub fn multi_index(&self, flat: usize) -> [usize; 3] {
        let n = self.points_per_axis;
        let mut idx = [0usize; 3];
        let mut rest = flat;
        for slot in idx.iter_mut().take(self.dim) {
            *slot = rest % n;
            rest /= n;
        }
        idx
    }

    pub fn flat_index(&self, idx: [usize; 3]) -> usize {
        let n = self.points_per_axis;
        (0..self.dim).rev().fold(0, |acc, axis| acc * n + idx[axis])
    }

    /// Physical coordinates of a flat index; unused components are zero.
    pub fn point(&self, flat: usize) -> [f64; 3] {
        let idx = self.multi_index(flat);
        let mut x = [0.0; 3];
        for axis in 0..self.dim {
            x[axis] = self.coordinate(idx[axis]);
        }
        x
    }

    /// Wave vector of a flat spectral index (FFT order).
    pub fn wave_vector(&self, flat: usize) -> [f64; 3] {
        let idx = self.multi_index(flat);
        let mut xi = [0.0; 3];
        for axis in 0..self.dim {
            xi[axis] = self.wavenumber(idx[axis]);
        }
        xi
    }

    /// `|xi|^2` for every spectral index, FFT order.
    pub fn xi_squared(&self) -> Vec<f64> {
        (0..self.len())
            .map(|f| self.wave_vector(f).iter().map(|k| k * k).sum())
            .collect()
    }
}

/// Complex samples on a [`SpectralGrid`].
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexField {
    grid: SpectralGrid,
    values: Vec<Complex64>,
    space: Space,
}

impl ComplexField {
    pub fn new(grid: SpectralGrid, values: Vec<Complex64>, space: Space) -> Result<Self, SpectralError> {
        if values.len() != grid.len() {
            return Err(SpectralError::Length {
                expected: grid.len(),
                found: values.len(),
            });
        }
        Ok(Self { grid, values, space })
    }

    pub fn zeros(grid: SpectralGrid, space: Space) -> Self {
        Self {
            grid,
            values: vec![Complex64::new(0.0, 0.0); grid.len()],
            space,
        }
    }

    /// Samples `f` at every physical lattice point.
    pub fn from_fn(grid: SpectralGrid, f: impl Fn([f64; 3]) -> Complex64) -> Self {
        let values = (0..grid.len()).map(|i| f(grid.point(i))).collect();
        Self {
            grid,
            values,
            space: Space::Physical,
        }
    }

    pub fn grid(&self) -> &SpectralGrid {
        &self.grid
    }

    pub fn space(&self) -> Space {
        self.space
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Complex64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<Complex64> {
        self.values
    }

    pub(crate) fn expect_space(&self, expected: Space) -> Result<(), SpectralError> {
        if self.space != expected {
            return Err(SpectralError::WrongSpace {
                expected,
                found: self.space,
            });
        }
        Ok(())
    }

    fn expect_same_grid(&self, other: &Self) -> Result<(), SpectralError> {
        if self.grid != other.grid {
            return Err(SpectralError::GridMismatch);
        }
        Ok(())
    }

    pub fn scaled(mut self, factor: Complex64) -> Self {
        self.values.iter_mut().for_each(|v| *v *= factor);
        self
    }

    /// `self - other`, both in the same space.
    pub fn difference(&self, other: &Self) -> Result<Self, SpectralError> {
        self.expect_same_grid(other)?;
        other.expect_space(self.space)?;
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a - b)
            .collect();
        Ok(Self {
            grid: self.grid,
            values,
            space: self.space,
        })
    }

    /// Discrete `L^2` inner product `h^d sum u conj(v)` of two physical fields.
    pub fn inner(&self, other: &Self) -> Result<Complex64, SpectralError> {
        self.expect_same_grid(other)?;
        self.expect_space(Space::Physical)?;
        other.expect_space(Space::Physical)?;
        let sum: Complex64 = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a * b.conj())
            .sum();
        Ok(sum * self.grid.cell_volume())
    }

    /// `||u||_2^2` of a physical field.
    pub fn mass(&self) -> f64 {
        self.values.iter().map(|v| v.norm_sqr()).sum::<f64>() * self.grid.cell_volume()
    }
}

/// Cached multi-dimensional FFT for one grid shape.
///
/// Not `Sync`-shared: each worker owns its own instance.
pub struct FourierTransform {
    dim: usize,
    n: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    scratch: Vec<Complex64>,
    lines: Vec<Complex64>,
}

impl FourierTransform {
    pub fn new(grid: &SpectralGrid) -> Self {
        let n = grid.points_per_axis();
        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(n);
        let inverse = planner.plan_fft_inverse(n);
        let scratch_len = forward
            .get_inplace_scratch_len()
            .max(inverse.get_inplace_scratch_len());
        Self {
            dim: grid.dim(),
            n,
            forward,
            inverse,
            scratch: vec![Complex64::new(0.0, 0.0); scratch_len],
            lines: vec![Complex64::new(0.0, 0.0); if grid.dim() > 1 { n * n } else { 0 }],
        }
    }

    /// Unscaled forward transform in place.
    pub fn forward(&mut self, data: &mut [Complex64]) {
        let fft = Arc::clone(&self.forward);
        self.transform(data, fft.as_ref());
    }

    /// Inverse transform in place, divided by `n^d`.
    pub fn inverse(&mut self, data: &mut [Complex64]) {
        let fft = Arc::clone(&self.inverse);
        self.transform(data, fft.as_ref());
        let scale = 1.0 / data.len() as f64;
        data.iter_mut().for_each(|v| *v *= scale);
    }

    fn transform(&mut self, data: &mut [Complex64], fft: &dyn Fft<f64>) {
        let n = self.n;
        debug_assert_eq!(data.len(), n.pow(self.dim as u32));
        // Axis 0 is contiguous: rustfft processes consecutive length-n chunks.
        fft.process_with_scratch(data, &mut self.scratch);
        if self.dim >= 2 {
            let plane = n * n;
            for slab in data.chunks_exact_mut(plane) {
                for i2 in 0..n {
                    for i1 in 0..n {
                        self.lines[i1 * n + i2] = slab[i2 * n + i1];
                    }
                }
                fft.process_with_scratch(&mut self.lines, &mut self.scratch);
                for i2 in 0..n {
                    for i1 in 0..n {
                        slab[i2 * n + i1] = self.lines[i1 * n + i2];
                    }
                }
            }
        }
        if self.dim == 3 {
            let plane = n * n;
            for i2 in 0..n {
                for i3 in 0..n {
                    let base = i2 * n + i3 * plane;
                    for i1 in 0..n {
                        self.lines[i1 * n + i3] = data[base + i1];
                    }
                }
                fft.process_with_scratch(&mut self.lines, &mut self.scratch);
                for i3 in 0..n {
                    let base = i2 * n + i3 * plane;
                    for i1 in 0..n {
                        data[base + i1] = self.lines[i1 * n + i3];
                    }
                }
            }
        }
    }
}

thread_local! {
    static TRANSFORMS: RefCell<HashMap<(usize, usize), FourierTransform>> = RefCell::new(HashMap::new());
}

/// Runs `f` with this thread's cached transform for `grid`'s shape.
pub fn with_transform<R>(grid: &SpectralGrid, f: impl FnOnce(&mut FourierTransform) -> R) -> R {
    TRANSFORMS.with(|cell| {
        let mut cache = cell.borrow_mut();
        let plan = cache
            .entry((grid.dim(), grid.points_per_axis()))
            .or_insert_with(|| FourierTransform::new(grid));
        f(plan)
    })
}

pub fn to_spectral(mut field: ComplexField) -> Result<ComplexField, SpectralError> {
    field.expect_space(Space::Physical)?;
    let grid = field.grid;
    with_transform(&grid, |t| t.forward(&mut field.values));
    field.space = Space::Spectral;
    Ok(field)
}

pub fn from_spectral(mut field: ComplexField) -> Result<ComplexField, SpectralError> {
    field.expect_space(Space::Spectral)?;
    let grid = field.grid;
    with_transform(&grid, |t| t.inverse(&mut field.values));
    field.space = Space::Physical;
    Ok(field)
}

/// Spectral multiplier `exp(-i t |xi|^2)` in FFT order.
pub fn propagator_multiplier(grid: &SpectralGrid, t: f64) -> Vec<Complex64> {
    grid.xi_squared()
        .into_iter()
        .map(|k2| Complex64::from_polar(1.0, -t * k2))
        .collect()
}

/// Applies the free Schrödinger group `e^{it Delta}` to a physical field.
pub fn free_propagate(field: &ComplexField, t: f64) -> Result<ComplexField, SpectralError> {
    field.expect_space(Space::Physical)?;
    if t == 0.0 {
        return Ok(field.clone());
    }
    let mut spec = to_spectral(field.clone())?;
    let grid = spec.grid;
    for (v, k2) in spec.values.iter_mut().zip(grid.xi_squared()) {
        *v *= Complex64::from_polar(1.0, -t * k2);
    }
    from_spectral(spec)
}

/// `(sum |u|^r h^d)^(1/r)`, or the grid maximum for `r = inf`.
pub fn lebesgue_norm(field: &ComplexField, r: f64) -> Result<f64, SpectralError> {
    field.expect_space(Space::Physical)?;
    lebesgue_norm_of(field.values(), field.grid.cell_volume(), r)
}

pub(crate) fn lebesgue_norm_of(values: &[Complex64], cell: f64, r: f64) -> Result<f64, SpectralError> {
    if r.is_nan() || r < 1.0 {
        return Err(SpectralError::Exponent(r));
    }
    if r.is_infinite() {
        return Ok(values.iter().map(|v| v.norm()).fold(0.0, f64::max));
    }
    if r == 2.0 {
        return Ok((values.iter().map(|v| v.norm_sqr()).sum::<f64>() * cell).sqrt());
    }
    let half = 0.5 * r;
    let sum: f64 = values.iter().map(|v| v.norm_sqr().powf(half)).sum();
    Ok((sum * cell).powf(1.0 / r))
}

/// Sobolev norm with multiplier `<xi>^s` (inhomogeneous) or `|xi|^s`
/// (homogeneous), evaluated by discrete Plancherel.
pub fn sobolev_norm(field: &ComplexField, s: f64, homogeneous: bool) -> Result<f64, SpectralError> {
    field.expect_space(Space::Physical)?;
    let spec = to_spectral(field.clone())?;
    sobolev_norm_spectral(&spec, s, homogeneous)
}

pub(crate) fn sobolev_norm_spectral(spec: &ComplexField, s: f64, homogeneous: bool) -> Result<f64, SpectralError> {
    spec.expect_space(Space::Spectral)?;
    let grid = spec.grid;
    let total = grid.len() as f64;
    let xi2 = grid.xi_squared();
    if homogeneous && s < 0.0 {
        let mean = spec.values[0].norm();
        let scale = spec.values.iter().map(|v| v.norm()).fold(0.0, f64::max);
        if mean > 1e-12 * scale.max(f64::MIN_POSITIVE) {
            return Err(SpectralError::NonzeroMean(s));
        }
    }
    let sum: f64 = spec
        .values
        .iter()
        .zip(&xi2)
        .map(|(v, &k2)| {
            let weight = if homogeneous {
                if k2 == 0.0 {
                    0.0
                } else {
                    k2.powf(s)
                }
            } else {
                (1.0 + k2).powf(s)
            };
            weight * v.norm_sqr()
        })
        .sum();
    Ok((sum * grid.cell_volume() / total).sqrt())
}

/// `L^q_t` norm of sampled values `(t, f(t))` by the trapezoidal rule.
///
/// `q = inf` returns the sample maximum.
pub fn time_norm(samples: &[(f64, f64)], q: f64) -> Result<f64, SpectralError> {
    if samples.len() < 2 {
        return Err(SpectralError::TooFewSnapshots(samples.len()));
    }
    if samples.windows(2).any(|w| w[1].0 <= w[0].0) {
        return Err(SpectralError::UnsortedTimes);
    }
    if q.is_nan() || q < 1.0 {
        return Err(SpectralError::Exponent(q));
    }
    if q.is_infinite() {
        return Ok(samples.iter().map(|s| s.1).fold(0.0, f64::max));
    }
    let integral: f64 = samples
        .windows(2)
        .map(|w| 0.5 * (w[1].0 - w[0].0) * (w[0].1.powf(q) + w[1].1.powf(q)))
        .sum();
    Ok(integral.powf(1.0 / q))
}

/// `(int ||u(t)||_{L^r}^q dt)^(1/q)` with the trapezoidal rule in time.
pub fn spacetime_norm(snapshots: &[(f64, ComplexField)], q: f64, r: f64) -> Result<f64, SpectralError> {
    if snapshots.len() < 2 {
        return Err(SpectralError::TooFewSnapshots(snapshots.len()));
    }
    let samples = snapshots
        .iter()
        .map(|(t, u)| Ok((*t, lebesgue_norm(u, r)?)))
        .collect::<Result<Vec<_>, SpectralError>>()?;
    time_norm(&samples, q)
}

const MAGIC: &[u8; 4] = b"NLSF";
const VERSION: u32 = 1;

/// Writes a physical field in the `NLSF` binary layout.
pub fn write_field<W: Write>(mut out: W, field: &ComplexField) -> Result<(), SpectralError> {
    field.expect_space(Space::Physical)?;
    let grid = field.grid();
    let mut buf = Vec::with_capacity(24 + 16 * field.values.len());
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(grid.dim() as u32).to_le_bytes());
    buf.extend_from_slice(&(grid.points_per_axis() as u32).to_le_bytes());
    buf.extend_from_slice(&grid.half_width().to_le_bytes());
    for v in &field.values {
        buf.extend_from_slice(&v.re.to_le_bytes());
        buf.extend_from_slice(&v.im.to_le_bytes());
    }
    out.write_all(&buf)?;
    Ok(())
}

pub fn read_field<R: Read>(mut input: R) -> Result<ComplexField, SpectralError> {
    let mut header = [0u8; 24];
    input.read_exact(&mut header)?;
    if &header[0..4] != MAGIC {
        return Err(SpectralError::Format("bad magic".into()));
    }
    let u32_at = |i: usize| u32::from_le_bytes(header[i..i + 4].try_into().unwrap());
    let version = u32_at(4);
    if version != VERSION {
        return Err(SpectralError::Format(format!("unsupported version {version}")));
    }
    let dim = u32_at(8) as usize;
    let n = u32_at(12) as usize;
    let half_width = f64::from_le_bytes(header[16..24].try_into().unwrap());
    let grid = SpectralGrid::new(dim, n, half_width)?;
    let mut body = Vec::new();
    input.read_to_end(&mut body)?;
    if body.len() != 16 * grid.len() {
        return Err(SpectralError::Format(format!(
            "expected {} payload bytes, found {}",
            16 * grid.len(),
            body.len()
        )));
    }
    let values = body
        .chunks_exact(16)
        .map(|c| {
            Complex64::new(
                f64::from_le_bytes(c[0..8].try_into().unwrap()),
                f64::from_le_bytes(c[8..16].try_into().unwrap()),
            )
        })
        .collect();
    ComplexField::new(grid, values, Space::Physical)
}

pub fn save_field(path: &std::path::Path, field: &ComplexField) -> Result<(), SpectralError> {
    let file = std::fs::File::create(path)?;
    write_field(std::io::BufWriter::new(file), field)
}

pub fn load_field(path: &std::path::Path) -> Result<ComplexField, SpectralError> {
    let file = std::fs::File::open(path)?;
    read_field(std::io::BufReader::new(file))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gaussian(grid: SpectralGrid, sigma: f64) -> ComplexField {
        ComplexField::from_fn(grid, |x| {
            let r2: f64 = x.iter().map(|c| c * c).sum();
            Complex64::new((-r2 / (4.0 * sigma * sigma)).exp(), 0.0)
        })
    }

    fn rel_l2(a: &ComplexField, b: &ComplexField) -> f64 {
        let d = a.difference(b).unwrap();
        (d.mass() / b.mass()).sqrt()
    }

    #[test]
    fn grid_lattice_definition() {
        let g = SpectralGrid::new(1, 8, 1.0).unwrap();
        assert_eq!(g.spacing(), 0.25);
        let f = g.frequencies();
        assert_eq!(f.len(), 8);
        assert!((f[0] + 4.0 * PI).abs() < 1e-15);
        assert!((f[7] - 3.0 * PI).abs() < 1e-15);

        let g3 = SpectralGrid::new(3, 64, 8.0).unwrap();
        assert_eq!(g3.len(), 262_144);
        assert_eq!(g3.spacing(), 0.25);
        assert!((g3.cell_volume() - 0.25f64.powi(3)).abs() < 1e-15);
    }

    #[test]
    fn grid_rejects_bad_parameters() {
        assert!(matches!(SpectralGrid::new(2, 7, 1.0), Err(SpectralError::Points(7))));
        assert!(matches!(SpectralGrid::new(2, 6, 1.0), Err(SpectralError::Points(6))));
        assert!(matches!(SpectralGrid::new(4, 8, 1.0), Err(SpectralError::Dimension(4))));
        assert!(matches!(SpectralGrid::new(0, 8, 1.0), Err(SpectralError::Dimension(0))));
        assert!(matches!(SpectralGrid::new(1, 8, 0.0), Err(SpectralError::HalfWidth(_))));
        assert!(matches!(SpectralGrid::new(1, 8, -2.0), Err(SpectralError::HalfWidth(_))));
    }

    #[test]
    fn index_round_trip() {
        let g = SpectralGrid::new(3, 8, 1.0).unwrap();
        for flat in [0, 1, 7, 8, 63, 64, 200, 511] {
            assert_eq!(g.flat_index(g.multi_index(flat)), flat);
        }
        assert_eq!(g.point(1)[0], g.coordinate(1));
        assert_eq!(g.point(8)[1], g.coordinate(1));
    }

    #[test]
    fn constant_field_is_pure_zero_mode() {
        let g = SpectralGrid::new(2, 16, 3.0).unwrap();
        let u = ComplexField::from_fn(g, |_| Complex64::new(1.0, 0.0));
        let s = to_spectral(u).unwrap();
        assert!((s.values()[0].re - g.len() as f64).abs() < 1e-9);
        let rest: f64 = s.values()[1..].iter().map(|v| v.norm()).sum();
        assert!(rest < 1e-9);
    }

    #[test]
    fn wrong_space_is_rejected() {
        let g = SpectralGrid::new(1, 8, 1.0).unwrap();
        let u = ComplexField::zeros(g, Space::Spectral);
        assert!(matches!(to_spectral(u.clone()), Err(SpectralError::WrongSpace { .. })));
        assert!(matches!(free_propagate(&u, 1.0), Err(SpectralError::WrongSpace { .. })));
        let p = ComplexField::zeros(g, Space::Physical);
        assert!(matches!(from_spectral(p), Err(SpectralError::WrongSpace { .. })));
    }

    #[test]
    fn gaussian_transform_matches_continuum() {
        // Continuum transform of exp(-|x|^2/(4 s^2)) is (4 pi s^2)^{3/2} exp(-s^2 |xi|^2).
        let sigma = 0.5;
        let g = SpectralGrid::new(3, 64, 8.0).unwrap();
        let s = to_spectral(gaussian(g, sigma)).unwrap();
        let mut num = 0.0;
        let mut den = 0.0;
        for (flat, v) in s.values().iter().enumerate() {
            let xi = g.wave_vector(flat);
            let k2: f64 = xi.iter().map(|k| k * k).sum();
            // Lattice starts at -L: shift phase exp(i xi L) per axis.
            let shift: f64 = xi.iter().map(|k| k * g.half_width()).sum();
            let approx = v * Complex64::from_polar(g.cell_volume(), shift);
            let exact = (4.0 * PI * sigma * sigma).powf(1.5) * (-sigma * sigma * k2).exp();
            num += (approx - exact).norm_sqr();
            den += exact * exact;
        }
        assert!((num / den).sqrt() < 1e-8, "rel err {}", (num / den).sqrt());
    }

    #[test]
    fn propagation_identity_and_peak_modulus() {
        let sigma = 0.5;
        let g = SpectralGrid::new(3, 64, 8.0).unwrap();
        let u = gaussian(g, sigma);
        assert_eq!(free_propagate(&u, 0.0).unwrap(), u);
        let v = free_propagate(&u, sigma * sigma).unwrap();
        let centre = g.flat_index([32, 32, 32]);
        assert!((v.values()[centre].norm() - 2f64.powf(-0.75)).abs() < 1e-10);
        assert!((2f64.powf(-0.75) - 0.594604).abs() < 1e-6);
    }

    #[test]
    fn lebesgue_norms() {
        let g = SpectralGrid::new(3, 16, 2.0).unwrap();
        let u = ComplexField::from_fn(g, |_| Complex64::new(2.0, 0.0));
        for r in [1.0, 2.0, 3.5] {
            let expect = 2.0 * g.volume().powf(1.0 / r);
            assert!((lebesgue_norm(&u, r).unwrap() - expect).abs() < 1e-10 * expect);
        }
        assert_eq!(lebesgue_norm(&u, f64::INFINITY).unwrap(), 2.0);
        assert!(matches!(lebesgue_norm(&u, 0.5), Err(SpectralError::Exponent(_))));

        let g = SpectralGrid::new(3, 64, 8.0).unwrap();
        let phi = gaussian(g, 0.5);
        let expect = (2.0 * PI).powf(0.75) * 0.5f64.powf(1.5);
        assert!((expect - 1.403_104).abs() < 1e-6);
        assert!((lebesgue_norm(&phi, 2.0).unwrap() - expect).abs() < 1e-6);
        assert!((lebesgue_norm(&phi, f64::INFINITY).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn sobolev_norms() {
        let g = SpectralGrid::new(3, 32, 4.0).unwrap();
        let phi = gaussian(g, 0.4);
        let l2 = lebesgue_norm(&phi, 2.0).unwrap();
        assert!((sobolev_norm(&phi, 0.0, false).unwrap() - l2).abs() < 1e-12 * l2);
        // The homogeneous norm drops the zero mode, whose share is |int phi|^2 / volume.
        let mean_share = (4.0 * PI * 0.16f64).powi(3) / g.volume();
        let hom = sobolev_norm(&phi, 0.0, true).unwrap();
        assert!((hom * hom - (l2 * l2 - mean_share)).abs() < 1e-9 * l2 * l2);

        // Single plane wave e^{i xi_1 x_1}, xi_1 = 3 pi / L.
        let k = g.wavenumber(3);
        let amp = 1.7;
        let wave = ComplexField::from_fn(g, |x| Complex64::from_polar(amp, k * x[0]));
        let mode_l2 = amp * g.volume().sqrt();
        let h1 = sobolev_norm(&wave, 1.0, true).unwrap();
        assert!((h1 - k * mode_l2).abs() < 1e-9 * h1);

        assert!(matches!(sobolev_norm(&phi, -1.0, true), Err(SpectralError::NonzeroMean(_))));
        assert!(sobolev_norm(&wave, -1.0, true).is_ok());
    }

    #[test]
    fn gaussian_h1_scaling() {
        // ||phi_sigma||_{H^1 dot} = C sigma^{1/2} exactly in the continuum.
        let ratio = |sigma: f64| {
            let g = SpectralGrid::new(3, 64, 6.0).unwrap();
            sobolev_norm(&gaussian(g, sigma), 1.0, true).unwrap() / sigma.sqrt()
        };
        let (a, b) = (ratio(0.3), ratio(0.5));
        assert!((a / b - 1.0).abs() < 0.01, "{a} vs {b}");
        // Radial oracle: ||grad phi||^2 = 3/(4 sigma^2) (2 pi sigma^2)^{3/2}.
        let sigma: f64 = 0.5;
        let exact = (0.75 / (sigma * sigma) * (2.0 * PI * sigma * sigma).powf(1.5)).sqrt();
        assert!((b * sigma.sqrt() / exact - 1.0).abs() < 1e-8);
    }

    #[test]
    fn spacetime_norm_contracts() {
        let g = SpectralGrid::new(1, 16, 2.0).unwrap();
        let u = ComplexField::from_fn(g, |x| Complex64::new(1.0 + x[0] * x[0], 0.0));
        assert!(matches!(
            spacetime_norm(&[(0.0, u.clone())], 2.0, 2.0),
            Err(SpectralError::TooFewSnapshots(1))
        ));
        assert!(matches!(
            spacetime_norm(&[(1.0, u.clone()), (0.0, u.clone())], 2.0, 2.0),
            Err(SpectralError::UnsortedTimes)
        ));
        let snaps: Vec<_> = (0..=10).map(|i| (0.3 * i as f64, u.clone())).collect();
        let (q, r) = (4.0, 3.0);
        let expect = 3f64.powf(1.0 / q) * lebesgue_norm(&u, r).unwrap();
        assert!((spacetime_norm(&snaps, q, r).unwrap() - expect).abs() < 1e-12 * expect);
    }

    #[test]
    fn field_file_round_trip_is_bit_exact() {
        let g = SpectralGrid::new(2, 8, 1.5).unwrap();
        let u = ComplexField::from_fn(g, |x| Complex64::new(x[0].sin(), x[1].exp() * 1e-300));
        let mut bytes = Vec::new();
        write_field(&mut bytes, &u).unwrap();
        assert_eq!(&bytes[0..4], b"NLSF");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 2);
        assert_eq!(u32::from_le_bytes(bytes[12..16].try_into().unwrap()), 8);
        assert_eq!(f64::from_le_bytes(bytes[16..24].try_into().unwrap()), 1.5);
        assert_eq!(bytes.len(), 24 + 16 * 64);
        // x_1 fastest: the second record is lattice point (1, 0).
        let re1 = f64::from_le_bytes(bytes[40..48].try_into().unwrap());
        assert_eq!(re1, g.coordinate(1).sin());
        let back = read_field(bytes.as_slice()).unwrap();
        assert_eq!(back, u);
        let mut again = Vec::new();
        write_field(&mut again, &back).unwrap();
        assert_eq!(again, bytes);

        bytes[0] = b'X';
        assert!(matches!(read_field(bytes.as_slice()), Err(SpectralError::Format(_))));
    }

    #[test]
    fn free_gaussian_spacetime_norm_matches_closed_form() {
        // |e^{it Delta} phi| = A(t) exp(-|x|^2 sigma^2 / (4 (sigma^4 + t^2))), A = (sigma^4/(sigma^4+t^2))^{3/4}.
        let (sigma, horizon, q, r) = (0.5f64, 0.5, 4.0, 3.0);
        let g = SpectralGrid::new(3, 64, 8.0).unwrap();
        let phi = gaussian(g, sigma);
        let snaps: Vec<_> = (0..=100)
            .map(|k| {
                let t = horizon * k as f64 / 100.0;
                (t, free_propagate(&phi, t).unwrap())
            })
            .collect();
        let discrete = spacetime_norm(&snaps, q, r).unwrap();
        let s4 = sigma.powi(4);
        let profile = |t: f64| {
            let amp = (s4 / (s4 + t * t)).powf(0.75);
            amp * (4.0 * PI * (s4 + t * t) / (r * sigma * sigma)).powf(1.5 / r)
        };
        let quad = crate::quadrature::Quadrature::with_tolerance(0.0, 1e-10);
        let exact = quad.integrate(|t| profile(t).powf(q), 0.0, horizon).unwrap().value.powf(1.0 / q);
        assert!((discrete / exact - 1.0).abs() < 0.01, "{discrete} vs {exact}");
    }

    #[test]
    fn norms_converge_spectrally_under_refinement() {
        let sigma: f64 = 0.5;
        let l2_exact = ((2.0 * PI).sqrt() * sigma).sqrt();
        let h1_exact = (l2_exact * l2_exact * (1.0 + 1.0 / (4.0 * sigma * sigma))).sqrt();
        let errors: Vec<(f64, f64)> = [8, 16, 32]
            .iter()
            .map(|&n| {
                let g = SpectralGrid::new(1, n, 6.0).unwrap();
                let phi = ComplexField::from_fn(g, |x| Complex64::new((-x[0] * x[0] / (4.0 * sigma * sigma)).exp(), 0.0));
                (
                    (lebesgue_norm(&phi, 2.0).unwrap() - l2_exact).abs(),
                    (sobolev_norm(&phi, 1.0, false).unwrap() - h1_exact).abs(),
                )
            })
            .collect();
        assert!(errors[0].0 >= 10.0 * errors[1].0, "{errors:?}");
        assert!(errors[0].1 >= 10.0 * errors[1].1, "{errors:?}");
        assert!(errors[2].0 < 1e-12 && errors[2].1 < 1e-12, "{errors:?}");
    }

    fn field_from(grid: SpectralGrid, parts: &[(f64, f64)]) -> ComplexField {
        let values = parts.iter().map(|&(re, im)| Complex64::new(re, im)).collect();
        ComplexField::new(grid, values, Space::Physical).unwrap()
    }

    proptest::proptest! {
        #[test]
        fn propagation_is_unitary_and_a_group(
            parts in proptest::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 256),
            s in -2.0f64..2.0,
            t in -2.0f64..2.0,
        ) {
            let g = SpectralGrid::new(2, 16, 3.0).unwrap();
            let u = field_from(g, &parts);
            let ut = free_propagate(&u, t).unwrap();
            proptest::prop_assert!((ut.mass() / u.mass() - 1.0).abs() < 1e-12);
            let composed = free_propagate(&ut, s).unwrap();
            let direct = free_propagate(&u, s + t).unwrap();
            proptest::prop_assert!(rel_l2(&composed, &direct) < 1e-12);
        }

        #[test]
        fn transform_round_trip(parts in proptest::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 64)) {
            let g = SpectralGrid::new(1, 64, 2.0).unwrap();
            let u = field_from(g, &parts);
            let back = from_spectral(to_spectral(u.clone()).unwrap()).unwrap();
            proptest::prop_assert!(rel_l2(&back, &u) < 1e-12);
        }
    }
}
