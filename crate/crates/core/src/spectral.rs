//! Box domains, the orthonormal eigenbasis of the Laplacian, and every linear
//! operator that is diagonal in it.
//!
//! Two boundary treatments are supported. `DirichletNavier` uses the sine basis
//! `sqrt(2/L) sin(k pi x / L)`, `k >= 1`, on the interior collocation points
//! `x_j = j L / (N + 1)`; it satisfies `u = 0` and `Δu = 0` on the boundary and
//! diagonalizes `A = Δ² - 2Δ` exactly. `Periodic` uses the real Fourier basis
//! on `x_j = j L / N` and exists for cross-checks only: its zero mode has
//! `μ = 0`, so the strict positivity of `A` does not hold there.
//!
//! Coefficients are continuous-basis coefficients, `c_k = ∫ u φ_k`, so that
//! `Σ c_k² = |u|²_{L²}` and the rectangle rule with cell volume `Π L/(N+1)`
//! reproduces the same number.

use std::f64::consts::PI;
use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};
use std::sync::Arc;

use rand::Rng;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

/// Threshold below which `phi1` switches to its Taylor expansion.
pub const PHI1_SERIES_THRESHOLD: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Boundary {
    /// `u = Δu = 0` on the boundary of the box (sine basis).
    DirichletNavier,
    Periodic,
}

impl Boundary {
    pub fn name(self) -> &'static str {
        match self {
            Boundary::DirichletNavier => "dirichlet_navier",
            Boundary::Periodic => "periodic",
        }
    }
}

impl std::str::FromStr for Boundary {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dirichlet_navier" | "dirichlet" | "navier" => Ok(Boundary::DirichletNavier),
            "periodic" => Ok(Boundary::Periodic),
            other => Err(Error::Domain(format!("unknown boundary '{other}'"))),
        }
    }
}

/// A rectangular box `Π [0, L_i]` with `N_i` collocation points per axis.
#[derive(Clone, Debug, PartialEq)]
pub struct DomainSpec {
    lengths: Vec<f64>,
    resolution: Vec<usize>,
    boundary: Boundary,
}

impl DomainSpec {
    pub fn new(lengths: Vec<f64>, resolution: Vec<usize>, boundary: Boundary) -> Result<Self> {
        if lengths.len() != resolution.len() {
            return Err(Error::Structural(format!(
                "{} lengths for {} resolutions",
                lengths.len(),
                resolution.len()
            )));
        }
        if !(1..=3).contains(&lengths.len()) {
            return Err(Error::Domain(format!(
                "dimension must be 1, 2 or 3, got {}",
                lengths.len()
            )));
        }
        for (axis, &l) in lengths.iter().enumerate() {
            if !(l.is_finite() && l > 0.0) {
                return Err(Error::Domain(format!("axis {axis}: length {l} must be positive")));
            }
        }
        for (axis, &n) in resolution.iter().enumerate() {
            if n < 8 || n % 2 != 0 {
                return Err(Error::Domain(format!(
                    "axis {axis}: resolution {n} must be even and at least 8"
                )));
            }
        }
        Ok(Self {
            lengths,
            resolution,
            boundary,
        })
    }

    /// One-dimensional Navier interval `[0, length]`.
    pub fn interval(length: f64, n: usize) -> Result<Self> {
        Self::new(vec![length], vec![n], Boundary::DirichletNavier)
    }

    /// Cube of equal sides in `dim` dimensions.
    pub fn cube(dim: usize, length: f64, n: usize, boundary: Boundary) -> Result<Self> {
        Self::new(vec![length; dim], vec![n; dim], boundary)
    }

    pub fn dim(&self) -> usize {
        self.lengths.len()
    }

    pub fn lengths(&self) -> &[f64] {
        &self.lengths
    }

    pub fn resolution(&self) -> &[usize] {
        &self.resolution
    }

    pub fn boundary(&self) -> Boundary {
        self.boundary
    }

    pub fn num_points(&self) -> usize {
        self.resolution.iter().product()
    }
}

enum AxisTransform {
    /// DST-I through an odd extension of length `2(N+1)`.
    Sine { fft: Arc<dyn Fft<f64>> },
    /// Real orthonormal DFT: `[DC, cos 1, sin 1, ..., cos(N/2-1), sin(N/2-1), Nyquist]`.
    Fourier {
        forward: Arc<dyn Fft<f64>>,
        inverse: Arc<dyn Fft<f64>>,
    },
}

struct Axis {
    n: usize,
    spacing: f64,
    /// Eigenvalues of `-d²/dx²` per coefficient index.
    eigs: Vec<f64>,
    /// Integer wavenumber per coefficient index.
    wavenumbers: Vec<usize>,
    transform: AxisTransform,
}

impl Axis {
    fn new(n: usize, length: f64, boundary: Boundary, planner: &mut FftPlanner<f64>) -> Self {
        match boundary {
            Boundary::DirichletNavier => {
                let wavenumbers: Vec<usize> = (1..=n).collect();
                let eigs = wavenumbers
                    .iter()
                    .map(|&k| (k as f64 * PI / length).powi(2))
                    .collect();
                Axis {
                    n,
                    spacing: length / (n + 1) as f64,
                    eigs,
                    wavenumbers,
                    transform: AxisTransform::Sine {
                        fft: planner.plan_fft_forward(2 * (n + 1)),
                    },
                }
            }
            Boundary::Periodic => {
                let wavenumbers: Vec<usize> = (0..n)
                    .map(|i| if i == n - 1 { n / 2 } else { i.div_ceil(2) })
                    .collect();
                let eigs = wavenumbers
                    .iter()
                    .map(|&k| (2.0 * PI * k as f64 / length).powi(2))
                    .collect();
                Axis {
                    n,
                    spacing: length / n as f64,
                    eigs,
                    wavenumbers,
                    transform: AxisTransform::Fourier {
                        forward: planner.plan_fft_forward(n),
                        inverse: planner.plan_fft_inverse(n),
                    },
                }
            }
        }
    }

    fn buffer_len(&self) -> usize {
        match self.transform {
            AxisTransform::Sine { .. } => 2 * (self.n + 1),
            AxisTransform::Fourier { .. } => self.n,
        }
    }

    fn is_nyquist(&self, index: usize) -> bool {
        matches!(self.transform, AxisTransform::Fourier { .. }) && index == self.n - 1
    }

    /// Values on the collocation points to continuous-basis coefficients.
    fn forward(&self, line: &mut [f64], buf: &mut [Complex<f64>]) {
        let n = self.n;
        match &self.transform {
            AxisTransform::Sine { fft } => {
                sine_transform(fft.as_ref(), line, buf);
                let scale = (2.0 / (n + 1) as f64).sqrt() * self.spacing.sqrt();
                line.iter_mut().for_each(|x| *x *= scale);
            }
            AxisTransform::Fourier { forward, .. } => {
                for (b, &x) in buf.iter_mut().zip(line.iter()) {
                    *b = Complex::new(x, 0.0);
                }
                forward.process(buf);
                let root = self.spacing.sqrt();
                let dc = root / (n as f64).sqrt();
                let pair = root * (2.0 / n as f64).sqrt();
                line[0] = buf[0].re * dc;
                for j in 1..n / 2 {
                    line[2 * j - 1] = buf[j].re * pair;
                    line[2 * j] = -buf[j].im * pair;
                }
                line[n - 1] = buf[n / 2].re * dc;
            }
        }
    }

    fn inverse(&self, line: &mut [f64], buf: &mut [Complex<f64>]) {
        let n = self.n;
        match &self.transform {
            AxisTransform::Sine { fft } => {
                sine_transform(fft.as_ref(), line, buf);
                let scale = (2.0 / (n + 1) as f64).sqrt() / self.spacing.sqrt();
                line.iter_mut().for_each(|x| *x *= scale);
            }
            AxisTransform::Fourier { inverse, .. } => {
                let root = 1.0 / self.spacing.sqrt();
                let nf = n as f64;
                let half = (nf / 2.0).sqrt();
                buf[0] = Complex::new(line[0] * root * nf.sqrt(), 0.0);
                for j in 1..n / 2 {
                    let z = Complex::new(line[2 * j - 1], -line[2 * j]) * (root * half);
                    buf[j] = z;
                    buf[n - j] = z.conj();
                }
                buf[n / 2] = Complex::new(line[n - 1] * root * nf.sqrt(), 0.0);
                inverse.process(buf);
                for (x, b) in line.iter_mut().zip(buf.iter()) {
                    *x = b.re / nf;
                }
            }
        }
    }
}

/// Unnormalized DST-I: `y_k = Σ_j x_j sin(π (j+1)(k+1) / (N+1))`, in place.
fn sine_transform(fft: &dyn Fft<f64>, line: &mut [f64], buf: &mut [Complex<f64>]) {
    let n = line.len();
    let m = 2 * (n + 1);
    buf[0] = Complex::new(0.0, 0.0);
    buf[n + 1] = Complex::new(0.0, 0.0);
    for (j, &x) in line.iter().enumerate() {
        buf[j + 1] = Complex::new(x, 0.0);
        buf[m - j - 1] = Complex::new(-x, 0.0);
    }
    fft.process(buf);
    for (k, y) in line.iter_mut().enumerate() {
        *y = -0.5 * buf[k + 1].im;
    }
}

/// The discretized domain together with the eigenstructure of `-Δ` and `A`.
pub struct SpectralGrid {
    spec: DomainSpec,
    axes: Vec<Axis>,
    lap_eigs: Vec<f64>,
    a_eigs: Vec<f64>,
    wavenumber_norms: Vec<f64>,
    cell_volume: f64,
}

impl fmt::Debug for SpectralGrid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SpectralGrid")
            .field("spec", &self.spec)
            .field("cell_volume", &self.cell_volume)
            .finish_non_exhaustive()
    }
}

impl SpectralGrid {
    pub fn new(spec: DomainSpec) -> Arc<Self> {
        let mut planner = FftPlanner::new();
        let axes: Vec<Axis> = spec
            .lengths
            .iter()
            .zip(&spec.resolution)
            .map(|(&l, &n)| Axis::new(n, l, spec.boundary, &mut planner))
            .collect();

        let total = spec.num_points();
        let mut lap_eigs = vec![0.0; total];
        let mut wavenumber_norms = vec![0.0; total];
        for flat in 0..total {
            let mut rem = flat;
            let mut lam = 0.0;
            let mut k2 = 0usize;
            for (a, axis) in axes.iter().enumerate().rev() {
                let i = rem % spec.resolution[a];
                rem /= spec.resolution[a];
                lam += axis.eigs[i];
                k2 += axis.wavenumbers[i] * axis.wavenumbers[i];
            }
            lap_eigs[flat] = lam;
            wavenumber_norms[flat] = (k2 as f64).sqrt();
        }
        let a_eigs = lap_eigs.iter().map(|&l| l * l + 2.0 * l).collect();
        let cell_volume = axes.iter().map(|a| a.spacing).product();
        Arc::new(Self {
            spec,
            axes,
            lap_eigs,
            a_eigs,
            wavenumber_norms,
            cell_volume,
        })
    }

    /// Grid on the same box carrying every mode of `self` and enough extra
    /// modes that products of `factor` fields are resolved without aliasing.
    pub fn refined(&self, factor: usize) -> Arc<Self> {
        assert!(factor >= 1, "refinement factor must be positive");
        let resolution = self
            .spec
            .resolution
            .iter()
            .map(|&n| match self.spec.boundary {
                Boundary::DirichletNavier => factor * (n + 1) - 1,
                Boundary::Periodic => factor * n,
            })
            .collect();
        Self::new(DomainSpec {
            lengths: self.spec.lengths.clone(),
            resolution,
            boundary: self.spec.boundary,
        })
    }

    pub fn spec(&self) -> &DomainSpec {
        &self.spec
    }

    pub fn dim(&self) -> usize {
        self.spec.dim()
    }

    pub fn len(&self) -> usize {
        self.lap_eigs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lap_eigs.is_empty()
    }

    pub fn lap_eigs(&self) -> &[f64] {
        &self.lap_eigs
    }

    pub fn a_eigs(&self) -> &[f64] {
        &self.a_eigs
    }

    /// Euclidean norm of the integer wavenumber of each mode.
    pub fn wavenumber_norms(&self) -> &[f64] {
        &self.wavenumber_norms
    }

    pub fn mu_min(&self) -> f64 {
        self.a_eigs.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn mu_max(&self) -> f64 {
        self.a_eigs.iter().copied().fold(0.0, f64::max)
    }

    /// Weight of the rectangle rule on this grid.
    pub fn cell_volume(&self) -> f64 {
        self.cell_volume
    }

    /// Collocation coordinates along `axis`.
    pub fn points(&self, axis: usize) -> Vec<f64> {
        let ax = &self.axes[axis];
        let offset = match self.spec.boundary {
            Boundary::DirichletNavier => 1.0,
            Boundary::Periodic => 0.0,
        };
        (0..ax.n).map(|j| (j as f64 + offset) * ax.spacing).collect()
    }

    /// Flat coefficient index of the multi-index `k`. Sine modes count from
    /// 1; periodic indices follow the `[DC, cos 1, sin 1, ...]` layout.
    pub fn mode_index(&self, k: &[usize]) -> Result<usize> {
        if k.len() != self.dim() {
            return Err(Error::Structural(format!(
                "multi-index of length {} on a {}-dimensional grid",
                k.len(),
                self.dim()
            )));
        }
        let mut flat = 0;
        for (a, &ki) in k.iter().enumerate() {
            let n = self.spec.resolution[a];
            let i = match self.spec.boundary {
                Boundary::DirichletNavier if (1..=n).contains(&ki) => ki - 1,
                Boundary::Periodic if ki < n => ki,
                _ => {
                    return Err(Error::Domain(format!("mode {ki} out of range on axis {a}")));
                }
            };
            flat = flat * n + i;
        }
        Ok(flat)
    }

    pub fn same_as(&self, other: &SpectralGrid) -> bool {
        std::ptr::eq(self, other) || self.spec == other.spec
    }

    fn for_each_line(&self, data: &mut [f64], mut f: impl FnMut(&Axis, &mut [f64], &mut [Complex<f64>])) {
        let shape = &self.spec.resolution;
        for (a, axis) in self.axes.iter().enumerate() {
            let n = axis.n;
            let stride: usize = shape[a + 1..].iter().product();
            let outer: usize = shape[..a].iter().product();
            let mut line = vec![0.0; n];
            let mut buf = vec![Complex::new(0.0, 0.0); axis.buffer_len()];
            for o in 0..outer {
                for inner in 0..stride {
                    let base = o * n * stride + inner;
                    for (i, x) in line.iter_mut().enumerate() {
                        *x = data[base + i * stride];
                    }
                    f(axis, &mut line, &mut buf);
                    for (i, x) in line.iter().enumerate() {
                        data[base + i * stride] = *x;
                    }
                }
            }
        }
    }

    fn forward_in_place(&self, data: &mut [f64]) {
        self.for_each_line(data, |axis, line, buf| axis.forward(line, buf));
    }

    fn inverse_in_place(&self, data: &mut [f64]) {
        self.for_each_line(data, |axis, line, buf| axis.inverse(line, buf));
    }
}

/// Index map from the coefficients of a grid into those of a refined grid.
#[derive(Clone, Debug)]
pub struct ModeEmbedding {
    targets: Vec<usize>,
    scales: Vec<f64>,
    fine_len: usize,
}

impl ModeEmbedding {
    pub fn new(coarse: &SpectralGrid, fine: &SpectralGrid) -> Result<Self> {
        let cs = coarse.spec();
        let fs = fine.spec();
        if cs.dim() != fs.dim()
            || cs.boundary != fs.boundary
            || cs.lengths != fs.lengths
            || cs.resolution.iter().zip(&fs.resolution).any(|(c, f)| f < c)
        {
            return Err(Error::Structural("fine grid does not contain coarse grid".into()));
        }
        let mut targets = Vec::with_capacity(coarse.len());
        let mut scales = Vec::with_capacity(coarse.len());
        for flat in 0..coarse.len() {
            let mut rem = flat;
            let mut idx = vec![0; cs.dim()];
            for a in (0..cs.dim()).rev() {
                idx[a] = rem % cs.resolution[a];
                rem /= cs.resolution[a];
            }
            let mut target = 0;
            let mut scale = 1.0;
            for a in 0..cs.dim() {
                target = target * fs.resolution[a] + idx[a];
                // The coarse Nyquist vector equals the fine cosine mode
                // scaled by sqrt(2) on the coarse points.
                if coarse.axes[a].is_nyquist(idx[a]) && fs.resolution[a] > cs.resolution[a] {
                    scale *= std::f64::consts::FRAC_1_SQRT_2;
                }
            }
            targets.push(target);
            scales.push(scale);
        }
        Ok(Self {
            targets,
            scales,
            fine_len: fine.len(),
        })
    }

    /// Zero-pads coarse coefficients into the fine layout.
    pub fn embed(&self, coarse: &[f64]) -> Vec<f64> {
        let mut fine = vec![0.0; self.fine_len];
        for ((&t, &s), &c) in self.targets.iter().zip(&self.scales).zip(coarse) {
            fine[t] = c * s;
        }
        fine
    }

    /// Keeps only the modes the coarse grid carries.
    pub fn restrict(&self, fine: &[f64]) -> Vec<f64> {
        self.targets
            .iter()
            .zip(&self.scales)
            .map(|(&t, &s)| fine[t] / s)
            .collect()
    }
}

fn check_grids(a: &SpectralGrid, b: &SpectralGrid) -> Result<()> {
    if a.same_as(b) {
        Ok(())
    } else {
        Err(Error::Structural("fields live on different grids".into()))
    }
}

/// A state in collocation space.
#[derive(Clone)]
pub struct Field {
    grid: Arc<SpectralGrid>,
    values: Vec<f64>,
}

impl fmt::Debug for Field {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Field")
            .field("resolution", &self.grid.spec.resolution)
            .field("l2_norm", &norm_l2(self))
            .finish()
    }
}

impl Field {
    pub fn new(grid: Arc<SpectralGrid>, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::Structural(format!(
                "{} values for a grid of {} points",
                values.len(),
                grid.len()
            )));
        }
        if let Some((index, &value)) = values.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(Error::Overflow { index, value });
        }
        Ok(Self { grid, values })
    }

    pub(crate) fn from_raw(grid: Arc<SpectralGrid>, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), grid.len());
        Self { grid, values }
    }

    pub fn zeros(grid: &Arc<SpectralGrid>) -> Self {
        Self::from_raw(grid.clone(), vec![0.0; grid.len()])
    }

    /// Samples `f` at every collocation point (row-major, axis 0 slowest).
    pub fn from_fn(grid: &Arc<SpectralGrid>, f: impl Fn(&[f64]) -> f64) -> Result<Self> {
        let pts: Vec<Vec<f64>> = (0..grid.dim()).map(|a| grid.points(a)).collect();
        let shape = grid.spec.resolution.clone();
        let mut x = vec![0.0; grid.dim()];
        let values = (0..grid.len())
            .map(|flat| {
                let mut rem = flat;
                for a in (0..shape.len()).rev() {
                    x[a] = pts[a][rem % shape[a]];
                    rem /= shape[a];
                }
                f(&x)
            })
            .collect();
        Self::new(grid.clone(), values)
    }

    /// The L2-normalized basis function with multi-index `k`.
    pub fn mode(grid: &Arc<SpectralGrid>, k: &[usize]) -> Result<Self> {
        Ok(SpectralField::mode(grid, k)?.to_field())
    }

    pub fn grid(&self) -> &Arc<SpectralGrid> {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn to_spectral(&self) -> SpectralField {
        let mut coeffs = self.values.clone();
        self.grid.forward_in_place(&mut coeffs);
        SpectralField {
            grid: self.grid.clone(),
            coeffs,
        }
    }

    pub fn scaled(&self, s: f64) -> Field {
        Field::from_raw(self.grid.clone(), self.values.iter().map(|v| v * s).collect())
    }

    pub fn max_abs_diff(&self, other: &Field) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// A state in coefficient space.
#[derive(Clone)]
pub struct SpectralField {
    grid: Arc<SpectralGrid>,
    coeffs: Vec<f64>,
}

impl fmt::Debug for SpectralField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SpectralField")
            .field("resolution", &self.grid.spec.resolution)
            .field("coeffs", &self.coeffs)
            .finish()
    }
}

impl SpectralField {
    pub fn new(grid: Arc<SpectralGrid>, coeffs: Vec<f64>) -> Result<Self> {
        if coeffs.len() != grid.len() {
            return Err(Error::Structural(format!(
                "{} coefficients for a grid of {} modes",
                coeffs.len(),
                grid.len()
            )));
        }
        Ok(Self { grid, coeffs })
    }

    pub fn zeros(grid: &Arc<SpectralGrid>) -> Self {
        Self {
            grid: grid.clone(),
            coeffs: vec![0.0; grid.len()],
        }
    }

    pub fn mode(grid: &Arc<SpectralGrid>, k: &[usize]) -> Result<Self> {
        let mut c = Self::zeros(grid);
        c.coeffs[grid.mode_index(k)?] = 1.0;
        Ok(c)
    }

    /// Coefficients `U(-1, 1) · |k|^{-decay}`; the zero mode of a periodic
    /// grid is treated as `|k| = 1`.
    pub fn random_decaying<R: Rng + ?Sized>(grid: &Arc<SpectralGrid>, rng: &mut R, decay: f64) -> Self {
        let coeffs = grid
            .wavenumber_norms
            .iter()
            .map(|&k| rng.gen_range(-1.0..1.0) * k.max(1.0).powf(-decay))
            .collect();
        Self {
            grid: grid.clone(),
            coeffs,
        }
    }

    pub fn grid(&self) -> &Arc<SpectralGrid> {
        &self.grid
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [f64] {
        &mut self.coeffs
    }

    pub fn to_field(&self) -> Field {
        let mut values = self.coeffs.clone();
        self.grid.inverse_in_place(&mut values);
        Field::from_raw(self.grid.clone(), values)
    }

    /// Multiplies mode `k` by `f(λ_k, μ_k)`.
    pub fn map_modes(&self, f: impl Fn(f64, f64) -> f64) -> SpectralField {
        let coeffs = self
            .coeffs
            .iter()
            .zip(self.grid.lap_eigs.iter().zip(&self.grid.a_eigs))
            .map(|(&c, (&l, &m))| c * f(l, m))
            .collect();
        SpectralField {
            grid: self.grid.clone(),
            coeffs,
        }
    }

    fn weighted_sum(&self, w: impl Fn(f64) -> f64) -> f64 {
        self.coeffs
            .iter()
            .zip(&self.grid.lap_eigs)
            .map(|(&c, &l)| w(l) * c * c)
            .sum()
    }

    pub fn inner(&self, other: &SpectralField) -> f64 {
        self.coeffs.iter().zip(&other.coeffs).map(|(a, b)| a * b).sum()
    }

    pub fn l2_sq(&self) -> f64 {
        self.weighted_sum(|_| 1.0)
    }

    /// `‖∇u‖²_{L²} = Σ λ_k c_k²`.
    pub fn h1_sq(&self) -> f64 {
        self.weighted_sum(|l| l)
    }

    /// `‖Δu‖²_{L²} = Σ λ_k² c_k²`.
    pub fn h2_sq(&self) -> f64 {
        self.weighted_sum(|l| l * l)
    }

    /// `⟨Au, u⟩ = Σ μ_k c_k²`.
    pub fn a_form(&self) -> f64 {
        self.weighted_sum(|l| l * l + 2.0 * l)
    }

    /// `|Au|²_{L²}`.
    pub fn a_sq(&self) -> f64 {
        self.weighted_sum(|l| (l * l + 2.0 * l).powi(2))
    }

    /// `‖u‖²_V = |u|² + 2‖∇u‖² + ‖Δu‖²`.
    pub fn v_norm_sq(&self) -> f64 {
        self.weighted_sum(|l| (1.0 + l).powi(2))
    }

    pub fn scaled(&self, s: f64) -> SpectralField {
        SpectralField {
            grid: self.grid.clone(),
            coeffs: self.coeffs.iter().map(|c| c * s).collect(),
        }
    }

    /// `self + s · other`.
    pub fn axpy(&self, s: f64, other: &SpectralField) -> SpectralField {
        assert!(self.grid.same_as(&other.grid), "fields live on different grids");
        SpectralField {
            grid: self.grid.clone(),
            coeffs: self
                .coeffs
                .iter()
                .zip(&other.coeffs)
                .map(|(a, b)| a + s * b)
                .collect(),
        }
    }
}

macro_rules! impl_linear_ops {
    ($ty:ident, $data:ident) => {
        impl Add for &$ty {
            type Output = $ty;
            fn add(self, rhs: &$ty) -> $ty {
                assert!(self.grid.same_as(&rhs.grid), "fields live on different grids");
                $ty {
                    grid: self.grid.clone(),
                    $data: self.$data.iter().zip(&rhs.$data).map(|(a, b)| a + b).collect(),
                }
            }
        }

        impl Sub for &$ty {
            type Output = $ty;
            fn sub(self, rhs: &$ty) -> $ty {
                assert!(self.grid.same_as(&rhs.grid), "fields live on different grids");
                $ty {
                    grid: self.grid.clone(),
                    $data: self.$data.iter().zip(&rhs.$data).map(|(a, b)| a - b).collect(),
                }
            }
        }

        impl Mul<&$ty> for f64 {
            type Output = $ty;
            fn mul(self, rhs: &$ty) -> $ty {
                rhs.scaled(self)
            }
        }

        impl Neg for &$ty {
            type Output = $ty;
            fn neg(self) -> $ty {
                self.scaled(-1.0)
            }
        }
    };
}

impl_linear_ops!(Field, values);
impl_linear_ops!(SpectralField, coeffs);

pub fn transform_forward(f: &Field) -> SpectralField {
    f.to_spectral()
}

pub fn transform_inverse(c: &SpectralField) -> Field {
    c.to_field()
}

/// `Δu`; mode `k` is scaled by `-λ_k`.
pub fn apply_laplacian(u: &Field) -> Field {
    u.to_spectral().map_modes(|l, _| -l).to_field()
}

/// `Δ²u`.
pub fn apply_bilaplacian(u: &Field) -> Field {
    u.to_spectral().map_modes(|l, _| l * l).to_field()
}

/// `Au = Δ²u - 2Δu`; mode `k` is scaled by `μ_k = λ_k² + 2λ_k`.
pub fn apply_a(u: &Field) -> Field {
    u.to_spectral().map_modes(|_, m| m).to_field()
}

/// `S(t)u = e^{-tA}u`.
pub fn apply_semigroup(u: &Field, t: f64) -> Result<Field> {
    if !(t >= 0.0 && t.is_finite()) {
        return Err(Error::Domain(format!("semigroup time {t} must be finite and >= 0")));
    }
    Ok(u.to_spectral().map_modes(|_, m| (-m * t).exp()).to_field())
}

/// `A^mu u` for `mu ∈ (0, 1]`.
pub fn apply_a_power(u: &Field, mu: f64) -> Result<Field> {
    if !(mu > 0.0 && mu <= 1.0) {
        return Err(Error::Domain(format!("fractional power {mu} outside (0, 1]")));
    }
    Ok(u.to_spectral().map_modes(|_, m| m.powf(mu)).to_field())
}

/// Rectangle-rule inner product on the collocation grid.
pub fn inner_l2(u: &Field, v: &Field) -> Result<f64> {
    check_grids(&u.grid, &v.grid)?;
    let dot: f64 = u.values.iter().zip(&v.values).map(|(a, b)| a * b).sum();
    Ok(dot * u.grid.cell_volume)
}

pub fn norm_l2(u: &Field) -> f64 {
    let sq: f64 = u.values.iter().map(|a| a * a).sum();
    (sq * u.grid.cell_volume).sqrt()
}

/// `‖∇u‖_{L²}`.
pub fn seminorm_h1(u: &Field) -> f64 {
    u.to_spectral().h1_sq().sqrt()
}

/// `‖Δu‖_{L²}`.
pub fn seminorm_h2(u: &Field) -> f64 {
    u.to_spectral().h2_sq().sqrt()
}

/// `‖u‖^{2n}_{L^{2n}}` by the rectangle rule on the grid of `u`.
pub fn l2n_pow(u: &Field, n: f64) -> f64 {
    let p = 2.0 * n;
    let s: f64 = if (p - p.round()).abs() == 0.0 && p <= 64.0 {
        let ip = p.round() as i32;
        u.values.iter().map(|v| v.powi(ip)).sum()
    } else {
        u.values.iter().map(|v| v.abs().powf(p)).sum()
    };
    s * u.grid.cell_volume
}

/// `(∫ |u|^{2n})^{1/(2n)}` by the rectangle rule.
pub fn norm_l2n(u: &Field, n: u32) -> Result<f64> {
    if n == 0 {
        return Err(Error::Domain("L^{2n} norm needs n >= 1".into()));
    }
    Ok(l2n_pow(u, n as f64).powf(1.0 / (2.0 * n as f64)))
}

/// `φ₁(z) = (1 - e^{-z}) / z`, continuous at `z = 0`.
pub fn phi1(z: f64) -> Result<f64> {
    if !(z >= 0.0) {
        return Err(Error::Domain(format!("phi1 argument {z} must be >= 0")));
    }
    Ok(phi1_unchecked(z))
}

pub(crate) fn phi1_unchecked(z: f64) -> f64 {
    if z < PHI1_SERIES_THRESHOLD {
        1.0 - z / 2.0 + z * z / 6.0
    } else {
        -(-z).exp_m1() / z
    }
}

/// `φ₂(z) = (e^{-z} - 1 + z) / z²`, the weight of the right endpoint when a
/// linear-in-time forcing is integrated against `e^{-z(1-s)}` over `s ∈ [0,1]`.
pub fn phi2(z: f64) -> Result<f64> {
    if !(z >= 0.0) {
        return Err(Error::Domain(format!("phi2 argument {z} must be >= 0")));
    }
    Ok(phi2_unchecked(z))
}

pub(crate) fn phi2_unchecked(z: f64) -> f64 {
    if z < 0.5 {
        // Σ_{j>=0} (-z)^j / (j + 2)!
        let mut term = 0.5;
        let mut sum = term;
        for j in 1..20 {
            term *= -z / (j + 2) as f64;
            sum += term;
        }
        sum
    } else {
        ((-z).exp_m1() + z) / (z * z)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn line(n: usize) -> Arc<SpectralGrid> {
        SpectralGrid::new(DomainSpec::interval(PI, n).unwrap())
    }

    fn random_field(grid: &Arc<SpectralGrid>, seed: u64) -> Field {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let values = (0..grid.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        Field::new(grid.clone(), values).unwrap()
    }

    #[test]
    fn domain_validation() {
        assert!(DomainSpec::interval(PI, 6).is_err());
        assert!(DomainSpec::interval(PI, 9).is_err());
        assert!(DomainSpec::interval(-1.0, 16).is_err());
        assert!(DomainSpec::new(vec![1.0; 4], vec![8; 4], Boundary::Periodic).is_err());
        assert!(DomainSpec::new(vec![1.0, 1.0], vec![8], Boundary::Periodic).is_err());
        assert!(DomainSpec::cube(3, 1.0, 8, Boundary::DirichletNavier).is_ok());
    }

    #[test]
    fn sine_eigenvalues_on_pi_interval() {
        let g = line(16);
        for (i, &l) in g.lap_eigs().iter().enumerate() {
            let k = (i + 1) as f64;
            assert!((l - k * k).abs() < 1e-12 * k * k);
        }
        assert!((g.mu_min() - 3.0).abs() < 1e-12);
        assert!(g.a_eigs().iter().all(|&m| m > 0.0));
    }

    #[test]
    fn single_mode_transforms_to_unit_vector() {
        for g in [
            line(16),
            SpectralGrid::new(DomainSpec::cube(2, 2.0, 8, Boundary::DirichletNavier).unwrap()),
            SpectralGrid::new(DomainSpec::cube(2, 2.0, 8, Boundary::Periodic).unwrap()),
        ] {
            for flat in 0..g.len() {
                let mut c = SpectralField::zeros(&g);
                c.coeffs_mut()[flat] = 1.0;
                let back = c.to_field().to_spectral();
                for (j, &v) in back.coeffs().iter().enumerate() {
                    let expect = if j == flat { 1.0 } else { 0.0 };
                    assert!((v - expect).abs() < 1e-13, "mode {flat} leaked into {j}: {v}");
                }
            }
        }
    }

    #[test]
    fn sine_mode_matches_analytic_profile() {
        let g = line(32);
        let u = Field::mode(&g, &[3]).unwrap();
        let expect = Field::from_fn(&g, |x| (2.0 / PI).sqrt() * (3.0 * x[0]).sin()).unwrap();
        assert!(u.max_abs_diff(&expect) < 1e-14);
    }

    #[test]
    fn periodic_modes_match_analytic_profiles() {
        let l = 2.0 * PI;
        let g = SpectralGrid::new(DomainSpec::new(vec![l], vec![16], Boundary::Periodic).unwrap());
        let dc = Field::mode(&g, &[0]).unwrap();
        assert!(dc.values().iter().all(|&v| (v - 1.0 / l.sqrt()).abs() < 1e-14));
        let cos2 = Field::mode(&g, &[3]).unwrap();
        let expect = Field::from_fn(&g, |x| (2.0 / l).sqrt() * (2.0 * x[0]).cos()).unwrap();
        assert!(cos2.max_abs_diff(&expect) < 1e-14);
        let sin2 = Field::mode(&g, &[4]).unwrap();
        let expect = Field::from_fn(&g, |x| (2.0 / l).sqrt() * (2.0 * x[0]).sin()).unwrap();
        assert!(sin2.max_abs_diff(&expect) < 1e-14);
        assert!((g.lap_eigs()[3] - 4.0).abs() < 1e-12);
    }

    #[test]
    fn zero_field_has_zero_coefficients_and_norms() {
        let g = line(16);
        let z = Field::zeros(&g);
        assert!(z.to_spectral().coeffs().iter().all(|&c| c == 0.0));
        assert_eq!(norm_l2(&z), 0.0);
        assert_eq!(seminorm_h1(&z), 0.0);
    }

    #[test]
    fn round_trip_and_parseval() {
        for g in [
            line(128),
            SpectralGrid::new(DomainSpec::new(vec![1.0, 2.5], vec![16, 24], Boundary::DirichletNavier).unwrap()),
            SpectralGrid::new(DomainSpec::cube(3, 1.0, 8, Boundary::Periodic).unwrap()),
        ] {
            let u = random_field(&g, 7);
            let c = u.to_spectral();
            let back = c.to_field();
            assert!(u.max_abs_diff(&back) <= 1e-12);
            let quad = norm_l2(&u).powi(2);
            assert!((c.l2_sq() - quad).abs() <= 1e-10 * quad);
        }
    }

    #[test]
    fn a_eigenvalues_on_first_modes() {
        let g = line(16);
        let c1 = SpectralField::mode(&g, &[1]).unwrap();
        assert_eq!(c1.map_modes(|_, m| m).coeffs()[0], 3.0);
        let c2 = SpectralField::mode(&g, &[2]).unwrap();
        assert_eq!(c2.map_modes(|_, m| m).coeffs()[1], 24.0);
        // Through the transforms, rounding in the top modes is amplified by μ_max.
        let tol = 1e-15 * g.mu_max();
        let u1 = Field::mode(&g, &[1]).unwrap();
        assert!(apply_a(&u1).max_abs_diff(&u1.scaled(3.0)) < tol);
        let u2 = Field::mode(&g, &[2]).unwrap();
        assert!(apply_a(&u2).max_abs_diff(&u2.scaled(24.0)) < tol);
    }

    #[test]
    fn a_is_bilaplacian_minus_twice_laplacian() {
        let g = line(64);
        let u = random_field(&g, 3);
        let direct = apply_a(&u);
        let composed = &apply_bilaplacian(&u) - &apply_laplacian(&u).scaled(2.0);
        let scale = norm_l2(&direct);
        assert!(norm_l2(&(&direct - &composed)) <= 1e-12 * scale);
    }

    #[test]
    fn semigroup_examples_and_law() {
        let g = line(32);
        let u1 = Field::mode(&g, &[1]).unwrap();
        let s = apply_semigroup(&u1, 0.1).unwrap();
        assert!(s.max_abs_diff(&u1.scaled((-0.3f64).exp())) < 1e-15);
        let u = random_field(&g, 11);
        assert!(apply_semigroup(&u, 0.0).unwrap().max_abs_diff(&u) < 1e-13);
        let st = apply_semigroup(&apply_semigroup(&u, 0.01).unwrap(), 0.02).unwrap();
        let direct = apply_semigroup(&u, 0.03).unwrap();
        assert!(norm_l2(&(&st - &direct)) <= 1e-12 * norm_l2(&u));
        for t in [0.01, 0.1, 1.0] {
            let lhs = norm_l2(&apply_semigroup(&u, t).unwrap());
            assert!(lhs <= (-g.mu_min() * t).exp() * norm_l2(&u) * (1.0 + 1e-12));
        }
        assert!(matches!(apply_semigroup(&u, -1.0), Err(Error::Domain(_))));
    }

    #[test]
    fn fractional_powers() {
        let g = line(32);
        let u = random_field(&g, 5);
        let one = apply_a_power(&u, 1.0).unwrap();
        assert!(norm_l2(&(&one - &apply_a(&u))) <= 1e-12 * norm_l2(&one));
        let c1 = SpectralField::mode(&g, &[1]).unwrap();
        let half = c1.map_modes(|_, m| m.powf(0.5)).coeffs()[0];
        assert!((half - 3f64.sqrt()).abs() < 1e-15);
        let u1 = Field::mode(&g, &[1]).unwrap();
        let half = apply_a_power(&u1, 0.5).unwrap();
        assert!(half.max_abs_diff(&u1.scaled(3f64.sqrt())) < 1e-15 * g.mu_max().sqrt());
        let twice = apply_a_power(&apply_a_power(&u, 0.5).unwrap(), 0.5).unwrap();
        assert!(norm_l2(&(&twice - &one)) <= 1e-10 * norm_l2(&one));
        assert!(apply_a_power(&u, 0.0).is_err());
        assert!(apply_a_power(&u, 1.5).is_err());
    }

    #[test]
    fn ground_mode_norms_are_unity() {
        // Independent quadrature of sin, cos profiles on a fine midpoint grid.
        let m = 200_000;
        let dx = PI / m as f64;
        let (mut l2, mut h1, mut h2) = (0.0, 0.0, 0.0);
        for i in 0..m {
            let x = (i as f64 + 0.5) * dx;
            let c = 2.0 / PI;
            l2 += c * x.sin().powi(2) * dx;
            h1 += c * x.cos().powi(2) * dx;
            h2 += c * x.sin().powi(2) * dx;
        }
        let g = line(64);
        let u = Field::from_fn(&g, |x| (2.0 / PI).sqrt() * x[0].sin()).unwrap();
        assert!((norm_l2(&u) - l2.sqrt()).abs() < 1e-9);
        assert!((seminorm_h1(&u) - h1.sqrt()).abs() < 1e-9);
        assert!((seminorm_h2(&u) - h2.sqrt()).abs() < 1e-9);
        assert!((norm_l2(&u) - 1.0).abs() < 1e-14);
    }

    #[test]
    fn phi_functions() {
        assert_eq!(phi1(0.0).unwrap(), 1.0);
        assert!((phi1(1.0).unwrap() - (1.0 - (-1.0f64).exp())).abs() < 1e-16);
        let z = 1e-9;
        assert!((phi1(z).unwrap() - (1.0 - z / 2.0)).abs() < 1e-15);
        assert!(phi1(-1e-3).is_err());
        // Continuity across the series threshold.
        let t = PHI1_SERIES_THRESHOLD;
        assert!((phi1_unchecked(t * (1.0 - 1e-9)) - phi1_unchecked(t * (1.0 + 1e-9))).abs() < 1e-15);
        assert_eq!(phi2(0.0).unwrap(), 0.5);
        for z in [1e-3, 0.1, 0.49, 0.51, 3.0] {
            // Midpoint quadrature of ∫₀¹ e^{-z(1-s)} s ds.
            let m = 100_000;
            let q: f64 = (0..m)
                .map(|i| {
                    let s = (i as f64 + 0.5) / m as f64;
                    (-z * (1.0 - s)).exp() * s / m as f64
                })
                .sum();
            assert!((phi2(z).unwrap() - q).abs() < 1e-10, "z = {z}");
        }
    }

    #[test]
    fn mode_embedding_round_trip() {
        for boundary in [Boundary::DirichletNavier, Boundary::Periodic] {
            let g = SpectralGrid::new(DomainSpec::cube(2, 1.0, 8, boundary).unwrap());
            let fine = g.refined(3);
            let emb = ModeEmbedding::new(&g, &fine).unwrap();
            let u = random_field(&g, 2);
            let c = u.to_spectral();
            let up = SpectralField::new(fine.clone(), emb.embed(c.coeffs())).unwrap();
            let back = emb.restrict(up.to_field().to_spectral().coeffs());
            for (a, b) in back.iter().zip(c.coeffs()) {
                assert!((a - b).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn grid_mismatch_is_structural() {
        let a = Field::zeros(&line(16));
        let b = Field::zeros(&line(32));
        assert!(matches!(inner_l2(&a, &b), Err(Error::Structural(_))));
        assert!(Field::new(line(16), vec![0.0; 3]).is_err());
        assert!(matches!(
            Field::new(line(8), vec![f64::NAN; 8]),
            Err(Error::Overflow { index: 0, .. })
        ));
    }
}
