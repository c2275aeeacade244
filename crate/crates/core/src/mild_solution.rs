//! Mild solutions `u(t) = S(t)u₀ + ∫₀ᵗ S(t-p) ξ(u)(p) dp` on a uniform time
//! grid, the truncation `θ_m`, and Picard iteration of the truncated map.

use std::sync::Arc;

use log::debug;

use crate::error::{Error, Result};
use crate::model::Model;
use crate::spectral::{phi1_unchecked, phi2_unchecked, Field, SpectralField, SpectralGrid};

pub const DEFAULT_PICARD_TOL: f64 = 1e-10;
pub const DEFAULT_PICARD_MAX_ITER: usize = 100;
pub const DEFAULT_PICARD_STEPS: usize = 40;

/// Piecewise-linear cutoff: 1 on `[0, m]`, `2 - x/m` on `[m, 2m]`, 0 beyond.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TruncationTheta {
    m: f64,
}

impl TruncationTheta {
    pub fn new(m: f64) -> Result<Self> {
        if !(m > 0.0 && m.is_finite()) {
            return Err(Error::Domain(format!("truncation level must be positive and finite, got {m}")));
        }
        Ok(Self { m })
    }

    pub fn m(&self) -> f64 {
        self.m
    }

    pub fn eval(&self, x: f64) -> Result<f64> {
        if !(x >= 0.0) {
            return Err(Error::Domain(format!("theta is defined on x >= 0, got {x}")));
        }
        Ok(self.eval_unchecked(x))
    }

    fn eval_unchecked(&self, x: f64) -> f64 {
        if x <= self.m {
            1.0
        } else if x >= 2.0 * self.m {
            0.0
        } else {
            2.0 - x / self.m
        }
    }

    /// Lipschitz constant `1/m`.
    pub fn lipschitz(&self) -> f64 {
        1.0 / self.m
    }
}

pub fn theta_eval(th: &TruncationTheta, x: f64) -> Result<f64> {
    th.eval(x)
}

/// Coefficient-space states at `t_j = j T / M`, `j = 0..=M`.
#[derive(Clone, Debug)]
pub struct SpaceTimeGrid {
    t_end: f64,
    fields: Vec<SpectralField>,
}

impl SpaceTimeGrid {
    pub fn new(t_end: f64, fields: Vec<SpectralField>) -> Result<Self> {
        if !(t_end > 0.0 && t_end.is_finite()) {
            return Err(Error::Domain(format!("horizon must be positive, got {t_end}")));
        }
        if fields.len() < 2 {
            return Err(Error::Domain("a time grid needs at least two points".into()));
        }
        let grid = fields[0].grid().clone();
        if fields.iter().any(|f| !f.grid().same_as(&grid)) {
            return Err(Error::Structural("time slices live on different grids".into()));
        }
        Ok(Self { t_end, fields })
    }

    /// `u(t) = c` for every grid time.
    pub fn constant(c: &SpectralField, t_end: f64, steps: usize) -> Result<Self> {
        Self::new(t_end, vec![c.clone(); steps + 1])
    }

    /// `S(t_j) u₀`.
    pub fn free_evolution(u0: &SpectralField, t_end: f64, steps: usize) -> Result<Self> {
        if steps == 0 {
            return Err(Error::Domain("a time grid needs at least one step".into()));
        }
        let dt = t_end / steps as f64;
        let fields = (0..=steps)
            .map(|j| {
                let t = j as f64 * dt;
                u0.map_modes(|_, m| (-m * t).exp())
            })
            .collect();
        Self::new(t_end, fields)
    }

    pub fn t_end(&self) -> f64 {
        self.t_end
    }

    pub fn steps(&self) -> usize {
        self.fields.len() - 1
    }

    pub fn dt(&self) -> f64 {
        self.t_end / self.steps() as f64
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.fields.len()).map(|j| j as f64 * self.dt()).collect()
    }

    pub fn spatial_grid(&self) -> &Arc<SpectralGrid> {
        self.fields[0].grid()
    }

    pub fn slices(&self) -> &[SpectralField] {
        &self.fields
    }

    pub fn slice(&self, j: usize) -> Field {
        self.fields[j].to_field()
    }

    pub fn last(&self) -> &SpectralField {
        &self.fields[self.fields.len() - 1]
    }

    fn check_compatible(&self, other: &SpaceTimeGrid) -> Result<()> {
        if self.fields.len() != other.fields.len()
            || self.t_end != other.t_end
            || !self.spatial_grid().same_as(other.spatial_grid())
        {
            return Err(Error::Structural("space-time grids differ".into()));
        }
        Ok(())
    }

    /// `sup_j ‖u(t_j) - v(t_j)‖_V`.
    pub fn sup_v_distance(&self, other: &SpaceTimeGrid) -> Result<f64> {
        self.sup_distance(other, SpectralField::v_norm_sq)
    }

    /// `sup_j |u(t_j) - v(t_j)|_{L²}`.
    pub fn sup_l2_distance(&self, other: &SpaceTimeGrid) -> Result<f64> {
        self.sup_distance(other, SpectralField::l2_sq)
    }

    fn sup_distance(&self, other: &SpaceTimeGrid, norm_sq: fn(&SpectralField) -> f64) -> Result<f64> {
        self.check_compatible(other)?;
        Ok(self
            .fields
            .iter()
            .zip(&other.fields)
            .map(|(a, b)| norm_sq(&(a - b)).sqrt())
            .fold(0.0, f64::max))
    }
}

/// `|u|_{X_{t_j}}` for every `j`: running sup of `‖·‖²_V` plus the running
/// trapezoid of `|A·|²`, square-rooted.
pub fn running_xt_norms(u: &SpaceTimeGrid) -> Vec<f64> {
    let dt = u.dt();
    let mut sup_v: f64 = 0.0;
    let mut integral = 0.0;
    let mut prev_a: Option<f64> = None;
    u.fields
        .iter()
        .map(|c| {
            sup_v = sup_v.max(c.v_norm_sq());
            let a = c.a_sq();
            if let Some(p) = prev_a {
                integral += 0.5 * dt * (p + a);
            }
            prev_a = Some(a);
            (sup_v + integral).sqrt()
        })
        .collect()
}

/// `|u|_{X_T} = (sup_t ‖u‖²_V + ∫₀ᵀ |Au|² dt)^{1/2}`.
pub fn xt_norm(u: &SpaceTimeGrid) -> f64 {
    *running_xt_norms(u).last().expect("grid has at least two points")
}

/// `(S∗f)(t_j) = ∫₀^{t_j} S(t_j - p) f(p) dp` with `f` linear between grid
/// times; each mode is integrated exactly.
pub fn convolve_semigroup(f: &SpaceTimeGrid) -> SpaceTimeGrid {
    let dt = f.dt();
    let grid = f.spatial_grid().clone();
    let weights: Vec<(f64, f64, f64)> = grid
        .a_eigs()
        .iter()
        .map(|&mu| {
            let z = mu * dt;
            let p1 = phi1_unchecked(z);
            let p2 = phi2_unchecked(z);
            ((-z).exp(), dt * (p1 - p2), dt * p2)
        })
        .collect();
    let mut out = Vec::with_capacity(f.fields.len());
    let mut acc = SpectralField::zeros(&grid);
    out.push(acc.clone());
    for pair in f.fields.windows(2) {
        let (f0, f1) = (pair[0].coeffs(), pair[1].coeffs());
        for (k, c) in acc.coeffs_mut().iter_mut().enumerate() {
            let (decay, w0, w1) = weights[k];
            *c = decay * *c + w0 * f0[k] + w1 * f1[k];
        }
        out.push(acc.clone());
    }
    SpaceTimeGrid {
        t_end: f.t_end,
        fields: out,
    }
}

/// `ξ(u)(t_j) = θ_m(|u|_{X_{t_j}}) F(u(t_j))`.
pub fn xi_map(u: &SpaceTimeGrid, th: &TruncationTheta, model: &Model) -> Result<SpaceTimeGrid> {
    let norms = running_xt_norms(u);
    let fields = u
        .fields
        .iter()
        .zip(norms)
        .map(|(c, x)| {
            let theta = th.eval_unchecked(x);
            if theta == 0.0 {
                Ok(SpectralField::zeros(c.grid()))
            } else {
                Ok(model.nonlinearity_spectral(c)?.scaled(theta))
            }
        })
        .collect::<Result<Vec<_>>>()?;
    SpaceTimeGrid::new(u.t_end, fields)
}

/// `Φ(u) = S(·)u₀ + S∗ξ(u)`.
pub fn phi_map(u: &SpaceTimeGrid, u0: &Field, th: &TruncationTheta, model: &Model) -> Result<SpaceTimeGrid> {
    if !u0.grid().same_as(u.spatial_grid()) {
        return Err(Error::Structural("initial state and trajectory grids differ".into()));
    }
    let free = SpaceTimeGrid::free_evolution(&u0.to_spectral(), u.t_end, u.steps())?;
    let conv = convolve_semigroup(&xi_map(u, th, model)?);
    let fields = free.fields.iter().zip(&conv.fields).map(|(a, b)| a + b).collect();
    SpaceTimeGrid::new(u.t_end, fields)
}

/// Initial iterate of the Picard sequence.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum PicardStart {
    /// `u^{(0)}(t) = u₀` for every `t`.
    #[default]
    Constant,
    /// `u^{(0)}(t) = S(t) u₀`.
    FreeEvolution,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PicardConfig {
    pub t_end: f64,
    pub tol: f64,
    pub max_iter: usize,
    /// Number of time steps `M`; the grid has `M + 1` points.
    pub steps: usize,
    pub blowup_bound: f64,
    pub start: PicardStart,
}

impl PicardConfig {
    pub fn new(t_end: f64) -> Self {
        Self {
            t_end,
            tol: DEFAULT_PICARD_TOL,
            max_iter: DEFAULT_PICARD_MAX_ITER,
            steps: DEFAULT_PICARD_STEPS,
            blowup_bound: 1e8,
            start: PicardStart::Constant,
        }
    }

    pub fn steps(mut self, steps: usize) -> Self {
        self.steps = steps;
        self
    }

    pub fn tol(mut self, tol: f64) -> Self {
        self.tol = tol;
        self
    }

    pub fn start(mut self, start: PicardStart) -> Self {
        self.start = start;
        self
    }

    pub fn max_iter(mut self, max_iter: usize) -> Self {
        self.max_iter = max_iter;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.t_end > 0.0 && self.t_end.is_finite()) {
            return Err(Error::Domain(format!("horizon must be positive, got {}", self.t_end)));
        }
        if !(self.tol > 0.0) {
            return Err(Error::Domain(format!("tolerance must be positive, got {}", self.tol)));
        }
        if self.max_iter == 0 || self.steps == 0 {
            return Err(Error::Domain("max_iter and steps must be at least 1".into()));
        }
        if !(self.blowup_bound > 0.0) {
            return Err(Error::Domain("blow-up bound must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct PicardOutcome {
    pub solution: SpaceTimeGrid,
    /// `sup_t ‖u^{(j+1)} - u^{(j)}‖_V` for `j = 0, 1, ...`.
    pub distances: Vec<f64>,
    /// `distances[j] / distances[j-1]`.
    pub factors: Vec<f64>,
}

impl PicardOutcome {
    pub fn iterations(&self) -> usize {
        self.distances.len()
    }

    /// Largest measured contraction factor.
    pub fn max_factor(&self) -> f64 {
        self.factors.iter().cloned().fold(0.0, f64::max)
    }
}

/// Iterates `u^{(j+1)} = Φ(u^{(j)})` from the configured start.
///
/// A factor `>= 1` while the distance is still above `tol` is reported as
/// non-contraction.
pub fn picard_solve(u0: &Field, th: &TruncationTheta, model: &Model, cfg: &PicardConfig) -> Result<PicardOutcome> {
    cfg.validate()?;
    let c0 = u0.to_spectral();
    let mut current = match cfg.start {
        PicardStart::Constant => SpaceTimeGrid::constant(&c0, cfg.t_end, cfg.steps)?,
        PicardStart::FreeEvolution => SpaceTimeGrid::free_evolution(&c0, cfg.t_end, cfg.steps)?,
    };
    let mut distances = Vec::new();
    let mut factors = Vec::new();
    for iter in 0..cfg.max_iter {
        let next = phi_map(&current, u0, th, model)?;
        check_blowup(&next, cfg.blowup_bound)?;
        let d = next.sup_v_distance(&current)?;
        debug!("picard iteration {iter}: sup-V distance {d:e}");
        if let Some(&prev) = distances.last() {
            let factor = if prev > 0.0 { d / prev } else { 0.0 };
            factors.push(factor);
            if factor >= 1.0 && d >= cfg.tol {
                return Err(Error::NonContraction {
                    horizon: cfg.t_end,
                    factor,
                });
            }
        }
        distances.push(d);
        current = next;
        if d < cfg.tol {
            return Ok(PicardOutcome {
                solution: current,
                distances,
                factors,
            });
        }
    }
    Err(Error::NotConverged {
        iterations: cfg.max_iter,
        distance: *distances.last().unwrap_or(&f64::INFINITY),
        tol: cfg.tol,
    })
}

fn check_blowup(u: &SpaceTimeGrid, bound: f64) -> Result<()> {
    let dt = u.dt();
    for (j, c) in u.fields.iter().enumerate() {
        let v = c.v_norm_sq().sqrt();
        if !(v <= bound) {
            let last = j.saturating_sub(1);
            return Err(Error::BlowUp {
                t: j as f64 * dt,
                v_norm: v,
                bound,
                last_t: last as f64 * dt,
                last_state: Box::new(u.fields[last].to_field()),
            });
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelParams;
    use crate::spectral::{DomainSpec, SpectralGrid};
    use std::f64::consts::PI;

    fn grid(n: usize) -> Arc<SpectralGrid> {
        SpectralGrid::new(DomainSpec::interval(PI, n).unwrap())
    }

    #[test]
    fn theta_examples() {
        let th = TruncationTheta::new(3.0).unwrap();
        assert_eq!(th.eval(2.0).unwrap(), 1.0);
        assert_eq!(th.eval(7.0).unwrap(), 0.0);
        assert_eq!(th.eval(4.5).unwrap(), 0.5);
        assert_eq!(th.eval(0.0).unwrap(), 1.0);
        assert!(th.eval(-1e-300).is_err());
        assert!(th.eval(f64::NAN).is_err());
        assert!(TruncationTheta::new(0.0).is_err());
    }

    #[test]
    fn xt_norm_of_constant_ground_state() {
        let g = grid(16);
        let c = SpectralField::mode(&g, &[1]).unwrap();
        let u = SpaceTimeGrid::constant(&c, 1.0, 40).unwrap();
        assert!((xt_norm(&u) - 13f64.sqrt()).abs() < 1e-12);
        let z = SpaceTimeGrid::constant(&SpectralField::zeros(&g), 1.0, 10).unwrap();
        assert_eq!(xt_norm(&z), 0.0);
    }

    #[test]
    fn convolution_of_constant_mode() {
        let g = grid(16);
        let k = g.mode_index(&[2]).unwrap();
        let c = SpectralField::mode(&g, &[2]).unwrap().scaled(0.7);
        let f = SpaceTimeGrid::constant(&c, 0.3, 30).unwrap();
        let out = convolve_semigroup(&f);
        let mu = 24.0;
        for (t, s) in out.times().iter().zip(out.slices()) {
            let expected = 0.7 * (1.0 - (-mu * t).exp()) / mu;
            assert!((s.coeffs()[k] - expected).abs() < 1e-15, "t = {t}");
        }
        let zero = SpaceTimeGrid::constant(&SpectralField::zeros(&g), 0.3, 30).unwrap();
        assert!(convolve_semigroup(&zero).slices().iter().all(|s| s.l2_sq() == 0.0));
    }

    #[test]
    fn convolution_of_linear_forcing_is_exact() {
        // f(t) = t on mode 1: ∫₀ᵗ e^{-3(t-p)} p dp = t/3 - (1 - e^{-3t})/9.
        let g = grid(8);
        let steps = 20;
        let t_end = 0.5;
        let fields = (0..=steps)
            .map(|j| SpectralField::mode(&g, &[1]).unwrap().scaled(j as f64 * t_end / steps as f64))
            .collect();
        let out = convolve_semigroup(&SpaceTimeGrid::new(t_end, fields).unwrap());
        for (t, s) in out.times().iter().zip(out.slices()) {
            let expected = t / 3.0 - (1.0 - (-3.0 * t).exp()) / 9.0;
            assert!((s.coeffs()[0] - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn phi_fixes_the_ground_state() {
        let g = grid(16);
        let model = Model::new(&g, ModelParams::new(1)).unwrap();
        let c = SpectralField::mode(&g, &[1]).unwrap();
        let u0 = c.to_field();
        let u = SpaceTimeGrid::constant(&c, 1.0, 40).unwrap();
        let th = TruncationTheta::new(100.0).unwrap();
        let out = phi_map(&u, &u0, &th, &model).unwrap();
        assert!(out.sup_l2_distance(&u).unwrap() < 1e-10);
    }

    #[test]
    fn active_truncation_gives_free_decay() {
        let g = grid(16);
        let model = Model::new(&g, ModelParams::new(2)).unwrap();
        let c = SpectralField::mode(&g, &[1]).unwrap().axpy(0.3, &SpectralField::mode(&g, &[3]).unwrap());
        let u = SpaceTimeGrid::constant(&c, 0.1, 10).unwrap();
        let th = TruncationTheta::new(1e-6).unwrap();
        let u0 = c.to_field();
        let out = phi_map(&u, &u0, &th, &model).unwrap();
        let free = SpaceTimeGrid::free_evolution(&u0.to_spectral(), 0.1, 10).unwrap();
        assert_eq!(out.sup_v_distance(&free).unwrap(), 0.0);
    }

    #[test]
    fn picard_converges_at_equilibrium() {
        let g = grid(16);
        let model = Model::new(&g, ModelParams::new(1)).unwrap();
        let u0 = Field::mode(&g, &[1]).unwrap();
        let th = TruncationTheta::new(100.0).unwrap();
        let out = picard_solve(&u0, &th, &model, &PicardConfig::new(0.05)).unwrap();
        assert!(out.iterations() <= 3, "{} iterations", out.iterations());
        let exact = SpaceTimeGrid::constant(&u0.to_spectral(), 0.05, DEFAULT_PICARD_STEPS).unwrap();
        assert!(out.solution.sup_v_distance(&exact).unwrap() <= 1e-10);
    }

    #[test]
    fn picard_rejects_long_horizons() {
        let g = grid(16);
        let model = Model::new(&g, ModelParams::new(2)).unwrap();
        let c = SpectralField::mode(&g, &[1]).unwrap().axpy(0.5, &SpectralField::mode(&g, &[2]).unwrap());
        let u0 = c.scaled(1.0 / c.l2_sq().sqrt()).to_field();
        let th = TruncationTheta::new(1e3).unwrap();
        let err = picard_solve(&u0, &th, &model, &PicardConfig::new(20.0)).unwrap_err();
        assert!(
            matches!(err, Error::NonContraction { .. } | Error::BlowUp { .. }),
            "{err}"
        );
    }

    #[test]
    fn picard_config_validation() {
        assert!(PicardConfig::new(0.0).validate().is_err());
        assert!(PicardConfig::new(1.0).steps(0).validate().is_err());
        assert!(PicardConfig::new(1.0).tol(0.0).validate().is_err());
        assert!(PicardConfig::new(1.0).validate().is_ok());
    }
}
