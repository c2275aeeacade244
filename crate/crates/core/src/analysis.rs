//! Probes for the quantitative estimates: the Lipschitz envelope of `F`,
//! the off-manifold growth rate, fractional-power orbit bounds, steady
//! states, ω-limit tails and the gradient-system stall criterion.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::integrators::{integrate, Scheme, Stepper, StepperConfig, TrajectoryRecord};
use crate::model::{FieldForm, Model};
use crate::spectral::{Field, SpectralField};

pub const DEFAULT_STEADY_TOL: f64 = 1e-8;
pub const DEFAULT_SAMPLE_DECAY: f64 = 3.0;
pub const PSI_STEP_FRACTION: f64 = 0.05;

/// `𝒢(m, n') = 2C(m² + n'² + m n') + C_n[((2n-1)/2)(m^{2n-1} + n'^{2n-1})(m + n')
/// + (m^{2n} + n'^{2n}) + (1 + m² + n'²)^{1/3}]`.
pub fn g_bound(m: f64, n_arg: f64, n: f64, c: f64, cn: f64) -> f64 {
    let quad = 2.0 * c * (m * m + n_arg * n_arg + m * n_arg);
    let odd = 0.5 * (2.0 * n - 1.0) * (m.powf(2.0 * n - 1.0) + n_arg.powf(2.0 * n - 1.0)) * (m + n_arg);
    let even = m.powf(2.0 * n) + n_arg.powf(2.0 * n);
    let root = (1.0 + m * m + n_arg * n_arg).cbrt();
    quad + cn * (odd + even + root)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LipschitzProbeReport {
    /// Pairs that entered the maximum.
    pub samples: usize,
    /// Degenerate pairs `u₁ = u₂`.
    pub skipped: usize,
    pub max_ratio: f64,
    pub fitted_constant: f64,
    pub ball_radius: f64,
    pub resolution: usize,
    pub n: f64,
    /// Fitted `C₀` of the scalar inequality for `|a|^{2n-2}a`.
    pub scalar_constant: f64,
}

/// Random state with `|k|^{-decay}` coefficients rescaled to `‖u‖_V = target`.
pub fn sample_in_v_ball<R: Rng + ?Sized>(model: &Model, rng: &mut R, target: f64, decay: f64) -> SpectralField {
    let c = SpectralField::random_decaying(model.grid(), rng, decay);
    let v = c.v_norm_sq().sqrt();
    if v > 0.0 {
        c.scaled(target / v)
    } else {
        c
    }
}

/// Samples pairs in the V-ball of radius `ball_radius` and reports the
/// largest `|F(u₁) - F(u₂)| / (𝒢(‖u₁‖_V, ‖u₂‖_V)·‖u₁ - u₂‖_V)` with
/// `C = C_n = 1`. Sample `i` draws from stream `i` of the seeded generator.
pub fn lipschitz_probe(model: &Model, ball_radius: f64, samples: usize, seed: u64) -> Result<LipschitzProbeReport> {
    if samples == 0 {
        return Err(Error::Domain("lipschitz probe needs at least one sample".into()));
    }
    if !(ball_radius > 0.0 && ball_radius.is_finite()) {
        return Err(Error::Domain(format!("ball radius must be positive, got {ball_radius}")));
    }
    let n = model.n();
    let ratios = (0..samples)
        .into_par_iter()
        .map(|i| -> Result<Option<f64>> {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let r1 = ball_radius * rng.gen::<f64>();
            let r2 = ball_radius * rng.gen::<f64>();
            let u1 = sample_in_v_ball(model, &mut rng, r1, DEFAULT_SAMPLE_DECAY);
            let u2 = sample_in_v_ball(model, &mut rng, r2, DEFAULT_SAMPLE_DECAY);
            let dist = (&u1 - &u2).v_norm_sq().sqrt();
            if dist == 0.0 {
                return Ok(None);
            }
            let df = (&model.nonlinearity_spectral(&u1)? - &model.nonlinearity_spectral(&u2)?)
                .l2_sq()
                .sqrt();
            let g = g_bound(u1.v_norm_sq().sqrt(), u2.v_norm_sq().sqrt(), n, 1.0, 1.0);
            Ok(Some(df / (g * dist)))
        })
        .collect::<Result<Vec<_>>>()?;
    let used: Vec<f64> = ratios.iter().flatten().copied().collect();
    let max_ratio = used.iter().copied().fold(0.0, f64::max);
    Ok(LipschitzProbeReport {
        samples: used.len(),
        skipped: samples - used.len(),
        max_ratio,
        fitted_constant: max_ratio,
        ball_radius,
        resolution: model.grid().len(),
        n,
        scalar_constant: scalar_power_constant(n, ball_radius, 401),
    })
}

/// Brute-force `C₀ = sup |g(a) - g(b)| / ((|a|^{2n-2} + |b|^{2n-2})|a - b|)`
/// for `g(x) = |x|^{2n-2}x` over a `points × points` grid on `[-r, r]²`.
pub fn scalar_power_constant(n: f64, r: f64, points: usize) -> f64 {
    let p = 2.0 * n - 2.0;
    let g = |x: f64| x.abs().powf(p) * x;
    let xs: Vec<f64> = (0..points)
        .map(|i| -r + 2.0 * r * i as f64 / (points - 1) as f64)
        .collect();
    let mut best: f64 = 0.0;
    for &a in &xs {
        for &b in &xs {
            let weight = a.abs().powf(p) + b.abs().powf(p);
            if a == b || weight == 0.0 {
                continue;
            }
            best = best.max((g(a) - g(b)).abs() / (weight * (a - b).abs()));
        }
    }
    best
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InvarianceReport {
    /// `ψ(0) = |u₀|² - 1`.
    pub epsilon: f64,
    /// `2(‖u₀‖²_{H²₀} + 2‖u₀‖²_{H¹₀} + ‖u₀‖^{2n}_{L^{2n}} + a|u₀|²)`.
    pub predicted_rate: f64,
    /// Extrapolated `d/dt log|ψ|` at `t = 0`.
    pub measured_rate: f64,
}

impl InvarianceReport {
    pub fn relative_error(&self) -> f64 {
        (self.measured_rate - self.predicted_rate).abs() / self.predicted_rate.abs()
    }
}

/// Integrates the direct (unprojected-norm) vector field from an
/// off-manifold state with RK4 and no retraction, and compares the initial
/// growth rate of `ψ = |u|² - 1` with the predicted rate.
///
/// The rate is the Richardson combination `2D(τ/2) - D(τ)` of the
/// difference quotients `D(τ) = (log|ψ(τ)| - log|ψ(0)|)/τ`, `τ = 8h`,
/// `h = min(0.05/μ_max, 1e-4)`.
pub fn invariance_growth_test(u0_off: &Field, model: &Model) -> Result<InvarianceReport> {
    let c0 = u0_off.to_spectral();
    let l2 = c0.l2_sq();
    let epsilon = l2 - 1.0;
    if epsilon.abs() < 1e-14 {
        return Err(Error::Domain(
            "initial state lies on the manifold; psi vanishes identically".into(),
        ));
    }
    let slack = 1.0 + 1e-9;
    if epsilon.abs() > 1e-2 * slack || epsilon.abs() < 1e-4 / slack {
        return Err(Error::Domain(format!(
            "|psi(0)| = {:e} outside [1e-4, 1e-2]",
            epsilon.abs()
        )));
    }
    let eval = model.evaluate(&c0)?;
    let predicted_rate = 2.0 * (eval.multiplier() + model.params().a * l2);

    let h = (PSI_STEP_FRACTION / model.grid().mu_max()).min(1e-4);
    let stepper = Stepper::new(model, Scheme::Rk4, FieldForm::Direct);
    let mut c = c0;
    let mut psi = Vec::with_capacity(9);
    psi.push(epsilon);
    for _ in 0..8 {
        c = stepper.step(&c, h)?;
        psi.push(c.l2_sq() - 1.0);
    }
    let quotient = |k: usize| (psi[k].abs().ln() - psi[0].abs().ln()) / (k as f64 * h);
    let measured_rate = 2.0 * quotient(4) - quotient(8);
    Ok(InvarianceReport {
        epsilon,
        predicted_rate,
        measured_rate,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AMuEntry {
    pub mu: f64,
    /// `sup_{t >= t_min} |A^μ u(t)|`.
    pub sup_norm: f64,
    /// Largest value over the first quarter of the records past `t_min`.
    pub head_max: f64,
    /// Largest value over the last quarter.
    pub tail_max: f64,
}

impl AMuEntry {
    pub fn tail_non_increasing(&self) -> bool {
        self.tail_max <= self.head_max * (1.0 + 1e-12)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AMuReport {
    pub t_min: f64,
    pub records: usize,
    pub entries: Vec<AMuEntry>,
}

impl AMuReport {
    pub fn bounded(&self) -> bool {
        self.entries
            .iter()
            .all(|e| e.sup_norm.is_finite() && e.tail_non_increasing())
    }
}

/// `sup_{t >= t_min} |A^μ u(t)|_{L²}` for each `μ ∈ (0, 1]`.
pub fn a_mu_boundedness(traj: &TrajectoryRecord, mu_list: &[f64], t_min: f64) -> Result<AMuReport> {
    let snaps = traj
        .snapshots()
        .ok_or_else(|| Error::Domain("trajectory was recorded without snapshots".into()))?;
    if let Some(&mu) = mu_list.iter().find(|&&mu| !(mu > 0.0 && mu <= 1.0)) {
        return Err(Error::Domain(format!("power must lie in (0, 1], got {mu}")));
    }
    let tail: Vec<&SpectralField> = traj
        .times()
        .iter()
        .zip(snaps)
        .filter(|(t, _)| **t >= t_min)
        .map(|(_, s)| s)
        .collect();
    if tail.is_empty() {
        return Err(Error::Domain(format!("no records at or after t = {t_min}")));
    }
    let quarter = tail.len().div_ceil(4);
    let entries = mu_list
        .iter()
        .map(|&mu| {
            let norms: Vec<f64> = tail
                .iter()
                .map(|s| s.map_modes(|_, m| m.powf(mu)).l2_sq().sqrt())
                .collect();
            let max = |xs: &[f64]| xs.iter().copied().fold(0.0, f64::max);
            AMuEntry {
                mu,
                sup_norm: max(&norms),
                head_max: max(&norms[..quarter]),
                tail_max: max(&norms[norms.len() - quarter..]),
            }
        })
        .collect();
    Ok(AMuReport {
        t_min,
        records: tail.len(),
        entries,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SteadyState {
    pub is_steady: bool,
    /// `|−Au + F(u)|_{L²}` at the final state.
    pub residual: f64,
}

pub fn steady_state_detect(model: &Model, traj: &TrajectoryRecord, tol: f64) -> Result<SteadyState> {
    let residual = model
        .vector_field(traj.final_spectral(), FieldForm::Expanded)?
        .l2_sq()
        .sqrt();
    Ok(SteadyState {
        is_steady: residual < tol,
        residual,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StallReport {
    pub window: f64,
    pub windows: usize,
    /// Windows with `|ΔY| < stall_tol`.
    pub stalls: usize,
    /// Largest RMS of `|u_t|` over a stalled window.
    pub max_stall_residual: f64,
    pub residual_tol: f64,
}

impl StallReport {
    pub fn holds(&self) -> bool {
        self.max_stall_residual < self.residual_tol
    }
}

/// For every record `i`, takes the window `[t_i, t_j]` with `t_j` the first
/// record at least `window` later; when `|Y(t_j) - Y(t_i)| < stall_tol` the
/// RMS residual `((D(t_j) - D(t_i)) / (t_j - t_i))^{1/2}` from the
/// dissipation ledger `D` must be below `residual_tol`.
pub fn stall_windows(traj: &TrajectoryRecord, window: f64, stall_tol: f64, residual_tol: f64) -> StallReport {
    let reports = traj.reports();
    let mut out = StallReport {
        window,
        windows: 0,
        stalls: 0,
        max_stall_residual: 0.0,
        residual_tol,
    };
    let mut j = 0;
    for (i, start) in reports.iter().enumerate() {
        j = j.max(i + 1);
        while j < reports.len() && reports[j].t < start.t + window * (1.0 - 1e-12) {
            j += 1;
        }
        let Some(end) = reports.get(j) else { break };
        out.windows += 1;
        if (end.y - start.y).abs() < stall_tol {
            out.stalls += 1;
            let spent = (end.dissipation_integral - start.dissipation_integral).max(0.0);
            let rms = (spent / (end.t - start.t)).sqrt();
            out.max_stall_residual = out.max_stall_residual.max(rms);
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TailDiameter {
    pub q: f64,
    pub snapshots: usize,
    /// Largest pairwise `‖u(s) - u(t)‖_V` over recorded `s, t >= q`.
    pub max_v_distance: f64,
}

#[derive(Clone, Debug)]
pub struct OmegaLimitReport {
    pub tails: Vec<TailDiameter>,
    pub tol: f64,
    /// Diameter of the last tail below `tol`.
    pub converged: bool,
    /// Diameters non-increasing in `q`.
    pub cauchy: bool,
    pub limit_candidate: Field,
    /// `⟨Au, u⟩ / |u|²` at the candidate.
    pub rayleigh_quotient: f64,
    pub steady: SteadyState,
    pub stall: StallReport,
    pub trajectory: TrajectoryRecord,
}

/// Integrates from `u0` and measures the V-diameter of the orbit tail past
/// each `q`, in increasing order of `q`.
pub fn omega_limit_probe(
    u0: &Field,
    model: &Model,
    cfg: &StepperConfig,
    q_list: &[f64],
    tol: f64,
) -> Result<OmegaLimitReport> {
    if q_list.is_empty() {
        return Err(Error::Domain("omega-limit probe needs at least one tail start".into()));
    }
    let mut qs = q_list.to_vec();
    qs.sort_by(f64::total_cmp);
    if qs[qs.len() - 1] > cfg.t_end {
        return Err(Error::Domain(format!(
            "tail start {} lies beyond the horizon {}",
            qs[qs.len() - 1],
            cfg.t_end
        )));
    }
    let traj = integrate(u0, model, &cfg.clone().snapshots(true))?;
    let snaps = traj.snapshots().unwrap_or_default();
    let tails: Vec<TailDiameter> = qs
        .iter()
        .map(|&q| {
            let tail: Vec<&SpectralField> = traj
                .times()
                .iter()
                .zip(snaps)
                .filter(|(t, _)| **t >= q)
                .map(|(_, s)| s)
                .collect();
            let max_v_distance = tail
                .par_iter()
                .enumerate()
                .map(|(i, a)| {
                    tail[i + 1..]
                        .iter()
                        .map(|b| (*a - *b).v_norm_sq().sqrt())
                        .fold(0.0, f64::max)
                })
                .reduce(|| 0.0, f64::max);
            TailDiameter {
                q,
                snapshots: tail.len(),
                max_v_distance,
            }
        })
        .collect();
    let converged = tails.last().is_some_and(|t| t.snapshots > 1 && t.max_v_distance < tol);
    let cauchy = tails
        .windows(2)
        .all(|w| w[1].max_v_distance <= w[0].max_v_distance);
    let last = traj.final_spectral();
    let rayleigh_quotient = last.a_form() / last.l2_sq();
    let steady = steady_state_detect(model, &traj, DEFAULT_STEADY_TOL)?;
    let stall = stall_windows(&traj, DEFAULT_STALL_WINDOW, DEFAULT_STALL_TOL, DEFAULT_STALL_RESIDUAL);
    Ok(OmegaLimitReport {
        tails,
        tol,
        converged,
        cauchy,
        limit_candidate: last.to_field(),
        rayleigh_quotient,
        steady,
        stall,
        trajectory: traj,
    })
}

pub const DEFAULT_STALL_WINDOW: f64 = 2.0;
pub const DEFAULT_STALL_TOL: f64 = 1e-12;
pub const DEFAULT_STALL_RESIDUAL: f64 = 1e-6;

/// `sup_t ‖u₁(t) - u₂(t)‖_V / |δ|` for trajectories from `u₀` and
/// `normalize(u₀ + δ)`, with `δ ⊥ u₀` a random smooth direction of size
/// `delta`.
pub fn separation_constant(u0: &Field, model: &Model, cfg: &StepperConfig, delta: f64, seed: u64) -> Result<f64> {
    if !(delta > 0.0) {
        return Err(Error::Domain(format!("perturbation size must be positive, got {delta}")));
    }
    let c0 = u0.to_spectral();
    let c0 = c0.scaled(1.0 / c0.l2_sq().sqrt());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = SpectralField::random_decaying(model.grid(), &mut rng, DEFAULT_SAMPLE_DECAY);
    let d = d.axpy(-d.inner(&c0), &c0);
    let d = d.scaled(delta / d.l2_sq().sqrt());
    let c1 = &c0 + &d;
    let cfg = cfg.clone().snapshots(true).renormalize(true);
    let a = integrate(&c0.to_field(), model, &cfg)?;
    let b = integrate(&c1.to_field(), model, &cfg)?;
    let sup = a
        .snapshots()
        .unwrap_or_default()
        .iter()
        .zip(b.snapshots().unwrap_or_default())
        .map(|(x, y)| (x - y).v_norm_sq().sqrt())
        .fold(0.0, f64::max);
    Ok(sup / delta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelParams;
    use crate::spectral::{DomainSpec, SpectralGrid};
    use std::f64::consts::PI;
    use std::sync::Arc;

    fn grid(n: usize) -> Arc<SpectralGrid> {
        SpectralGrid::new(DomainSpec::interval(PI, n).unwrap())
    }

    #[test]
    fn g_bound_examples() {
        assert_eq!(g_bound(0.0, 0.0, 2.0, 1.0, 1.0), 1.0);
        for (m, k) in [(0.3, 1.7), (2.0, 5.0), (0.0, 4.0)] {
            for n in [1.0, 2.0, 3.0] {
                assert_eq!(g_bound(m, k, n, 1.0, 1.0), g_bound(k, m, n, 1.0, 1.0));
            }
        }
        // n = 1, m = 1, n' = 0: 2 + [½·1·1 + 1 + 2^{1/3}].
        let expected = 2.0 + 0.5 + 1.0 + 2f64.cbrt();
        assert!((g_bound(1.0, 0.0, 1.0, 1.0, 1.0) - expected).abs() < 1e-15);
    }

    #[test]
    fn scalar_constant_oracles() {
        assert!((scalar_power_constant(1.0, 2.0, 41) - 0.5).abs() < 1e-15);
        for n in [2.0, 3.0] {
            let c0 = scalar_power_constant(n, 2.0, 201);
            assert!(c0.is_finite() && c0 <= 2.0 * n - 1.0, "n = {n}: {c0}");
        }
    }

    #[test]
    fn lipschitz_probe_validation_and_determinism() {
        let g = grid(16);
        let model = Model::new(&g, ModelParams::new(2)).unwrap();
        assert!(lipschitz_probe(&model, 2.0, 0, 1).is_err());
        assert!(lipschitz_probe(&model, 0.0, 5, 1).is_err());
        let a = lipschitz_probe(&model, 2.0, 20, 9).unwrap();
        let b = lipschitz_probe(&model, 2.0, 20, 9).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.samples + a.skipped, 20);
        assert!(a.max_ratio > 0.0 && a.max_ratio.is_finite());
    }

    #[test]
    fn invariance_rejects_on_manifold_states() {
        let g = grid(16);
        let model = Model::new(&g, ModelParams::new(1)).unwrap();
        let u = Field::mode(&g, &[1]).unwrap();
        assert!(invariance_growth_test(&u, &model).is_err());
        assert!(invariance_growth_test(&u.scaled(1.1), &model).is_err());
    }

    #[test]
    fn invariance_rate_for_scaled_ground_state() {
        let g = grid(16);
        let model = Model::new(&g, ModelParams::new(1)).unwrap();
        let u = Field::mode(&g, &[1]).unwrap().scaled(1.001);
        let r = invariance_growth_test(&u, &model).unwrap();
        assert!((r.predicted_rate - 8.0 * 1.001f64.powi(2)).abs() < 1e-9);
        assert!(r.relative_error() < 1e-2, "{r:?}");
    }

    #[test]
    fn a_mu_at_the_ground_state() {
        let g = grid(32);
        let model = Model::new(&g, ModelParams::new(1)).unwrap();
        let u = Field::mode(&g, &[1]).unwrap();
        let cfg = StepperConfig::new(Scheme::Etd1, 1e-3, 0.5).record_every(50).snapshots(true);
        let traj = integrate(&u, &model, &cfg).unwrap();
        let report = a_mu_boundedness(&traj, &[0.75, 1.0], 0.1).unwrap();
        assert!((report.entries[0].sup_norm - 3f64.powf(0.75)).abs() < 1e-10);
        assert!((report.entries[1].sup_norm - 3.0).abs() < 1e-10);
        assert!(report.bounded());
        assert!(a_mu_boundedness(&traj, &[1.5], 0.1).is_err());
        let bare = integrate(&u, &model, &cfg.clone().snapshots(false)).unwrap();
        assert!(a_mu_boundedness(&bare, &[0.75], 0.1).is_err());
    }

    #[test]
    fn steady_state_of_the_ground_mode() {
        let g = grid(32);
        let model = Model::new(&g, ModelParams::new(1)).unwrap();
        let u = Field::mode(&g, &[1]).unwrap();
        let traj = integrate(&u, &model, &StepperConfig::new(Scheme::Etd1, 1e-3, 0.1)).unwrap();
        let s = steady_state_detect(&model, &traj, DEFAULT_STEADY_TOL).unwrap();
        assert!(s.is_steady && s.residual <= 1e-12, "{s:?}");
    }
}
