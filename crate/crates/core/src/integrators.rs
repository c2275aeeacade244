//! Time stepping for the projected flow.
//!
//! Every scheme works in coefficient space. `Etd1` integrates the linear part
//! `-A` exactly and freezes the rest of the vector field over the step;
//! `ProjectedEuler` and `Rk4` are explicit in the full field and are subject
//! to the usual `h μ_max` stability limit. After each step the state can be
//! retracted onto the sphere by L² normalization.

use std::fmt;
use std::str::FromStr;

use crate::energy::{DissipationLedger, EnergyReport};
use crate::error::{Error, Result};
use crate::model::{FieldForm, Model};
use crate::spectral::{phi1_unchecked, Field, SpectralField};

/// Largest `h μ_max` on the negative real axis inside the stability region.
const EULER_STABILITY: f64 = 2.0;
const RK4_STABILITY: f64 = 2.785;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Scheme {
    Etd1,
    ProjectedEuler,
    Rk4,
}

impl Scheme {
    pub fn name(self) -> &'static str {
        match self {
            Scheme::Etd1 => "etd1",
            Scheme::ProjectedEuler => "projected_euler",
            Scheme::Rk4 => "rk4",
        }
    }

    pub fn is_explicit(self) -> bool {
        !matches!(self, Scheme::Etd1)
    }

    /// Nominal convergence order.
    pub fn order(self) -> f64 {
        match self {
            Scheme::Etd1 | Scheme::ProjectedEuler => 1.0,
            Scheme::Rk4 => 4.0,
        }
    }

    /// `h = 1e-3`, capped at `0.5 / μ_max` for explicit schemes.
    pub fn default_step(self, mu_max: f64) -> f64 {
        if self.is_explicit() {
            1e-3f64.min(0.5 / mu_max)
        } else {
            1e-3
        }
    }

    fn stability_limit(self, mu_max: f64) -> Option<f64> {
        match self {
            Scheme::Etd1 => None,
            Scheme::ProjectedEuler => Some(EULER_STABILITY / mu_max),
            Scheme::Rk4 => Some(RK4_STABILITY / mu_max),
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "etd1" => Ok(Scheme::Etd1),
            "projected_euler" | "euler" => Ok(Scheme::ProjectedEuler),
            "rk4" => Ok(Scheme::Rk4),
            other => Err(Error::Domain(format!("unknown scheme '{other}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepperConfig {
    pub scheme: Scheme,
    pub h: f64,
    pub renormalize: bool,
    pub t_end: f64,
    pub record_every: usize,
    /// Upper bound on `‖u‖_V` before the run is declared blown up.
    pub blowup_bound: f64,
    pub keep_snapshots: bool,
    /// Vector field to integrate; the forms only differ off the manifold.
    pub form: FieldForm,
}

impl StepperConfig {
    pub fn new(scheme: Scheme, h: f64, t_end: f64) -> Self {
        Self {
            scheme,
            h,
            renormalize: true,
            t_end,
            record_every: 1,
            blowup_bound: 1e8,
            keep_snapshots: false,
            form: FieldForm::Expanded,
        }
    }

    pub fn renormalize(mut self, on: bool) -> Self {
        self.renormalize = on;
        self
    }

    pub fn record_every(mut self, every: usize) -> Self {
        self.record_every = every;
        self
    }

    pub fn snapshots(mut self, on: bool) -> Self {
        self.keep_snapshots = on;
        self
    }

    pub fn form(mut self, form: FieldForm) -> Self {
        self.form = form;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.h > 0.0 && self.h.is_finite()) {
            return Err(Error::Domain(format!("step size h = {} must be positive", self.h)));
        }
        if !(self.t_end >= 0.0 && self.t_end.is_finite()) {
            return Err(Error::Domain(format!("t_end = {} must be >= 0", self.t_end)));
        }
        if self.record_every == 0 {
            return Err(Error::Domain("record_every must be >= 1".into()));
        }
        if !(self.blowup_bound > 0.0) {
            return Err(Error::Domain("blowup_bound must be positive".into()));
        }
        Ok(())
    }

    /// Number of steps; the final time is `steps · h`.
    pub fn steps(&self) -> usize {
        (self.t_end / self.h - 1e-9).ceil().max(0.0) as usize
    }
}

/// One scheme bound to one model.
pub struct Stepper<'m> {
    model: &'m Model,
    scheme: Scheme,
    form: FieldForm,
}

impl<'m> Stepper<'m> {
    pub fn new(model: &'m Model, scheme: Scheme, form: FieldForm) -> Self {
        Self { model, scheme, form }
    }

    fn rhs(&self, c: &SpectralField) -> Result<SpectralField> {
        self.model.vector_field(c, self.form)
    }

    pub fn step(&self, c: &SpectralField, h: f64) -> Result<SpectralField> {
        match self.scheme {
            Scheme::Etd1 => {
                // Everything except -Au is frozen at the start of the step.
                let frozen = self.rhs(c)?.axpy(1.0, &c.map_modes(|_, m| m));
                let decayed = c.map_modes(|_, m| (-m * h).exp());
                Ok(decayed.axpy(1.0, &frozen.map_modes(|_, m| h * phi1_unchecked(m * h))))
            }
            Scheme::ProjectedEuler => Ok(c.axpy(h, &self.rhs(c)?)),
            Scheme::Rk4 => {
                let k1 = self.rhs(c)?;
                let k2 = self.rhs(&c.axpy(0.5 * h, &k1))?;
                let k3 = self.rhs(&c.axpy(0.5 * h, &k2))?;
                let k4 = self.rhs(&c.axpy(h, &k3))?;
                Ok(c.axpy(h / 6.0, &k1)
                    .axpy(h / 3.0, &k2)
                    .axpy(h / 3.0, &k3)
                    .axpy(h / 6.0, &k4))
            }
        }
    }
}

fn step_field(scheme: Scheme, model: &Model, u: &Field, h: f64) -> Result<Field> {
    if !(h > 0.0) {
        return Err(Error::Domain(format!("step size h = {h} must be positive")));
    }
    Ok(Stepper::new(model, scheme, FieldForm::Expanded)
        .step(&u.to_spectral(), h)?
        .to_field())
}

/// `u⁺ = S(h)u + h φ₁(hA) F(u)`.
pub fn step_etd1(model: &Model, u: &Field, h: f64) -> Result<Field> {
    step_field(Scheme::Etd1, model, u, h)
}

pub fn step_projected_euler(model: &Model, u: &Field, h: f64) -> Result<Field> {
    step_field(Scheme::ProjectedEuler, model, u, h)
}

pub fn step_rk4(model: &Model, u: &Field, h: f64) -> Result<Field> {
    step_field(Scheme::Rk4, model, u, h)
}

/// `u / |u|_{L²}`.
pub fn renormalize(u: &Field) -> Result<Field> {
    Ok(renormalize_spectral(&u.to_spectral())?.to_field())
}

pub fn renormalize_spectral(c: &SpectralField) -> Result<SpectralField> {
    let norm = c.l2_sq().sqrt();
    if !(norm > 0.0 && norm.is_finite()) {
        return Err(Error::Domain(format!("cannot normalize a field of L2 norm {norm}")));
    }
    Ok(c.scaled(1.0 / norm))
}

/// The recorded orbit of one integration run.
#[derive(Clone, Debug)]
pub struct TrajectoryRecord {
    times: Vec<f64>,
    snapshots: Option<Vec<SpectralField>>,
    reports: Vec<EnergyReport>,
    norm_drift: Vec<f64>,
    max_step_drift: f64,
    final_state: SpectralField,
    h: f64,
    n: f64,
}

impl TrajectoryRecord {
    pub fn times(&self) -> &[f64] {
        &self.times
    }

    /// Recorded states in coefficient space, aligned with `times`.
    pub fn snapshots(&self) -> Option<&[SpectralField]> {
        self.snapshots.as_deref()
    }

    pub fn snapshot_fields(&self) -> Option<Vec<Field>> {
        self.snapshots
            .as_ref()
            .map(|s| s.iter().map(SpectralField::to_field).collect())
    }

    pub fn reports(&self) -> &[EnergyReport] {
        &self.reports
    }

    /// `| |u|²_{L²} - 1 |` at each record.
    pub fn norm_drift(&self) -> &[f64] {
        &self.norm_drift
    }

    /// Largest drift over every step, recorded or not.
    pub fn max_step_drift(&self) -> f64 {
        self.max_step_drift
    }

    pub fn final_state(&self) -> Field {
        self.final_state.to_field()
    }

    pub fn final_spectral(&self) -> &SpectralField {
        &self.final_state
    }

    pub fn step_size(&self) -> f64 {
        self.h
    }

    /// Exponent `n` of the model that produced the run.
    pub fn exponent(&self) -> f64 {
        self.n
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

struct Recorder<'m> {
    model: &'m Model,
    form: FieldForm,
    ledger: DissipationLedger,
    record: TrajectoryRecord,
}

impl Recorder<'_> {
    fn push(&mut self, t: f64, c: &SpectralField) -> Result<()> {
        let eval = self.model.evaluate(c)?;
        let ut = self.model.vector_field(c, self.form)?;
        let ut_l2_sq = ut.l2_sq();
        let diss = self.ledger.push(t, ut_l2_sq);
        let rec = &mut self.record;
        rec.reports
            .push(EnergyReport::from_evaluation(t, &eval, self.model.n(), ut_l2_sq, diss));
        rec.times.push(t);
        rec.norm_drift.push((eval.l2_sq - 1.0).abs());
        if let Some(snaps) = rec.snapshots.as_mut() {
            snaps.push(c.clone());
        }
        Ok(())
    }
}

/// Integrates from `u0` up to `cfg.t_end`, recording every `record_every`
/// steps plus the final state.
pub fn integrate(u0: &Field, model: &Model, cfg: &StepperConfig) -> Result<TrajectoryRecord> {
    cfg.validate()?;
    let grid = model.grid();
    if let Some(limit) = cfg.scheme.stability_limit(grid.mu_max()) {
        if cfg.h > limit {
            log::warn!(
                "{}: h = {:e} exceeds the linear stability limit {:e} (mu_max = {:e})",
                cfg.scheme,
                cfg.h,
                limit,
                grid.mu_max()
            );
        }
    }

    let mut state = u0.to_spectral();
    if cfg.renormalize {
        state = renormalize_spectral(&state)?;
    }
    let stepper = Stepper::new(model, cfg.scheme, cfg.form);
    let mut rec = Recorder {
        model,
        form: cfg.form,
        ledger: DissipationLedger::new(),
        record: TrajectoryRecord {
            times: Vec::new(),
            snapshots: cfg.keep_snapshots.then(Vec::new),
            reports: Vec::new(),
            norm_drift: Vec::new(),
            max_step_drift: (state.l2_sq() - 1.0).abs(),
            final_state: state.clone(),
            h: cfg.h,
            n: model.n(),
        },
    };
    rec.push(0.0, &state)?;

    let steps = cfg.steps();
    for i in 1..=steps {
        let t = i as f64 * cfg.h;
        let last_t = (i - 1) as f64 * cfg.h;
        let blow_up = |v_norm: f64, state: &SpectralField| Error::BlowUp {
            t,
            v_norm,
            bound: cfg.blowup_bound,
            last_t,
            last_state: Box::new(state.to_field()),
        };
        let mut next = match stepper.step(&state, cfg.h) {
            Ok(next) => next,
            Err(Error::Overflow { .. }) => return Err(blow_up(f64::INFINITY, &state)),
            Err(e) => return Err(e),
        };
        let v_norm = next.v_norm_sq().sqrt();
        if !(v_norm <= cfg.blowup_bound) {
            return Err(blow_up(v_norm, &state));
        }
        if cfg.renormalize {
            next = renormalize_spectral(&next)?;
        }
        state = next;
        let drift = (state.l2_sq() - 1.0).abs();
        rec.record.max_step_drift = rec.record.max_step_drift.max(drift);
        if i % cfg.record_every == 0 || i == steps {
            rec.push(t, &state)?;
        }
    }
    rec.record.final_state = state;
    Ok(rec.record)
}

/// Least-squares fit of `log error` against `log h`.
#[derive(Clone, Debug, PartialEq)]
pub struct OrderEstimate {
    pub order: f64,
    /// Two standard errors of the fitted slope.
    pub half_width: f64,
    /// `(h, error)` pairs.
    pub errors: Vec<(f64, f64)>,
}

/// Estimates the convergence order of `scheme` from runs at each step in
/// `h_list` against an RK4 reference at a much finer step. The error is the
/// largest L² distance over the times shared by all runs (multiples of the
/// largest step).
pub fn convergence_order_probe(
    u0: &Field,
    model: &Model,
    scheme: Scheme,
    h_list: &[f64],
    t_end: f64,
) -> Result<OrderEstimate> {
    if h_list.len() < 3 {
        return Err(Error::Domain("order probe needs at least 3 step sizes".into()));
    }
    let h_max = h_list.iter().copied().fold(0.0, f64::max);
    let h_min = h_list.iter().copied().fold(f64::INFINITY, f64::min);
    let ratio_of = |h: f64| -> Result<usize> {
        let r = h_max / h;
        let k = r.round();
        if k < 1.0 || (r - k).abs() > 1e-9 * r {
            return Err(Error::Domain(format!("step {h} does not divide {h_max}")));
        }
        Ok(k as usize)
    };
    let ref_target = (h_min / 8.0).min(0.5 / model.grid().mu_max());
    let ref_ratio = (h_max / ref_target).ceil() as usize;
    let h_ref = h_max / ref_ratio as f64;

    let run = |scheme: Scheme, h: f64, every: usize| -> Result<Vec<SpectralField>> {
        let cfg = StepperConfig::new(scheme, h, t_end).record_every(every).snapshots(true);
        let traj = integrate(u0, model, &cfg)?;
        Ok(traj.snapshots().unwrap_or_default().to_vec())
    };
    let reference = run(Scheme::Rk4, h_ref, ref_ratio)?;

    let mut errors = Vec::with_capacity(h_list.len());
    for &h in h_list {
        let snaps = run(scheme, h, ratio_of(h)?)?;
        let err = snaps
            .iter()
            .zip(&reference)
            .map(|(a, b)| (a - b).l2_sq().sqrt())
            .fold(0.0, f64::max);
        errors.push((h, err));
    }
    let (order, half_width) = fit_slope(&errors);
    Ok(OrderEstimate {
        order,
        half_width,
        errors,
    })
}

/// Slope of `log y` against `log x` and two standard errors.
pub(crate) fn fit_slope(points: &[(f64, f64)]) -> (f64, f64) {
    let xs: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let resid: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (y - my - slope * (x - mx)).powi(2))
        .sum();
    let dof = (n - 2.0).max(1.0);
    (slope, 2.0 * (resid / dof / sxx).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelParams;
    use crate::spectral::{norm_l2, DomainSpec, SpectralGrid};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;
    use std::sync::Arc;

    fn line(n: usize) -> Arc<SpectralGrid> {
        SpectralGrid::new(DomainSpec::interval(PI, n).unwrap())
    }

    fn random_unit(g: &Arc<SpectralGrid>, seed: u64) -> Field {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = SpectralField::random_decaying(g, &mut rng, 3.0);
        c.scaled(1.0 / c.l2_sq().sqrt()).to_field()
    }

    fn ground(g: &Arc<SpectralGrid>) -> Field {
        SpectralField::mode(g, &[1]).unwrap().to_field()
    }

    #[test]
    fn equilibrium_is_preserved_by_every_scheme() {
        let g = line(8);
        let model = Model::new(&g, ModelParams::new(1)).unwrap();
        let u = SpectralField::mode(&g, &[1]).unwrap();
        for scheme in [Scheme::Etd1, Scheme::ProjectedEuler, Scheme::Rk4] {
            let next = Stepper::new(&model, scheme, FieldForm::Expanded).step(&u, 1e-4).unwrap();
            assert!((&next - &u).l2_sq().sqrt() < 1e-12, "{scheme}");
        }
        let uf = ground(&g);
        assert!(norm_l2(&(&step_etd1(&model, &uf, 0.1).unwrap() - &uf)) < 1e-12);
        assert!(norm_l2(&(&step_rk4(&model, &uf, 1e-4).unwrap() - &uf)) < 1e-12);
        assert!(norm_l2(&(&step_projected_euler(&model, &uf, 1e-4).unwrap() - &uf)) < 1e-12);
    }

    #[test]
    fn etd1_difference_quotient_tends_to_vector_field() {
        let g = line(16);
        let model = Model::new(&g, ModelParams::new(2)).unwrap();
        let u = random_unit(&g, 2);
        let f = model.projected_rhs(&u).unwrap();
        let err = |h: f64| {
            let q = (&step_etd1(&model, &u, h).unwrap() - &u).scaled(1.0 / h);
            norm_l2(&(&q - &f)) / norm_l2(&f)
        };
        // O(h) once h μ_max is small.
        let (e1, e2) = (err(1e-7), err(1e-8));
        assert!((8.0..=12.0).contains(&(e1 / e2)), "{e1} {e2}");
        assert!(e2 < 1e-3);
    }

    #[test]
    fn etd1_single_step_drift_is_second_order() {
        let g = line(16);
        let model = Model::new(&g, ModelParams::new(2)).unwrap();
        let u = random_unit(&g, 3);
        let drift = |h: f64| (norm_l2(&step_etd1(&model, &u, h).unwrap()).powi(2) - 1.0).abs();
        let ratio = drift(2e-6) / drift(1e-6);
        assert!((3.2..=4.8).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn renormalize_cases() {
        let g = line(16);
        let u = ground(&g);
        assert!(renormalize(&u).unwrap().max_abs_diff(&u) < 1e-15);
        assert!(renormalize(&u.scaled(2.0)).unwrap().max_abs_diff(&u) < 1e-15);
        let v = random_unit(&g, 1).scaled(3.7);
        let once = renormalize(&v).unwrap();
        assert!((norm_l2(&once) - 1.0).abs() < 1e-15);
        assert!(renormalize(&once).unwrap().max_abs_diff(&once) < 1e-15);
        assert!(renormalize(&Field::zeros(&g)).is_err());
    }

    #[test]
    fn equilibrium_trajectory_is_constant() {
        let g = line(16);
        let model = Model::new(&g, ModelParams::new(1)).unwrap();
        let traj = integrate(&ground(&g), &model, &StepperConfig::new(Scheme::Etd1, 1e-3, 1.0)).unwrap();
        let first = traj.reports()[0];
        assert!((first.y - 2.5).abs() < 1e-12);
        for r in traj.reports() {
            assert!((r.y - first.y).abs() < 1e-10);
            assert!((r.v_norm_sq - first.v_norm_sq).abs() < 1e-10);
        }
        assert_eq!(traj.len(), 1001);
        assert!((traj.times()[1000] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rk4_and_etd1_agree_at_small_step() {
        let g = line(8);
        let model = Model::new(&g, ModelParams::new(1)).unwrap();
        let second = SpectralField::mode(&g, &[2]).unwrap().to_field();
        let u0 = renormalize(&(&ground(&g) + &second.scaled(0.1))).unwrap();
        let a = integrate(&u0, &model, &StepperConfig::new(Scheme::Rk4, 1e-4, 0.1)).unwrap();
        let b = integrate(&u0, &model, &StepperConfig::new(Scheme::Etd1, 1e-4, 0.1)).unwrap();
        assert!(norm_l2(&(&a.final_state() - &b.final_state())) < 1e-5);
        // The gap is the first-order ETD1 error: it halves with h.
        let c = integrate(&u0, &model, &StepperConfig::new(Scheme::Etd1, 5e-5, 0.1)).unwrap();
        let ratio = norm_l2(&(&a.final_state() - &b.final_state())) / norm_l2(&(&a.final_state() - &c.final_state()));
        assert!((1.8..=2.2).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn retraction_keeps_state_on_sphere() {
        let g = line(32);
        let model = Model::new(&g, ModelParams::new(2)).unwrap();
        let traj = integrate(&random_unit(&g, 8), &model, &StepperConfig::new(Scheme::Etd1, 1e-3, 0.2)).unwrap();
        assert!(traj.max_step_drift() <= 1e-14);
        assert!(traj.norm_drift().iter().all(|&d| d <= 1e-14));
    }

    #[test]
    fn blow_up_is_reported_with_last_state() {
        let g = line(16);
        let model = Model::new(&g, ModelParams::new(1)).unwrap();
        // Explicit Euler far beyond its stability limit; the retraction alone
        // would cap ‖u‖_V near 1 + λ_max.
        let mut cfg = StepperConfig::new(Scheme::ProjectedEuler, 1e-2, 10.0).renormalize(false);
        cfg.blowup_bound = 1e6;
        match integrate(&random_unit(&g, 4), &model, &cfg) {
            Err(Error::BlowUp { t, last_t, last_state, bound, .. }) => {
                assert!(t > last_t);
                assert_eq!(bound, 1e6);
                assert!(last_state.to_spectral().v_norm_sq().sqrt() <= 1e6);
            }
            Err(e) => panic!("expected blow-up, got {e}"),
            Ok(_) => panic!("expected blow-up"),
        }
    }

    #[test]
    fn config_validation() {
        assert!(StepperConfig::new(Scheme::Etd1, 0.0, 1.0).validate().is_err());
        assert!(StepperConfig::new(Scheme::Etd1, 1e-3, -1.0).validate().is_err());
        assert!(StepperConfig::new(Scheme::Etd1, 1e-3, 1.0).record_every(0).validate().is_err());
        assert_eq!(StepperConfig::new(Scheme::Etd1, 1e-3, 1.0).steps(), 1000);
        assert_eq!("rk4".parse::<Scheme>().unwrap(), Scheme::Rk4);
        assert!("rk5".parse::<Scheme>().is_err());
        assert_eq!(Scheme::Rk4.default_step(1e6), 5e-7);
        assert_eq!(Scheme::Etd1.default_step(1e6), 1e-3);
    }

    #[test]
    fn slope_fit_recovers_power_law() {
        let pts: Vec<(f64, f64)> = [0.1, 0.05, 0.025].iter().map(|&h: &f64| (h, 3.0 * h.powi(2))).collect();
        let (s, w) = fit_slope(&pts);
        assert!((s - 2.0).abs() < 1e-12);
        assert!(w < 1e-10);
    }
}
