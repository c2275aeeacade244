//! The Lyapunov functional `Y(u) = ½‖u‖²_V + (1/2n)‖u‖^{2n}_{L^{2n}}` and
//! the dissipation ledger `Y(u(t)) - Y(u₀) = -∫₀ᵗ |u_t|² dp`.

use crate::error::{Error, Result};
use crate::integrators::TrajectoryRecord;
use crate::model::{Evaluation, Model, ModelParams};
use crate::spectral::Field;

/// One row of the energy time series.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EnergyReport {
    pub t: f64,
    pub l2_norm: f64,
    pub h1_sq: f64,
    pub h2_sq: f64,
    pub v_norm_sq: f64,
    /// `‖u‖^{2n}_{L^{2n}}`.
    pub l2n_pow: f64,
    pub y: f64,
    /// `|du/dt|²_{L²}` from the analytic vector field.
    pub ut_l2_sq: f64,
    /// Running trapezoid of `ut_l2_sq`.
    pub dissipation_integral: f64,
}

impl EnergyReport {
    pub fn from_evaluation(t: f64, eval: &Evaluation, n: f64, ut_l2_sq: f64, dissipation_integral: f64) -> Self {
        let v_norm_sq = eval.v_norm_sq();
        Self {
            t,
            l2_norm: eval.l2_sq.sqrt(),
            h1_sq: eval.h1_sq,
            h2_sq: eval.h2_sq,
            v_norm_sq,
            l2n_pow: eval.l2n_pow,
            y: 0.5 * v_norm_sq + eval.l2n_pow / (2.0 * n),
            ut_l2_sq,
            dissipation_integral,
        }
    }

    pub fn v_norm(&self) -> f64 {
        self.v_norm_sq.sqrt()
    }
}

/// `‖u‖²_V = |u|² + 2‖∇u‖² + ‖Δu‖²`.
pub fn v_norm_sq(u: &Field) -> f64 {
    u.to_spectral().v_norm_sq()
}

/// `Y(u)` with the `L^{2n}` integral evaluated exactly (padding by `n`).
pub fn lyapunov_y(u: &Field, n: u32) -> Result<f64> {
    let model = Model::new(u.grid(), ModelParams::new(n))?;
    lyapunov_y_with(&model, u)
}

/// `Y(u)` on the quadrature of `model`.
pub fn lyapunov_y_with(model: &Model, u: &Field) -> Result<f64> {
    let eval = model.evaluate(&u.to_spectral())?;
    Ok(0.5 * eval.v_norm_sq() + eval.l2n_pow / (2.0 * model.n()))
}

/// Single-writer accumulator for the dissipation integral.
#[derive(Clone, Debug, Default)]
pub struct DissipationLedger {
    last: Option<(f64, f64)>,
    integral: f64,
}

impl DissipationLedger {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds the sample `(t, |u_t|²)` and returns the running integral.
    pub fn push(&mut self, t: f64, ut_l2_sq: f64) -> f64 {
        if let Some((t0, f0)) = self.last {
            self.integral += 0.5 * (t - t0) * (f0 + ut_l2_sq);
        }
        self.last = Some((t, ut_l2_sq));
        self.integral
    }

    pub fn integral(&self) -> f64 {
        self.integral
    }
}

/// `|Y(u(T)) - Y(u₀) + ∫₀ᵀ |u_t|²|` with the trapezoid over recorded samples.
pub fn energy_identity_residual(traj: &TrajectoryRecord) -> Result<f64> {
    let reports = traj.reports();
    if reports.len() < 2 {
        return Err(Error::Domain(format!(
            "energy identity needs at least 2 samples, got {}",
            reports.len()
        )));
    }
    let first = &reports[0];
    let last = &reports[reports.len() - 1];
    Ok((last.y - first.y + last.dissipation_integral - first.dissipation_integral).abs())
}

/// Largest increase `Y(t_{i+1}) - Y(t_i)` between consecutive records
/// (non-positive for a monotone trajectory).
pub fn max_energy_increase(traj: &TrajectoryRecord) -> f64 {
    traj.reports()
        .windows(2)
        .map(|w| w[1].y - w[0].y)
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Checks `Y(t_{i+1}) <= Y(t_i) + rel_tol · max(1, Y(u₀))` for every record.
pub fn is_monotone(traj: &TrajectoryRecord, rel_tol: f64) -> bool {
    let Some(first) = traj.reports().first() else {
        return true;
    };
    max_energy_increase(traj) <= rel_tol * first.y.max(1.0)
}

/// `sup_t ‖u(t)‖_V` over the recorded samples.
pub fn sup_v_norm(traj: &TrajectoryRecord) -> f64 {
    traj.reports().iter().map(|r| r.v_norm()).fold(0.0, f64::max)
}

/// `sup_t ‖u(t)‖_V <= 2 Y(u₀)`.
pub fn global_bound_holds(traj: &TrajectoryRecord) -> bool {
    match traj.reports().first() {
        Some(first) => sup_v_norm(traj) <= 2.0 * first.y,
        None => true,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::{DomainSpec, SpectralGrid};
    use std::f64::consts::PI;

    #[test]
    fn v_norm_of_first_two_modes() {
        let g = SpectralGrid::new(DomainSpec::interval(PI, 32).unwrap());
        let u1 = Field::from_fn(&g, |x| (2.0 / PI).sqrt() * x[0].sin()).unwrap();
        assert!((v_norm_sq(&u1) - 4.0).abs() < 1e-12);
        let u2 = Field::mode(&g, &[2]).unwrap();
        assert!((v_norm_sq(&u2) - 25.0).abs() < 1e-11);
        assert_eq!(v_norm_sq(&Field::zeros(&g)), 0.0);
    }

    #[test]
    fn lyapunov_at_ground_state() {
        let g = SpectralGrid::new(DomainSpec::interval(PI, 32).unwrap());
        let u = Field::mode(&g, &[1]).unwrap();
        assert!((lyapunov_y(&u, 1).unwrap() - 2.5).abs() < 1e-12);
        assert_eq!(lyapunov_y(&Field::zeros(&g), 2).unwrap(), 0.0);
        // ∫ ((2/π) sin² x)² dx over [0, π] = 3/(2π).
        let y2 = lyapunov_y(&u, 2).unwrap();
        assert!((y2 - (2.0 + 3.0 / (2.0 * PI) / 4.0)).abs() < 1e-12);
    }

    #[test]
    fn ledger_is_trapezoid() {
        let mut ledger = DissipationLedger::new();
        assert_eq!(ledger.push(0.0, 1.0), 0.0);
        assert_eq!(ledger.push(0.5, 3.0), 1.0);
        assert_eq!(ledger.push(1.0, 3.0), 2.5);
        assert_eq!(ledger.integral(), 2.5);
    }
}
