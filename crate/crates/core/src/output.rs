//! CSV writers. Floats use C's `%.17g`, which round-trips every `f64`.

use std::io::{self, Write};

use crate::integrators::TrajectoryRecord;
use crate::mild_solution::PicardOutcome;

pub const TIMESERIES_HEADER: &str =
    "t,l2_norm,h1_seminorm_sq,h2_seminorm_sq,l2n_pow,Y,ut_l2_sq,dissipation_integral,energy_residual";
pub const PICARD_HEADER: &str = "iter,sup_v_distance,factor";

/// `printf("%.17g", x)`.
pub fn g17(x: f64) -> String {
    const P: i32 = 17;
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return if x.is_sign_negative() { "-0".into() } else { "0".into() };
    }
    let sci = format!("{:.*e}", (P - 1) as usize, x);
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if exp < -4 || exp >= P {
        let mantissa = strip_zeros(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{mantissa}e{sign}{:02}", exp.abs())
    } else {
        let decimals = (P - 1 - exp) as usize;
        strip_zeros(&format!("{x:.decimals$}")).to_string()
    }
}

fn strip_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

/// One row per record; `energy_residual = |Y(t) - Y(0) + ∫₀ᵗ |u_t|²|`.
pub fn write_timeseries_csv<W: Write>(mut w: W, traj: &TrajectoryRecord) -> io::Result<()> {
    writeln!(w, "{TIMESERIES_HEADER}")?;
    let Some(first) = traj.reports().first() else {
        return Ok(());
    };
    for r in traj.reports() {
        let residual = (r.y - first.y + r.dissipation_integral - first.dissipation_integral).abs();
        let row = [
            r.t,
            r.l2_norm,
            r.h1_sq,
            r.h2_sq,
            r.l2n_pow,
            r.y,
            r.ut_l2_sq,
            r.dissipation_integral,
            residual,
        ];
        writeln!(w, "{}", row.map(g17).join(","))?;
    }
    Ok(())
}

/// `iter` counts from 1; the first row has no factor and leaves it empty.
pub fn write_picard_csv<W: Write>(mut w: W, outcome: &PicardOutcome) -> io::Result<()> {
    writeln!(w, "{PICARD_HEADER}")?;
    for (j, d) in outcome.distances.iter().enumerate() {
        let factor = if j == 0 { String::new() } else { g17(outcome.factors[j - 1]) };
        writeln!(w, "{},{},{}", j + 1, g17(*d), factor)?;
    }
    Ok(())
}
