use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use sphereflow::analysis::{
    a_mu_boundedness, invariance_growth_test, lipschitz_probe, omega_limit_probe, DEFAULT_SAMPLE_DECAY,
};
use sphereflow::checks::{write_check_report, CheckOutcome, Suite};
use sphereflow::integrators::{integrate, renormalize, StepperConfig, TrajectoryRecord};
use sphereflow::mild_solution::{picard_solve, PicardConfig, PicardOutcome, TruncationTheta};
use sphereflow::model::Model;
use sphereflow::output::{g17, write_picard_csv, write_timeseries_csv};
use sphereflow::snapshot::Snapshot;
use sphereflow::spectral::{Field, SpectralField, SpectralGrid};

use crate::config::{InitKind, RunConfig};

/// Setup problems, reported with exit code 2.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct UsageError(pub String);

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

/// Argument errors become usage errors; everything else keeps its context.
fn classify(what: &str, e: sphereflow::Error) -> anyhow::Error {
    match e {
        sphereflow::Error::Domain(msg) => usage(format!("{what}: {msg}")),
        other => anyhow::Error::new(other).context(what.to_string()),
    }
}

pub fn build_model(cfg: &RunConfig) -> Result<Model> {
    let grid = SpectralGrid::new(cfg.domain.clone());
    Ok(Model::new(&grid, cfg.model)?)
}

pub fn stepper_config(cfg: &RunConfig) -> StepperConfig {
    StepperConfig::new(cfg.scheme, cfg.h, cfg.t_end)
        .renormalize(cfg.renormalize)
        .record_every(cfg.record_every)
        .snapshots(cfg.write_snapshots)
}

/// `u₀` on the manifold, then scaled so that `|u₀|² = 1 + eps`.
pub fn initial_state(cfg: &RunConfig, model: &Model) -> Result<Field> {
    let grid = model.grid();
    let raw = match &cfg.init {
        InitKind::Mode(k) => Field::mode(grid, k).context("init.mode")?,
        InitKind::Random(seed) => {
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            SpectralField::random_decaying(grid, &mut rng, DEFAULT_SAMPLE_DECAY).to_field()
        }
        InitKind::File(path) => {
            let snap = Snapshot::load(path).with_context(|| format!("init.path: reading {}", path.display()))?;
            let spec = grid.spec();
            if snap.resolution != spec.resolution() || snap.lengths != spec.lengths() {
                bail!(
                    "init.path: snapshot grid {:?} x {:?} does not match the configured domain {:?} x {:?}",
                    snap.resolution,
                    snap.lengths,
                    spec.resolution(),
                    spec.lengths()
                );
            }
            Field::new(grid.clone(), snap.values).context("init.path")?
        }
    };
    let u = renormalize(&raw).context("init: cannot normalize the initial state")?;
    Ok(if cfg.off_manifold_eps == 0.0 {
        u
    } else {
        u.scaled((1.0 + cfg.off_manifold_eps).sqrt())
    })
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

pub fn cmd_run(cfg: &RunConfig) -> Result<TrajectoryRecord> {
    let model = build_model(cfg)?;
    let u0 = initial_state(cfg, &model)?;
    let traj = integrate(&u0, &model, &stepper_config(cfg)).context("integration failed")?;
    ensure_dir(&cfg.out_dir)?;
    let path = cfg.out_dir.join("timeseries.csv");
    let mut w = create(&path)?;
    write_timeseries_csv(&mut w, &traj)?;
    w.flush()?;
    if let Some(fields) = traj.snapshot_fields() {
        let dir = cfg.out_dir.join("snapshots");
        ensure_dir(&dir)?;
        for (i, u) in fields.iter().enumerate() {
            Snapshot::from_field(u).save(dir.join(format!("t_{i:06}.mshf")))?;
        }
    }
    Ok(traj)
}

/// Runs the acceptance suite; the outcome lines are printed as they finish.
pub fn cmd_check(seed: u64, out_dir: &Path) -> Result<Vec<CheckOutcome>> {
    let mut suite = Suite::new(seed);
    let outcomes = suite.run_all(|o| println!("{}", o.summary_line()))?;
    ensure_dir(out_dir)?;
    let mut w = create(&out_dir.join("check_report.csv"))?;
    write_check_report(&mut w, &outcomes)?;
    w.flush()?;
    Ok(outcomes)
}

#[derive(Clone, Debug, PartialEq)]
pub struct PicardOptions {
    pub m: f64,
    pub tol: f64,
    pub max_iter: usize,
    pub steps: usize,
}

pub fn cmd_picard(cfg: &RunConfig, opts: &PicardOptions) -> Result<PicardOutcome> {
    let model = build_model(cfg)?;
    let u0 = initial_state(cfg, &model)?;
    let th = TruncationTheta::new(opts.m).map_err(|e| classify("--m", e))?;
    let pc = PicardConfig::new(cfg.t_end)
        .tol(opts.tol)
        .max_iter(opts.max_iter)
        .steps(opts.steps);
    pc.validate().map_err(|e| classify("picard", e))?;
    let outcome = picard_solve(&u0, &th, &model, &pc)?;
    ensure_dir(&cfg.out_dir)?;
    let mut w = create(&cfg.out_dir.join("picard.csv"))?;
    write_picard_csv(&mut w, &outcome)?;
    w.flush()?;
    Ok(outcome)
}

#[derive(Clone, Debug, PartialEq)]
pub enum Probe {
    Lipschitz { samples: usize, radius: f64 },
    /// `eps` overrides `init.off_manifold_eps` when non-empty.
    Invariance { eps: Vec<f64> },
    Amu { mu: Vec<f64>, t_min: f64 },
    Omega { q: Vec<f64>, tol: f64 },
}

impl Probe {
    pub fn name(&self) -> &'static str {
        match self {
            Probe::Lipschitz { .. } => "lipschitz",
            Probe::Invariance { .. } => "invariance",
            Probe::Amu { .. } => "amu",
            Probe::Omega { .. } => "omega",
        }
    }
}

fn write_rows(path: &Path, header: &str, rows: &[Vec<String>]) -> Result<()> {
    let mut w = create(path)?;
    writeln!(w, "{header}")?;
    for r in rows {
        writeln!(w, "{}", r.join(","))?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `<probe>.csv` into the output directory and returns its path.
pub fn cmd_probe(cfg: &RunConfig, probe: &Probe) -> Result<PathBuf> {
    let model = build_model(cfg)?;
    ensure_dir(&cfg.out_dir)?;
    let path = cfg.out_dir.join(format!("{}.csv", probe.name()));
    match probe {
        Probe::Lipschitz { samples, radius } => {
            if *samples == 0 {
                return Err(usage("probe lipschitz: --samples must be at least 1"));
            }
            if !(*radius > 0.0 && radius.is_finite()) {
                return Err(usage(format!("probe lipschitz: --radius must be positive, got {radius}")));
            }
            let r = lipschitz_probe(&model, *radius, *samples, cfg.seed).map_err(|e| classify("probe lipschitz", e))?;
            write_rows(
                &path,
                "n,resolution,ball_radius,samples,skipped,max_ratio,fitted_constant,scalar_constant",
                &[vec![
                    g17(r.n),
                    r.resolution.to_string(),
                    g17(r.ball_radius),
                    r.samples.to_string(),
                    r.skipped.to_string(),
                    g17(r.max_ratio),
                    g17(r.fitted_constant),
                    g17(r.scalar_constant),
                ]],
            )?;
        }
        Probe::Invariance { eps } => {
            let list = if !eps.is_empty() {
                eps.clone()
            } else if cfg.off_manifold_eps != 0.0 {
                vec![cfg.off_manifold_eps]
            } else {
                vec![1e-3, -1e-3, 1e-2, -1e-2]
            };
            let on = initial_state(&RunConfig { off_manifold_eps: 0.0, ..cfg.clone() }, &model)?;
            let mut rows = Vec::new();
            for e in list {
                ensure!(e > -1.0, UsageError(format!("probe invariance: eps {e} must exceed -1")));
                let r = invariance_growth_test(&on.scaled((1.0 + e).sqrt()), &model)
                    .map_err(|err| classify(&format!("probe invariance: eps {e}"), err))?;
                rows.push(vec![
                    g17(r.epsilon),
                    g17(r.predicted_rate),
                    g17(r.measured_rate),
                    g17(r.relative_error()),
                ]);
            }
            write_rows(&path, "epsilon,predicted_rate,measured_rate,relative_error", &rows)?;
        }
        Probe::Amu { mu, t_min } => {
            if let Some(bad) = mu.iter().find(|m| !(**m > 0.0 && **m <= 1.0)) {
                return Err(usage(format!("probe amu: mu {bad} outside (0, 1]")));
            }
            let u0 = initial_state(cfg, &model)?;
            let traj = integrate(&u0, &model, &stepper_config(cfg).snapshots(true))?;
            let report = a_mu_boundedness(&traj, mu, *t_min).map_err(|e| classify("probe amu", e))?;
            let rows: Vec<Vec<String>> = report
                .entries
                .iter()
                .map(|e| {
                    vec![
                        g17(e.mu),
                        g17(e.sup_norm),
                        g17(e.head_max),
                        g17(e.tail_max),
                        e.tail_non_increasing().to_string(),
                    ]
                })
                .collect();
            write_rows(&path, "mu,sup_norm,head_max,tail_max,tail_non_increasing", &rows)?;
        }
        Probe::Omega { q, tol } => {
            let u0 = initial_state(cfg, &model)?;
            let report = omega_limit_probe(&u0, &model, &stepper_config(cfg), q, *tol)
                .map_err(|e| classify("probe omega", e))?;
            let rows: Vec<Vec<String>> = report
                .tails
                .iter()
                .map(|t| vec![g17(t.q), t.snapshots.to_string(), g17(t.max_v_distance)])
                .collect();
            write_rows(&path, "q,snapshots,max_v_distance", &rows)?;
            println!(
                "converged={} cauchy={} rayleigh_quotient={} steady={} residual={}",
                report.converged,
                report.cauchy,
                g17(report.rayleigh_quotient),
                report.steady.is_steady,
                g17(report.steady.residual)
            );
        }
    }
    Ok(path)
}
