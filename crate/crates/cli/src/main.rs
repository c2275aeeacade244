use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use sphereflow_cli::commands::{cmd_check, cmd_picard, cmd_probe, cmd_run, PicardOptions, Probe, UsageError};
use sphereflow_cli::config::{RawConfig, RunConfig, DEFAULT_PRESET};
use sphereflow::mild_solution::{DEFAULT_PICARD_MAX_ITER, DEFAULT_PICARD_STEPS, DEFAULT_PICARD_TOL};
use sphereflow::output::g17;

/// Spectral solver and diagnostics for the sphere-constrained modified
/// Swift-Hohenberg flow.
#[derive(Parser, Debug)]
#[command(name = "sphereflow", version)]
struct Cli {
    /// Flat `key = value` configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one key, e.g. `--set model.n=1`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,
    /// Output directory (overrides `output.dir`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Seed (overrides `init.seed`).
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Integrate and write `timeseries.csv` (and snapshots if enabled).
    Run,
    /// Run the acceptance suite and write `check_report.csv`.
    Check,
    /// Picard iteration of the truncated mild formulation on `[0, stepper.t_end]`.
    Picard {
        /// Truncation level of θ_m.
        #[arg(long, default_value_t = 100.0)]
        m: f64,
        #[arg(long, default_value_t = DEFAULT_PICARD_TOL)]
        tol: f64,
        #[arg(long, default_value_t = DEFAULT_PICARD_MAX_ITER)]
        max_iter: usize,
        /// Time intervals of the space-time grid.
        #[arg(long, default_value_t = DEFAULT_PICARD_STEPS)]
        steps: usize,
    },
    /// Diagnostics probes.
    #[command(subcommand)]
    Probe(ProbeCommand),
}

#[derive(Subcommand, Debug)]
enum ProbeCommand {
    Lipschitz {
        #[arg(long, default_value_t = 500)]
        samples: usize,
        #[arg(long, default_value_t = 2.0)]
        radius: f64,
    },
    Invariance {
        /// Comma-separated `|u₀|² - 1` values.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        eps: Vec<f64>,
    },
    Amu {
        #[arg(long, value_delimiter = ',', default_values_t = vec![0.55, 0.75, 0.9])]
        mu: Vec<f64>,
        #[arg(long, default_value_t = 0.1)]
        t_min: f64,
    },
    Omega {
        /// Tail start times.
        #[arg(long, value_delimiter = ',', default_values_t = vec![5.0, 10.0, 15.0])]
        q: Vec<f64>,
        #[arg(long, default_value_t = 1e-8)]
        tol: f64,
    },
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let text = match &cli.config {
        Some(path) => std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?,
        None => DEFAULT_PRESET.to_string(),
    };
    let mut raw = RawConfig::parse(&text).map_err(|e| UsageError(e.to_string()))?;
    for pair in &cli.set {
        raw.set(pair).map_err(|e| UsageError(format!("--set: {e}")))?;
    }
    if let Some(seed) = cli.seed {
        raw.set(&format!("init.seed={seed}")).expect("known key");
    }
    if let Some(out) = &cli.out {
        raw.set(&format!("output.dir={}", out.display()))
            .map_err(|e| UsageError(format!("--out: {e}")))?;
    }
    Ok(RunConfig::from_raw(&raw).map_err(|e| UsageError(e.to_string()))?)
}

fn configure_threads() -> Result<()> {
    let Ok(value) = std::env::var("SPHEREFLOW_THREADS") else {
        return Ok(());
    };
    let n: usize = value
        .trim()
        .parse()
        .map_err(|_| UsageError(format!("SPHEREFLOW_THREADS: expected a positive integer, got {value:?}")))?;
    if n == 0 {
        return Err(UsageError("SPHEREFLOW_THREADS must be at least 1".into()).into());
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .context("configuring the thread pool")?;
    Ok(())
}

/// `Ok(true)` when every check passed.
fn execute(cli: &Cli) -> Result<bool> {
    configure_threads()?;
    let cfg = load_config(cli)?;
    match &cli.command {
        Command::Run => {
            let traj = cmd_run(&cfg)?;
            let last = traj.reports().last().context("empty trajectory")?;
            println!(
                "t = {}  Y = {}  |u| = {}  -> {}",
                g17(last.t),
                g17(last.y),
                g17(last.l2_norm),
                cfg.out_dir.join("timeseries.csv").display()
            );
            Ok(true)
        }
        Command::Check => {
            let outcomes = cmd_check(cfg.seed, &cfg.out_dir)?;
            let failed: Vec<_> = outcomes.iter().filter(|o| !o.passed()).map(|o| o.id.to_string()).collect();
            if failed.is_empty() {
                println!("all {} criteria passed", outcomes.len());
            } else {
                println!("failed criteria: {}", failed.join(", "));
            }
            Ok(failed.is_empty())
        }
        Command::Picard { m, tol, max_iter, steps } => {
            let opts = PicardOptions {
                m: *m,
                tol: *tol,
                max_iter: *max_iter,
                steps: *steps,
            };
            let outcome = cmd_picard(&cfg, &opts)?;
            println!(
                "converged in {} iterations, max factor {}",
                outcome.iterations(),
                g17(outcome.max_factor())
            );
            Ok(true)
        }
        Command::Probe(p) => {
            let probe = match p {
                ProbeCommand::Lipschitz { samples, radius } => Probe::Lipschitz {
                    samples: *samples,
                    radius: *radius,
                },
                ProbeCommand::Invariance { eps } => Probe::Invariance { eps: eps.clone() },
                ProbeCommand::Amu { mu, t_min } => Probe::Amu {
                    mu: mu.clone(),
                    t_min: *t_min,
                },
                ProbeCommand::Omega { q, tol } => Probe::Omega { q: q.clone(), tol: *tol },
            };
            let path = cmd_probe(&cfg, &probe)?;
            println!("wrote {}", path.display());
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
