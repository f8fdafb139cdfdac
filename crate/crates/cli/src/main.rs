//! `twofold`: batch experiments on periodically perturbed reversible Filippov
//! systems. Every subcommand reads a JSON config and writes CSV files.

// `!(a > b)` is used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod config;
mod exit;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use crate::commands::{Artifacts, Session};
use crate::config::{ConfigError, ExperimentConfig, RunKind};

const CONFIG_HELP: &str = "\
Config (JSON, every section optional):
  model       \"hamiltonian-twofold\" or an inline spec
              {f_minus, f_plus?, g_minus?, g_plus?}, each {x: [terms], y: [terms], period?}
              with terms {coeff, px?, py?, forcing?: {freq, phase?}}
  params      {alpha, lambda, sigma, epsilons (strictly descending)}
  run         optional; must match the subcommand when present
  grids       {theta, x, sigma_table, x_range: [lo, hi], substeps}
  tolerances  {rtol, atol, tol_event, tol_tangency, newton, newton_max_iter}
  simulate    {theta0?, x0?, y0, duration?}
  verify      {richardson: [[theta, x], ...]}
  output      output directory (overridden by --out)

Every CSV starts with `# twofold <version> config-sha256=<hash> subcommand=<name>`.
Exit codes: 0 success, 2 config error, 3 hypothesis (h1)/(h2) violated, 4 numerical failure.";

#[derive(Parser, Debug)]
#[command(name = "twofold", version, about = "Melnikov predictions and hybrid simulations for reversible Filippov systems", after_help = CONFIG_HELP)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// JSON experiment config; defaults are used when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads for sweeps (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Output directory (default: config `output`, else `out`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Comma-separated ε list replacing `params.epsilons`.
    #[arg(long, global = true, value_delimiter = ',')]
    epsilon: Option<Vec<f64>>,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Command {
    /// Folds, visibility, σ_v, q_v, σ_M and the half-return time table.
    #[command(after_help = "\
analyze.csv      quantity,value  (x_i, x_v, df2dx_i, df2dx_v, visibility_i, visibility_v,
                 sigma_v, q_v_x, sigma_m, x_at_sigma_m, reversibility_defect, reversible)
sigma_table.csv  x,sigma_bar,sigma_prime on grids.sigma_table points of (x_i, x_v]")]
    Analyze,
    /// Melnikov function on a θ × x grid and on the resonant orbits σ̄(x) = σ.
    #[command(after_help = "\
melnikov_grid.csv      theta,x,M,err  (grids.theta phases in [0, 2σ) × grids.x points of (x_i, x_v])
melnikov_resonant.csv  x_sigma,theta,M,err  for every x with σ̄(x) = σ")]
    Melnikov,
    /// Zeros of M with slopes; two-fold classification when σ = σ_v.
    #[command(after_help = "\
predictions.csv  sigma,theta_star,x_star,slope,classification,g_theta,threshold,p,m1,A,tau_star,chi_star
                 (two-fold columns are empty for annulus predictions)")]
    Predict,
    /// Filippov trajectories from one initial condition, one file per ε.
    #[command(after_help = "\
trajectory_<k>.csv  t,x,y,mode,event_flag  for the k-th ε (flag: 1 cross, 2 enter sliding,
                    3 exit at fold, 4 tangency)
events.csv          epsilon,time,abscissa,kind,from,to,fold_side")]
    Simulate,
    /// Numerical checks of every prediction over the ε list.
    #[command(after_help = "\
fixed_points.csv      prediction,epsilon,theta_fix,x_fix,residual,distance,classification
convergence.csv       prediction,theta_star,x_star,classification,constant,order
                      (order empty when a distance is exactly zero)
sliding_cycles.csv    prediction,epsilon,theta_star,classification,orientation,theta_cycle,x_cycle,
                      sliding_time,tau_eps,tau_star,closure_mismatch,c_fit,closure_residual,
                      distance,sliding_segments,regions
sliding_lap_<k>_<j>.csv  closing lap of prediction k at the j-th ε (trajectory columns)
richardson.csv        theta,x,M,epsilon,ratio,rel_error,order,extrapolated  (when verify.richardson is set)")]
    Verify,
}

impl Command {
    fn kind(self) -> RunKind {
        match self {
            Command::Analyze => RunKind::Analyze,
            Command::Melnikov => RunKind::Melnikov,
            Command::Predict => RunKind::Predict,
            Command::Simulate => RunKind::Simulate,
            Command::Verify => RunKind::Verify,
        }
    }
}

fn run(cli: Cli) -> Result<Vec<PathBuf>> {
    let mut config = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(eps) = cli.epsilon {
        config.params.epsilons = eps;
    }
    let kind = cli.command.kind();
    config.validate(kind)?;
    if cli.jobs == Some(0) {
        return Err(ConfigError::new("--jobs", "must be at least 1").into());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.jobs.unwrap_or(0))
        .build()
        .context("building the worker pool")?;
    let dir = cli
        .out
        .or_else(|| config.output.clone())
        .unwrap_or_else(|| PathBuf::from("out"));
    let mut out = Artifacts::new(&dir, &config, kind)?;
    let session = Session::new(config)?;
    pool.install(|| match cli.command {
        Command::Analyze => commands::analyze(&session, &mut out),
        Command::Melnikov => commands::melnikov(&session, &mut out),
        Command::Predict => commands::predict(&session, &mut out),
        Command::Simulate => commands::simulate(&session, &mut out),
        Command::Verify => commands::verify(&session, &mut out),
    })?;
    Ok(out.written)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(paths) => {
            for p in paths {
                eprintln!("wrote {}", p.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit::code(&e))
        }
    }
}
