//! The five subcommands. Each writes CSV artifacts through [`Artifacts`].

use std::fmt::Write as _;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use rayon::prelude::*;
use twofold::fields::{check_reversibility, fold_visibility, sample_grid};
use twofold::flow::flow_filippov;
use twofold::predictor::{
    predict_annulus, predict_twofold, Classification, Prediction, PredictionReport,
};
use twofold::verify::{
    convergence_fit, displacement_richardson, find_fixed_point, verify_sliding_cycle,
    FixedPointResult, NewtonSettings, SlidingCycle,
};
use twofold::{AnnulusData, FilippovModel, MelnikovEvaluator, Side, Vec2};

use crate::config::{ExperimentConfig, RunKind};

/// Collects output files, each prefixed by a comment banner naming the tool
/// version, the config hash and the subcommand.
pub struct Artifacts {
    dir: PathBuf,
    banner: String,
    pub written: Vec<PathBuf>,
}

impl Artifacts {
    pub fn new(dir: &Path, config: &ExperimentConfig, run: RunKind) -> Result<Self> {
        fs::create_dir_all(dir)
            .with_context(|| format!("creating output directory {}", dir.display()))?;
        let banner = format!(
            "# twofold {} config-sha256={} subcommand={}\n",
            env!("CARGO_PKG_VERSION"),
            config.hash(),
            format!("{run:?}").to_lowercase()
        );
        Ok(Self {
            dir: dir.to_path_buf(),
            banner,
            written: Vec::new(),
        })
    }

    pub fn write<F>(&mut self, name: &str, body: F) -> Result<()>
    where
        F: FnOnce(&mut Vec<u8>) -> io::Result<()>,
    {
        let mut buf = self.banner.clone().into_bytes();
        body(&mut buf).with_context(|| format!("rendering {name}"))?;
        let path = self.dir.join(name);
        fs::write(&path, buf).with_context(|| format!("writing {}", path.display()))?;
        self.written.push(path);
        Ok(())
    }
}

/// Everything a subcommand needs, built once from the config.
pub struct Session {
    pub config: ExperimentConfig,
    pub model: FilippovModel,
    pub data: AnnulusData,
}

impl Session {
    pub fn new(config: ExperimentConfig) -> Result<Self> {
        let model = config.model();
        let [lo, hi] = config.grids.x_range;
        let data =
            AnnulusData::with_options(model.f_minus.clone(), (lo, hi), config.flow_options())
                .context("annulus geometry of F-")?;
        Ok(Self {
            config,
            model,
            data,
        })
    }

    fn epsilons(&self) -> &[f64] {
        &self.config.params.epsilons
    }

    /// Two-fold predictions when σ matches σ_v, annulus predictions otherwise.
    fn predictions(&self) -> Result<PredictionReport> {
        let sigma = self.config.params.sigma;
        let report = if (sigma - self.data.sigma_v).abs() <= 1e-8 * self.data.sigma_v {
            predict_twofold(&self.model, &self.data).context("two-fold predictions")?
        } else {
            predict_annulus(&self.model, &self.data, sigma).context("annulus predictions")?
        };
        for note in &report.notes {
            eprintln!("note: {note}");
        }
        Ok(report)
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or(String::new(), |v| format!("{v:.12e}"))
}

fn class_name(p: &Prediction) -> String {
    p.classification
        .map_or_else(|| "Inconclusive".to_string(), |c| format!("{c:?}"))
}

pub fn analyze(ctx: &Session, out: &mut Artifacts) -> Result<()> {
    let d = &ctx.data;
    let m = &ctx.model;
    let [lo, hi] = ctx.config.grids.x_range;
    let rev = check_reversibility(m, &sample_grid((lo, hi), (lo, hi), 41));
    let vis = |side: Side, x: f64| {
        fold_visibility(m, side, 0.0, x)
            .map_or_else(|e| format!("error: {e}"), |v| format!("{v:?}"))
    };
    let rows = vec![
        ("x_i", format!("{:.15e}", d.x_i())),
        ("x_v", format!("{:.15e}", d.x_v())),
        ("df2dx_i", format!("{:.15e}", d.folds.p_i.df2dx)),
        ("df2dx_v", format!("{:.15e}", d.folds.p_v.df2dx)),
        ("visibility_i", vis(Side::Minus, d.x_i())),
        ("visibility_v", vis(Side::Minus, d.x_v())),
        ("sigma_v", format!("{:.15e}", d.sigma_v)),
        ("q_v_x", format!("{:.15e}", d.q_v.x)),
        ("sigma_m", format!("{:.15e}", d.sigma_m)),
        ("x_at_sigma_m", format!("{:.15e}", d.x_at_sigma_m)),
        ("reversibility_defect", format!("{:.3e}", rev.max_defect)),
        ("reversible", rev.reversible.to_string()),
    ];
    out.write("analyze.csv", |w| {
        writeln!(w, "quantity,value")?;
        for (k, v) in &rows {
            writeln!(w, "{k},{v}")?;
        }
        Ok(())
    })?;
    let n = ctx.config.grids.sigma_table;
    let mut table = Vec::new();
    d.write_sigma_table(&mut table, n)
        .context("half-return time table")?;
    out.write("sigma_table.csv", |w| w.write_all(&table))?;
    if !rev.reversible {
        eprintln!(
            "warning: F+ is not the reflection of F- (defect {:.3e})",
            rev.max_defect
        );
    }
    Ok(())
}

pub fn melnikov(ctx: &Session, out: &mut Artifacts) -> Result<()> {
    let g = &ctx.config.grids;
    let sigma = ctx.config.params.sigma;
    let (x_i, x_v) = (ctx.data.x_i(), ctx.data.x_v());
    let thetas: Vec<f64> = (0..g.theta)
        .map(|k| 2.0 * sigma * k as f64 / g.theta as f64)
        .collect();
    let xs: Vec<f64> = (1..=g.x)
        .map(|k| x_i + (x_v - x_i) * k as f64 / g.x as f64)
        .collect();
    let ev = MelnikovEvaluator::new(&ctx.model, &ctx.data);
    let grid = ev.grid(&thetas, &xs).context("Melnikov grid")?;
    out.write("melnikov_grid.csv", |w| grid.write_csv(w))?;
    // Slices at the resonant orbits σ̄(x) = σ, where zeros give predictions.
    let roots = ctx
        .data
        .invert_sigma(sigma)
        .context("resonant orbits σ̄(x) = σ")?;
    let mut body = String::from("x_sigma,theta,M,err\n");
    for r in &roots {
        let slice = ev.slice(r.x)?;
        let rows: Vec<_> = thetas
            .par_iter()
            .map(|&th| slice.eval(th))
            .collect::<Result<_, _>>()?;
        for (th, e) in thetas.iter().zip(rows) {
            let _ = writeln!(
                body,
                "{:.15e},{th:.15e},{:.15e},{:.3e}",
                r.x, e.value, e.error
            );
        }
    }
    out.write("melnikov_resonant.csv", |w| w.write_all(body.as_bytes()))
}

pub fn predict(ctx: &Session, out: &mut Artifacts) -> Result<()> {
    let report = ctx.predictions()?;
    out.write("predictions.csv", |w| report.write_csv(w, true))?;
    print!("{}", report.to_text());
    Ok(())
}

pub fn simulate(ctx: &Session, out: &mut Artifacts) -> Result<()> {
    let s = &ctx.config.simulate;
    let sigma = ctx.config.params.sigma;
    let theta0 = s.theta0.unwrap_or(0.0);
    let z0 = Vec2::new(
        s.x0.unwrap_or(0.5 * (ctx.data.x_i() + ctx.data.x_v())),
        s.y0,
    );
    let duration = s.duration.unwrap_or(4.0 * sigma);
    let opts = ctx.config.flow_options();
    let trajectories: Vec<_> = ctx
        .epsilons()
        .par_iter()
        .map(|&eps| {
            flow_filippov(&ctx.model.with_epsilon(eps), theta0, z0, duration, &opts)
                .with_context(|| format!("trajectory at ε = {eps}"))
        })
        .collect::<Result<_>>()?;
    let substeps = ctx.config.grids.substeps;
    let mut events = String::from("epsilon,time,abscissa,kind,from,to,fold_side\n");
    for (k, (eps, tr)) in ctx.epsilons().iter().zip(&trajectories).enumerate() {
        out.write(&format!("trajectory_{k}.csv"), |w| {
            tr.write_csv(w, substeps)
        })?;
        for e in &tr.events {
            let side = e.fold_side.map_or(String::new(), |s| format!("{s:?}"));
            let _ = writeln!(
                events,
                "{eps:.6e},{:.15e},{:.15e},{:?},{},{},{side}",
                e.time,
                e.abscissa,
                e.kind,
                e.from.name(),
                e.to.name()
            );
        }
    }
    out.write("events.csv", |w| w.write_all(events.as_bytes()))
}

const SLIDING_HEADER: &str = "epsilon,theta_star,classification,orientation,theta_cycle,x_cycle,sliding_time,tau_eps,tau_star,closure_mismatch,c_fit,closure_residual,distance,sliding_segments,regions";

fn sliding_row(c: &SlidingCycle) -> String {
    let r = &c.report;
    let regions: Vec<String> = r.segment_regions.iter().map(|k| format!("{k:?}")).collect();
    format!(
        "{:.6e},{:.12e},{:?},{:?},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{:.6e},{:.6e},{:.3e},{:.6e},{},{}",
        r.epsilon,
        r.theta_star,
        r.outcome,
        r.orientation,
        r.theta_cycle,
        r.x_cycle,
        r.sliding_time,
        r.tau_eps,
        r.tau_star,
        r.closure_mismatch,
        r.c_fit,
        r.closure_residual,
        r.distance_to_prediction,
        r.sliding_segments,
        regions.join(";")
    )
}

enum Check {
    Crossing(Vec<FixedPointResult>),
    Sliding(Vec<SlidingCycle>),
    Skipped,
}

pub fn verify(ctx: &Session, out: &mut Artifacts) -> Result<()> {
    let report = ctx.predictions()?;
    let opts = ctx.config.flow_options();
    let settings = NewtonSettings {
        tol: ctx.config.tolerances.newton,
        max_iter: ctx.config.tolerances.newton_max_iter,
        ..NewtonSettings::default()
    };
    let eps = ctx.epsilons();
    let mut checks = Vec::with_capacity(report.predictions.len());
    for p in &report.predictions {
        let check = match p.classification {
            Some(Classification::SlidingOnSigmaS | Classification::SlidingOnSigmaE) => {
                Check::Sliding(
                    eps.par_iter()
                        .map(|&e| {
                            verify_sliding_cycle(
                                &ctx.model.with_epsilon(e),
                                &ctx.data,
                                p.theta_star,
                                &opts,
                            )
                            .with_context(|| {
                                format!("sliding cycle at θ* = {}, ε = {e}", p.theta_star)
                            })
                        })
                        .collect::<Result<_>>()?,
                )
            }
            Some(c) => {
                let chi = p
                    .twofold
                    .and_then(|t| t.chi_star)
                    .filter(|_| c == Classification::CrossingTwoFold);
                Check::Crossing(
                    eps.par_iter()
                        .map(|&e| {
                            let seed = (p.theta_star, p.x_star + e * chi.unwrap_or(0.0));
                            find_fixed_point(&ctx.model.with_epsilon(e), seed, &opts, &settings)
                                .with_context(|| {
                                    format!("fixed point near θ* = {}, ε = {e}", p.theta_star)
                                })
                        })
                        .collect::<Result<_>>()?,
                )
            }
            None => Check::Skipped,
        };
        checks.push(check);
    }

    let mut fixed = format!("prediction,{}\n", FixedPointResult::CSV_HEADER);
    let mut convergence =
        String::from("prediction,theta_star,x_star,classification,constant,order\n");
    let mut sliding = format!("prediction,{SLIDING_HEADER}\n");
    let mut laps = Vec::new();
    for (k, (p, check)) in report.predictions.iter().zip(&checks).enumerate() {
        match check {
            Check::Crossing(fps) => {
                for fp in fps {
                    let _ = writeln!(fixed, "{k},{}", fp.csv_row(&class_name(p)));
                }
                let dist: Vec<f64> = fps.iter().map(|f| f.distance_to_prediction).collect();
                let fit = convergence_fit(eps, &dist);
                // With fewer than two ε, or a prediction that persists exactly,
                // the order is not measurable.
                let order = (eps.len() >= 2 && dist.iter().all(|d| *d > 0.0)).then_some(fit.order);
                let _ = writeln!(
                    convergence,
                    "{k},{:.12e},{:.12e},{},{:.6e},{}",
                    p.theta_star,
                    p.x_star,
                    class_name(p),
                    fit.constant,
                    fmt_opt(order)
                );
            }
            Check::Sliding(cycles) => {
                for (j, c) in cycles.iter().enumerate() {
                    let _ = writeln!(sliding, "{k},{}", sliding_row(c));
                    laps.push((format!("sliding_lap_{k}_{j}.csv"), c.trajectory.clone()));
                }
            }
            Check::Skipped => eprintln!(
                "note: prediction {k} at θ* = {} is inconclusive; not verified",
                p.theta_star
            ),
        }
    }
    out.write("fixed_points.csv", |w| w.write_all(fixed.as_bytes()))?;
    out.write("convergence.csv", |w| w.write_all(convergence.as_bytes()))?;
    out.write("sliding_cycles.csv", |w| w.write_all(sliding.as_bytes()))?;
    let substeps = ctx.config.grids.substeps;
    for (name, tr) in laps {
        out.write(&name, |w| tr.write_csv(w, substeps))?;
    }

    let points = &ctx.config.verify.richardson;
    if !points.is_empty() {
        if eps.len() < 2 {
            anyhow::bail!(crate::config::ConfigError::new(
                "params.epsilons",
                "Richardson runs need at least two values"
            ));
        }
        let rows: Vec<_> = points
            .par_iter()
            .map(|&[th, x]| {
                displacement_richardson(&ctx.model, &ctx.data, th, x, eps, &opts)
                    .with_context(|| format!("Richardson table at θ = {th}, x = {x}"))
            })
            .collect::<Result<_>>()?;
        let mut body = String::from("theta,x,M,epsilon,ratio,rel_error,order,extrapolated\n");
        for r in rows {
            for ((e, ratio), rel) in r.epsilons.iter().zip(&r.ratios).zip(&r.rel_errors) {
                let _ = writeln!(
                    body,
                    "{:.12e},{:.12e},{:.12e},{e:.6e},{ratio:.12e},{rel:.6e},{:.6},{:.12e}",
                    r.theta, r.x, r.melnikov, r.order, r.extrapolated
                );
            }
        }
        out.write("richardson.csv", |w| w.write_all(body.as_bytes()))?;
    }
    Ok(())
}
