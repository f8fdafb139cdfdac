//! Direct-simulation checks of the predictions: fixed points of the return
//! map for crossing solutions, closure of sliding cycles, the
//! displacement–Melnikov identity and the first-variation expansion.

use serde::Serialize;
use thiserror::Error;

use crate::annulus::{AnnulusData, AnnulusError};
use crate::fields::{involution, FieldError, FilippovModel, RegionKind, Side};
use crate::flow::{
    flow_filippov, flow_filippov_until, flow_smooth, flow_variational, hit_switching, Direction,
    EventKind, FlowError, FlowOptions, Mode, Trajectory,
};
use crate::melnikov::{MelnikovError, MelnikovEvaluator};
use crate::predictor::{classify_twofold, Orientation, PredictorError, TwoFoldOutcome};
use crate::quadrature::{integrate, QuadratureError};
use crate::roots::{brent, loglog_slope};
use crate::{Mat2, Vec2};

/// Residual required of a located fixed point.
pub const TOL_FP: f64 = 1e-10;

#[derive(Debug, Error)]
pub enum VerifyError {
    #[error("Newton iteration stalled after {iterations} iterations at residual {residual:e}")]
    NewtonDiverged { iterations: usize, residual: f64 },
    #[error(
        "the orbit from θ = {theta}, x = {x} did not return to Σ by crossing twice ({reason})"
    )]
    NoReturn { theta: f64, x: f64, reason: String },
    #[error("no sliding segment near θ* = {theta} at ε = {epsilon}; the sliding classification is contradicted")]
    NoSlidingSegment { theta: f64, epsilon: f64 },
    #[error("no closing sliding cycle bracketed near θ* = {theta} at ε = {epsilon}")]
    NoClosure { theta: f64, epsilon: f64 },
    #[error("θ* = {theta} is classified {outcome:?}, not sliding")]
    NotSliding { theta: f64, outcome: TwoFoldOutcome },
    #[error("no fold of the {side:?} field near x = {x} at t = {t}")]
    NoFold { side: Side, t: f64, x: f64 },
    #[error("need at least two positive ε values, got {0}")]
    EpsilonList(usize),
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error(transparent)]
    Quadrature(#[from] QuadratureError),
    #[error(transparent)]
    Melnikov(#[from] MelnikovError),
    #[error(transparent)]
    Annulus(#[from] AnnulusError),
    #[error(transparent)]
    Predictor(#[from] PredictorError),
}

/// Phase difference reduced to `(-period/2, period/2]`.
fn wrap(d: f64, period: f64) -> f64 {
    let r = d.rem_euclid(period);
    if r > 0.5 * period {
        r - period
    } else {
        r
    }
}

/// State after one period `2σ` of the Filippov flow from `(θ0, z0)`.
pub fn stroboscopic_map(
    model: &FilippovModel,
    theta0: f64,
    z0: Vec2,
    opts: &FlowOptions,
) -> Result<Vec2, VerifyError> {
    Ok(flow_filippov(model, theta0, z0, model.period(), opts)?.final_state())
}

/// Second crossing of Σ by the orbit through `(θ, (x, 0))`: the first
/// crossing is on the far side of the annulus, the second closes the loop.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SigmaReturn {
    pub time: f64,
    pub x: f64,
}

pub fn sigma_return(
    model: &FilippovModel,
    theta: f64,
    x: f64,
    opts: &FlowOptions,
) -> Result<SigmaReturn, VerifyError> {
    let mut crossings = 0;
    let mut other = None;
    let traj = flow_filippov_until(
        model,
        theta,
        Vec2::new(x, 0.0),
        2.0 * model.period(),
        opts,
        |e| {
            if e.kind == EventKind::CrossSigma {
                crossings += 1;
                crossings == 2
            } else {
                other = Some(e.kind);
                true
            }
        },
    )?;
    if let Some(kind) = other {
        return Err(VerifyError::NoReturn {
            theta,
            x,
            reason: format!("{kind:?} event"),
        });
    }
    if !traj.stopped {
        return Err(VerifyError::NoReturn {
            theta,
            x,
            reason: format!("{crossings} crossing(s) in 4σ"),
        });
    }
    let e = traj
        .events
        .last()
        .expect("stopped trajectories carry an event");
    Ok(SigmaReturn {
        time: e.time,
        x: e.abscissa,
    })
}

/// `(t_ret - θ - 2σ, x_ret - x)`: zero exactly at a `2σ`-periodic crossing
/// solution through `(θ, (x, 0))`.
pub fn return_displacement(
    model: &FilippovModel,
    theta: f64,
    x: f64,
    opts: &FlowOptions,
) -> Result<Vec2, VerifyError> {
    let r = sigma_return(model, theta, x, opts)?;
    Ok(Vec2::new(r.time - theta - model.period(), r.x - x))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NewtonSettings {
    pub tol: f64,
    pub max_iter: usize,
    /// Finite-difference step; `max(1e-6, 1e-3 ε)` when `None`.
    pub fd_step: Option<f64>,
}

impl Default for NewtonSettings {
    fn default() -> Self {
        Self {
            tol: TOL_FP,
            max_iter: 40,
            fd_step: None,
        }
    }
}

/// A located periodic solution, given by its crossing of Σ.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FixedPointResult {
    pub epsilon: f64,
    pub theta_fix: f64,
    pub z_fix: Vec2,
    /// Norm of the return displacement at the fixed point.
    pub residual: f64,
    /// `|P(z_fix) - z_fix|` for the period-`2σ` stroboscopic map at phase
    /// `θ_fix`.
    pub strobe_residual: f64,
    pub seed_theta: f64,
    pub seed_x: f64,
    /// Distance from the seed in `(θ mod 2σ, x)`.
    pub distance_to_prediction: f64,
    pub iterations: usize,
}

impl FixedPointResult {
    pub const CSV_HEADER: &'static str = "epsilon,theta_fix,x_fix,residual,distance,classification";

    pub fn csv_row(&self, classification: &str) -> String {
        format!(
            "{:.6e},{:.12e},{:.12e},{:.3e},{:.6e},{}",
            self.epsilon,
            self.theta_fix,
            self.z_fix.x,
            self.residual,
            self.distance_to_prediction,
            classification
        )
    }
}

/// Newton's method on [`return_displacement`] over `(θ, x)` from the seed,
/// with forward-difference Jacobians and a backtracking line search. On
/// stagnation the difference step is cut by 10 and the iteration retried.
pub fn find_fixed_point(
    model: &FilippovModel,
    seed: (f64, f64),
    opts: &FlowOptions,
    settings: &NewtonSettings,
) -> Result<FixedPointResult, VerifyError> {
    let eps = model.epsilon;
    let residual = |u: Vec2| return_displacement(model, u.x, u.y, opts);
    let mut u = Vec2::new(seed.0, seed.1);
    let mut r = residual(u)?;
    let mut h = settings.fd_step.unwrap_or(1e-6f64.max(1e-3 * eps));
    let mut iterations = 0;
    while r.norm() > settings.tol {
        if iterations >= settings.max_iter {
            return Err(VerifyError::NewtonDiverged {
                iterations,
                residual: r.norm(),
            });
        }
        iterations += 1;
        let mut advanced = false;
        for _ in 0..3 {
            let r_theta = residual(u + Vec2::new(h, 0.0))?;
            let r_x = residual(u + Vec2::new(0.0, h))?;
            let jac = Mat2::from_columns(&[(r_theta - r) / h, (r_x - r) / h]);
            let Some(inv) = jac.try_inverse() else {
                h *= 0.1;
                continue;
            };
            let delta = -(inv * r);
            let mut lambda = 1.0;
            for _ in 0..12 {
                let cand = u + lambda * delta;
                if let Ok(rc) = residual(cand) {
                    if rc.norm() < r.norm() {
                        u = cand;
                        r = rc;
                        advanced = true;
                        break;
                    }
                }
                lambda *= 0.5;
            }
            if advanced {
                break;
            }
            h *= 0.1;
        }
        if !advanced {
            return Err(VerifyError::NewtonDiverged {
                iterations,
                residual: r.norm(),
            });
        }
    }
    let period = model.period();
    let z_fix = Vec2::new(u.y, 0.0);
    let strobe = stroboscopic_map(model, u.x, z_fix, opts)?;
    Ok(FixedPointResult {
        epsilon: eps,
        theta_fix: u.x,
        z_fix,
        residual: r.norm(),
        strobe_residual: (strobe - z_fix).norm(),
        seed_theta: seed.0,
        seed_x: seed.1,
        distance_to_prediction: wrap(u.x - seed.0, period).hypot(u.y - seed.1),
        iterations,
    })
}

/// `C = max d/ε` and the least-squares order of `d` against `ε`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConvergenceFit {
    pub constant: f64,
    pub order: f64,
}

pub fn convergence_fit(eps: &[f64], dist: &[f64]) -> ConvergenceFit {
    let constant = eps.iter().zip(dist).map(|(e, d)| d / e).fold(0.0, f64::max);
    ConvergenceFit {
        constant,
        order: loglog_slope(eps, dist),
    }
}

/// Two-sided displacement from `(θ, (x, 0))`: `X-` forward and `X+`
/// backward (from phase `θ + 2σ`) to their next contacts with Σ.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Displacement {
    /// `t- - t+ - 2σ`, with `t+ < 0` the signed backward hit time.
    pub f1: f64,
    /// `x- - x+`, the gap between the two landing abscissas.
    pub f2: f64,
    pub t_minus: f64,
    pub t_plus: f64,
    pub x_minus: f64,
    pub x_plus: f64,
}

pub fn displacement_annulus(
    model: &FilippovModel,
    theta: f64,
    x: f64,
    opts: &FlowOptions,
) -> Result<Displacement, VerifyError> {
    let z = Vec2::new(x, 0.0);
    let lower = hit_switching(
        &model.side_field(Side::Minus),
        theta,
        z,
        Direction::Forward,
        opts,
    )?;
    let start = theta + model.period();
    let upper = hit_switching(
        &model.side_field(Side::Plus),
        start,
        z,
        Direction::Backward,
        opts,
    )?;
    let t_minus = lower.t - theta;
    let t_plus = upper.t - start;
    Ok(Displacement {
        f1: t_minus - t_plus - model.period(),
        f2: lower.point.x - upper.point.x,
        t_minus,
        t_plus,
        x_minus: lower.point.x,
        x_plus: upper.point.x,
    })
}

/// Richardson data for one `(θ, x)`: the ratios `-F2(γ(σ̄(x), x)) ℱ2 / ε`
/// against `M(θ, x)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RichardsonRow {
    pub theta: f64,
    pub x: f64,
    pub melnikov: f64,
    pub epsilons: Vec<f64>,
    pub ratios: Vec<f64>,
    pub rel_errors: Vec<f64>,
    /// Order of `|ratio - M|` in ε.
    pub order: f64,
    /// First-order Richardson extrapolation from the two smallest ε.
    pub extrapolated: f64,
}

pub fn displacement_richardson(
    model: &FilippovModel,
    data: &AnnulusData,
    theta: f64,
    x: f64,
    epsilons: &[f64],
    opts: &FlowOptions,
) -> Result<RichardsonRow, VerifyError> {
    if epsilons.len() < 2 {
        return Err(VerifyError::EpsilonList(epsilons.len()));
    }
    let ev = MelnikovEvaluator::new(model, data);
    let m = ev.melnikov(theta, x)?.value;
    let landing = data.annulus_orbit(x)?.landing();
    let f2 = data.f_minus.eval(0.0, landing).y;
    let mut ratios = Vec::with_capacity(epsilons.len());
    for &eps in epsilons {
        let d = displacement_annulus(&model.with_epsilon(eps), theta, x, opts)?;
        ratios.push(-f2 * d.f2 / eps);
    }
    let rel_errors: Vec<f64> = ratios.iter().map(|r| ((r - m) / m).abs()).collect();
    let abs_err: Vec<f64> = ratios
        .iter()
        .map(|r| (r - m).abs().max(f64::MIN_POSITIVE))
        .collect();
    let n = epsilons.len();
    let (e1, e2) = (epsilons[n - 2], epsilons[n - 1]);
    let (r1, r2) = (ratios[n - 2], ratios[n - 1]);
    Ok(RichardsonRow {
        theta,
        x,
        melnikov: m,
        epsilons: epsilons.to_vec(),
        order: loglog_slope(epsilons, &abs_err),
        extrapolated: (e1 * r2 - e2 * r1) / (e1 - e2),
        ratios,
        rel_errors,
    })
}

/// `ψ(t) = Y(t, z0) (z1 + ∫₀ᵗ Y(s, z0)⁻¹ G(s + θ0, Γ(s, z0)) ds)`, the first
/// variation in ε of the `side` flow from `(θ0, z0 + ε z1)`.
pub fn psi(
    model: &FilippovModel,
    side: Side,
    theta0: f64,
    z0: Vec2,
    z1: Vec2,
    t: f64,
    opts: &FlowOptions,
) -> Result<Vec2, VerifyError> {
    let var = flow_variational(model.unperturbed(side), z0, t, opts)?;
    let g = model.perturbation(side);
    let mut singular = false;
    let integral = integrate(
        |s| {
            let (z, y) = var.state_and_fundamental(s);
            let Some(inv) = y.try_inverse() else {
                singular = true;
                return [0.0; 2];
            };
            let v = inv * g.eval(s + theta0, z);
            [v.x, v.y]
        },
        0.0,
        t,
        &[],
        1e-12,
        4096,
    )?;
    if singular {
        return Err(MelnikovError::SingularFundamentalMatrix { t, det: 0.0 }.into());
    }
    Ok(var.fundamental(t) * (z1 + Vec2::new(integral[0], integral[1])))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FirstVariationReport {
    pub psi: Vec2,
    pub epsilons: Vec<f64>,
    /// `‖ξ(t; ε) - Γ(t) - ε ψ(t)‖` per ε.
    pub errors: Vec<f64>,
    pub order: f64,
}

/// Compares the perturbed one-sided flow with its first-order expansion.
#[allow(clippy::too_many_arguments)]
pub fn first_variation(
    model: &FilippovModel,
    side: Side,
    theta0: f64,
    z0: Vec2,
    z1: Vec2,
    t: f64,
    epsilons: &[f64],
    opts: &FlowOptions,
) -> Result<FirstVariationReport, VerifyError> {
    if epsilons.len() < 2 {
        return Err(VerifyError::EpsilonList(epsilons.len()));
    }
    let p = psi(model, side, theta0, z0, z1, t, opts)?;
    let base = flow_smooth(model.unperturbed(side), 0.0, z0, t, opts)?.last();
    let base = Vec2::new(base[0], base[1]);
    let mut errors = Vec::with_capacity(epsilons.len());
    for &eps in epsilons {
        let pert = model.with_epsilon(eps).side_field(side);
        let xi = flow_smooth(&pert, theta0, z0 + eps * z1, t, opts)?.last();
        errors.push((Vec2::new(xi[0], xi[1]) - base - eps * p).norm());
    }
    let floor: Vec<f64> = errors.iter().map(|e| e.max(f64::MIN_POSITIVE)).collect();
    Ok(FirstVariationReport {
        psi: p,
        epsilons: epsilons.to_vec(),
        order: loglog_slope(epsilons, &floor),
        errors,
    })
}

/// `max ‖Y-(t, z) - R Y+(-t, R z) R‖` over the samples, from the
/// unperturbed one-sided variational flows.
pub fn fundamental_reversal_defect(
    model: &FilippovModel,
    samples: &[(f64, Vec2)],
    opts: &FlowOptions,
) -> Result<f64, VerifyError> {
    let r = Mat2::new(1.0, 0.0, 0.0, -1.0);
    let mut worst = 0.0f64;
    for &(t, z) in samples {
        let ym = flow_variational(model.unperturbed(Side::Minus), z, t, opts)?.fundamental(t);
        let yp = flow_variational(model.unperturbed(Side::Plus), involution(z), -t, opts)?
            .fundamental(-t);
        worst = worst.max((ym - r * yp * r).norm());
    }
    Ok(worst)
}

/// `max ‖Y-(t, p_v) e1 - F(Γ-(t, p_v)) / F1(p_v)‖` over `ts`: along the orbit
/// from the visible fold the first column of `Y` is the transported field.
pub fn fold_column_defect(
    data: &AnnulusData,
    ts: &[f64],
    opts: &FlowOptions,
) -> Result<f64, VerifyError> {
    let pv = data.p_v();
    let f1 = data.f_minus.eval(0.0, pv).x;
    let t_max = ts.iter().fold(0.0f64, |a, t| a.max(t.abs()));
    let mut worst = 0.0f64;
    for sign in [1.0, -1.0] {
        if !ts.iter().any(|t| t * sign > 0.0) {
            continue;
        }
        let var = flow_variational(&data.f_minus, pv, sign * t_max, opts)?;
        for &t in ts.iter().filter(|t| **t * sign > 0.0) {
            let (z, y) = var.state_and_fundamental(t);
            let col = Vec2::new(y[(0, 0)], y[(1, 0)]);
            worst = worst.max((col - data.f_minus.eval(0.0, z) / f1).norm());
        }
    }
    Ok(worst)
}

/// Abscissa of the fold of the `side` field on Σ at time `t`, by Newton from
/// `x_guess`.
pub fn fold_abscissa(
    model: &FilippovModel,
    side: Side,
    t: f64,
    x_guess: f64,
) -> Result<f64, VerifyError> {
    let mut x = x_guess;
    for _ in 0..60 {
        let z = Vec2::new(x, 0.0);
        let g = model.field(side, t, z).y;
        let dg = model.jacobian(side, t, z)[(1, 0)];
        if dg == 0.0 {
            break;
        }
        let step = g / dg;
        x -= step;
        if step.abs() <= 1e-15 * (1.0 + x.abs()) {
            return Ok(x);
        }
    }
    let z = Vec2::new(x, 0.0);
    if model.field(side, t, z).y.abs() <= 1e-13 {
        Ok(x)
    } else {
        Err(VerifyError::NoFold {
            side,
            t,
            x: x_guess,
        })
    }
}

/// Closed sliding cycle near the two-fold cycle.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SlidingCycleReport {
    pub epsilon: f64,
    pub theta_star: f64,
    pub outcome: TwoFoldOutcome,
    pub orientation: Orientation,
    /// Phase and abscissa where the cycle leaves Σ at the fold.
    pub theta_cycle: f64,
    pub x_cycle: f64,
    pub entry_theta: f64,
    pub entry_x: f64,
    /// `|Δphase|` and `|Δx|` of the located cycle after one period.
    pub closure_residual: f64,
    pub sliding_time: f64,
    /// `-sliding_time / ε`, to compare with `τ*`.
    pub tau_eps: f64,
    pub tau_star: f64,
    /// `ε |τ_ε - τ*|`: gap between the simulated phase correction and its
    /// leading-order prediction.
    pub closure_mismatch: f64,
    /// `closure_mismatch / ε²`.
    pub c_fit: f64,
    pub distance_to_prediction: f64,
    pub sliding_segments: usize,
    /// Region type of Σ at the midpoint of every sliding segment.
    pub segment_regions: Vec<RegionKind>,
    /// No segment slides on the region opposite to the classification.
    pub regions_consistent: bool,
}

#[derive(Debug, Clone)]
pub struct SlidingCycle {
    pub report: SlidingCycleReport,
    /// The closing lap, in original time orientation.
    pub trajectory: Trajectory,
}

/// How a lap from the fold ends.
#[derive(Debug, Clone, Copy, PartialEq)]
enum LapClass {
    /// Passes Σ without a second contact.
    Miss,
    /// Crosses Σ outside the sliding strip.
    Cross,
    /// Slides and leaves at the fold of the other field.
    OtherFold,
    Failed,
    /// Slides back to the starting fold; carries the phase mismatch.
    Closing(f64),
}

impl LapClass {
    fn same_kind(self, other: Self) -> bool {
        std::mem::discriminant(&self) == std::mem::discriminant(&other)
    }
}

/// Evaluation budget shared by all boundary refinements of one scan.
const REFINE_BUDGET: usize = 1500;

fn refine_boundary<C: Fn(f64) -> LapClass>(
    classify: &C,
    a: (f64, LapClass),
    b: (f64, LapClass),
    depth: usize,
    out: &mut Vec<(f64, LapClass)>,
) {
    if depth == 0 || a.1.same_kind(b.1) || out.len() >= REFINE_BUDGET {
        return;
    }
    let t = 0.5 * (a.0 + b.0);
    let mid = (t, classify(t));
    out.push(mid);
    refine_boundary(classify, a, mid, depth - 1, out);
    refine_boundary(classify, mid, b, depth - 1, out);
}

struct Lap {
    trajectory: Trajectory,
    exit_time: f64,
    exit_x: f64,
    entry_time: f64,
    entry_x: f64,
}

/// Locates the sliding cycle predicted at θ*: orbits leave the fold of the
/// governing side at phase θ (forward from the `X-` fold for `Σs`, backward
/// from the `X+` fold for `Σe`), cross Σ once, land in the sliding strip and
/// slide back to the same fold. The phase θ at which this lap takes exactly
/// `2σ` is found by a scan and Brent's method.
pub fn verify_sliding_cycle(
    model: &FilippovModel,
    data: &AnnulusData,
    theta_star: f64,
    opts: &FlowOptions,
) -> Result<SlidingCycle, VerifyError> {
    let eps = model.epsilon;
    let tf = classify_twofold(model, data, theta_star)?;
    let (s, fold_side, start_mode, expected) = match tf.outcome {
        TwoFoldOutcome::SlidingOnSigmaS => (1.0, Side::Minus, Mode::Below, RegionKind::Sliding),
        TwoFoldOutcome::SlidingOnSigmaE => (-1.0, Side::Plus, Mode::Above, RegionKind::Escaping),
        outcome => {
            return Err(VerifyError::NotSliding {
                theta: theta_star,
                outcome,
            })
        }
    };
    let tau_star = tf.tau_star.expect("sliding classifications carry τ*");
    let period = model.period();
    let x_v = data.x_v();
    let lap_opts = FlowOptions {
        initial_mode: Some(start_mode),
        ..*opts
    };

    let lap = |theta: f64| -> Result<Lap, LapClass> {
        let x0 = fold_abscissa(model, fold_side, theta, x_v).map_err(|_| LapClass::Failed)?;
        let traj = flow_filippov_until(
            model,
            theta,
            Vec2::new(x0, 0.0),
            s * 1.5 * period,
            &lap_opts,
            |e| e.kind == EventKind::ExitSlidingAtFold,
        )
        .map_err(|_| LapClass::Failed)?;
        let kinds: Vec<EventKind> = traj.events.iter().map(|e| e.kind).collect();
        match kinds.get(1) {
            None => return Err(LapClass::Miss),
            Some(EventKind::EnterSliding) => {}
            Some(_) => return Err(LapClass::Cross),
        }
        if !traj.stopped
            || kinds
                != [
                    EventKind::CrossSigma,
                    EventKind::EnterSliding,
                    EventKind::ExitSlidingAtFold,
                ]
        {
            return Err(LapClass::Failed);
        }
        let (entry, exit) = (traj.events[1], traj.events[2]);
        if exit.to != start_mode {
            return Err(LapClass::OtherFold);
        }
        Ok(Lap {
            exit_time: exit.time,
            exit_x: exit.abscissa,
            entry_time: entry.time,
            entry_x: entry.abscissa,
            trajectory: traj,
        })
    };
    let classify = |theta: f64| match lap(theta) {
        Ok(l) => LapClass::Closing(s * (l.exit_time - theta) - period),
        Err(c) => c,
    };

    // Coarse scan, then bisection wherever neighbouring laps end differently:
    // the closing window can be much narrower than the scan spacing.
    let n = 80;
    let mut samples: Vec<(f64, LapClass)> = (0..=n)
        .map(|k| {
            let t = theta_star + eps * (-4.0 + 8.0 * k as f64 / n as f64);
            (t, classify(t))
        })
        .collect();
    let mut extra = Vec::new();
    for w in samples.windows(2) {
        refine_boundary(&classify, w[0], w[1], 48, &mut extra);
    }
    samples.extend(extra);
    samples.sort_by(|a, b| a.0.total_cmp(&b.0));
    if !samples
        .iter()
        .any(|(_, c)| matches!(c, LapClass::Closing(_)))
    {
        return Err(VerifyError::NoSlidingSegment {
            theta: theta_star,
            epsilon: eps,
        });
    }
    let mismatch = |theta: f64| match classify(theta) {
        LapClass::Closing(d) => d,
        _ => f64::NAN,
    };
    let mut best: Option<f64> = None;
    for w in samples.windows(2) {
        let (LapClass::Closing(a), LapClass::Closing(b)) = (w[0].1, w[1].1) else {
            continue;
        };
        if a.signum() == b.signum() {
            continue;
        }
        if let Some(root) = brent(mismatch, w[0].0, w[1].0, 1e-14, 200) {
            if best.is_none_or(|r: f64| (root - theta_star).abs() < (r - theta_star).abs()) {
                best = Some(root);
            }
        }
    }
    let theta_c = best.ok_or(VerifyError::NoClosure {
        theta: theta_star,
        epsilon: eps,
    })?;
    let l = lap(theta_c).map_err(|_| VerifyError::NoClosure {
        theta: theta_star,
        epsilon: eps,
    })?;
    let x_c = l.trajectory.segments[0].start().x;
    let dphase = s * (l.exit_time - theta_c) - period;
    let closure_residual = dphase.hypot(l.exit_x - x_c);
    let sliding_time = (l.exit_time - l.entry_time).abs();
    let tau_eps = -sliding_time / eps;
    let closure_mismatch = eps * (tau_eps - tau_star).abs();
    let segment_regions: Vec<RegionKind> = l
        .trajectory
        .sliding_segments()
        .map(|seg| {
            let tm = 0.5 * (seg.t_start() + seg.t_end());
            model.classify_point(tm, l.trajectory.eval(tm).x)
        })
        .collect();
    let regions_consistent = segment_regions.iter().all(|r| *r == expected);
    Ok(SlidingCycle {
        report: SlidingCycleReport {
            epsilon: eps,
            theta_star,
            outcome: tf.outcome,
            orientation: tf.orientation,
            theta_cycle: theta_c,
            x_cycle: x_c,
            entry_theta: l.entry_time,
            entry_x: l.entry_x,
            closure_residual,
            sliding_time,
            tau_eps,
            tau_star,
            closure_mismatch,
            c_fit: closure_mismatch / (eps * eps),
            distance_to_prediction: wrap(theta_c - theta_star, period).hypot(x_c - x_v),
            sliding_segments: segment_regions.len(),
            segment_regions,
            regions_consistent,
        },
        trajectory: l.trajectory,
    })
}
