//! Smooth and variational flows, switching-line events and Filippov
//! trajectories.

pub mod dopri;
mod hybrid;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use dopri::{DenseSolution, DenseStep, StepControl};
pub use hybrid::{flow_filippov, flow_filippov_until, Event, EventKind, Mode, Segment, Trajectory};

use crate::fields::{FieldError, SmoothField};
use crate::roots::brent;
use crate::{Mat2, Vec2};

/// Default absolute tolerance on `|y|` at a located switching event.
pub const TOL_EVENT: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FlowError {
    #[error("step size underflow at t = {t} (h = {h:e})")]
    StepSizeUnderflow { t: f64, h: f64 },
    #[error("trajectory left the bounding box at t = {t}: ({x}, {y})")]
    DomainEscape { t: f64, x: f64, y: f64 },
    #[error("step budget exhausted at t = {t} after {steps} steps")]
    TooManySteps { t: f64, steps: usize },
    #[error("integration duration is not finite")]
    NonFiniteDuration,
    #[error("no crossing of y = 0 within horizon {horizon}")]
    NoHitWithinHorizon { horizon: f64 },
    #[error("grazing hit at t = {t}, x = {x}: normal velocity {normal:e}")]
    GrazingHit { t: f64, x: f64, normal: f64 },
    #[error("forward flow reached the escaping region at t = {t}, x = {x}")]
    NonDeterministicEscape { t: f64, x: f64 },
    #[error("event budget of {limit} exhausted at t = {t}")]
    TooManyEvents { t: f64, limit: usize },
    #[error("event at t = {t} could not be refined below |y| = {residual:e}")]
    EventRefinement { t: f64, residual: f64 },
    #[error(transparent)]
    Field(#[from] FieldError),
}

/// Axis-aligned bounding box for the phase variables.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl BBox {
    pub fn square(half_width: f64) -> Self {
        Self {
            x_min: -half_width,
            x_max: half_width,
            y_min: -half_width,
            y_max: half_width,
        }
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.x_min && x <= self.x_max && y >= self.y_min && y <= self.y_max
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    Forward,
    Backward,
}

impl Direction {
    pub fn sign(self) -> f64 {
        match self {
            Direction::Forward => 1.0,
            Direction::Backward => -1.0,
        }
    }
}

/// Integration and event settings shared by all flows.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowOptions {
    pub rtol: f64,
    pub atol: f64,
    pub h_max: f64,
    pub max_steps: usize,
    pub bbox: Option<BBox>,
    pub tol_event: f64,
    pub tol_tangency: f64,
    /// Longest time searched by [`hit_switching`].
    pub horizon: f64,
    /// Abort a Filippov trajectory after this many events.
    pub max_events: usize,
    /// Mode to start in when the initial point lies on the switching line.
    /// Chosen from the local region type if `None`.
    pub initial_mode: Option<Mode>,
}

impl Default for FlowOptions {
    fn default() -> Self {
        Self {
            rtol: 1e-11,
            atol: 1e-12,
            h_max: f64::INFINITY,
            max_steps: 1_000_000,
            bbox: None,
            tol_event: TOL_EVENT,
            tol_tangency: crate::fields::TOL_TANGENCY,
            horizon: 200.0,
            max_events: 10_000,
            initial_mode: None,
        }
    }
}

impl FlowOptions {
    pub fn with_tol(tol: f64) -> Self {
        Self {
            rtol: tol,
            atol: tol,
            ..Self::default()
        }
    }

    pub(crate) fn step_control(&self) -> StepControl {
        StepControl {
            rtol: self.rtol,
            atol: self.atol,
            h_max: self.h_max,
            h_init: None,
            max_steps: self.max_steps,
            bbox: self.bbox,
        }
    }
}

#[inline]
pub(crate) fn to_vec(a: [f64; 2]) -> Vec2 {
    Vec2::new(a[0], a[1])
}

/// Integrates `z' = field(t, z)` from `(t0, z0)` for `duration` (either sign).
pub fn flow_smooth(
    field: &SmoothField,
    t0: f64,
    z0: Vec2,
    duration: f64,
    opts: &FlowOptions,
) -> Result<DenseSolution<2>, FlowError> {
    let f = |t: f64, y: &[f64; 2]| {
        let v = field.eval(t, to_vec(*y));
        [v.x, v.y]
    };
    dopri::integrate(f, t0, [z0.x, z0.y], duration, opts.step_control())
}

/// Orbit together with its fundamental matrix `Y(t)`, `Y(0) = I`.
#[derive(Debug, Clone)]
pub struct VariationalSolution {
    pub dense: DenseSolution<6>,
}

impl VariationalSolution {
    pub fn state(&self, t: f64) -> Vec2 {
        let s = self.dense.eval(t);
        Vec2::new(s[0], s[1])
    }

    pub fn fundamental(&self, t: f64) -> Mat2 {
        let s = self.dense.eval(t);
        Mat2::new(s[2], s[4], s[3], s[5])
    }

    pub fn state_and_fundamental(&self, t: f64) -> (Vec2, Mat2) {
        let s = self.dense.eval(t);
        (Vec2::new(s[0], s[1]), Mat2::new(s[2], s[4], s[3], s[5]))
    }

    pub fn duration(&self) -> f64 {
        self.dense.duration()
    }
}

/// Co-integrates the orbit of an autonomous field through `z0` and its
/// variational equation `Y' = DF(Γ) Y`.
pub fn flow_variational(
    field: &SmoothField,
    z0: Vec2,
    duration: f64,
    opts: &FlowOptions,
) -> Result<VariationalSolution, FlowError> {
    let f = |t: f64, s: &[f64; 6]| {
        let z = Vec2::new(s[0], s[1]);
        let v = field.eval(t, z);
        let j = field.jac(t, z);
        let y = Mat2::new(s[2], s[4], s[3], s[5]);
        let dy = j * y;
        [v.x, v.y, dy[(0, 0)], dy[(1, 0)], dy[(0, 1)], dy[(1, 1)]]
    };
    let dense = dopri::integrate(
        f,
        0.0,
        [z0.x, z0.y, 1.0, 0.0, 0.0, 1.0],
        duration,
        opts.step_control(),
    )?;
    Ok(VariationalSolution { dense })
}

/// A transverse arrival on `y = 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hit {
    pub t: f64,
    /// Arrival point with `y` snapped to zero.
    pub point: Vec2,
    /// `|y|` of the refined state before snapping.
    pub residual: f64,
    /// Normal velocity `F2` at the arrival point.
    pub normal_velocity: f64,
}

/// Sign of `y` the trajectory has on departure from `(t0, z0)`, looking in
/// direction `dir`; `None` if it stays tangent to second order.
pub(crate) fn departure_side(
    field: &SmoothField,
    t0: f64,
    z0: Vec2,
    dir: f64,
    opts: &FlowOptions,
) -> Option<f64> {
    if z0.y.abs() > opts.tol_event {
        return Some(z0.y.signum());
    }
    let v = field.eval(t0, z0);
    if v.y.abs() > opts.tol_tangency {
        return Some((dir * v.y).signum());
    }
    let j = field.jac(t0, z0);
    let lie2 = j[(1, 0)] * v.x + j[(1, 1)] * v.y + field.dt(t0, z0).y;
    (lie2.abs() > opts.tol_tangency).then(|| lie2.signum())
}

/// Watches sampled values of an event function `g` along dense steps and
/// reports the first bracket in which `g` turns negative after having been
/// positive ("armed").
pub(crate) struct SignWatch {
    armed: bool,
    arm_level: f64,
    prev: Option<(f64, f64)>,
}

impl SignWatch {
    pub(crate) fn new(armed: bool, arm_level: f64) -> Self {
        Self {
            armed,
            arm_level,
            prev: None,
        }
    }

    /// Feeds samples in time order; returns a bracket `(ta, tb)` with
    /// `g(ta) >= 0 > g(tb)` once one is found.
    pub(crate) fn feed(&mut self, t: f64, g: f64) -> Option<(f64, f64)> {
        let out = match self.prev {
            Some((tp, gp)) if self.armed && gp >= 0.0 && g < 0.0 => Some((tp, t)),
            _ => None,
        };
        if g > self.arm_level {
            self.armed = true;
        }
        self.prev = Some((t, g));
        out
    }

    /// Scans one step at the sample times. Besides sign changes at the
    /// samples it catches shallow dips between two samples: where `gdot`
    /// (the rate of `g` along the integration direction) turns from
    /// negative to positive, the minimum is located and checked.
    pub(crate) fn scan<G, D>(
        &mut self,
        t0: f64,
        t1: f64,
        first: bool,
        g: G,
        gdot: D,
    ) -> Option<(f64, f64)>
    where
        G: Fn(f64) -> f64,
        D: Fn(f64) -> f64,
    {
        let mut dprev = gdot(t0);
        for t in sample_times(t0, t1, first) {
            let armed = self.armed;
            let tp = self.prev.map_or(t0, |p| p.0);
            let gt = g(t);
            if let Some(b) = self.feed(t, gt) {
                return Some(b);
            }
            let d = gdot(t);
            if armed && dprev < 0.0 && d > 0.0 {
                if let Some(tm) = brent(&gdot, tp, t, 1e-15 * (1.0 + tp.abs()), 200) {
                    // Dips within the event tolerance are tangencies.
                    if g(tm) < -self.arm_level {
                        return Some((tp, tm));
                    }
                }
            }
            dprev = d;
        }
        None
    }
}

/// Sample times inside a step; denser on the first step where the departure
/// from the switching line can be short.
pub(crate) fn sample_times(t0: f64, t1: f64, first: bool) -> impl Iterator<Item = f64> {
    let n = if first { 64 } else { 8 };
    (1..=n).map(move |i| {
        if i == n {
            t1
        } else {
            t0 + (t1 - t0) * i as f64 / n as f64
        }
    })
}

/// Refines an event inside a bracket of one accepted step by root finding on
/// freshly recomputed Runge–Kutta states from the step start.
pub(crate) fn refine_event<F, G>(
    f: &F,
    step: &DenseStep<2>,
    bracket: (f64, f64),
    g: G,
) -> (f64, [f64; 2])
where
    F: Fn(f64, &[f64; 2]) -> [f64; 2],
    G: Fn(f64, &[f64; 2]) -> f64,
{
    let phi = |t: f64| g(t, &dopri::restep(f, step, t));
    let (a, b) = bracket;
    let t = match brent(&phi, a, b, 1e-15 * (1.0 + a.abs()), 200) {
        Some(t) => t,
        // The recomputed states may disagree in sign with the interpolant
        // at the bracket ends; fall back to the interpolant.
        None => brent(|t| g(t, &step.eval(t)), a, b, 1e-15 * (1.0 + a.abs()), 200).unwrap_or(b),
    };
    (t, dopri::restep(f, step, t))
}

/// First transverse crossing of `y = 0` by the flow of `field` from
/// `(t0, z0)`, searching forward or backward in time up to `opts.horizon`.
///
/// If `z0` is on the switching line the departure side is read from the
/// field, so the initial contact is not reported.
pub fn hit_switching(
    field: &SmoothField,
    t0: f64,
    z0: Vec2,
    direction: Direction,
    opts: &FlowOptions,
) -> Result<Hit, FlowError> {
    let dir = direction.sign();
    let side = match departure_side(field, t0, z0, dir, opts) {
        Some(s) => s,
        None => {
            return Err(FlowError::GrazingHit {
                t: t0,
                x: z0.x,
                normal: field.eval(t0, z0).y,
            });
        }
    };
    let f = |t: f64, y: &[f64; 2]| {
        let v = field.eval(t, to_vec(*y));
        [v.x, v.y]
    };
    let mut ctl = opts.step_control();
    if z0.y.abs() <= opts.tol_event {
        // Keep the first step well inside a possibly short excursion.
        let v = field.eval(t0, z0);
        let j = field.jac(t0, z0);
        let lie2 = (j[(1, 0)] * v.x + j[(1, 1)] * v.y + field.dt(t0, z0).y).abs();
        if lie2 > 0.0 && v.y.abs() > opts.tol_tangency {
            ctl.h_init = Some((0.25 * v.y.abs() / lie2).clamp(1e-10, 1.0));
        }
    }
    let mut st = dopri::Stepper::new(f, t0, [z0.x, z0.y], dir * opts.horizon, ctl);
    let mut watch = SignWatch::new(z0.y.abs() > opts.tol_event, opts.tol_event);
    watch.feed(t0, side * z0.y);
    let mut first = true;
    while let Some(step) = st.next_step()? {
        let found = watch.scan(
            step.t0,
            step.t1(),
            first,
            |t| side * step.eval(t)[1],
            |t| dir * side * f(t, &step.eval(t))[1],
        );
        first = false;
        if let Some(bracket) = found {
            let (t, y) = refine_event(st.field(), &step, bracket, |_, y| side * y[1]);
            let residual = y[1].abs();
            if residual > opts.tol_event {
                return Err(FlowError::EventRefinement { t, residual });
            }
            let point = Vec2::new(y[0], 0.0);
            let normal = field.eval(t, point).y;
            if normal.abs() <= opts.tol_tangency {
                return Err(FlowError::GrazingHit {
                    t,
                    x: point.x,
                    normal,
                });
            }
            return Ok(Hit {
                t,
                point,
                residual,
                normal_velocity: normal,
            });
        }
    }
    Err(FlowError::NoHitWithinHorizon {
        horizon: opts.horizon,
    })
}
