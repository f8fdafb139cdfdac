//! Filippov trajectories: smooth arcs on either side of `y = 0` glued
//! together with sliding arcs along it.

use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use super::dopri::{self, DenseSolution, Stepper};
use super::{refine_event, sample_times, to_vec, FlowError, FlowOptions, SignWatch};
use crate::fields::{second_lie_derivative, sliding_x_velocity, FilippovModel, Side};
use crate::Vec2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Mode {
    Above,
    Below,
    Sliding,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Above => "above",
            Mode::Below => "below",
            Mode::Sliding => "sliding",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EventKind {
    CrossSigma,
    EnterSliding,
    ExitSlidingAtFold,
    TangencyHit,
}

impl EventKind {
    /// Integer code used in the `event_flag` CSV column (0 means no event).
    pub fn code(self) -> u8 {
        match self {
            EventKind::CrossSigma => 1,
            EventKind::EnterSliding => 2,
            EventKind::ExitSlidingAtFold => 3,
            EventKind::TangencyHit => 4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Event {
    pub time: f64,
    pub abscissa: f64,
    pub kind: EventKind,
    pub from: Mode,
    pub to: Mode,
    /// For fold exits, the side whose field is tangent.
    pub fold_side: Option<Side>,
}

#[derive(Debug, Clone)]
pub struct Segment {
    pub mode: Mode,
    pub dense: DenseSolution<2>,
}

impl Segment {
    pub fn t_start(&self) -> f64 {
        self.dense.t0
    }

    pub fn t_end(&self) -> f64 {
        self.dense.t1
    }

    pub fn start(&self) -> Vec2 {
        to_vec(self.dense.initial())
    }

    pub fn end(&self) -> Vec2 {
        to_vec(self.dense.last())
    }
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub segments: Vec<Segment>,
    pub events: Vec<Event>,
    /// `+1` for forward and `-1` for backward integration.
    pub direction: f64,
    /// True if the stop predicate ended the integration early.
    pub stopped: bool,
}

impl Trajectory {
    pub fn final_time(&self) -> f64 {
        self.segments.last().map_or(0.0, Segment::t_end)
    }

    pub fn final_state(&self) -> Vec2 {
        self.segments.last().map_or_else(Vec2::zeros, Segment::end)
    }

    pub fn initial_time(&self) -> f64 {
        self.segments.first().map_or(0.0, Segment::t_start)
    }

    /// State at time `t` inside the integrated span.
    pub fn eval(&self, t: f64) -> Vec2 {
        let s = self.direction;
        let seg = self
            .segments
            .iter()
            .find(|seg| s * (t - seg.t_end()) <= 0.0)
            .or(self.segments.last());
        seg.map_or_else(Vec2::zeros, |seg| to_vec(seg.dense.eval(t)))
    }

    pub fn sliding_segments(&self) -> impl Iterator<Item = &Segment> {
        self.segments.iter().filter(|s| s.mode == Mode::Sliding)
    }

    /// Writes `t,x,y,mode,event_flag` rows: every step end of every segment
    /// plus `substeps - 1` interior points per step.
    pub fn write_csv<W: Write>(&self, mut w: W, substeps: usize) -> io::Result<()> {
        writeln!(w, "t,x,y,mode,event_flag")?;
        let substeps = substeps.max(1);
        for (k, seg) in self.segments.iter().enumerate() {
            let z = seg.start();
            let flag = if k == 0 {
                0
            } else {
                self.events.get(k - 1).map_or(0, |e| e.kind.code())
            };
            writeln!(
                w,
                "{:.15e},{:.15e},{:.15e},{},{}",
                seg.t_start(),
                z.x,
                z.y,
                seg.mode.name(),
                flag
            )?;
            for step in seg.dense.steps() {
                for i in 1..=substeps {
                    let t = if i == substeps {
                        step.t1()
                    } else {
                        step.t0 + step.h * i as f64 / substeps as f64
                    };
                    let z = step.eval(t);
                    writeln!(
                        w,
                        "{:.15e},{:.15e},{:.15e},{},0",
                        t,
                        z[0],
                        z[1],
                        seg.mode.name()
                    )?;
                }
            }
        }
        Ok(())
    }
}

/// Integrates the Filippov system for `duration` (negative for backward time).
pub fn flow_filippov(
    model: &FilippovModel,
    t0: f64,
    z0: Vec2,
    duration: f64,
    opts: &FlowOptions,
) -> Result<Trajectory, FlowError> {
    flow_filippov_until(model, t0, z0, duration, opts, |_| false)
}

/// As [`flow_filippov`], stopping right after the first event for which
/// `stop` returns true.
pub fn flow_filippov_until<P>(
    model: &FilippovModel,
    t0: f64,
    z0: Vec2,
    duration: f64,
    opts: &FlowOptions,
    mut stop: P,
) -> Result<Trajectory, FlowError>
where
    P: FnMut(&Event) -> bool,
{
    if !duration.is_finite() {
        return Err(FlowError::NonFiniteDuration);
    }
    let s = if duration < 0.0 { -1.0 } else { 1.0 };
    let t_end = t0 + duration;
    let mut traj = Trajectory {
        segments: Vec::new(),
        events: Vec::new(),
        direction: s,
        stopped: false,
    };

    let mut mode = initial_mode(model, t0, z0, s, opts)?;
    let mut t = t0;
    let mut z = if mode == Mode::Sliding {
        Vec2::new(z0.x, 0.0)
    } else {
        z0
    };
    if duration == 0.0 {
        traj.segments.push(Segment {
            mode,
            dense: DenseSolution::new(t0, [z.x, z.y]),
        });
        return Ok(traj);
    }
    loop {
        let (dense, event) = match mode {
            Mode::Above => smooth_segment(model, Side::Plus, t, z, t_end - t, s, opts)?,
            Mode::Below => smooth_segment(model, Side::Minus, t, z, t_end - t, s, opts)?,
            Mode::Sliding => sliding_segment(model, t, z.x, t_end - t, s, opts)?,
        };
        traj.segments.push(Segment { mode, dense });
        let Some(ev) = event else { break };
        traj.events.push(ev);
        if traj.events.len() > opts.max_events {
            return Err(FlowError::TooManyEvents {
                t: ev.time,
                limit: opts.max_events,
            });
        }
        if stop(&ev) {
            traj.stopped = true;
            break;
        }
        t = ev.time;
        z = Vec2::new(ev.abscissa, 0.0);
        mode = ev.to;
        if s * (t_end - t) <= 0.0 {
            traj.segments.push(Segment {
                mode,
                dense: DenseSolution::new(t, [z.x, z.y]),
            });
            break;
        }
    }
    Ok(traj)
}

/// Mode at the start of a trajectory. Off the switching line it is the side
/// of `z0`; on it, the region type in the direction of integration decides.
fn initial_mode(
    model: &FilippovModel,
    t0: f64,
    z0: Vec2,
    s: f64,
    opts: &FlowOptions,
) -> Result<Mode, FlowError> {
    if let Some(m) = opts.initial_mode {
        return Ok(m);
    }
    if z0.y > opts.tol_event {
        return Ok(Mode::Above);
    }
    if z0.y < -opts.tol_event {
        return Ok(Mode::Below);
    }
    let tol = opts.tol_tangency;
    let sa = s * model.normal_component(Side::Plus, t0, z0.x);
    let sb = s * model.normal_component(Side::Minus, t0, z0.x);
    let mode = match (sa.abs() <= tol, sb.abs() <= tol) {
        // Two-fold: follow the lower field.
        (true, true) => Mode::Below,
        (true, false) => {
            if sb < 0.0 {
                Mode::Below
            } else if second_lie_derivative(model, Side::Plus, t0, z0.x) > 0.0 {
                Mode::Above
            } else {
                Mode::Sliding
            }
        }
        (false, true) => {
            if sa > 0.0 {
                Mode::Above
            } else if second_lie_derivative(model, Side::Minus, t0, z0.x) < 0.0 {
                Mode::Below
            } else {
                Mode::Sliding
            }
        }
        (false, false) => {
            if sa > 0.0 && sb > 0.0 {
                Mode::Above
            } else if sa < 0.0 && sb < 0.0 {
                Mode::Below
            } else if sa < 0.0 {
                Mode::Sliding
            } else {
                return Err(FlowError::NonDeterministicEscape { t: t0, x: z0.x });
            }
        }
    };
    Ok(mode)
}

/// Where an arc arriving on `y = 0` from `from_side` continues.
fn arrival(
    model: &FilippovModel,
    t: f64,
    x: f64,
    from_side: Side,
    s: f64,
    tol: f64,
) -> (Mode, EventKind) {
    let sa = s * model.normal_component(Side::Plus, t, x);
    let sb = s * model.normal_component(Side::Minus, t, x);
    match from_side {
        Side::Plus => {
            if sb < -tol {
                (Mode::Below, EventKind::CrossSigma)
            } else if sb > tol {
                (Mode::Sliding, EventKind::EnterSliding)
            } else if second_lie_derivative(model, Side::Minus, t, x) < 0.0 {
                (Mode::Below, EventKind::TangencyHit)
            } else {
                (Mode::Sliding, EventKind::TangencyHit)
            }
        }
        Side::Minus => {
            if sa > tol {
                (Mode::Above, EventKind::CrossSigma)
            } else if sa < -tol {
                (Mode::Sliding, EventKind::EnterSliding)
            } else if second_lie_derivative(model, Side::Plus, t, x) > 0.0 {
                (Mode::Above, EventKind::TangencyHit)
            } else {
                (Mode::Sliding, EventKind::TangencyHit)
            }
        }
    }
}

fn smooth_segment(
    model: &FilippovModel,
    side: Side,
    t0: f64,
    z0: Vec2,
    remaining: f64,
    s: f64,
    opts: &FlowOptions,
) -> Result<(DenseSolution<2>, Option<Event>), FlowError> {
    let sign = match side {
        Side::Plus => 1.0,
        Side::Minus => -1.0,
    };
    let f = |t: f64, y: &[f64; 2]| {
        let v = model.field(side, t, to_vec(*y));
        [v.x, v.y]
    };
    let mut ctl = opts.step_control();
    if z0.y.abs() <= opts.tol_event {
        let v = model.field(side, t0, z0);
        let j = model.jacobian(side, t0, z0);
        let lie2 = (j[(1, 0)] * v.x + j[(1, 1)] * v.y + model.field_dt(side, t0, z0).y).abs();
        if lie2 > 0.0 && v.y.abs() > opts.tol_tangency {
            ctl.h_init = Some((0.25 * v.y.abs() / lie2).clamp(1e-10, 1.0));
        }
    }
    let mut st = Stepper::new(f, t0, [z0.x, z0.y], remaining, ctl);
    let mut dense = DenseSolution::new(t0, [z0.x, z0.y]);
    let mut watch = SignWatch::new(sign * z0.y > opts.tol_event, opts.tol_event);
    watch.feed(t0, sign * z0.y);
    let mut first = true;
    while let Some(step) = st.next_step()? {
        let bracket = watch.scan(
            step.t0,
            step.t1(),
            first,
            |t| sign * step.eval(t)[1],
            |t| s * sign * f(t, &step.eval(t))[1],
        );
        first = false;
        let Some(bracket) = bracket else {
            dense.push(step);
            continue;
        };
        let (te, ye) = refine_event(st.field(), &step, bracket, |_, y| sign * y[1]);
        if ye[1].abs() > opts.tol_event {
            return Err(FlowError::EventRefinement {
                t: te,
                residual: ye[1].abs(),
            });
        }
        let mut last = dopri::shortened(st.field(), &step, te);
        last = snap_end(last, ye[0]);
        dense.push(last);
        let (to, kind) = arrival(model, te, ye[0], side, s, opts.tol_tangency);
        let from = if side == Side::Plus {
            Mode::Above
        } else {
            Mode::Below
        };
        let fold_side = (kind == EventKind::TangencyHit).then_some(side.other());
        return Ok((
            dense,
            Some(Event {
                time: te,
                abscissa: ye[0],
                kind,
                from,
                to,
                fold_side,
            }),
        ));
    }
    Ok((dense, None))
}

/// Replaces the end state of a shortened step by the refined event point on
/// `y = 0`, so consecutive segments join exactly.
fn snap_end(step: dopri::DenseStep<2>, x: f64) -> dopri::DenseStep<2> {
    step.with_end([x, 0.0])
}

fn sliding_segment(
    model: &FilippovModel,
    t0: f64,
    x0: f64,
    remaining: f64,
    s: f64,
    opts: &FlowOptions,
) -> Result<(DenseSolution<2>, Option<Event>), FlowError> {
    let f = |t: f64, y: &[f64; 2]| {
        let z = Vec2::new(y[0], 0.0);
        [
            sliding_x_velocity(
                model.field(Side::Plus, t, z),
                model.field(Side::Minus, t, z),
            ),
            0.0,
        ]
    };
    // Positive inside the attracting (in direction s) sliding region.
    let margins = |t: f64, x: f64| {
        let a = model.normal_component(Side::Plus, t, x);
        let b = model.normal_component(Side::Minus, t, x);
        (-s * a, s * b)
    };
    let g = |t: f64, y: &[f64; 2]| {
        let (ma, mb) = margins(t, y[0]);
        ma.min(mb)
    };
    let mut st = Stepper::new(f, t0, [x0, 0.0], remaining, opts.step_control());
    let mut dense = DenseSolution::new(t0, [x0, 0.0]);
    let g0 = g(t0, &[x0, 0.0]);
    let mut watch = SignWatch::new(g0 > 0.0, 0.0);
    watch.feed(t0, g0);
    let mut first = true;
    while let Some(step) = st.next_step()? {
        let bracket = sample_times(step.t0, step.t1(), first)
            .find_map(|t| watch.feed(t, g(t, &step.eval(t))));
        first = false;
        let Some(bracket) = bracket else {
            dense.push(step);
            continue;
        };
        let (te, ye) = refine_event(st.field(), &step, bracket, g);
        dense.push(dopri::shortened(st.field(), &step, te));
        let (ma, mb) = margins(te, ye[0]);
        let (to, fold_side) = if ma <= mb {
            (Mode::Above, Side::Plus)
        } else {
            (Mode::Below, Side::Minus)
        };
        let ev = Event {
            time: te,
            abscissa: ye[0],
            kind: EventKind::ExitSlidingAtFold,
            from: Mode::Sliding,
            to,
            fold_side: Some(fold_side),
        };
        return Ok((dense, Some(ev)));
    }
    Ok((dense, None))
}
