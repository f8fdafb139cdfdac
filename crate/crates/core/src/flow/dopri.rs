//! Dormand–Prince 5(4) with Hairer's fourth-order continuous extension.

use super::{BBox, FlowError};

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;

const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;

const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

/// Step-size control settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepControl {
    pub rtol: f64,
    pub atol: f64,
    /// Largest admissible step magnitude.
    pub h_max: f64,
    /// Magnitude of the first trial step; chosen automatically if `None`.
    pub h_init: Option<f64>,
    pub max_steps: usize,
    pub bbox: Option<BBox>,
}

impl Default for StepControl {
    fn default() -> Self {
        Self {
            rtol: 1e-11,
            atol: 1e-12,
            h_max: f64::INFINITY,
            h_init: None,
            max_steps: 1_000_000,
            bbox: None,
        }
    }
}

/// One accepted step with its continuous extension.
#[derive(Debug, Clone)]
pub struct DenseStep<const N: usize> {
    pub t0: f64,
    pub h: f64,
    /// Scaled local error estimate (≤ 1 for accepted steps).
    pub err: f64,
    y1: [f64; N],
    k1: [f64; N],
    r: [[f64; N]; 5],
}

impl<const N: usize> DenseStep<N> {
    pub fn t1(&self) -> f64 {
        self.t0 + self.h
    }

    pub fn start(&self) -> [f64; N] {
        self.r[0]
    }

    pub fn end(&self) -> [f64; N] {
        self.y1
    }

    /// Moves the end state to `y1`, shifting the interpolant by the same
    /// linear correction so it stays continuous.
    pub fn with_end(mut self, y1: [f64; N]) -> Self {
        for ((r, new), old) in self.r[1].iter_mut().zip(&y1).zip(&self.y1) {
            *r += new - old;
        }
        self.y1 = y1;
        self
    }

    /// Derivative at the step start.
    pub fn start_slope(&self) -> [f64; N] {
        self.k1
    }

    /// Dense output at `t`; exact at both step ends.
    pub fn eval(&self, t: f64) -> [f64; N] {
        if t == self.t0 {
            return self.r[0];
        }
        if t == self.t1() {
            return self.y1;
        }
        let th = (t - self.t0) / self.h;
        let th1 = 1.0 - th;
        let r = &self.r;
        std::array::from_fn(|i| {
            r[0][i] + th * (r[1][i] + th1 * (r[2][i] + th * (r[3][i] + th1 * r[4][i])))
        })
    }
}

/// Result of a single Runge–Kutta attempt.
struct Attempt<const N: usize> {
    y1: [f64; N],
    k: [[f64; N]; 7],
    err: [f64; N],
}

#[inline]
fn comb<const N: usize>(y: &[f64; N], h: f64, terms: &[(f64, &[f64; N])]) -> [f64; N] {
    std::array::from_fn(|i| y[i] + h * terms.iter().map(|(c, k)| c * k[i]).sum::<f64>())
}

fn attempt<const N: usize, F>(f: &F, t: f64, y: &[f64; N], k1: &[f64; N], h: f64) -> Attempt<N>
where
    F: Fn(f64, &[f64; N]) -> [f64; N],
{
    let k2 = f(t + C2 * h, &comb(y, h, &[(A21, k1)]));
    let k3 = f(t + C3 * h, &comb(y, h, &[(A31, k1), (A32, &k2)]));
    let k4 = f(
        t + C4 * h,
        &comb(y, h, &[(A41, k1), (A42, &k2), (A43, &k3)]),
    );
    let k5 = f(
        t + C5 * h,
        &comb(y, h, &[(A51, k1), (A52, &k2), (A53, &k3), (A54, &k4)]),
    );
    let k6 = f(
        t + h,
        &comb(
            y,
            h,
            &[(A61, k1), (A62, &k2), (A63, &k3), (A64, &k4), (A65, &k5)],
        ),
    );
    let y1 = comb(
        y,
        h,
        &[(A71, k1), (A73, &k3), (A74, &k4), (A75, &k5), (A76, &k6)],
    );
    let k7 = f(t + h, &y1);
    let err = std::array::from_fn(|i| {
        h * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i])
    });
    Attempt {
        y1,
        k: [*k1, k2, k3, k4, k5, k6, k7],
        err,
    }
}

/// State after a single step of size `t - step.t0` from the start of `step`.
///
/// Used to refine event locations without relying on the interpolant.
pub fn restep<const N: usize, F>(f: &F, step: &DenseStep<N>, t: f64) -> [f64; N]
where
    F: Fn(f64, &[f64; N]) -> [f64; N],
{
    let h = t - step.t0;
    if h == 0.0 {
        return step.start();
    }
    attempt(f, step.t0, &step.start(), &step.k1, h).y1
}

fn scaled_rms<const N: usize>(
    v: &[f64; N],
    y0: &[f64; N],
    y1: &[f64; N],
    ctl: &StepControl,
) -> f64 {
    let s: f64 = (0..N)
        .map(|i| {
            let sc = ctl.atol + ctl.rtol * y0[i].abs().max(y1[i].abs());
            (v[i] / sc).powi(2)
        })
        .sum();
    (s / N as f64).sqrt()
}

/// Adaptive stepper that yields accepted steps one at a time, so callers can
/// watch for events between steps.
pub struct Stepper<const N: usize, F> {
    f: F,
    t: f64,
    y: [f64; N],
    k1: [f64; N],
    h: f64,
    t_end: f64,
    ctl: StepControl,
    steps: usize,
}

impl<const N: usize, F> Stepper<N, F>
where
    F: Fn(f64, &[f64; N]) -> [f64; N],
{
    pub fn new(f: F, t0: f64, y0: [f64; N], duration: f64, ctl: StepControl) -> Self {
        let k1 = f(t0, &y0);
        let dir = if duration < 0.0 { -1.0 } else { 1.0 };
        let h = match ctl.h_init {
            Some(h) => h.abs(),
            None => initial_step(&f, t0, &y0, &k1, dir, &ctl),
        }
        .min(ctl.h_max)
        .min(duration.abs());
        Self {
            f,
            t: t0,
            y: y0,
            k1,
            h: dir * h,
            t_end: t0 + duration,
            ctl,
            steps: 0,
        }
    }

    pub fn t(&self) -> f64 {
        self.t
    }

    pub fn y(&self) -> [f64; N] {
        self.y
    }

    pub fn field(&self) -> &F {
        &self.f
    }

    pub fn done(&self) -> bool {
        self.t == self.t_end
    }

    /// Advances by one accepted step, or returns `None` at the end of the span.
    pub fn next_step(&mut self) -> Result<Option<DenseStep<N>>, FlowError> {
        if self.done() {
            return Ok(None);
        }
        let mut rejected = false;
        loop {
            if self.steps >= self.ctl.max_steps {
                return Err(FlowError::TooManySteps {
                    t: self.t,
                    steps: self.steps,
                });
            }
            let remaining = self.t_end - self.t;
            let mut h = self.h;
            let last = h.abs() >= remaining.abs();
            if last {
                h = remaining;
            }
            let h_min = 16.0 * f64::EPSILON * self.t.abs().max(1.0);
            if h.abs() < h_min && !last {
                return Err(FlowError::StepSizeUnderflow { t: self.t, h });
            }
            self.steps += 1;
            let a = attempt(&self.f, self.t, &self.y, &self.k1, h);
            let finite = a.y1.iter().chain(a.k[6].iter()).all(|v| v.is_finite());
            let err = if finite {
                scaled_rms(&a.err, &self.y, &a.y1, &self.ctl)
            } else {
                f64::INFINITY
            };
            if err <= 1.0 {
                let t1 = if last { self.t_end } else { self.t + h };
                let step = make_dense(self.t, &self.y, h, err, &a);
                if let Some(b) = self.ctl.bbox {
                    if !b.contains(a.y1[0], a.y1[1]) {
                        return Err(FlowError::DomainEscape {
                            t: t1,
                            x: a.y1[0],
                            y: a.y1[1],
                        });
                    }
                }
                self.t = t1;
                self.y = a.y1;
                self.k1 = a.k[6];
                let mut fac = if err == 0.0 {
                    5.0
                } else {
                    (0.9 * err.powf(-0.2)).clamp(0.2, 5.0)
                };
                if rejected {
                    fac = fac.min(1.0);
                }
                let hn = (h.abs() * fac).min(self.ctl.h_max);
                // Keep the previous magnitude if the last step was truncated
                // to land on `t_end`.
                self.h = h.signum() * if last { hn.max(self.h.abs()) } else { hn };
                return Ok(Some(step));
            }
            rejected = true;
            let fac = if err.is_finite() {
                (0.9 * err.powf(-0.2)).clamp(0.1, 0.9)
            } else {
                0.1
            };
            self.h = h * fac;
            if self.h.abs() < h_min {
                return Err(FlowError::StepSizeUnderflow {
                    t: self.t,
                    h: self.h,
                });
            }
        }
    }
}

fn make_dense<const N: usize>(
    t0: f64,
    y0: &[f64; N],
    h: f64,
    err: f64,
    a: &Attempt<N>,
) -> DenseStep<N> {
    let k = &a.k;
    let mut r = [[0.0; N]; 5];
    for i in 0..N {
        let ydiff = a.y1[i] - y0[i];
        let bspl = h * k[0][i] - ydiff;
        r[0][i] = y0[i];
        r[1][i] = ydiff;
        r[2][i] = bspl;
        r[3][i] = ydiff - h * k[6][i] - bspl;
        r[4][i] = h
            * (D1 * k[0][i]
                + D3 * k[2][i]
                + D4 * k[3][i]
                + D5 * k[4][i]
                + D6 * k[5][i]
                + D7 * k[6][i]);
    }
    DenseStep {
        t0,
        h,
        err,
        y1: a.y1,
        k1: k[0],
        r,
    }
}

/// Recomputes `step` with its end moved to `t`, keeping a dense extension.
pub fn shortened<const N: usize, F>(f: &F, step: &DenseStep<N>, t: f64) -> DenseStep<N>
where
    F: Fn(f64, &[f64; N]) -> [f64; N],
{
    let h = t - step.t0;
    let a = attempt(f, step.t0, &step.start(), &step.k1, h);
    make_dense(step.t0, &step.start(), h, step.err, &a)
}

fn initial_step<const N: usize, F>(
    f: &F,
    t0: f64,
    y0: &[f64; N],
    f0: &[f64; N],
    dir: f64,
    ctl: &StepControl,
) -> f64
where
    F: Fn(f64, &[f64; N]) -> [f64; N],
{
    let norm = |v: &[f64; N]| -> f64 {
        let s: f64 = (0..N)
            .map(|i| (v[i] / (ctl.atol + ctl.rtol * y0[i].abs())).powi(2))
            .sum();
        (s / N as f64).sqrt()
    };
    let d0 = norm(y0);
    let d1 = norm(f0);
    let h0 = if d0 < 1e-5 || d1 < 1e-5 {
        1e-6
    } else {
        0.01 * d0 / d1
    };
    let y1: [f64; N] = std::array::from_fn(|i| y0[i] + dir * h0 * f0[i]);
    let f1 = f(t0 + dir * h0, &y1);
    let diff: [f64; N] = std::array::from_fn(|i| f1[i] - f0[i]);
    let d2 = norm(&diff) / h0;
    let dm = d1.max(d2);
    let h1 = if dm <= 1e-15 {
        (h0 * 1e-3).max(1e-6)
    } else {
        (0.01 / dm).powf(0.2)
    };
    (100.0 * h0).min(h1)
}

/// Ordered list of accepted steps covering `[t0, t0 + duration]`.
#[derive(Debug, Clone)]
pub struct DenseSolution<const N: usize> {
    pub t0: f64,
    pub t1: f64,
    y0: [f64; N],
    steps: Vec<DenseStep<N>>,
}

impl<const N: usize> DenseSolution<N> {
    pub fn new(t0: f64, y0: [f64; N]) -> Self {
        Self {
            t0,
            t1: t0,
            y0,
            steps: Vec::new(),
        }
    }

    pub fn push(&mut self, step: DenseStep<N>) {
        self.t1 = step.t1();
        self.steps.push(step);
    }

    pub fn steps(&self) -> &[DenseStep<N>] {
        &self.steps
    }

    pub fn initial(&self) -> [f64; N] {
        self.y0
    }

    pub fn last(&self) -> [f64; N] {
        self.steps.last().map_or(self.y0, DenseStep::end)
    }

    pub fn duration(&self) -> f64 {
        self.t1 - self.t0
    }

    fn locate(&self, t: f64) -> Option<&DenseStep<N>> {
        if self.steps.is_empty() {
            return None;
        }
        let fwd = self.t1 >= self.t0;
        let idx = self
            .steps
            .partition_point(|s| if fwd { s.t1() < t } else { s.t1() > t });
        Some(&self.steps[idx.min(self.steps.len() - 1)])
    }

    /// Interpolated state; extrapolates the end steps outside the span.
    pub fn eval(&self, t: f64) -> [f64; N] {
        if t == self.t0 {
            return self.y0;
        }
        match self.locate(t) {
            Some(s) => s.eval(t),
            None => self.y0,
        }
    }

    /// Interpolated state together with the scaled local error estimate of
    /// the step that covers `t`.
    pub fn eval_with_error(&self, t: f64) -> ([f64; N], f64) {
        match self.locate(t) {
            Some(s) => (s.eval(t), s.err),
            None => (self.y0, 0.0),
        }
    }
}

/// Integrates `y' = f(t, y)` over `[t0, t0 + duration]`.
pub fn integrate<const N: usize, F>(
    f: F,
    t0: f64,
    y0: [f64; N],
    duration: f64,
    ctl: StepControl,
) -> Result<DenseSolution<N>, FlowError>
where
    F: Fn(f64, &[f64; N]) -> [f64; N],
{
    if !duration.is_finite() {
        return Err(FlowError::NonFiniteDuration);
    }
    let mut sol = DenseSolution::new(t0, y0);
    if duration == 0.0 {
        return Ok(sol);
    }
    let mut st = Stepper::new(f, t0, y0, duration, ctl);
    while let Some(step) = st.next_step()? {
        sol.push(step);
    }
    Ok(sol)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ctl(tol: f64) -> StepControl {
        StepControl {
            rtol: tol,
            atol: tol,
            ..Default::default()
        }
    }

    #[test]
    fn harmonic_oscillator_period() {
        let f = |_t: f64, y: &[f64; 2]| [y[1], -y[0]];
        let sol = integrate(f, 0.0, [1.0, 0.0], 2.0 * std::f64::consts::PI, ctl(1e-12)).unwrap();
        let y = sol.last();
        assert!((y[0] - 1.0).abs() < 1e-10 && y[1].abs() < 1e-10, "{y:?}");
    }

    #[test]
    fn backward_integration() {
        let f = |_t: f64, y: &[f64; 1]| [y[0]];
        let sol = integrate(f, 1.0, [1.0], -1.0, ctl(1e-12)).unwrap();
        assert!((sol.last()[0] - (-1f64).exp()).abs() < 1e-11);
        assert_eq!(sol.t1, 0.0);
    }

    #[test]
    fn dense_output_is_accurate_between_steps() {
        let f = |t: f64, _y: &[f64; 1]| [t.cos()];
        let sol = integrate(f, 0.0, [0.0], 10.0, ctl(1e-11)).unwrap();
        for i in 0..=200 {
            let t = 10.0 * i as f64 / 200.0;
            assert!((sol.eval(t)[0] - t.sin()).abs() < 1e-9, "t = {t}");
        }
    }

    #[test]
    fn initial_state_is_exact() {
        let f = |_t: f64, y: &[f64; 2]| [y[1], -y[0]];
        let y0 = [0.123456789, -0.987654321];
        let sol = integrate(f, 0.5, y0, 3.0, ctl(1e-10)).unwrap();
        assert_eq!(sol.eval(0.5), y0);
        let sol = integrate(f, 0.5, y0, 0.0, ctl(1e-10)).unwrap();
        assert_eq!(sol.last(), y0);
    }

    #[test]
    fn blow_up_underflows() {
        let f = |_t: f64, y: &[f64; 1]| [y[0] * y[0]];
        let r = integrate(f, 0.0, [1.0], 2.0, ctl(1e-10));
        assert!(
            matches!(
                r,
                Err(FlowError::StepSizeUnderflow { .. }) | Err(FlowError::TooManySteps { .. })
            ),
            "{r:?}"
        );
    }

    #[test]
    fn restep_matches_interpolant() {
        let f = |_t: f64, y: &[f64; 2]| [y[1], -y[0]];
        let sol = integrate(f, 0.0, [1.0, 0.0], 3.0, ctl(1e-12)).unwrap();
        let step = &sol.steps()[1];
        let tm = step.t0 + 0.37 * step.h;
        let a = restep(&f, step, tm);
        assert!((a[0] - tm.cos()).abs() < 1e-12);
        assert!((step.eval(tm)[0] - a[0]).abs() < 1e-10);
    }
}
