//! The unperturbed annulus of crossing periodic orbits bounded by the
//! visible–invisible two-fold cycle.

use std::collections::HashMap;
use std::io::{self, Write};
use std::sync::{Arc, RwLock};

use serde::Serialize;
use thiserror::Error;

use crate::fields::SmoothField;
use crate::flow::{
    flow_variational, hit_switching, Direction, FlowError, FlowOptions, VariationalSolution,
};
use crate::roots::{brent, golden_max};
use crate::{Mat2, Vec2};

/// Default threshold below which `σ̄'` counts as zero.
pub const TOL_SLOPE: f64 = 1e-8;

const SIGMA_GRID: usize = 512;
const FOLD_SCAN: usize = 4096;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnnulusError {
    #[error("fold hypothesis violated: {0}")]
    HypothesisH1Violated(String),
    #[error("expected exactly two zeros of F2(x, 0) in the search interval, found {found}")]
    ZeroCountMismatch { found: usize },
    #[error("x = {x} is outside the annulus ({x_i}, {x_v}]")]
    OutsideAnnulus { x: f64, x_i: f64, x_v: f64 },
    #[error("half-period {sigma} is outside (0, {sigma_max}]")]
    NotInRange { sigma: f64, sigma_max: f64 },
    #[error(
        "every solution of σ̄(x) = {sigma} has a degenerate slope (|σ̄'| ≤ {tol:e}), e.g. at x = {x}"
    )]
    DegenerateSlope { sigma: f64, x: f64, tol: f64 },
    #[error(transparent)]
    Flow(#[from] FlowError),
}

/// A tangency point `(x, 0)` of the lower field with the slope `∂F2/∂x`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Fold {
    pub x: f64,
    pub df2dx: f64,
}

impl Fold {
    pub fn point(&self) -> Vec2 {
        Vec2::new(self.x, 0.0)
    }
}

/// Invisible fold `p_i` and visible fold `p_v` of the lower field.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FoldPair {
    pub p_i: Fold,
    pub p_v: Fold,
}

/// Locates the two zeros of `x ↦ F2(x, 0)` in `x_range` and checks the sign
/// pattern `∂F2/∂x(p_v) F1(p_v) < 0 < ∂F2/∂x(p_i) F1(p_i)`.
pub fn find_folds(f_minus: &SmoothField, x_range: (f64, f64)) -> Result<FoldPair, AnnulusError> {
    let f2 = |x: f64| f_minus.eval(0.0, Vec2::new(x, 0.0)).y;
    let (lo, hi) = x_range;
    let mut roots = Vec::new();
    let mut xa = lo;
    let mut fa = f2(lo);
    for k in 1..=FOLD_SCAN {
        let xb = lo + (hi - lo) * k as f64 / FOLD_SCAN as f64;
        let fb = f2(xb);
        if fa == 0.0 {
            roots.push(xa);
        } else if fa * fb < 0.0 {
            roots.push(refine_fold(f_minus, xa, xb));
        }
        xa = xb;
        fa = fb;
    }
    if fa == 0.0 {
        roots.push(xa);
    }
    if roots.len() != 2 {
        return Err(AnnulusError::ZeroCountMismatch { found: roots.len() });
    }
    let fold = |x: f64| Fold {
        x,
        df2dx: f_minus.jac(0.0, Vec2::new(x, 0.0))[(1, 0)],
    };
    let (p_i, p_v) = (fold(roots[0]), fold(roots[1]));
    let f1 = |x: f64| f_minus.eval(0.0, Vec2::new(x, 0.0)).x;
    if !(p_v.df2dx * f1(p_v.x) < 0.0) {
        return Err(AnnulusError::HypothesisH1Violated(format!(
            "∂F2/∂x(p_v)·F1(p_v) = {} is not negative at x_v = {}",
            p_v.df2dx * f1(p_v.x),
            p_v.x
        )));
    }
    if !(p_i.df2dx * f1(p_i.x) > 0.0) {
        return Err(AnnulusError::HypothesisH1Violated(format!(
            "∂F2/∂x(p_i)·F1(p_i) = {} is not positive at x_i = {}",
            p_i.df2dx * f1(p_i.x),
            p_i.x
        )));
    }
    if !(f1(p_v.x) < 0.0) {
        return Err(AnnulusError::HypothesisH1Violated(format!(
            "F1(p_v) = {} is not negative",
            f1(p_v.x)
        )));
    }
    Ok(FoldPair { p_i, p_v })
}

fn refine_fold(f: &SmoothField, a: f64, b: f64) -> f64 {
    let f2 = |x: f64| f.eval(0.0, Vec2::new(x, 0.0)).y;
    let mut x = brent(f2, a, b, 1e-15, 200).unwrap_or(0.5 * (a + b));
    for _ in 0..3 {
        let d = f.jac(0.0, Vec2::new(x, 0.0))[(1, 0)];
        if d == 0.0 {
            break;
        }
        let xn = x - f2(x) / d;
        if !(xn > a && xn < b) {
            break;
        }
        x = xn;
    }
    x
}

/// A solution of `σ̄(x) = σ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SigmaRoot {
    pub x: f64,
    pub sigma_prime: f64,
}

/// Lower arc `Γ-(t, x, 0)`, `t ∈ [0, σ̄(x)]`, with its fundamental matrix.
#[derive(Debug, Clone)]
pub struct AnnulusOrbit {
    pub x: f64,
    pub sigma_bar: f64,
    pub lower: Arc<VariationalSolution>,
}

impl AnnulusOrbit {
    /// `γ(t, x)` for `t ∈ [-σ̄, σ̄]`: the lower arc for `t ≥ 0` and its
    /// reflection `R Γ-(-t, x, 0)` for `t < 0`.
    pub fn eval(&self, t: f64) -> Vec2 {
        if t >= 0.0 {
            self.lower.state(t)
        } else {
            let z = self.lower.state(-t);
            Vec2::new(z.x, -z.y)
        }
    }

    /// Fundamental matrix `Y(t, x)` of the lower arc, `t ∈ [0, σ̄]`.
    pub fn fundamental(&self, t: f64) -> Mat2 {
        self.lower.fundamental(t)
    }

    pub fn landing(&self) -> Vec2 {
        self.lower.state(self.sigma_bar)
    }
}

/// Geometry of the annulus for a lower field `F-` (the upper one follows by
/// reversibility).
#[derive(Debug)]
pub struct AnnulusData {
    pub f_minus: SmoothField,
    pub folds: FoldPair,
    /// `σ_v = σ̄(x_v)`.
    pub sigma_v: f64,
    /// Landing point `q_v` of the lower orbit through `p_v`.
    pub q_v: Vec2,
    /// `σ_M = sup σ̄` and where it is attained.
    pub sigma_m: f64,
    pub x_at_sigma_m: f64,
    /// Samples `(x, σ̄(x))` on `(x_i, x_v]`.
    pub sigma_grid: Vec<(f64, f64)>,
    pub opts: FlowOptions,
    cache: RwLock<HashMap<u64, Arc<AnnulusOrbit>>>,
}

impl AnnulusData {
    pub fn new(f_minus: SmoothField, x_range: (f64, f64)) -> Result<Self, AnnulusError> {
        Self::with_options(f_minus, x_range, FlowOptions::default())
    }

    pub fn with_options(
        f_minus: SmoothField,
        x_range: (f64, f64),
        opts: FlowOptions,
    ) -> Result<Self, AnnulusError> {
        let folds = find_folds(&f_minus, x_range)?;
        let (x_i, x_v) = (folds.p_i.x, folds.p_v.x);
        let mut data = Self {
            f_minus,
            folds,
            sigma_v: 0.0,
            q_v: Vec2::zeros(),
            sigma_m: 0.0,
            x_at_sigma_m: x_v,
            sigma_grid: Vec::with_capacity(SIGMA_GRID),
            opts,
            cache: RwLock::new(HashMap::new()),
        };
        let hit = hit_switching(
            &data.f_minus,
            0.0,
            folds.p_v.point(),
            Direction::Forward,
            &opts,
        )?;
        data.sigma_v = hit.t;
        data.q_v = hit.point;
        for k in 1..=SIGMA_GRID {
            let x = if k == SIGMA_GRID {
                x_v
            } else {
                x_i + (x_v - x_i) * k as f64 / SIGMA_GRID as f64
            };
            let s = if k == SIGMA_GRID {
                data.sigma_v
            } else {
                data.half_return_time(x)?
            };
            data.sigma_grid.push((x, s));
        }
        let (kmax, &(xm, sm)) = data
            .sigma_grid
            .iter()
            .enumerate()
            .max_by(|a, b| a.1 .1.total_cmp(&b.1 .1))
            .expect("grid is non-empty");
        data.sigma_m = sm;
        data.x_at_sigma_m = xm;
        if kmax + 1 < data.sigma_grid.len() {
            let lo = if kmax == 0 {
                x_i + 1e-9 * (x_v - x_i)
            } else {
                data.sigma_grid[kmax - 1].0
            };
            let hi = data.sigma_grid[kmax + 1].0;
            let (x, s) = golden_max(
                |x| data.half_return_time(x).unwrap_or(f64::NEG_INFINITY),
                lo,
                hi,
                1e-10,
            );
            if s > data.sigma_m {
                data.sigma_m = s;
                data.x_at_sigma_m = x;
            }
        }
        Ok(data)
    }

    pub fn x_i(&self) -> f64 {
        self.folds.p_i.x
    }

    pub fn x_v(&self) -> f64 {
        self.folds.p_v.x
    }

    pub fn p_v(&self) -> Vec2 {
        self.folds.p_v.point()
    }

    pub fn p_i(&self) -> Vec2 {
        self.folds.p_i.point()
    }

    fn check_x(&self, x: f64) -> Result<(), AnnulusError> {
        let (x_i, x_v) = (self.x_i(), self.x_v());
        if x > x_i && x <= x_v + 1e-12 * (1.0 + x_v.abs()) {
            Ok(())
        } else {
            Err(AnnulusError::OutsideAnnulus { x, x_i, x_v })
        }
    }

    /// `σ̄(x)`: first return of the lower flow from `(x, 0)` to `y = 0`.
    pub fn half_return_time(&self, x: f64) -> Result<f64, AnnulusError> {
        self.check_x(x)?;
        let hit = hit_switching(
            &self.f_minus,
            0.0,
            Vec2::new(x, 0.0),
            Direction::Forward,
            &self.opts,
        )?;
        Ok(hit.t)
    }

    /// Lower arc through `(x, 0)` with its fundamental matrix, cached by `x`.
    pub fn annulus_orbit(&self, x: f64) -> Result<Arc<AnnulusOrbit>, AnnulusError> {
        let key = x.to_bits();
        if let Some(o) = self.cache.read().expect("orbit cache poisoned").get(&key) {
            return Ok(Arc::clone(o));
        }
        let sigma_bar = if x == self.x_v() {
            self.sigma_v
        } else {
            self.half_return_time(x)?
        };
        let lower = flow_variational(&self.f_minus, Vec2::new(x, 0.0), sigma_bar, &self.opts)?;
        let orbit = Arc::new(AnnulusOrbit {
            x,
            sigma_bar,
            lower: Arc::new(lower),
        });
        let mut cache = self.cache.write().expect("orbit cache poisoned");
        Ok(Arc::clone(cache.entry(key).or_insert(orbit)))
    }

    /// `σ̄'(x) = -(∂Γ2/∂x)(σ̄(x), x, 0) / F2(Γ(σ̄(x), x, 0))`.
    pub fn sigma_prime(&self, x: f64) -> Result<f64, AnnulusError> {
        let orbit = self.annulus_orbit(x)?;
        let (z, y) = orbit.lower.state_and_fundamental(orbit.sigma_bar);
        let f2 = self.f_minus.eval(0.0, Vec2::new(z.x, 0.0)).y;
        if f2.abs() <= self.opts.tol_tangency {
            return Err(FlowError::GrazingHit {
                t: orbit.sigma_bar,
                x: z.x,
                normal: f2,
            }
            .into());
        }
        Ok(-y[(1, 0)] / f2)
    }

    /// All `x ∈ (x_i, x_v]` with `σ̄(x) = σ` and a non-degenerate slope.
    ///
    /// `σ = 0` is excluded: its only preimage is the degenerate orbit at `p_i`.
    pub fn invert_sigma(&self, sigma: f64) -> Result<Vec<SigmaRoot>, AnnulusError> {
        let sigma_max = self.sigma_m;
        if !(sigma > 0.0 && sigma <= sigma_max * (1.0 + 1e-12)) {
            return Err(AnnulusError::NotInRange { sigma, sigma_max });
        }
        let mut xs = Vec::new();
        let mut prev = (self.x_i(), -sigma);
        for &(x, s) in &self.sigma_grid {
            let d = s - sigma;
            if d == 0.0 || (d.abs() <= 1e-12 * sigma && x == self.x_v()) {
                xs.push(x);
            } else if prev.1 * d < 0.0 {
                let lo = if prev.0 == self.x_i() {
                    prev.0 + 1e-12 * (x - prev.0)
                } else {
                    prev.0
                };
                let root = brent(
                    |x| self.half_return_time(x).map_or(f64::NAN, |v| v - sigma),
                    lo,
                    x,
                    1e-14,
                    200,
                );
                if let Some(r) = root {
                    xs.push(r);
                }
            }
            prev = (x, d);
        }
        let mut out = Vec::new();
        let mut degenerate = None;
        for x in xs {
            let sp = self.sigma_prime(x)?;
            if sp.abs() > TOL_SLOPE {
                out.push(SigmaRoot { x, sigma_prime: sp });
            } else {
                degenerate = Some(x);
            }
        }
        match (out.is_empty(), degenerate) {
            (true, Some(x)) => Err(AnnulusError::DegenerateSlope {
                sigma,
                x,
                tol: TOL_SLOPE,
            }),
            (true, None) => Err(AnnulusError::NotInRange { sigma, sigma_max }),
            _ => Ok(out),
        }
    }

    /// Writes `x,sigma_bar,sigma_prime` on `n` evenly spaced points of
    /// `(x_i, x_v]`.
    pub fn write_sigma_table<W: Write>(&self, mut w: W, n: usize) -> io::Result<()> {
        writeln!(w, "x,sigma_bar,sigma_prime")?;
        let (x_i, x_v) = (self.x_i(), self.x_v());
        for k in 1..=n.max(1) {
            let x = x_i + (x_v - x_i) * k as f64 / n.max(1) as f64;
            let s = self.half_return_time(x).map_err(io::Error::other)?;
            let sp = self.sigma_prime(x).map_err(io::Error::other)?;
            writeln!(w, "{x:.15e},{s:.15e},{sp:.15e}")?;
        }
        Ok(())
    }
}
