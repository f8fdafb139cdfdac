//! System model for planar Filippov systems switching on `y = 0`.
//!
//! A [`FilippovModel`] assembles the one-sided fields
//! `X± = F± + ε G± + ε² H±` and answers the local questions asked about the
//! switching line: region type, fold visibility, the sliding vector field and
//! how far the unperturbed skeleton is from being reversible under
//! `R(x, y) = (x, -y)`.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::{Mat2, Vec2};

/// Default absolute tolerance (velocity units) for tangency decisions.
pub const TOL_TANGENCY: f64 = 1e-9;

/// Default tolerance for declaring a skeleton reversible.
pub const TOL_REVERSIBILITY: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FieldError {
    #[error("point ({x}, 0) at t = {t} is not in a sliding or escaping region ({region:?})")]
    NotSlidingRegion { t: f64, x: f64, region: RegionKind },
    #[error(
        "sliding field denominator vanishes at ({x}, 0), t = {t}: X-h - X+h = {denominator:e}"
    )]
    DivisionDegeneracy { t: f64, x: f64, denominator: f64 },
    #[error("({x}, 0) is not a tangency of the {side:?} field (normal component {normal:e})")]
    NotATangency { side: Side, x: f64, normal: f64 },
    #[error(
        "degenerate tangency of the {side:?} field at ({x}, 0): second Lie derivative {lie2:e}"
    )]
    DegenerateTangency { side: Side, x: f64, lie2: f64 },
}

/// A planar vector field, possibly time dependent.
pub trait VectorField: Send + Sync {
    fn eval(&self, t: f64, z: Vec2) -> Vec2;

    /// Spatial Jacobian.
    fn jac(&self, t: f64, z: Vec2) -> Mat2;

    /// Partial derivative with respect to time. The default is a central
    /// difference, which is exact (zero) for autonomous fields.
    fn dt(&self, t: f64, z: Vec2) -> Vec2 {
        let h = 1e-6 * (1.0 + t.abs());
        (self.eval(t + h, z) - self.eval(t - h, z)) / (2.0 * h)
    }

    /// Period in `t`, or `None` for an autonomous field.
    fn period(&self) -> Option<f64> {
        None
    }
}

/// Shared handle to a [`VectorField`].
#[derive(Clone)]
pub struct SmoothField(Arc<dyn VectorField>);

impl SmoothField {
    pub fn new<F: VectorField + 'static>(field: F) -> Self {
        Self(Arc::new(field))
    }

    pub fn zero() -> Self {
        Self::new(ZeroField)
    }

    /// Field from closures for the value and the Jacobian.
    pub fn from_fns<E, J>(eval: E, jac: J) -> Self
    where
        E: Fn(f64, Vec2) -> Vec2 + Send + Sync + 'static,
        J: Fn(f64, Vec2) -> Mat2 + Send + Sync + 'static,
    {
        Self::new(FnField {
            eval,
            jac,
            period: None,
        })
    }

    /// Same as [`SmoothField::from_fns`] with a declared period.
    pub fn periodic_from_fns<E, J>(eval: E, jac: J, period: f64) -> Self
    where
        E: Fn(f64, Vec2) -> Vec2 + Send + Sync + 'static,
        J: Fn(f64, Vec2) -> Mat2 + Send + Sync + 'static,
    {
        Self::new(FnField {
            eval,
            jac,
            period: Some(period),
        })
    }

    #[inline]
    pub fn eval(&self, t: f64, z: Vec2) -> Vec2 {
        self.0.eval(t, z)
    }

    #[inline]
    pub fn jac(&self, t: f64, z: Vec2) -> Mat2 {
        self.0.jac(t, z)
    }

    #[inline]
    pub fn dt(&self, t: f64, z: Vec2) -> Vec2 {
        self.0.dt(t, z)
    }

    pub fn period(&self) -> Option<f64> {
        self.0.period()
    }

    /// `z ↦ -R F(R z)`: the partner field forced by reversibility.
    pub fn reflected(&self) -> Self {
        Self::new(Conjugate {
            inner: self.clone(),
            flip_time: false,
        })
    }

    /// `(s, w) ↦ -R F(-s, R w)`: the field seen after reversing time and
    /// applying the involution.
    pub fn time_reversed(&self) -> Self {
        Self::new(Conjugate {
            inner: self.clone(),
            flip_time: true,
        })
    }
}

impl fmt::Debug for SmoothField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.period() {
            Some(p) => write!(f, "SmoothField(period = {p})"),
            None => write!(f, "SmoothField(autonomous)"),
        }
    }
}

struct ZeroField;

impl VectorField for ZeroField {
    fn eval(&self, _t: f64, _z: Vec2) -> Vec2 {
        Vec2::zeros()
    }
    fn jac(&self, _t: f64, _z: Vec2) -> Mat2 {
        Mat2::zeros()
    }
    fn dt(&self, _t: f64, _z: Vec2) -> Vec2 {
        Vec2::zeros()
    }
}

struct FnField<E, J> {
    eval: E,
    jac: J,
    period: Option<f64>,
}

impl<E, J> VectorField for FnField<E, J>
where
    E: Fn(f64, Vec2) -> Vec2 + Send + Sync,
    J: Fn(f64, Vec2) -> Mat2 + Send + Sync,
{
    fn eval(&self, t: f64, z: Vec2) -> Vec2 {
        (self.eval)(t, z)
    }
    fn jac(&self, t: f64, z: Vec2) -> Mat2 {
        (self.jac)(t, z)
    }
    fn period(&self) -> Option<f64> {
        self.period
    }
}

#[inline]
pub fn involution(z: Vec2) -> Vec2 {
    Vec2::new(z.x, -z.y)
}

#[inline]
fn conj_mat(m: Mat2) -> Mat2 {
    // -R M R
    Mat2::new(-m[(0, 0)], m[(0, 1)], m[(1, 0)], -m[(1, 1)])
}

struct Conjugate {
    inner: SmoothField,
    flip_time: bool,
}

impl Conjugate {
    #[inline]
    fn time(&self, t: f64) -> f64 {
        if self.flip_time {
            -t
        } else {
            t
        }
    }
}

impl VectorField for Conjugate {
    fn eval(&self, t: f64, z: Vec2) -> Vec2 {
        -involution(self.inner.eval(self.time(t), involution(z)))
    }
    fn jac(&self, t: f64, z: Vec2) -> Mat2 {
        conj_mat(self.inner.jac(self.time(t), involution(z)))
    }
    fn dt(&self, t: f64, z: Vec2) -> Vec2 {
        let d = self.inner.dt(self.time(t), involution(z));
        if self.flip_time {
            involution(d)
        } else {
            -involution(d)
        }
    }
    fn period(&self) -> Option<f64> {
        self.inner.period()
    }
}

/// A sinusoidal time factor `sin(freq · t + phase)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sinusoid {
    pub freq: f64,
    #[serde(default)]
    pub phase: f64,
}

/// One monomial term `coeff · x^px · y^py [· sin(freq t + phase)]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Term {
    pub coeff: f64,
    #[serde(default)]
    pub px: u32,
    #[serde(default)]
    pub py: u32,
    #[serde(default)]
    pub forcing: Option<Sinusoid>,
}

impl Term {
    pub fn constant(coeff: f64) -> Self {
        Self {
            coeff,
            px: 0,
            py: 0,
            forcing: None,
        }
    }

    pub fn monomial(coeff: f64, px: u32, py: u32) -> Self {
        Self {
            coeff,
            px,
            py,
            forcing: None,
        }
    }

    pub fn forced(coeff: f64, px: u32, py: u32, freq: f64, phase: f64) -> Self {
        Self {
            coeff,
            px,
            py,
            forcing: Some(Sinusoid { freq, phase }),
        }
    }

    fn time_factor(&self, t: f64) -> f64 {
        self.forcing.map_or(1.0, |s| (s.freq * t + s.phase).sin())
    }

    fn time_factor_dt(&self, t: f64) -> f64 {
        self.forcing
            .map_or(0.0, |s| s.freq * (s.freq * t + s.phase).cos())
    }
}

fn powi(v: f64, n: u32) -> f64 {
    v.powi(n as i32)
}

/// Polynomial field with sinusoidal forcing, one term list per component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolyTrigField {
    pub x: Vec<Term>,
    pub y: Vec<Term>,
    #[serde(default)]
    pub period: Option<f64>,
}

impl PolyTrigField {
    fn component(terms: &[Term], t: f64, z: Vec2) -> f64 {
        terms
            .iter()
            .map(|m| m.coeff * powi(z.x, m.px) * powi(z.y, m.py) * m.time_factor(t))
            .sum()
    }

    fn gradient(terms: &[Term], t: f64, z: Vec2) -> (f64, f64) {
        let mut gx = 0.0;
        let mut gy = 0.0;
        for m in terms {
            let c = m.coeff * m.time_factor(t);
            if m.px > 0 {
                gx += c * m.px as f64 * powi(z.x, m.px - 1) * powi(z.y, m.py);
            }
            if m.py > 0 {
                gy += c * m.py as f64 * powi(z.x, m.px) * powi(z.y, m.py - 1);
            }
        }
        (gx, gy)
    }

    fn component_dt(terms: &[Term], t: f64, z: Vec2) -> f64 {
        terms
            .iter()
            .map(|m| m.coeff * powi(z.x, m.px) * powi(z.y, m.py) * m.time_factor_dt(t))
            .sum()
    }
}

impl VectorField for PolyTrigField {
    fn eval(&self, t: f64, z: Vec2) -> Vec2 {
        Vec2::new(
            Self::component(&self.x, t, z),
            Self::component(&self.y, t, z),
        )
    }
    fn jac(&self, t: f64, z: Vec2) -> Mat2 {
        let (a, b) = Self::gradient(&self.x, t, z);
        let (c, d) = Self::gradient(&self.y, t, z);
        Mat2::new(a, b, c, d)
    }
    fn dt(&self, t: f64, z: Vec2) -> Vec2 {
        Vec2::new(
            Self::component_dt(&self.x, t, z),
            Self::component_dt(&self.y, t, z),
        )
    }
    fn period(&self) -> Option<f64> {
        self.period
    }
}

/// Field carrying an explicit dependence on ε, used for the `ε² H±` terms.
pub trait EpsField: Send + Sync {
    fn eval(&self, t: f64, z: Vec2, eps: f64) -> Vec2;
    fn jac(&self, t: f64, z: Vec2, eps: f64) -> Mat2;
    fn dt(&self, t: f64, z: Vec2, eps: f64) -> Vec2 {
        let h = 1e-6 * (1.0 + t.abs());
        (self.eval(t + h, z, eps) - self.eval(t - h, z, eps)) / (2.0 * h)
    }
}

/// Shared handle to an [`EpsField`].
#[derive(Clone)]
pub struct SecondOrderField(Arc<dyn EpsField>);

impl SecondOrderField {
    pub fn new<F: EpsField + 'static>(field: F) -> Self {
        Self(Arc::new(field))
    }

    /// A second-order term that does not depend on ε.
    pub fn from_field(field: SmoothField) -> Self {
        Self::new(IgnoreEps(field))
    }

    fn time_reversed(&self) -> Self {
        Self::new(ConjugateEps(self.clone()))
    }
}

impl fmt::Debug for SecondOrderField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "SecondOrderField")
    }
}

struct IgnoreEps(SmoothField);

impl EpsField for IgnoreEps {
    fn eval(&self, t: f64, z: Vec2, _eps: f64) -> Vec2 {
        self.0.eval(t, z)
    }
    fn jac(&self, t: f64, z: Vec2, _eps: f64) -> Mat2 {
        self.0.jac(t, z)
    }
    fn dt(&self, t: f64, z: Vec2, _eps: f64) -> Vec2 {
        self.0.dt(t, z)
    }
}

struct ConjugateEps(SecondOrderField);

impl EpsField for ConjugateEps {
    fn eval(&self, t: f64, z: Vec2, eps: f64) -> Vec2 {
        -involution(self.0 .0.eval(-t, involution(z), eps))
    }
    fn jac(&self, t: f64, z: Vec2, eps: f64) -> Mat2 {
        conj_mat(self.0 .0.jac(-t, involution(z), eps))
    }
    fn dt(&self, t: f64, z: Vec2, eps: f64) -> Vec2 {
        involution(self.0 .0.dt(-t, involution(z), eps))
    }
}

/// Side of the switching line `y = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Side {
    Plus,
    Minus,
}

impl Side {
    pub fn other(self) -> Self {
        match self {
            Side::Plus => Side::Minus,
            Side::Minus => Side::Plus,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RegionKind {
    Crossing,
    Sliding,
    Escaping,
    TangencyPlus,
    TangencyMinus,
    TangencyBoth,
}

impl RegionKind {
    pub fn is_tangency(self) -> bool {
        matches!(
            self,
            Self::TangencyPlus | Self::TangencyMinus | Self::TangencyBoth
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Visibility {
    Visible,
    Invisible,
}

/// The perturbed Filippov system
/// `z' = X±(t, z) = F±(z) + ε G±(t, z) + ε² H±(t, z; ε)` for `±y > 0`.
///
/// The switching line is `y = 0` and the involution is `R(x, y) = (x, -y)`.
/// Field evaluations reduce the time argument modulo `2σ`.
#[derive(Debug, Clone)]
pub struct FilippovModel {
    pub f_minus: SmoothField,
    pub f_plus: SmoothField,
    pub g_minus: SmoothField,
    pub g_plus: SmoothField,
    pub h_minus: Option<SecondOrderField>,
    pub h_plus: Option<SecondOrderField>,
    pub epsilon: f64,
    /// Half-period of the perturbation.
    pub sigma: f64,
    pub tol_tangency: f64,
}

impl FilippovModel {
    pub fn new(
        f_minus: SmoothField,
        f_plus: SmoothField,
        g_minus: SmoothField,
        g_plus: SmoothField,
        sigma: f64,
    ) -> Self {
        Self {
            f_minus,
            f_plus,
            g_minus,
            g_plus,
            h_minus: None,
            h_plus: None,
            epsilon: 0.0,
            sigma,
            tol_tangency: TOL_TANGENCY,
        }
    }

    /// Model whose upper field is the reflection `F+ = -R F- R` of `f_minus`.
    pub fn reversible(
        f_minus: SmoothField,
        g_minus: SmoothField,
        g_plus: SmoothField,
        sigma: f64,
    ) -> Self {
        let f_plus = f_minus.reflected();
        Self::new(f_minus, f_plus, g_minus, g_plus, sigma)
    }

    pub fn with_epsilon(&self, epsilon: f64) -> Self {
        Self {
            epsilon,
            ..self.clone()
        }
    }

    pub fn with_second_order(
        mut self,
        h_minus: SecondOrderField,
        h_plus: SecondOrderField,
    ) -> Self {
        self.h_minus = Some(h_minus);
        self.h_plus = Some(h_plus);
        self
    }

    pub fn with_tol_tangency(mut self, tol: f64) -> Self {
        self.tol_tangency = tol;
        self
    }

    /// Full period `2σ`.
    pub fn period(&self) -> f64 {
        2.0 * self.sigma
    }

    #[inline]
    fn reduce(&self, t: f64) -> f64 {
        let p = self.period();
        if p > 0.0 && p.is_finite() {
            t.rem_euclid(p)
        } else {
            t
        }
    }

    pub fn unperturbed(&self, side: Side) -> &SmoothField {
        match side {
            Side::Plus => &self.f_plus,
            Side::Minus => &self.f_minus,
        }
    }

    pub fn perturbation(&self, side: Side) -> &SmoothField {
        match side {
            Side::Plus => &self.g_plus,
            Side::Minus => &self.g_minus,
        }
    }

    fn second_order(&self, side: Side) -> Option<&SecondOrderField> {
        match side {
            Side::Plus => self.h_plus.as_ref(),
            Side::Minus => self.h_minus.as_ref(),
        }
    }

    /// `X±(t, z)`.
    pub fn field(&self, side: Side, t: f64, z: Vec2) -> Vec2 {
        let eps = self.epsilon;
        let mut v = self.unperturbed(side).eval(t, z);
        if eps != 0.0 {
            let t = self.reduce(t);
            v += eps * self.perturbation(side).eval(t, z);
            if let Some(h) = self.second_order(side) {
                v += eps * eps * h.0.eval(t, z, eps);
            }
        }
        v
    }

    pub fn jacobian(&self, side: Side, t: f64, z: Vec2) -> Mat2 {
        let eps = self.epsilon;
        let mut m = self.unperturbed(side).jac(t, z);
        if eps != 0.0 {
            let t = self.reduce(t);
            m += eps * self.perturbation(side).jac(t, z);
            if let Some(h) = self.second_order(side) {
                m += eps * eps * h.0.jac(t, z, eps);
            }
        }
        m
    }

    pub fn field_dt(&self, side: Side, t: f64, z: Vec2) -> Vec2 {
        let eps = self.epsilon;
        let mut v = self.unperturbed(side).dt(t, z);
        if eps != 0.0 {
            let t = self.reduce(t);
            v += eps * self.perturbation(side).dt(t, z);
            if let Some(h) = self.second_order(side) {
                v += eps * eps * h.0.dt(t, z, eps);
            }
        }
        v
    }

    /// The assembled one-sided field `X±` as a standalone [`SmoothField`].
    pub fn side_field(&self, side: Side) -> SmoothField {
        SmoothField::new(OneSided {
            model: self.clone(),
            side,
        })
    }

    /// Normal component `X±h = X±_2` at `(x, 0)`.
    pub fn normal_component(&self, side: Side, t: f64, x: f64) -> f64 {
        self.field(side, t, Vec2::new(x, 0.0)).y
    }

    /// Model seen under `s = -t`, `w = R z`.
    ///
    /// Upper and lower fields trade places, so escaping regions of `self`
    /// become sliding regions of the conjugate and a trajectory of the
    /// conjugate maps back through `(s, w) ↦ (-s, R w)`. The unperturbed
    /// skeleton of a reversible model is unchanged.
    pub fn time_reversed_conjugate(&self) -> Self {
        Self {
            f_minus: self.f_plus.time_reversed(),
            f_plus: self.f_minus.time_reversed(),
            g_minus: self.g_plus.time_reversed(),
            g_plus: self.g_minus.time_reversed(),
            h_minus: self.h_plus.as_ref().map(SecondOrderField::time_reversed),
            h_plus: self.h_minus.as_ref().map(SecondOrderField::time_reversed),
            ..self.clone()
        }
    }

    pub fn classify_point(&self, t: f64, x: f64) -> RegionKind {
        classify_point(self, t, x)
    }
}

struct OneSided {
    model: FilippovModel,
    side: Side,
}

impl VectorField for OneSided {
    fn eval(&self, t: f64, z: Vec2) -> Vec2 {
        self.model.field(self.side, t, z)
    }
    fn jac(&self, t: f64, z: Vec2) -> Mat2 {
        self.model.jacobian(self.side, t, z)
    }
    fn dt(&self, t: f64, z: Vec2) -> Vec2 {
        self.model.field_dt(self.side, t, z)
    }
    fn period(&self) -> Option<f64> {
        (self.model.epsilon != 0.0).then(|| self.model.period())
    }
}

/// Region type of `(x, 0)` at time `t`.
pub fn classify_point(model: &FilippovModel, t: f64, x: f64) -> RegionKind {
    let plus = model.normal_component(Side::Plus, t, x);
    let minus = model.normal_component(Side::Minus, t, x);
    classify_normals(plus, minus, model.tol_tangency)
}

pub(crate) fn classify_normals(plus: f64, minus: f64, tol: f64) -> RegionKind {
    match (plus.abs() <= tol, minus.abs() <= tol) {
        (true, true) => RegionKind::TangencyBoth,
        (true, false) => RegionKind::TangencyPlus,
        (false, true) => RegionKind::TangencyMinus,
        (false, false) if plus * minus > 0.0 => RegionKind::Crossing,
        (false, false) if plus < 0.0 => RegionKind::Sliding,
        (false, false) => RegionKind::Escaping,
    }
}

/// Second Lie derivative `(X)²h` at `(x, 0)` in the extended phase space.
pub fn second_lie_derivative(model: &FilippovModel, side: Side, t: f64, x: f64) -> f64 {
    let z = Vec2::new(x, 0.0);
    let v = model.field(side, t, z);
    let j = model.jacobian(side, t, z);
    j[(1, 0)] * v.x + j[(1, 1)] * v.y + model.field_dt(side, t, z).y
}

pub fn fold_visibility(
    model: &FilippovModel,
    side: Side,
    t: f64,
    x: f64,
) -> Result<Visibility, FieldError> {
    let normal = model.normal_component(side, t, x);
    if normal.abs() > model.tol_tangency {
        return Err(FieldError::NotATangency { side, x, normal });
    }
    let lie2 = second_lie_derivative(model, side, t, x);
    if lie2.abs() <= model.tol_tangency {
        return Err(FieldError::DegenerateTangency { side, x, lie2 });
    }
    let visible = match side {
        Side::Plus => lie2 > 0.0,
        Side::Minus => lie2 < 0.0,
    };
    Ok(if visible {
        Visibility::Visible
    } else {
        Visibility::Invisible
    })
}

/// Filippov sliding field `(X-h X+ - X+h X-) / (X-h - X+h)` at `(x, 0)`.
pub fn sliding_field(model: &FilippovModel, t: f64, x: f64) -> Result<Vec2, FieldError> {
    let z = Vec2::new(x, 0.0);
    let xp = model.field(Side::Plus, t, z);
    let xm = model.field(Side::Minus, t, z);
    let denominator = xm.y - xp.y;
    if denominator.abs() <= model.tol_tangency {
        return Err(FieldError::DivisionDegeneracy { t, x, denominator });
    }
    let region = classify_normals(xp.y, xm.y, model.tol_tangency);
    if !matches!(region, RegionKind::Sliding | RegionKind::Escaping) {
        return Err(FieldError::NotSlidingRegion { t, x, region });
    }
    Ok(Vec2::new(sliding_x_velocity(xp, xm), 0.0))
}

/// Tangential component of the sliding field; the normal component is zero
/// by construction.
#[inline]
pub(crate) fn sliding_x_velocity(xp: Vec2, xm: Vec2) -> f64 {
    (xm.y * xp.x - xp.y * xm.x) / (xm.y - xp.y)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ReversibilityReport {
    pub max_defect: f64,
    pub worst_point: Vec2,
    pub reversible: bool,
    pub tolerance: f64,
}

/// Largest `‖F+(z) + R F-(R z)‖` over `grid`.
pub fn check_reversibility(model: &FilippovModel, grid: &[Vec2]) -> ReversibilityReport {
    check_reversibility_with(model, grid, TOL_REVERSIBILITY)
}

pub fn check_reversibility_with(
    model: &FilippovModel,
    grid: &[Vec2],
    tol: f64,
) -> ReversibilityReport {
    let mut max_defect = 0.0;
    let mut worst_point = grid.first().copied().unwrap_or_else(Vec2::zeros);
    for &z in grid {
        let d =
            (model.f_plus.eval(0.0, z) + involution(model.f_minus.eval(0.0, involution(z)))).norm();
        if d > max_defect {
            max_defect = d;
            worst_point = z;
        }
    }
    ReversibilityReport {
        max_defect,
        worst_point,
        reversible: max_defect <= tol,
        tolerance: tol,
    }
}

/// Uniform `n × n` grid over a rectangle.
pub fn sample_grid(x_range: (f64, f64), y_range: (f64, f64), n: usize) -> Vec<Vec2> {
    let n = n.max(2);
    let step = |r: (f64, f64), i: usize| r.0 + (r.1 - r.0) * i as f64 / (n - 1) as f64;
    (0..n)
        .flat_map(|i| (0..n).map(move |j| Vec2::new(step(x_range, i), step(y_range, j))))
        .collect()
}
