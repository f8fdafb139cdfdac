//! Melnikov function of the annulus, the two-fold constant `g_θ`, the
//! first-order fold displacements and the two-fold threshold.

use std::io::{self, Write};
use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::annulus::{AnnulusData, AnnulusError, AnnulusOrbit};
use crate::fields::{involution, FieldError, FilippovModel, Side};
use crate::quadrature::{integrate, QuadratureError};
use crate::{wedge, Mat2, Vec2};

/// Default absolute tolerance of the Melnikov quadratures.
pub const TOL_QUAD: f64 = 1e-9;

const SINGULAR_DET: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MelnikovError {
    #[error("fundamental matrix is singular at t = {t} (det = {det:e})")]
    SingularFundamentalMatrix { t: f64, det: f64 },
    #[error(transparent)]
    Quadrature(#[from] QuadratureError),
    #[error(transparent)]
    Annulus(#[from] AnnulusError),
    #[error(transparent)]
    Field(#[from] FieldError),
}

/// `{G-, G+}_θ(t, z) = G-(t + θ, z) + R G+(-t + θ, R z)`: how far the
/// perturbation is from being reversible along the shifted time.
pub fn rev_defect(model: &FilippovModel, theta: f64, t: f64, z: Vec2) -> Vec2 {
    model.g_minus.eval(t + theta, z) + involution(model.g_plus.eval(-t + theta, involution(z)))
}

/// `Y⁻¹ v` by the adjugate formula.
fn solve_fundamental(y: Mat2, v: Vec2, t: f64) -> Result<Vec2, MelnikovError> {
    let det = y.determinant();
    if det.abs() <= SINGULAR_DET {
        return Err(MelnikovError::SingularFundamentalMatrix { t, det });
    }
    Ok(Vec2::new(
        y[(1, 1)] * v.x - y[(0, 1)] * v.y,
        -y[(1, 0)] * v.x + y[(0, 0)] * v.y,
    ) / det)
}

/// Value of a quadrature-based quantity with its error estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Estimate {
    pub value: f64,
    pub error: f64,
}

/// First-order displacement of the fold lines of `X±` near `p_v` and `p_i`.
#[derive(Debug, Clone)]
pub struct FoldShift {
    model: FilippovModel,
    pub x_v: f64,
    pub x_i: f64,
    slope_v: [f64; 2],
    slope_i: [f64; 2],
}

impl FoldShift {
    fn idx(side: Side) -> usize {
        match side {
            Side::Plus => 0,
            Side::Minus => 1,
        }
    }

    fn g2(&self, side: Side, theta: f64, x: f64) -> f64 {
        self.model
            .perturbation(side)
            .eval(theta, Vec2::new(x, 0.0))
            .y
    }

    /// `ν_v±(θ) = -G2±(θ, p_v) / ∂xF2±(p_v)`.
    pub fn nu_v(&self, side: Side, theta: f64) -> f64 {
        -self.g2(side, theta, self.x_v) / self.slope_v[Self::idx(side)]
    }

    /// `ν_i±(θ) = -G2±(θ, p_i) / ∂xF2±(p_i)`.
    pub fn nu_i(&self, side: Side, theta: f64) -> f64 {
        -self.g2(side, theta, self.x_i) / self.slope_i[Self::idx(side)]
    }

    /// `ℓ_v±(θ; ε) ≈ x_v + ε ν_v±(θ)`.
    pub fn ell_v(&self, side: Side, theta: f64, eps: f64) -> f64 {
        self.x_v + eps * self.nu_v(side, theta)
    }

    pub fn ell_i(&self, side: Side, theta: f64, eps: f64) -> f64 {
        self.x_i + eps * self.nu_i(side, theta)
    }
}

/// Values of `M` on a `(θ, x)` grid; `values[j][k]` is at `(thetas[k], xs[j])`.
#[derive(Debug, Clone, Serialize)]
pub struct MelnikovGrid {
    pub thetas: Vec<f64>,
    pub xs: Vec<f64>,
    pub values: Vec<Vec<Estimate>>,
}

impl MelnikovGrid {
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "theta,x,M,err")?;
        for (j, x) in self.xs.iter().enumerate() {
            for (k, th) in self.thetas.iter().enumerate() {
                let e = self.values[j][k];
                writeln!(w, "{th:.15e},{x:.15e},{:.15e},{:.3e}", e.value, e.error)?;
            }
        }
        Ok(())
    }
}

/// Melnikov quantities of a model over its annulus.
pub struct MelnikovEvaluator<'a> {
    pub model: &'a FilippovModel,
    pub data: &'a AnnulusData,
    pub tol_quad: f64,
}

/// `M(·, x)` for a fixed annulus orbit.
pub struct MelnikovSlice<'a> {
    model: &'a FilippovModel,
    orbit: Arc<AnnulusOrbit>,
    landing_field: Vec2,
    end_matrix: Mat2,
    tol_quad: f64,
}

impl MelnikovSlice<'_> {
    pub fn x(&self) -> f64 {
        self.orbit.x
    }

    pub fn sigma_bar(&self) -> f64 {
        self.orbit.sigma_bar
    }

    pub fn eval(&self, theta: f64) -> Result<Estimate, MelnikovError> {
        let orbit = &self.orbit;
        let mut fail = None;
        let integrand = |t: f64| {
            let (z, y) = orbit.lower.state_and_fundamental(t);
            match solve_fundamental(y, rev_defect(self.model, theta, t, z), t) {
                Ok(v) => [v.x, v.y],
                Err(e) => {
                    fail.get_or_insert(e);
                    [0.0, 0.0]
                }
            }
        };
        let i = integrate(integrand, 0.0, orbit.sigma_bar, &[], self.tol_quad, 2048)?;
        if let Some(e) = fail {
            return Err(e);
        }
        let v = self.end_matrix * Vec2::new(i[0], i[1]);
        let value = wedge(self.landing_field, v);
        let scale = self.landing_field.norm() * self.end_matrix.norm();
        Ok(Estimate {
            value,
            error: self.tol_quad * scale.max(1.0),
        })
    }

    /// `θ ↦ M(θ, x)` as a plain function, with failures mapped to NaN.
    pub fn value(&self, theta: f64) -> f64 {
        self.eval(theta).map_or(f64::NAN, |e| e.value)
    }
}

impl<'a> MelnikovEvaluator<'a> {
    pub fn new(model: &'a FilippovModel, data: &'a AnnulusData) -> Self {
        Self {
            model,
            data,
            tol_quad: TOL_QUAD,
        }
    }

    pub fn slice(&self, x: f64) -> Result<MelnikovSlice<'a>, MelnikovError> {
        let orbit = self.data.annulus_orbit(x)?;
        let (z, y) = orbit.lower.state_and_fundamental(orbit.sigma_bar);
        let landing_field = self.data.f_minus.eval(0.0, z);
        Ok(MelnikovSlice {
            model: self.model,
            orbit,
            landing_field,
            end_matrix: y,
            tol_quad: self.tol_quad,
        })
    }

    /// `M(θ, x) = F(γ(σ̄)) ∧ [Y(σ̄) ∫₀^σ̄ Y(t)⁻¹ {G-, G+}_θ(t, γ(t)) dt]`.
    pub fn melnikov(&self, theta: f64, x: f64) -> Result<Estimate, MelnikovError> {
        self.slice(x)?.eval(theta)
    }

    /// `g_θ = ⟨row₂ Y(σ_v), ∫₀^σ_v Y(t)⁻¹ (G-(t+θ, Γ) - R G+(-t+θ, R Γ)) dt⟩`
    /// along the lower orbit through the visible fold.
    pub fn g_theta(&self, theta: f64) -> Result<Estimate, MelnikovError> {
        let orbit = self.data.annulus_orbit(self.data.x_v())?;
        let model = self.model;
        let mut fail = None;
        let integrand = |t: f64| {
            let (z, y) = orbit.lower.state_and_fundamental(t);
            let d = model.g_minus.eval(t + theta, z)
                - involution(model.g_plus.eval(-t + theta, involution(z)));
            match solve_fundamental(y, d, t) {
                Ok(v) => [v.x, v.y],
                Err(e) => {
                    fail.get_or_insert(e);
                    [0.0, 0.0]
                }
            }
        };
        let i = integrate(integrand, 0.0, orbit.sigma_bar, &[], self.tol_quad, 2048)?;
        if let Some(e) = fail {
            return Err(e);
        }
        let y = orbit.fundamental(orbit.sigma_bar);
        let value = y[(1, 0)] * i[0] + y[(1, 1)] * i[1];
        Ok(Estimate {
            value,
            error: self.tol_quad * y.norm().max(1.0),
        })
    }

    pub fn fold_shift(&self) -> Result<FoldShift, MelnikovError> {
        let slope =
            |side: Side, x: f64| self.model.unperturbed(side).jac(0.0, Vec2::new(x, 0.0))[(1, 0)];
        let (x_v, x_i) = (self.data.x_v(), self.data.x_i());
        let slope_v = [slope(Side::Plus, x_v), slope(Side::Minus, x_v)];
        let slope_i = [slope(Side::Plus, x_i), slope(Side::Minus, x_i)];
        for (k, s) in slope_v.iter().chain(&slope_i).enumerate() {
            if *s == 0.0 {
                let side = if k % 2 == 0 { Side::Plus } else { Side::Minus };
                let x = if k < 2 { x_v } else { x_i };
                return Err(FieldError::DegenerateTangency { side, x, lie2: 0.0 }.into());
            }
        }
        Ok(FoldShift {
            model: self.model.clone(),
            x_v,
            x_i,
            slope_v,
            slope_i,
        })
    }

    /// `2F2(q_v) / (F1(p_v) ∂xF2(p_v))`.
    pub fn threshold_prefactor(&self) -> f64 {
        let fq = self.data.f_minus.eval(0.0, self.data.q_v);
        let fp = self.data.f_minus.eval(0.0, self.data.p_v());
        2.0 * fq.y / (fp.x * self.data.folds.p_v.df2dx)
    }

    /// `G2±(θ, p_v)` as `(plus, minus)`.
    pub fn g2_at_pv(&self, theta: f64) -> (f64, f64) {
        let p = self.data.p_v();
        (
            self.model.g_plus.eval(theta, p).y,
            self.model.g_minus.eval(theta, p).y,
        )
    }

    /// Prefactor times `max{G2+(θ, p_v), G2-(θ, p_v)}`.
    pub fn theorem_b_threshold(&self, theta: f64) -> f64 {
        let (gp, gm) = self.g2_at_pv(theta);
        self.threshold_prefactor() * gp.max(gm)
    }

    /// `M` on the tensor grid `thetas × xs`, computed in parallel over `x`.
    pub fn grid(&self, thetas: &[f64], xs: &[f64]) -> Result<MelnikovGrid, MelnikovError> {
        let values = xs
            .par_iter()
            .map(|&x| {
                let slice = self.slice(x)?;
                thetas
                    .iter()
                    .map(|&th| slice.eval(th))
                    .collect::<Result<Vec<_>, _>>()
            })
            .collect::<Result<Vec<_>, MelnikovError>>()?;
        Ok(MelnikovGrid {
            thetas: thetas.to_vec(),
            xs: xs.to_vec(),
            values,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::SmoothField;
    use crate::flow::dopri;
    use crate::hamiltonian::HamiltonianParams;
    use std::f64::consts::PI;

    fn setup(
        alpha: f64,
        lambda: f64,
        sigma: f64,
    ) -> (HamiltonianParams, FilippovModel, AnnulusData) {
        let h = HamiltonianParams::new(alpha, lambda, sigma);
        let m = h.model(0.0);
        let d = AnnulusData::new(h.f_minus(), (-3.0 * alpha.sqrt(), 3.0 * alpha.sqrt())).unwrap();
        (h, m, d)
    }

    #[test]
    fn defect_of_reference_perturbation() {
        let (h, m, _) = setup(1.0, 0.7, 2.0);
        for &(th, t) in &[(0.3, 0.0), (1.1, 0.4), (2.5, 1.9)] {
            let d = rev_defect(&m, th, t, Vec2::new(0.2, -0.1));
            let expected = (PI * (t + th) / h.sigma).sin() - 0.7 * (PI * (th - t) / h.sigma).sin();
            assert_eq!(d.x, 0.0);
            assert!((d.y - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn reversible_perturbation_has_no_defect() {
        let (h, _, d) = setup(1.0, 0.0, 2.0);
        // Autonomous pair with G+(z) = -R G-(R z): no defect at any phase.
        let g = SmoothField::from_fns(
            |_, z: Vec2| Vec2::new(z.y * z.x, z.x + 0.5),
            |_, z: Vec2| Mat2::new(z.y, z.x, 1.0, 0.0),
        );
        let m = FilippovModel::reversible(h.f_minus(), g.clone(), g.reflected(), 2.0);
        let ev = MelnikovEvaluator::new(&m, &d);
        for &th in &[0.0, 0.9, 2.2] {
            for &t in &[0.0, 0.5, 1.3] {
                assert!(rev_defect(&m, th, t, Vec2::new(0.4, -0.3)).norm() < 1e-15);
            }
            assert!(ev.melnikov(th, 0.2).unwrap().value.abs() < 1e-12);
        }
        // Time-dependent pair G+(s, z) = -R G-(-s, R z): the system is
        // reversible about t = 0, so the defect vanishes at phase 0.
        let g = SmoothField::periodic_from_fns(
            |t, z: Vec2| Vec2::new(z.y * t.cos(), z.x + (2.0 * t).sin()),
            |t, _| Mat2::new(0.0, t.cos(), 1.0, 0.0),
            2.0 * PI,
        );
        let m = FilippovModel::reversible(h.f_minus(), g.clone(), g.time_reversed(), PI);
        for &t in &[0.0, 0.5, 1.3] {
            assert!(rev_defect(&m, 0.0, t, Vec2::new(0.4, -0.3)).norm() < 1e-15);
        }
        let ev = MelnikovEvaluator::new(&m, &d);
        assert!(ev.melnikov(0.0, 0.2).unwrap().value.abs() < 1e-12);
        assert!(ev.melnikov(0.8, 0.2).unwrap().value.abs() > 1e-3);
    }

    #[test]
    fn resonant_values() {
        let (h, m, d) = setup(1.0, 2.0, 2.0);
        let ev = MelnikovEvaluator::new(&m, &d);
        let xs = h.analytic_x_sigma(2.0).unwrap();
        for &th in &[0.0, 1.0, 2.0, 3.0] {
            let v = ev.melnikov(th, xs).unwrap().value;
            assert!(
                (v + (12.0 / PI) * (PI * th / 2.0).cos()).abs() < 1e-7,
                "θ = {th}: {v}"
            );
        }
        let (_, m, d) = setup(1.0, -1.0, 2.0);
        let ev = MelnikovEvaluator::new(&m, &d);
        for &th in &[0.0, 0.5, 1.7] {
            assert!(ev.melnikov(th, xs).unwrap().value.abs() < 1e-8);
        }
    }

    #[test]
    fn matches_closed_form_off_resonance() {
        let (h, m, d) = setup(1.0, -0.3, 2.4);
        let ev = MelnikovEvaluator::new(&m, &d);
        for &x in &[-0.8, -0.2, 0.5, 1.0] {
            let slice = ev.slice(x).unwrap();
            for k in 0..8 {
                let th = 4.8 * k as f64 / 8.0;
                assert!((slice.value(th) - h.analytic_melnikov(th, x)).abs() < 1e-7);
                assert!((slice.value(th) - slice.value(th + 4.8)).abs() < 1e-8);
            }
        }
    }

    /// Independent oracle: the first variation `ψ' = DF(γ) ψ + {G-, G+}_θ(t, γ)`,
    /// `ψ(0) = 0`, integrated as an ODE; then `M = F(γ(σ̄)) ∧ ψ(σ̄)`.
    #[test]
    fn matches_first_variation_ode() {
        let (_, m, d) = setup(1.0, 0.6, 2.7);
        let ev = MelnikovEvaluator::new(&m, &d);
        let f = d.f_minus.clone();
        for &x in &[-0.5, 0.3, 0.95] {
            let sb = d.half_return_time(x).unwrap();
            for &th in &[0.2, 1.9, 4.0] {
                let rhs = |t: f64, s: &[f64; 4]| {
                    let z = Vec2::new(s[0], s[1]);
                    let v = f.eval(t, z);
                    let dpsi = f.jac(t, z) * Vec2::new(s[2], s[3]) + rev_defect(&m, th, t, z);
                    [v.x, v.y, dpsi.x, dpsi.y]
                };
                let ctl = dopri::StepControl {
                    rtol: 1e-12,
                    atol: 1e-13,
                    ..Default::default()
                };
                let sol = dopri::integrate(rhs, 0.0, [x, 0.0, 0.0, 0.0], sb, ctl).unwrap();
                let s = sol.last();
                let oracle = wedge(f.eval(0.0, Vec2::new(s[0], s[1])), Vec2::new(s[2], s[3]));
                let v = ev.melnikov(th, x).unwrap().value;
                assert!(
                    (v - oracle).abs() < 1e-8,
                    "x = {x}, θ = {th}: {v} vs {oracle}"
                );
            }
        }
    }

    #[test]
    fn g_theta_values() {
        for &l in &[-1.5, 0.5, 1.0, 2.0] {
            let (h, m, d) = setup(1.0, l, 3.0);
            let ev = MelnikovEvaluator::new(&m, &d);
            for &th in &[0.0, 1.5, 3.0, 4.5] {
                let g = ev.g_theta(th).unwrap().value;
                assert!(
                    (g - h.analytic_g(th)).abs() < 1e-8,
                    "λ = {l}, θ = {th}: {g}"
                );
            }
        }
    }

    #[test]
    fn fold_shift_values() {
        let (_, m, d) = setup(1.0, -1.5, 3.0);
        let ev = MelnikovEvaluator::new(&m, &d);
        let fs = ev.fold_shift().unwrap();
        assert!((fs.nu_v(Side::Minus, 4.5) - 0.5).abs() < 1e-14);
        assert!((fs.nu_v(Side::Plus, 4.5) + 0.75).abs() < 1e-14);
        // Sliding strip ⇔ ℓ_v- < ℓ_v+ ⇔ G2+ < G2-.
        for k in 0..24 {
            let th = 0.25 * k as f64;
            let (gp, gm) = ev.g2_at_pv(th);
            let strip = fs.ell_v(Side::Minus, th, 0.01) < fs.ell_v(Side::Plus, th, 0.01);
            if (gp - gm).abs() > 1e-12 {
                assert_eq!(strip, gp < gm, "θ = {th}");
            }
        }
        let (_, m0, d0) = setup(1.0, 0.0, 3.0);
        let m0 = FilippovModel {
            g_minus: SmoothField::zero(),
            ..m0
        };
        let fs0 = MelnikovEvaluator::new(&m0, &d0).fold_shift().unwrap();
        assert_eq!(fs0.nu_v(Side::Minus, 1.0), 0.0);
        assert_eq!(fs0.nu_i(Side::Plus, 1.0), 0.0);
    }

    #[test]
    fn thresholds() {
        let (_, m, d) = setup(1.0, 2.0, 3.0);
        let ev = MelnikovEvaluator::new(&m, &d);
        assert!((ev.threshold_prefactor() + 3.0).abs() < 1e-8);
        assert!((ev.theorem_b_threshold(1.5) + 6.0).abs() < 1e-8);
        let (_, m, d) = setup(1.0, -1.5, 3.0);
        let ev = MelnikovEvaluator::new(&m, &d);
        assert!((ev.theorem_b_threshold(4.5) + 4.5).abs() < 1e-8);
    }

    #[test]
    fn grid_and_csv() {
        let (h, m, d) = setup(1.0, 0.5, 2.0);
        let ev = MelnikovEvaluator::new(&m, &d);
        let thetas: Vec<f64> = (0..4).map(|k| k as f64).collect();
        let xs = vec![-0.5, 0.0, 0.5];
        let g = ev.grid(&thetas, &xs).unwrap();
        for (j, &x) in xs.iter().enumerate() {
            for (k, &th) in thetas.iter().enumerate() {
                assert!((g.values[j][k].value - h.analytic_melnikov(th, x)).abs() < 1e-7);
            }
        }
        let mut buf = Vec::new();
        g.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().next(), Some("theta,x,M,err"));
        assert_eq!(text.lines().count(), 13);
    }
}
