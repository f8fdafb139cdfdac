//! Closed-form reference model.
//!
//! `H(x, y) = |y| - x³/3 + α x` gives the piecewise Hamiltonian skeleton
//! `F-(x, y) = (-1, x² - α)` below and `F+(x, y) = (1, x² - α)` above `y = 0`,
//! perturbed by `G-(t) = (0, sin(π t/σ))` and `G+(t) = (0, λ sin(π t/σ))`.
//! Every numeric path in the crate is checked against the formulas here.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fields::{FilippovModel, PolyTrigField, SmoothField, Term};
use crate::predictor::TwoFoldOutcome;
use crate::{Mat2, Vec2};

/// Registry name of this model in the command-line tool.
pub const MODEL_NAME: &str = "hamiltonian-twofold";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HamiltonianError {
    #[error("{what} = {value} is outside its admissible range {range}")]
    OutOfRange {
        what: &'static str,
        value: f64,
        range: String,
    },
    #[error("alpha must be positive, got {0}")]
    NonPositiveAlpha(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HamiltonianParams {
    pub alpha: f64,
    pub lambda: f64,
    pub sigma: f64,
}

/// One row of the expected two-fold outcomes at `σ = 3√α`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TableRow {
    pub theta_star: f64,
    pub expected: TwoFoldOutcome,
}

impl HamiltonianParams {
    pub fn new(alpha: f64, lambda: f64, sigma: f64) -> Self {
        Self {
            alpha,
            lambda,
            sigma,
        }
    }

    /// Parameters at the boundary `σ = 3√α` where the two-fold is reached.
    pub fn at_two_fold(alpha: f64, lambda: f64) -> Self {
        Self::new(alpha, lambda, 3.0 * alpha.sqrt())
    }

    pub fn validate(&self) -> Result<(), HamiltonianError> {
        if !(self.alpha > 0.0) {
            return Err(HamiltonianError::NonPositiveAlpha(self.alpha));
        }
        let hi = self.sigma_max();
        if !(self.sigma > 0.0 && self.sigma <= hi * (1.0 + 1e-12)) {
            return Err(HamiltonianError::OutOfRange {
                what: "sigma",
                value: self.sigma,
                range: format!("(0, {hi}]"),
            });
        }
        Ok(())
    }

    fn sa(&self) -> f64 {
        self.alpha.sqrt()
    }

    pub fn f_minus(&self) -> SmoothField {
        SmoothField::new(PolyTrigField {
            x: vec![Term::constant(-1.0)],
            y: vec![Term::monomial(1.0, 2, 0), Term::constant(-self.alpha)],
            period: None,
        })
    }

    fn forcing(&self, amplitude: f64) -> SmoothField {
        SmoothField::new(PolyTrigField {
            x: vec![],
            y: vec![Term::forced(amplitude, 0, 0, PI / self.sigma, 0.0)],
            period: Some(2.0 * self.sigma),
        })
    }

    pub fn g_minus(&self) -> SmoothField {
        self.forcing(1.0)
    }

    pub fn g_plus(&self) -> SmoothField {
        self.forcing(self.lambda)
    }

    pub fn model(&self, epsilon: f64) -> FilippovModel {
        FilippovModel::reversible(self.f_minus(), self.g_minus(), self.g_plus(), self.sigma)
            .with_epsilon(epsilon)
    }

    /// `H(x, y) = |y| - x³/3 + α x`.
    pub fn energy(&self, z: Vec2) -> f64 {
        z.y.abs() - z.x.powi(3) / 3.0 + self.alpha * z.x
    }

    /// Invisible fold `p_i = (-√α, 0)`.
    pub fn p_i(&self) -> Vec2 {
        Vec2::new(-self.sa(), 0.0)
    }

    /// Visible fold `p_v = (√α, 0)`.
    pub fn p_v(&self) -> Vec2 {
        Vec2::new(self.sa(), 0.0)
    }

    /// Landing point `q_v = (-2√α, 0)` of the lower orbit leaving `p_v`.
    pub fn q_v(&self) -> Vec2 {
        Vec2::new(-2.0 * self.sa(), 0.0)
    }

    /// `Γ-(t, x, y) = (x - t, (t³ - 3t²x + 3t x² + 3y - 3tα)/3)`.
    pub fn analytic_flow_minus(&self, t: f64, z: Vec2) -> Vec2 {
        let (x, y, a) = (z.x, z.y, self.alpha);
        Vec2::new(
            x - t,
            (t.powi(3) - 3.0 * t * t * x + 3.0 * t * x * x + 3.0 * y - 3.0 * t * a) / 3.0,
        )
    }

    /// `Γ+(t, z) = R Γ-(-t, R z)`.
    pub fn analytic_flow_plus(&self, t: f64, z: Vec2) -> Vec2 {
        let w = self.analytic_flow_minus(-t, Vec2::new(z.x, -z.y));
        Vec2::new(w.x, -w.y)
    }

    /// Fundamental matrix of the lower flow, `[[1, 0], [2tx - t², 1]]`.
    pub fn analytic_fundamental(&self, t: f64, x: f64) -> Mat2 {
        Mat2::new(1.0, 0.0, -t * t + 2.0 * t * x, 1.0)
    }

    /// `σ̄(x) = (3x + √3 √(4α - x²))/2` without range checks.
    pub fn sigma_bar(&self, x: f64) -> f64 {
        0.5 * (3.0 * x + 3f64.sqrt() * (4.0 * self.alpha - x * x).max(0.0).sqrt())
    }

    pub fn sigma_bar_prime(&self, x: f64) -> f64 {
        0.5 * (3.0 - 3f64.sqrt() * x / (4.0 * self.alpha - x * x).sqrt())
    }

    /// Largest half-return time over the annulus, `σ̄(√α) = 3√α`.
    pub fn sigma_max(&self) -> f64 {
        3.0 * self.sa()
    }

    /// `σ̄(x)` for `x ∈ (-√α, √α]`.
    pub fn analytic_sigma(&self, x: f64) -> Result<f64, HamiltonianError> {
        let sa = self.sa();
        if !(x > -sa && x <= sa) {
            return Err(HamiltonianError::OutOfRange {
                what: "x",
                value: x,
                range: format!("(-{sa}, {sa}]"),
            });
        }
        Ok(self.sigma_bar(x))
    }

    /// `x_σ = (3σ - √3 √(12α - σ²))/6`, the inverse of `σ̄`.
    pub fn analytic_x_sigma(&self, sigma: f64) -> Result<f64, HamiltonianError> {
        let hi = self.sigma_max();
        if !(sigma > 0.0 && sigma <= hi) {
            return Err(HamiltonianError::OutOfRange {
                what: "sigma",
                value: sigma,
                range: format!("(0, {hi}]"),
            });
        }
        Ok((3.0 * sigma - 3f64.sqrt() * (12.0 * self.alpha - sigma * sigma).max(0.0).sqrt()) / 6.0)
    }

    /// Residual of `√(36α + 2σ(√(36α - 3σ²) - σ)) = σ + √(36α - 3σ²)`,
    /// the identity that turns `σ̄(x_σ)` back into `σ`.
    pub fn simplification_identity_residual(&self) -> f64 {
        let (a, s) = (self.alpha, self.sigma);
        let r = (36.0 * a - 3.0 * s * s).sqrt();
        (36.0 * a + 2.0 * s * (r - s)).sqrt() - (s + r)
    }

    /// Melnikov function of the annulus orbit through `(x, 0)`:
    /// `(σ/π) [cos(π(σ̄+θ)/σ) + λ cos(π(σ̄-θ)/σ) - (1+λ) cos(πθ/σ)]`.
    pub fn analytic_melnikov(&self, theta: f64, x: f64) -> f64 {
        let (s, l) = (self.sigma, self.lambda);
        let sb = self.sigma_bar(x);
        (s / PI)
            * ((PI * (sb + theta) / s).cos() + l * (PI * (sb - theta) / s).cos()
                - (1.0 + l) * (PI * theta / s).cos())
    }

    /// `M(θ, x_σ) = -(2(1+λ)σ/π) cos(πθ/σ)`.
    pub fn melnikov_resonant(&self, theta: f64) -> f64 {
        -(2.0 * (1.0 + self.lambda) * self.sigma / PI) * (PI * theta / self.sigma).cos()
    }

    /// `∂M/∂θ(θ, x_σ) = 2(1+λ) sin(πθ/σ)`.
    pub fn melnikov_resonant_slope(&self, theta: f64) -> f64 {
        2.0 * (1.0 + self.lambda) * (PI * theta / self.sigma).sin()
    }

    /// `g_θ = (6√α(1-λ)/π) cos(πθ/(3√α))`, valid at `σ = 3√α`.
    pub fn analytic_g(&self, theta: f64) -> f64 {
        let sa = self.sa();
        (6.0 * sa * (1.0 - self.lambda) / PI) * (PI * theta / (3.0 * sa)).cos()
    }

    /// `G2-(θ, p_v)`.
    pub fn g2_minus(&self, theta: f64) -> f64 {
        (PI * theta / self.sigma).sin()
    }

    /// `G2+(θ, p_v)`.
    pub fn g2_plus(&self, theta: f64) -> f64 {
        self.lambda * (PI * theta / self.sigma).sin()
    }

    /// Zeros of `θ ↦ M(θ, x_σ)` in `[0, 2σ)`: `σ/2` and `3σ/2`.
    pub fn resonant_zeros(&self) -> [f64; 2] {
        [0.5 * self.sigma, 1.5 * self.sigma]
    }

    /// Prefactor `2F2(q_v)/(F1(p_v) ∂xF2(p_v))` of the two-fold threshold,
    /// which is `-3√α`.
    pub fn threshold_prefactor(&self) -> f64 {
        let sa = self.sa();
        -3.0 * self.alpha / sa
    }

    /// Expected outcomes at the zeros `3√α/2` and `9√α/2` when `σ = 3√α`.
    ///
    /// For `λ < 0` (`λ ≠ -1`) both zeros slide, on `Σs` at the first and on
    /// `Σe` at the second. For `0 < λ < 1` the first slides on `Σs` and the
    /// second crosses; for `λ > 1` the first slides on `Σe` and the second
    /// crosses. At `λ ∈ {-1, 0, 1}` the table is inconclusive.
    pub fn proposition_table(&self) -> Vec<TableRow> {
        let sa = self.sa();
        let (t1, t2) = (1.5 * sa, 4.5 * sa);
        let l = self.lambda;
        let (e1, e2) = if l == -1.0 || l == 0.0 || l == 1.0 {
            (TwoFoldOutcome::Inconclusive, TwoFoldOutcome::Inconclusive)
        } else if l < 0.0 {
            (
                TwoFoldOutcome::SlidingOnSigmaS,
                TwoFoldOutcome::SlidingOnSigmaE,
            )
        } else if l < 1.0 {
            (
                TwoFoldOutcome::SlidingOnSigmaS,
                TwoFoldOutcome::CrossingTwoFold,
            )
        } else {
            (
                TwoFoldOutcome::SlidingOnSigmaE,
                TwoFoldOutcome::CrossingTwoFold,
            )
        };
        vec![
            TableRow {
                theta_star: t1,
                expected: e1,
            },
            TableRow {
                theta_star: t2,
                expected: e2,
            },
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::integrate_scalar;

    fn p() -> HamiltonianParams {
        HamiltonianParams::new(1.0, -1.5, 3.0)
    }

    #[test]
    fn flow_anchor_values() {
        let h = p();
        assert!(
            (h.analytic_flow_minus(0.0, Vec2::new(0.3, -0.2)) - Vec2::new(0.3, -0.2)).norm()
                < 1e-15
        );
        let q = h.analytic_flow_minus(3.0, Vec2::new(1.0, 0.0));
        assert!((q - Vec2::new(-2.0, 0.0)).norm() < 1e-14);
        let z = h.analytic_flow_minus(1.0, Vec2::zeros());
        assert!((z - Vec2::new(-1.0, -2.0 / 3.0)).norm() < 1e-15);
    }

    #[test]
    fn flow_solves_the_ode() {
        let h = HamiltonianParams::new(2.0, 0.0, 1.0);
        let z0 = Vec2::new(0.4, -0.3);
        let dt = 1e-6;
        for k in 0..10 {
            let t = 0.3 * k as f64;
            let d = (h.analytic_flow_minus(t + dt, z0) - h.analytic_flow_minus(t - dt, z0))
                / (2.0 * dt);
            let z = h.analytic_flow_minus(t, z0);
            assert!((d - Vec2::new(-1.0, z.x * z.x - 2.0)).norm() < 1e-8);
            assert!((h.energy(z) - h.energy(z0)).abs() < 1e-12 || z.y > 0.0);
        }
    }

    #[test]
    fn sigma_anchor_values() {
        let h = p();
        assert_eq!(h.analytic_sigma(1.0).unwrap(), 3.0);
        assert!((h.analytic_sigma(0.0).unwrap() - 3f64.sqrt()).abs() < 1e-15);
        let h2 = HamiltonianParams::new(1.0, 2.0, 2.0);
        let xs = h2.analytic_x_sigma(2.0).unwrap();
        assert!((xs - (1.0 - 6f64.sqrt() / 3.0)).abs() < 1e-15);
        assert!((xs - 0.183503).abs() < 1e-6);
        assert!(h.analytic_sigma(-1.0).is_err());
        assert!(h.analytic_sigma(1.1).is_err());
        assert!(h.analytic_x_sigma(3.5).is_err());
    }

    #[test]
    fn sigma_round_trip() {
        let h = p();
        for k in 1..100 {
            let s = 3.0 * k as f64 / 100.0;
            let x = h.analytic_x_sigma(s).unwrap();
            assert!((h.analytic_sigma(x).unwrap() - s).abs() < 1e-12, "σ = {s}");
        }
    }

    #[test]
    fn lower_orbit_returns_at_sigma_bar() {
        let h = p();
        for k in 1..20 {
            let x = -1.0 + 2.0 * k as f64 / 20.0;
            let z = h.analytic_flow_minus(h.sigma_bar(x), Vec2::new(x, 0.0));
            assert!(z.y.abs() < 1e-12, "x = {x}");
        }
    }

    #[test]
    fn identity_holds() {
        for &s in &[0.1, 1.0, 2.0, 2.9, 3.0] {
            let h = HamiltonianParams::new(1.0, 0.0, s);
            assert!(h.simplification_identity_residual().abs() < 1e-13);
        }
    }

    #[test]
    fn melnikov_anchor_values() {
        for &(s, l) in &[(2.0, 2.0), (1.0, -0.5), (2.5, 0.3)] {
            let h = HamiltonianParams::new(1.0, l, s);
            let xs = h.analytic_x_sigma(s).unwrap();
            for k in 0..16 {
                let th = 2.0 * s * k as f64 / 16.0;
                assert!((h.analytic_melnikov(th, xs) - h.melnikov_resonant(th)).abs() < 1e-12);
            }
        }
        let h = HamiltonianParams::new(1.0, -1.0, 2.0);
        let xs = h.analytic_x_sigma(2.0).unwrap();
        assert!(h.analytic_melnikov(0.7, xs).abs() < 1e-14);
        for &l in &[-1.5, 0.5, 2.0] {
            let h = HamiltonianParams::at_two_fold(1.0, l);
            for k in 0..12 {
                let th = 0.5 * k as f64;
                let expected = -(6.0 * (1.0 + l) / PI) * (PI * th / 3.0).cos();
                assert!((h.analytic_melnikov(th, 1.0) - expected).abs() < 1e-12);
            }
        }
    }

    /// Independent oracle: integrate the defining formula directly,
    /// `M = F(γ(σ̄)) ∧ Y(σ̄) ∫ Y⁻¹ {G-, G+}_θ dt`, with the closed-form flow.
    #[test]
    fn melnikov_matches_direct_quadrature() {
        for &(l, s) in &[(-1.5, 3.0), (0.5, 2.0), (2.0, 1.3)] {
            let h = HamiltonianParams::new(1.0, l, s);
            for &x in &[-0.6, 0.0, 0.35, 0.9] {
                for &th in &[0.0, 0.4, 1.7, 3.1] {
                    let sb = h.sigma_bar(x);
                    let f = |t: f64| {
                        let gm = (PI * (t + th) / s).sin();
                        // R G+(-t+θ, R z) has second component -λ sin(π(-t+θ)/σ).
                        let gp = -l * (PI * (-t + th) / s).sin();
                        let yinv = h.analytic_fundamental(t, x).try_inverse().unwrap();
                        (yinv * Vec2::new(0.0, gm + gp)).y
                    };
                    let i2 = integrate_scalar(f, 0.0, sb, 1e-13).unwrap();
                    let y = h.analytic_fundamental(sb, x);
                    let v = y * Vec2::new(0.0, i2);
                    let land = h.analytic_flow_minus(sb, Vec2::new(x, 0.0));
                    let fz = Vec2::new(-1.0, land.x * land.x - 1.0);
                    let m = fz.x * v.y - fz.y * v.x;
                    assert!(
                        (m - h.analytic_melnikov(th, x)).abs() < 1e-10,
                        "λ={l} σ={s} x={x} θ={th}: {m}"
                    );
                }
            }
        }
    }

    #[test]
    fn g_anchor_values() {
        let h = HamiltonianParams::at_two_fold(1.0, -1.5);
        assert!(h.analytic_g(1.5).abs() < 1e-15);
        assert!(h.analytic_g(4.5).abs() < 1e-14);
        assert!((h.analytic_g(0.0) - 6.0 * 2.5 / PI).abs() < 1e-14);
        assert!((h.threshold_prefactor() + 3.0).abs() < 1e-15);
        let h4 = HamiltonianParams::at_two_fold(4.0, 0.0);
        assert!((h4.threshold_prefactor() + 6.0).abs() < 1e-15);
    }

    #[test]
    fn table_rows() {
        use TwoFoldOutcome::*;
        let rows = |l: f64| -> Vec<TwoFoldOutcome> {
            HamiltonianParams::at_two_fold(1.0, l)
                .proposition_table()
                .iter()
                .map(|r| r.expected)
                .collect()
        };
        assert_eq!(rows(-1.5), vec![SlidingOnSigmaS, SlidingOnSigmaE]);
        assert_eq!(rows(-0.5), vec![SlidingOnSigmaS, SlidingOnSigmaE]);
        assert_eq!(rows(0.5), vec![SlidingOnSigmaS, CrossingTwoFold]);
        assert_eq!(rows(2.0), vec![SlidingOnSigmaE, CrossingTwoFold]);
        let t = HamiltonianParams::at_two_fold(1.0, 2.0).proposition_table();
        assert_eq!((t[0].theta_star, t[1].theta_star), (1.5, 4.5));
    }

    #[test]
    fn reversibility_is_exact() {
        let h = p();
        let m = h.model(0.0);
        let grid = crate::fields::sample_grid((-3.0, 3.0), (-3.0, 3.0), 13);
        assert_eq!(
            crate::fields::check_reversibility(&m, &grid).max_defect,
            0.0
        );
    }

    #[test]
    fn upper_flow_is_reflected_lower_flow() {
        let h = p();
        let z = Vec2::new(0.2, 0.0);
        let w = h.analytic_flow_plus(-h.sigma_bar(0.2), z);
        assert!(w.y.abs() < 1e-12);
        assert!((w.x - (0.2 - h.sigma_bar(0.2))).abs() < 1e-12);
    }
}
