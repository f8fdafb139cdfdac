//! Predictions from the Melnikov data: simple zeros give crossing periodic
//! solutions in the annulus; at the two-fold boundary `g_θ` and the fold
//! data decide between crossing and sliding, and the slow–fast reduction
//! fixes the sliding time through the Lambert W function.

mod lambert;

use std::io::{self, Write};

use serde::Serialize;
use thiserror::Error;

pub use lambert::{lambert_w0, lambert_w0_exp};

use crate::annulus::{AnnulusData, AnnulusError};
use crate::fields::FilippovModel;
use crate::melnikov::{MelnikovError, MelnikovEvaluator};
use crate::roots::brent;
use crate::Vec2;

/// Largest `|M(θ*)|` accepted at a reported zero.
pub const TOL_ZERO: f64 = 1e-10;
/// Smallest `|∂M/∂θ|` accepted at a reported zero.
pub const TOL_SLOPE: f64 = 1e-8;
/// Default number of sampling nodes for zero search.
pub const ZERO_NODES: usize = 128;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PredictorError {
    #[error("Melnikov function has no sign change{}", if *.degenerate { " (identically zero to tolerance)" } else { "" })]
    NoZeros { degenerate: bool, max_abs: f64 },
    #[error("zero at θ = {theta} is not simple (slope {slope:e})")]
    NonSimpleZero { theta: f64, slope: f64 },
    #[error("zero at θ = {theta} could only be refined to |M| = {residual:e}")]
    ZeroRefinement { theta: f64, residual: f64 },
    #[error("G2+ and G2- coincide at the visible fold for θ = {theta}")]
    DivisionDegeneracy { theta: f64 },
    #[error("Lambert W argument {y} is below -1/e")]
    OutOfDomain { y: f64 },
    #[error("closure time τ* = {tau} is not negative (A p = {ap}); the sliding inequality fails upstream")]
    PositiveTau { tau: f64, ap: f64 },
    #[error("fast-slow rate p = {p} is not positive at θ = {theta}")]
    NotRepelling { theta: f64, p: f64 },
    #[error(transparent)]
    Melnikov(#[from] MelnikovError),
    #[error(transparent)]
    Annulus(#[from] AnnulusError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum Classification {
    CrossingAnnulus,
    CrossingTwoFold,
    SlidingOnSigmaS,
    SlidingOnSigmaE,
}

/// Outcome of the two-fold criterion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum TwoFoldOutcome {
    CrossingTwoFold,
    SlidingOnSigmaS,
    SlidingOnSigmaE,
    /// `g_θ*` equals the threshold to tolerance, or `G2+ = G2-`; the
    /// criterion is silent.
    Inconclusive,
}

impl TwoFoldOutcome {
    pub fn classification(self) -> Option<Classification> {
        match self {
            Self::CrossingTwoFold => Some(Classification::CrossingTwoFold),
            Self::SlidingOnSigmaS => Some(Classification::SlidingOnSigmaS),
            Self::SlidingOnSigmaE => Some(Classification::SlidingOnSigmaE),
            Self::Inconclusive => None,
        }
    }
}

/// Time orientation in which the slow–fast quantities were computed. Sliding
/// on `Σe` is analysed in reversed time, where it becomes `Σs`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Orientation {
    Forward,
    TimeReversed,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MelnikovZero {
    pub theta_star: f64,
    pub slope: f64,
}

/// Simple zeros of a `period`-periodic function sampled on `nodes ≥ 64`
/// points: sign changes are bracketed (including across the wrap) and
/// refined; slopes come from central differences with step `1e-6 · period/2`.
pub fn find_melnikov_zeros<F>(
    m: F,
    period: f64,
    nodes: usize,
) -> Result<Vec<MelnikovZero>, PredictorError>
where
    F: Fn(f64) -> f64,
{
    let n = nodes.max(64);
    let step = period / n as f64;
    let vals: Vec<f64> = (0..n).map(|k| m(k as f64 * step)).collect();
    let max_abs = vals.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    if max_abs <= TOL_ZERO {
        return Err(PredictorError::NoZeros {
            degenerate: true,
            max_abs,
        });
    }
    let mut roots = Vec::new();
    for k in 0..n {
        let (a, fa) = (k as f64 * step, vals[k]);
        let (b, fb) = (
            (k + 1) as f64 * step,
            if k + 1 == n { vals[0] } else { vals[k + 1] },
        );
        if fa == 0.0 {
            roots.push(a);
        } else if fa * fb < 0.0 {
            let r = brent(&m, a, b, 1e-14 * period.max(1.0), 200).unwrap_or(0.5 * (a + b));
            roots.push(r.rem_euclid(period));
        }
    }
    if roots.is_empty() {
        return Err(PredictorError::NoZeros {
            degenerate: false,
            max_abs,
        });
    }
    roots.sort_by(f64::total_cmp);
    roots.dedup_by(|a, b| (*a - *b).abs() < 1e-9 * period.max(1.0));
    if roots.len() > 1
        && (roots[0] + period - roots[roots.len() - 1]).abs() < 1e-9 * period.max(1.0)
    {
        roots.pop();
    }
    let h = 1e-6 * 0.5 * period;
    roots
        .into_iter()
        .map(|theta| {
            let residual = m(theta).abs();
            if residual > TOL_ZERO {
                return Err(PredictorError::ZeroRefinement { theta, residual });
            }
            let slope = (m(theta + h) - m(theta - h)) / (2.0 * h);
            if slope.abs() <= TOL_SLOPE {
                return Err(PredictorError::NonSimpleZero { theta, slope });
            }
            Ok(MelnikovZero {
                theta_star: theta,
                slope,
            })
        })
        .collect()
}

/// Quantities of the slow–fast reduction near the visible fold at phase θ.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SlowFast {
    pub theta: f64,
    pub p: f64,
    pub m1: f64,
    pub nu_v_minus: f64,
    pub a: f64,
    pub g_theta: f64,
    /// `F1(p_v)`, kept for evaluating `k`.
    pub f1_pv: f64,
}

impl SlowFast {
    /// `k(τ) = m1 + (F1(p_v)/p) e^{τ p}`.
    pub fn k(&self, tau: f64) -> f64 {
        self.m1 + (self.f1_pv / self.p) * (tau * self.p).exp()
    }
}

/// `p`, `m1`, `ν_v-`, `A` and `k` at phase θ for the model as given.
pub fn slowfast_quantities(
    model: &FilippovModel,
    data: &AnnulusData,
    theta: f64,
) -> Result<SlowFast, PredictorError> {
    let ev = MelnikovEvaluator::new(model, data);
    let (gp, gm) = ev.g2_at_pv(theta);
    let scale = gp.abs().max(gm.abs()).max(1.0);
    if (gp - gm).abs() <= 1e-14 * scale {
        return Err(PredictorError::DivisionDegeneracy { theta });
    }
    let f1 = data.f_minus.eval(0.0, data.p_v()).x;
    let f2q = data.f_minus.eval(0.0, data.q_v).y;
    let dfx = data.folds.p_v.df2dx;
    let g = ev.g_theta(theta)?.value;
    let p = 2.0 * f1 * dfx / (gp - gm);
    let m1 = -(gp + gm) / (2.0 * dfx);
    let nu_v_minus = -gm / dfx;
    let a = (m1 + nu_v_minus) / f1 + g / f2q;
    Ok(SlowFast {
        theta,
        p,
        m1,
        nu_v_minus,
        a,
        g_theta: g,
        f1_pv: f1,
    })
}

/// `τ* = -A - W(e^{-A p})/p`, the negative root of `τ + e^{τ p}/p + A = 0`.
pub fn tau_star_from(a: f64, p: f64) -> Result<f64, PredictorError> {
    if !(p > 0.0) {
        return Err(PredictorError::NotRepelling { theta: f64::NAN, p });
    }
    let ap = a * p;
    let w = lambert_w0_exp(-ap)?;
    let tau = -a - w / p;
    if !(ap > -1.0) || !(tau < 0.0) {
        return Err(PredictorError::PositiveTau { tau, ap });
    }
    Ok(tau)
}

/// Report of the two-fold criterion at one zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TwoFoldReport {
    pub theta_star: f64,
    pub outcome: TwoFoldOutcome,
    pub g_theta: f64,
    pub threshold: f64,
    pub g2_plus: f64,
    pub g2_minus: f64,
    pub orientation: Orientation,
    /// Slow–fast data in the orientation used (sliding only).
    pub slowfast: Option<SlowFast>,
    pub tau_star: Option<f64>,
    /// Offset `χ* = -F1(p_v) g_θ* / (2 F2(q_v))` (crossing only).
    pub chi_star: Option<f64>,
    /// Phase interval around θ* on which `G2+ - G2-` keeps its sign.
    pub sign_interval: (f64, f64),
}

fn sign_interval(ev: &MelnikovEvaluator<'_>, theta: f64, period: f64) -> (f64, f64) {
    let d = |t: f64| {
        let (gp, gm) = ev.g2_at_pv(t);
        gp - gm
    };
    let s0 = d(theta).signum();
    let step = period / 256.0;
    let scan = |dir: f64| {
        let mut t = theta;
        for _ in 0..128 {
            let next = t + dir * step;
            if d(next).signum() != s0 {
                return brent(d, t.min(next), t.max(next), 1e-13, 100).unwrap_or(t);
            }
            t = next;
        }
        t
    };
    (scan(-1.0), scan(1.0))
}

/// Applies the two-fold criterion at a zero θ* of `M(·, x_v)`.
pub fn classify_twofold(
    model: &FilippovModel,
    data: &AnnulusData,
    theta: f64,
) -> Result<TwoFoldReport, PredictorError> {
    let ev = MelnikovEvaluator::new(model, data);
    let g = ev.g_theta(theta)?.value;
    let threshold = ev.theorem_b_threshold(theta);
    let (gp, gm) = ev.g2_at_pv(theta);
    let period = 2.0 * data.sigma_v;
    let mut report = TwoFoldReport {
        theta_star: theta,
        outcome: TwoFoldOutcome::Inconclusive,
        g_theta: g,
        threshold,
        g2_plus: gp,
        g2_minus: gm,
        orientation: Orientation::Forward,
        slowfast: None,
        tau_star: None,
        chi_star: None,
        sign_interval: sign_interval(&ev, theta, period),
    };
    let tol_margin = 1e-8 * (g.abs() + threshold.abs() + 1.0);
    if (g - threshold).abs() <= tol_margin {
        return Ok(report);
    }
    if g < threshold {
        let f1 = data.f_minus.eval(0.0, data.p_v()).x;
        let f2q = data.f_minus.eval(0.0, data.q_v).y;
        report.outcome = TwoFoldOutcome::CrossingTwoFold;
        report.chi_star = Some(-f1 * g / (2.0 * f2q));
        return Ok(report);
    }
    if (gp - gm).abs() <= 1e-14 * gp.abs().max(gm.abs()).max(1.0) {
        return Ok(report);
    }
    let sf = if gp < gm {
        report.outcome = TwoFoldOutcome::SlidingOnSigmaS;
        slowfast_quantities(model, data, theta)?
    } else {
        report.outcome = TwoFoldOutcome::SlidingOnSigmaE;
        report.orientation = Orientation::TimeReversed;
        slowfast_quantities(&model.time_reversed_conjugate(), data, -theta)?
    };
    if !(sf.p > 0.0) {
        return Err(PredictorError::NotRepelling { theta, p: sf.p });
    }
    report.tau_star = Some(tau_star_from(sf.a, sf.p)?);
    report.slowfast = Some(sf);
    Ok(report)
}

/// `τ*` at θ* for a sliding classification.
pub fn tau_star(
    model: &FilippovModel,
    data: &AnnulusData,
    theta: f64,
) -> Result<f64, PredictorError> {
    let r = classify_twofold(model, data, theta)?;
    match r.tau_star {
        Some(t) => Ok(t),
        None => {
            let sf = slowfast_quantities(model, data, theta)?;
            tau_star_from(sf.a, sf.p)
        }
    }
}

/// One predicted periodic solution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Prediction {
    pub theta_star: f64,
    pub x_star: f64,
    pub slope: f64,
    pub classification: Option<Classification>,
    pub twofold: Option<TwoFoldReport>,
}

impl Prediction {
    pub fn initial_condition(&self) -> (f64, Vec2) {
        (self.theta_star, Vec2::new(self.x_star, 0.0))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PredictionReport {
    pub sigma: f64,
    pub x_star: Option<f64>,
    pub predictions: Vec<Prediction>,
    pub notes: Vec<String>,
}

impl PredictionReport {
    fn empty(sigma: f64, note: String) -> Self {
        Self {
            sigma,
            x_star: None,
            predictions: Vec::new(),
            notes: vec![note],
        }
    }

    /// Header of [`PredictionReport::write_csv`].
    pub const CSV_HEADER: &'static str =
        "sigma,theta_star,x_star,slope,classification,g_theta,threshold,p,m1,A,tau_star,chi_star";

    pub fn write_csv<W: Write>(&self, mut w: W, header: bool) -> io::Result<()> {
        if header {
            writeln!(w, "{}", Self::CSV_HEADER)?;
        }
        let opt = |v: Option<f64>| v.map_or(String::new(), |v| format!("{v:.12e}"));
        for p in &self.predictions {
            let tf = p.twofold.as_ref();
            let sf = tf.and_then(|t| t.slowfast);
            let class = match (p.classification, tf) {
                (Some(c), _) => format!("{c:?}"),
                (None, _) => "Inconclusive".to_string(),
            };
            writeln!(
                w,
                "{:.12e},{:.12e},{:.12e},{:.12e},{},{},{},{},{},{},{},{}",
                self.sigma,
                p.theta_star,
                p.x_star,
                p.slope,
                class,
                opt(tf.map(|t| t.g_theta)),
                opt(tf.map(|t| t.threshold)),
                opt(sf.map(|s| s.p)),
                opt(sf.map(|s| s.m1)),
                opt(sf.map(|s| s.a)),
                opt(tf.and_then(|t| t.tau_star)),
                opt(tf.and_then(|t| t.chi_star)),
            )?;
        }
        Ok(())
    }

    /// Plain-text rendering, one record per zero.
    pub fn to_text(&self) -> String {
        let mut s = format!("sigma = {}\n", self.sigma);
        for note in &self.notes {
            s.push_str(&format!("note: {note}\n"));
        }
        for (k, p) in self.predictions.iter().enumerate() {
            s.push_str(&format!(
                "[zero {k}]\n  theta_star = {:.12}\n  x_star = {:.12}\n  slope = {:.6e}\n",
                p.theta_star, p.x_star, p.slope
            ));
            match p.classification {
                Some(c) => s.push_str(&format!("  classification = {c:?}\n")),
                None => s.push_str("  classification = Inconclusive\n"),
            }
            if let Some(t) = &p.twofold {
                s.push_str(&format!(
                    "  g_theta = {:.6e}\n  threshold = {:.6e}\n  orientation = {:?}\n",
                    t.g_theta, t.threshold, t.orientation
                ));
                if let Some(sf) = t.slowfast {
                    s.push_str(&format!(
                        "  p = {:.6e}\n  m1 = {:.6e}\n  A = {:.6e}\n",
                        sf.p, sf.m1, sf.a
                    ));
                }
                if let Some(tau) = t.tau_star {
                    s.push_str(&format!("  tau_star = {tau:.12e}\n"));
                }
                if let Some(chi) = t.chi_star {
                    s.push_str(&format!("  chi_star = {chi:.12e}\n"));
                }
            }
        }
        s
    }
}

/// Crossing periodic solutions of half-period σ inside the annulus: simple
/// zeros of `θ ↦ M(θ, x_σ)` for every solution `x_σ` of `σ̄(x) = σ`.
pub fn predict_annulus(
    model: &FilippovModel,
    data: &AnnulusData,
    sigma: f64,
) -> Result<PredictionReport, PredictorError> {
    let roots = data.invert_sigma(sigma)?;
    let ev = MelnikovEvaluator::new(model, data);
    let mut report = PredictionReport {
        sigma,
        x_star: roots.first().map(|r| r.x),
        predictions: Vec::new(),
        notes: Vec::new(),
    };
    for root in roots {
        let slice = ev.slice(root.x)?;
        match find_melnikov_zeros(|th| slice.value(th), 2.0 * sigma, ZERO_NODES) {
            Ok(zeros) => report
                .predictions
                .extend(zeros.into_iter().map(|z| Prediction {
                    theta_star: z.theta_star,
                    x_star: root.x,
                    slope: z.slope,
                    classification: Some(Classification::CrossingAnnulus),
                    twofold: None,
                })),
            Err(PredictorError::NoZeros {
                degenerate: true,
                max_abs,
            }) => report.notes.push(format!(
                "M(·, {}) vanishes identically (max |M| = {max_abs:.3e}); no prediction",
                root.x
            )),
            Err(PredictorError::NoZeros {
                degenerate: false, ..
            }) => report
                .notes
                .push(format!("M(·, {}) has no sign change", root.x)),
            Err(e) => return Err(e),
        }
    }
    Ok(report)
}

/// Autonomous perturbations: `M` does not depend on θ, and every simple zero
/// `x*` of `x ↦ M(x)` gives a crossing periodic solution through `(x*, 0)`.
pub fn predict_autonomous(
    model: &FilippovModel,
    data: &AnnulusData,
    nodes: usize,
) -> Result<PredictionReport, PredictorError> {
    let ev = MelnikovEvaluator::new(model, data);
    let m = |x: f64| ev.melnikov(0.0, x).map_or(f64::NAN, |e| e.value);
    let (x_i, x_v) = (data.x_i(), data.x_v());
    let n = nodes.max(16);
    let xs: Vec<f64> = (1..=n)
        .map(|k| x_i + (x_v - x_i) * k as f64 / n as f64)
        .collect();
    let vals: Vec<f64> = xs.iter().map(|&x| m(x)).collect();
    let mut report = PredictionReport {
        sigma: f64::NAN,
        x_star: None,
        predictions: Vec::new(),
        notes: Vec::new(),
    };
    let h = 1e-6 * (x_v - x_i);
    for k in 0..n - 1 {
        if vals[k] * vals[k + 1] < 0.0 || vals[k] == 0.0 {
            let x = if vals[k] == 0.0 {
                xs[k]
            } else {
                brent(m, xs[k], xs[k + 1], 1e-14, 200).unwrap_or(xs[k])
            };
            let slope = (m((x + h).min(x_v)) - m(x - h)) / ((x + h).min(x_v) - (x - h));
            if slope.abs() <= TOL_SLOPE {
                report.notes.push(format!("degenerate zero at x = {x}"));
                continue;
            }
            report.predictions.push(Prediction {
                theta_star: 0.0,
                x_star: x,
                slope,
                classification: Some(Classification::CrossingAnnulus),
                twofold: None,
            });
        }
    }
    if let Some(p) = report.predictions.first() {
        report.x_star = Some(p.x_star);
        report.sigma = data.half_return_time(p.x_star)?;
    } else {
        report
            .notes
            .push("x ↦ M(x) has no simple zero in the annulus".to_string());
    }
    Ok(report)
}

/// Two-fold predictions at `σ = σ_v`: zeros of `θ ↦ M(θ, x_v)` classified by
/// the two-fold criterion.
pub fn predict_twofold(
    model: &FilippovModel,
    data: &AnnulusData,
) -> Result<PredictionReport, PredictorError> {
    let sigma = data.sigma_v;
    let ev = MelnikovEvaluator::new(model, data);
    let slice = ev.slice(data.x_v())?;
    let mut report = PredictionReport {
        sigma,
        x_star: Some(data.x_v()),
        predictions: Vec::new(),
        notes: Vec::new(),
    };
    if (model.sigma - sigma).abs() > 1e-8 * sigma {
        report.notes.push(format!(
            "model half-period {} differs from σ_v = {sigma}",
            model.sigma
        ));
    }
    let zeros = match find_melnikov_zeros(|th| slice.value(th), 2.0 * sigma, ZERO_NODES) {
        Ok(z) => z,
        Err(PredictorError::NoZeros {
            degenerate,
            max_abs,
        }) => {
            return Ok(PredictionReport::empty(
                sigma,
                format!(
                "M(·, x_v) has no simple zero (degenerate = {degenerate}, max |M| = {max_abs:.3e})"
            ),
            ))
        }
        Err(e) => return Err(e),
    };
    for z in zeros {
        let tf = classify_twofold(model, data, z.theta_star)?;
        report.predictions.push(Prediction {
            theta_star: z.theta_star,
            x_star: data.x_v(),
            slope: z.slope,
            classification: tf.outcome.classification(),
            twofold: Some(tf),
        });
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::SmoothField;
    use crate::hamiltonian::HamiltonianParams;
    use crate::Mat2;
    use std::f64::consts::PI;

    fn setup(lambda: f64, sigma: f64) -> (HamiltonianParams, FilippovModel, AnnulusData) {
        let h = HamiltonianParams::new(1.0, lambda, sigma);
        let d = AnnulusData::new(h.f_minus(), (-3.0, 3.0)).unwrap();
        (h, h.model(0.0), d)
    }

    #[test]
    fn zeros_of_closed_form() {
        let h = HamiltonianParams::new(1.0, 2.0, 2.0);
        let z = find_melnikov_zeros(|t| h.melnikov_resonant(t), 4.0, 64).unwrap();
        assert_eq!(z.len(), 2);
        assert!((z[0].theta_star - 1.0).abs() < 1e-12 && (z[0].slope - 6.0).abs() < 1e-6);
        assert!((z[1].theta_star - 3.0).abs() < 1e-12 && (z[1].slope + 6.0).abs() < 1e-6);
    }

    #[test]
    fn zero_function_is_degenerate() {
        let r = find_melnikov_zeros(|_| 0.0, 4.0, 64);
        assert!(matches!(
            r,
            Err(PredictorError::NoZeros {
                degenerate: true,
                ..
            })
        ));
        let r = find_melnikov_zeros(|t| 2.0 + t.sin(), 2.0 * PI, 64);
        assert!(matches!(
            r,
            Err(PredictorError::NoZeros {
                degenerate: false,
                ..
            })
        ));
    }

    #[test]
    fn double_zero_is_rejected() {
        // (cos t - 1) has double zeros and never changes sign; sin³ has a
        // triple zero with zero slope at 0.
        let r = find_melnikov_zeros(|t: f64| t.sin().powi(3), 2.0 * PI, 64);
        assert!(
            matches!(r, Err(PredictorError::NonSimpleZero { .. })),
            "{r:?}"
        );
    }

    #[test]
    fn zero_across_the_wrap() {
        let z = find_melnikov_zeros(|t: f64| (t + 0.01).sin(), 2.0 * PI, 64).unwrap();
        assert_eq!(z.len(), 2);
        assert!((z[1].theta_star - (2.0 * PI - 0.01)).abs() < 1e-12);
    }

    #[test]
    fn annulus_predictions() {
        let (_, m, d) = setup(2.0, 2.0);
        let r = predict_annulus(&m, &d, 2.0).unwrap();
        assert_eq!(r.predictions.len(), 2);
        let xs = 1.0 - 6f64.sqrt() / 3.0;
        for (p, th) in r.predictions.iter().zip([1.0, 3.0]) {
            assert!((p.theta_star - th).abs() < 1e-7);
            assert!((p.x_star - xs).abs() < 1e-9);
            assert_eq!(p.classification, Some(Classification::CrossingAnnulus));
        }
        let (_, m, d) = setup(-1.0, 2.0);
        let r = predict_annulus(&m, &d, 2.0).unwrap();
        assert!(r.predictions.is_empty());
        assert!(!r.notes.is_empty());
    }

    #[test]
    fn autonomous_corollary() {
        // G- = (0, x + √3/2), G+ = 0: M(x) = -∫ (Γ1 + √3/2) dt changes sign
        // at x* = 0 where σ̄ = √3.
        let h = HamiltonianParams::new(1.0, 0.0, 3.0);
        let g = SmoothField::from_fns(
            |_, z: Vec2| Vec2::new(0.0, z.x + 3f64.sqrt() / 2.0),
            |_, _| Mat2::new(0.0, 0.0, 1.0, 0.0),
        );
        let m = FilippovModel::reversible(h.f_minus(), g, SmoothField::zero(), 3.0);
        let d = AnnulusData::new(h.f_minus(), (-3.0, 3.0)).unwrap();
        let r = predict_autonomous(&m, &d, 64).unwrap();
        assert_eq!(r.predictions.len(), 1);
        assert!(r.predictions[0].x_star.abs() < 1e-9, "{r:?}");
        assert!((r.predictions[0].slope + 3f64.sqrt() / 4.0).abs() < 1e-5);
        assert!((r.sigma - 3f64.sqrt()).abs() < 1e-8);
    }

    #[test]
    fn slowfast_reference_values() {
        let (_, m, d) = setup(-1.5, 3.0);
        let sf = slowfast_quantities(&m, &d, 1.5).unwrap();
        assert!((sf.p - 1.6).abs() < 1e-9);
        assert!((sf.m1 - 0.125).abs() < 1e-12);
        assert!((sf.nu_v_minus + 0.5).abs() < 1e-12);
        assert!((sf.a - 0.375).abs() < 1e-8);
        assert!((sf.k(0.0) - sf.nu_v_minus).abs() < 1e-12);
        let tau = tau_star_from(sf.a, sf.p).unwrap();
        assert!((tau + (tau * sf.p).exp() / sf.p + sf.a).abs() < 1e-10);
        // Bisection oracle.
        let b = brent(
            |t| t + (t * sf.p).exp() / sf.p + sf.a,
            -10.0,
            0.0,
            1e-15,
            300,
        )
        .unwrap();
        assert!((tau - b).abs() < 1e-12);
        assert!(tau < 0.0);
    }

    #[test]
    fn equal_components_are_degenerate() {
        let (_, m, d) = setup(1.0, 3.0);
        assert!(matches!(
            slowfast_quantities(&m, &d, 1.5),
            Err(PredictorError::DivisionDegeneracy { .. })
        ));
    }

    #[test]
    fn tau_edge_cases() {
        let p = 2.0;
        let t = tau_star_from(0.0, p).unwrap();
        assert!((t + lambert_w0(1.0).unwrap() / p).abs() < 1e-15);
        assert!(matches!(
            tau_star_from(-1.0, 1.0),
            Err(PredictorError::PositiveTau { .. })
        ));
        assert!(matches!(
            tau_star_from(-2.0, 1.0),
            Err(PredictorError::PositiveTau { .. })
        ));
        assert!(tau_star_from(-0.99, 1.0).unwrap() < 0.0);
    }

    #[test]
    fn proposition_table_reproduced() {
        for &l in &[-1.5, -0.5, 0.5, 2.0] {
            let (h, m, d) = setup(l, 3.0);
            for row in h.proposition_table() {
                let r = classify_twofold(&m, &d, row.theta_star).unwrap();
                assert_eq!(r.outcome, row.expected, "λ = {l}, θ* = {}", row.theta_star);
                assert!(r.g_theta.abs() < 1e-8);
                if let Some(sf) = r.slowfast {
                    assert!(sf.p > 0.0);
                }
                // Shifting θ* by a full period changes nothing.
                let s = classify_twofold(&m, &d, row.theta_star + 6.0).unwrap();
                assert_eq!(s.outcome, r.outcome);
            }
        }
    }

    #[test]
    fn sigma_e_uses_reversed_time() {
        let (_, m, d) = setup(-1.5, 3.0);
        let r = classify_twofold(&m, &d, 4.5).unwrap();
        assert_eq!(r.outcome, TwoFoldOutcome::SlidingOnSigmaE);
        assert_eq!(r.orientation, Orientation::TimeReversed);
        let sf = r.slowfast.unwrap();
        // G2+(4.5) = 1.5, G2-(4.5) = -1; reversed roles: p = 2·(-1)·2/(-1 - 1.5).
        assert!((sf.p - 1.6).abs() < 1e-9);
        assert!((sf.nu_v_minus + 0.75).abs() < 1e-12);
        assert!(r.tau_star.unwrap() < 0.0);
    }

    #[test]
    fn crossing_offset() {
        let (_, m, d) = setup(2.0, 3.0);
        let r = classify_twofold(&m, &d, 4.5).unwrap();
        assert_eq!(r.outcome, TwoFoldOutcome::CrossingTwoFold);
        assert!(r.chi_star.unwrap().abs() < 1e-8);
        assert!((r.threshold - 3.0).abs() < 1e-8);
    }

    #[test]
    fn twofold_report_and_csv() {
        let (_, m, d) = setup(-1.5, 3.0);
        let r = predict_twofold(&m, &d).unwrap();
        assert_eq!(r.predictions.len(), 2);
        assert_eq!(
            r.predictions[0].classification,
            Some(Classification::SlidingOnSigmaS)
        );
        assert_eq!(
            r.predictions[1].classification,
            Some(Classification::SlidingOnSigmaE)
        );
        let mut buf = Vec::new();
        r.write_csv(&mut buf, true).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().next(), Some(PredictionReport::CSV_HEADER));
        assert_eq!(text.lines().count(), 3);
        assert!(r.to_text().contains("tau_star"));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn tau_root_and_sign(a in -5.0f64..5.0, p in 0.05f64..10.0) {
                match tau_star_from(a, p) {
                    Ok(t) => {
                        prop_assert!(a * p > -1.0);
                        prop_assert!(t < 0.0);
                        let scale = 1.0 + a.abs() + (1.0 / p);
                        prop_assert!((t + (t * p).exp() / p + a).abs() <= 1e-10 * scale);
                    }
                    Err(PredictorError::PositiveTau { .. }) => prop_assert!(a * p <= -1.0 + 1e-12),
                    Err(e) => prop_assert!(false, "{e}"),
                }
            }
        }
    }
}
