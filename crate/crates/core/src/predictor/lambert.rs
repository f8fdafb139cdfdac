//! Principal branch of the Lambert W function.

use std::f64::consts::E;

use super::PredictorError;

/// `W0(y)`, the solution `w ≥ -1` of `w e^w = y`, for `y ≥ -1/e`.
pub fn lambert_w0(y: f64) -> Result<f64, PredictorError> {
    let branch = -1.0 / E;
    if !(y >= branch) || !y.is_finite() {
        // Tolerate rounding just below the branch point.
        if y < branch && y > branch - 4.0 * f64::EPSILON {
            return Ok(-1.0);
        }
        return Err(PredictorError::OutOfDomain { y });
    }
    if y == 0.0 {
        return Ok(0.0);
    }
    let mut w = initial_guess(y);
    for _ in 0..64 {
        let ew = w.exp();
        let f = w * ew - y;
        if f == 0.0 {
            break;
        }
        let wp1 = w + 1.0;
        if wp1.abs() < 1e-300 {
            break;
        }
        let denom = ew * wp1 - (w + 2.0) * f / (2.0 * wp1);
        let step = f / denom;
        let wn = w - step;
        let done = (wn - w).abs() <= 4.0 * f64::EPSILON * wn.abs().max(1e-300);
        w = wn.max(-1.0);
        if done {
            break;
        }
    }
    Ok(w)
}

fn initial_guess(y: f64) -> f64 {
    let branch_dist = E * y + 1.0;
    if branch_dist < 0.3 {
        // Series about the branch point in p = √(2(e y + 1)).
        let p = (2.0 * branch_dist).max(0.0).sqrt();
        -1.0 + p - p * p / 3.0 + 11.0 / 72.0 * p * p * p
    } else if y < 3.0 {
        let l = (1.0 + y).ln();
        l * (1.0 - (1.0 + l).ln() / (2.0 + l))
    } else {
        let l1 = y.ln();
        let l2 = l1.ln();
        l1 - l2 + l2 / l1
    }
}

/// `W0(e^β)` without forming `e^β`, i.e. the positive solution of
/// `w + ln w = β`. Valid for every finite `β`.
pub fn lambert_w0_exp(beta: f64) -> Result<f64, PredictorError> {
    if beta < 20.0 {
        return lambert_w0(beta.exp());
    }
    let mut w = beta - beta.ln();
    for _ in 0..64 {
        let f = w + w.ln() - beta;
        let wn = w - f / (1.0 + 1.0 / w);
        if (wn - w).abs() <= 4.0 * f64::EPSILON * wn {
            w = wn;
            break;
        }
        w = wn;
    }
    Ok(w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::roots::brent;
    use proptest::prelude::*;

    #[test]
    fn anchor_values() {
        assert_eq!(lambert_w0(0.0).unwrap(), 0.0);
        assert!((lambert_w0(E).unwrap() - 1.0).abs() < 1e-15);
        assert!((lambert_w0(1.0).unwrap() - 0.567_143_290_409_783_8).abs() < 1e-15);
        assert!((lambert_w0(-1.0 / E).unwrap() + 1.0).abs() < 1e-7);
        assert!(matches!(
            lambert_w0(-0.5),
            Err(PredictorError::OutOfDomain { .. })
        ));
    }

    #[test]
    fn fixed_point_oracle() {
        // w = y e^{-w} iterated from 0 converges for y = 1 (Ω constant).
        let mut w: f64 = 0.5;
        for _ in 0..200 {
            w = (-w).exp();
        }
        assert!((lambert_w0(1.0).unwrap() - w).abs() < 1e-12);
    }

    #[test]
    fn exp_form_matches_direct() {
        for &b in &[-30.0, -2.0, 0.0, 1.0, 5.0, 19.9, 20.1, 50.0] {
            let w = lambert_w0_exp(b).unwrap();
            assert!((w + w.ln() - b).abs() < 1e-12 * b.abs().max(1.0), "β = {b}");
        }
        assert!(
            (lambert_w0_exp(700.0).unwrap() + lambert_w0_exp(700.0).unwrap().ln() - 700.0).abs()
                < 1e-10
        );
    }

    #[test]
    fn bisection_oracle() {
        for &y in &[-0.3, -0.1, 0.05, 2.0, 40.0, 1e6] {
            let w = lambert_w0(y).unwrap();
            let b = brent(|w: f64| w * w.exp() - y, -1.0, 20.0, 1e-15, 300).unwrap();
            assert!((w - b).abs() < 1e-12 * b.abs().max(1.0), "y = {y}");
        }
    }

    proptest! {
        #[test]
        fn residual_is_tiny(y in -0.367_879_441f64..1e8) {
            let w = lambert_w0(y).unwrap();
            prop_assert!(w >= -1.0);
            prop_assert!((w * w.exp() - y).abs() <= 1e-13 * y.abs().max(1.0));
        }
    }
}
