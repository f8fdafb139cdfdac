//! Adaptive Gauss–Kronrod (7, 15) quadrature for vector-valued integrands.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
#[error("quadrature did not reach tolerance {tol:e}: estimated error {estimate:e} after {intervals} intervals")]
pub struct QuadratureError {
    pub tol: f64,
    pub estimate: f64,
    pub intervals: usize,
}

// Published 15-point Kronrod nodes and weights, kept at full length.
#[allow(clippy::excessive_precision)]
const XGK: [f64; 8] = [
    0.991455371120812639206854697526329,
    0.949107912342758524526189684047851,
    0.864864423359769072789712788640926,
    0.741531185599394439863864773280788,
    0.586087235467691130294144845693013,
    0.405845151377397166906606412076961,
    0.207784955007898467600689403773245,
    0.000000000000000000000000000000000,
];

#[allow(clippy::excessive_precision)]
const WGK: [f64; 8] = [
    0.022935322010529224963732008058970,
    0.063092092629978553290700663189204,
    0.104790010322250183839876322541518,
    0.140653259715525918745189590510238,
    0.169004726639267902826583426598550,
    0.190350578064785409913256402421014,
    0.204432940075298892414161999234649,
    0.209482141084727828012999174891714,
];

#[allow(clippy::excessive_precision)]
const WG: [f64; 4] = [
    0.129484966168869693270611432679082,
    0.279705391489276667901467771423780,
    0.381830050505118944950369775488975,
    0.417959183673469387755102040816327,
];

/// One G7K15 panel: Kronrod estimate and a per-component error estimate.
fn panel<const N: usize, F>(f: &mut F, a: f64, b: f64) -> ([f64; N], f64)
where
    F: FnMut(f64) -> [f64; N],
{
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut k = [0.0; N];
    let mut g = [0.0; N];
    for i in 0..N {
        k[i] = WGK[7] * fc[i];
        g[i] = WG[3] * fc[i];
    }
    for j in 0..7 {
        let dx = h * XGK[j];
        let f1 = f(c - dx);
        let f2 = f(c + dx);
        for i in 0..N {
            let s = f1[i] + f2[i];
            k[i] += WGK[j] * s;
            if j % 2 == 1 {
                g[i] += WG[j / 2] * s;
            }
        }
    }
    let mut err = 0.0f64;
    for i in 0..N {
        k[i] *= h;
        err = err.max((k[i] - g[i] * h).abs());
    }
    (k, err)
}

/// Integrates `f` over `[a, b]` to absolute tolerance `tol` (max norm over
/// components), bisecting the worst panel until the summed error estimate
/// falls below `tol` or `max_intervals` is reached.
///
/// Breakpoints where `f` is only piecewise smooth may be supplied in
/// `breaks`; they seed the initial partition.
pub fn integrate<const N: usize, F>(
    mut f: F,
    a: f64,
    b: f64,
    breaks: &[f64],
    tol: f64,
    max_intervals: usize,
) -> Result<[f64; N], QuadratureError>
where
    F: FnMut(f64) -> [f64; N],
{
    if a == b {
        return Ok([0.0; N]);
    }
    let (lo, hi, sign) = if a < b { (a, b, 1.0) } else { (b, a, -1.0) };
    let mut nodes: Vec<f64> = std::iter::once(lo)
        .chain(breaks.iter().copied().filter(|&x| x > lo && x < hi))
        .chain(std::iter::once(hi))
        .collect();
    nodes.sort_by(f64::total_cmp);
    nodes.dedup();

    let mut panels: Vec<(f64, f64, [f64; N], f64)> = nodes
        .windows(2)
        .map(|w| {
            let (v, e) = panel(&mut f, w[0], w[1]);
            (w[0], w[1], v, e)
        })
        .collect();

    loop {
        let total_err: f64 = panels.iter().map(|p| p.3).sum();
        if total_err <= tol || panels.len() >= max_intervals {
            let mut sum = [0.0; N];
            for p in &panels {
                for (s, v) in sum.iter_mut().zip(&p.2) {
                    *s += v;
                }
            }
            for v in &mut sum {
                *v *= sign;
            }
            if total_err <= tol {
                return Ok(sum);
            }
            return Err(QuadratureError {
                tol,
                estimate: total_err,
                intervals: panels.len(),
            });
        }
        let worst = panels
            .iter()
            .enumerate()
            .max_by(|x, y| x.1 .3.total_cmp(&y.1 .3))
            .map(|(i, _)| i)
            .unwrap_or(0);
        let (l, r, _, _) = panels.swap_remove(worst);
        let m = 0.5 * (l + r);
        if m <= l || m >= r {
            return Err(QuadratureError {
                tol,
                estimate: total_err,
                intervals: panels.len() + 1,
            });
        }
        let (v1, e1) = panel(&mut f, l, m);
        let (v2, e2) = panel(&mut f, m, r);
        panels.push((l, m, v1, e1));
        panels.push((m, r, v2, e2));
    }
}

/// Scalar convenience wrapper around [`integrate`].
pub fn integrate_scalar<F>(mut f: F, a: f64, b: f64, tol: f64) -> Result<f64, QuadratureError>
where
    F: FnMut(f64) -> f64,
{
    integrate(|t| [f(t)], a, b, &[], tol, 4096).map(|v| v[0])
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn polynomials_are_exact() {
        // K15 is exact through degree 22.
        let v = integrate_scalar(|x| x.powi(21) + 3.0 * x.powi(4), -1.0, 2.0, 1e-14).unwrap();
        let exact = (2f64.powi(22) - 1.0) / 22.0 + 3.0 * (32.0 + 1.0) / 5.0;
        assert!((v - exact).abs() < 1e-9 * exact.abs());
    }

    #[test]
    fn oscillatory_integral() {
        let v = integrate_scalar(|x| (20.0 * x).sin(), 0.0, PI, 1e-12).unwrap();
        assert!(v.abs() < 1e-11);
        let v = integrate_scalar(|x| (x).exp() * (3.0 * x).cos(), 0.0, 2.0, 1e-12).unwrap();
        // ∫ e^x cos 3x = e^x (cos 3x + 3 sin 3x)/10
        let prim = |x: f64| x.exp() * ((3.0 * x).cos() + 3.0 * (3.0 * x).sin()) / 10.0;
        assert!((v - (prim(2.0) - prim(0.0))).abs() < 1e-11);
    }

    #[test]
    fn reversed_limits_change_sign() {
        let a = integrate_scalar(|x| x.cos(), 0.0, 1.0, 1e-13).unwrap();
        let b = integrate_scalar(|x| x.cos(), 1.0, 0.0, 1e-13).unwrap();
        assert!((a + b).abs() < 1e-15);
        assert!((a - 1f64.sin()).abs() < 1e-13);
    }

    #[test]
    fn kink_with_breakpoint() {
        let v = integrate(
            |x: f64| [x.abs(), (x - 0.3).abs()],
            -1.0,
            1.0,
            &[0.0, 0.3],
            1e-13,
            64,
        )
        .unwrap();
        assert!((v[0] - 1.0).abs() < 1e-14);
        assert!((v[1] - (1.3 * 1.3 + 0.7 * 0.7) / 2.0).abs() < 1e-13);
    }

    #[test]
    fn exhausting_intervals_is_reported() {
        let r = integrate(
            |x: f64| [1.0 / x.abs().sqrt().max(1e-300)],
            -1.0,
            1.0,
            &[],
            1e-15,
            8,
        );
        assert!(r.is_err());
    }
}
