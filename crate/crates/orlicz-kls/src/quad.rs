//! One-dimensional numerical kernels: Gauss–Legendre quadrature (fixed panel
//! and adaptive with interval splitting at declared kinks), safeguarded root
//! finding on monotone branches, and golden-section minimization.

use crate::error::{Error, Result};
use std::sync::OnceLock;

/// Number of nodes in the base Gauss–Legendre panel.
const GL_ORDER: usize = 15;

/// Nodes and weights on [-1, 1].
struct GlRule {
    nodes: [f64; GL_ORDER],
    weights: [f64; GL_ORDER],
}

fn gl_rule() -> &'static GlRule {
    static RULE: OnceLock<GlRule> = OnceLock::new();
    RULE.get_or_init(|| {
        // Newton iteration on P_n from Chebyshev initial guesses.
        let n = GL_ORDER;
        let mut nodes = [0.0; GL_ORDER];
        let mut weights = [0.0; GL_ORDER];
        for k in 0..n {
            let mut x = (std::f64::consts::PI * (k as f64 + 0.75) / (n as f64 + 0.5)).cos();
            for _ in 0..100 {
                let (p, dp) = legendre_pair(n, x);
                let dx = p / dp;
                x -= dx;
                if dx.abs() < 1e-15 {
                    break;
                }
            }
            let (_, dp) = legendre_pair(n, x);
            nodes[n - 1 - k] = x;
            weights[n - 1 - k] = 2.0 / ((1.0 - x * x) * dp * dp);
        }
        GlRule { nodes, weights }
    })
}

/// Value and derivative of the Legendre polynomial P_n at x.
fn legendre_pair(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for j in 2..=n {
        let jf = j as f64;
        let p2 = ((2.0 * jf - 1.0) * x * p1 - (jf - 1.0) * p0) / jf;
        p0 = p1;
        p1 = p2;
    }
    let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, dp)
}

/// Fixed 15-point Gauss–Legendre panel on [a, b].
pub fn gl_panel<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> f64 {
    let rule = gl_rule();
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let mut acc = 0.0;
    for i in 0..GL_ORDER {
        acc += rule.weights[i] * f(c + h * rule.nodes[i]);
    }
    acc * h
}

fn adaptive_rec<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    whole: f64,
    tol: f64,
    depth: usize,
) -> Result<f64> {
    let m = 0.5 * (a + b);
    let left = gl_panel(f, a, m);
    let right = gl_panel(f, m, b);
    let refined = left + right;
    if (refined - whole).abs() <= tol || b - a < 1e-14 * (1.0 + a.abs() + b.abs()) {
        return Ok(refined);
    }
    if depth == 0 {
        return Err(Error::QuadratureFailure { a, b });
    }
    let lt = 0.5 * tol;
    Ok(adaptive_rec(f, a, m, left, lt, depth - 1)? + adaptive_rec(f, m, b, right, lt, depth - 1)?)
}

/// Adaptive Gauss–Legendre on [a, b] with absolute tolerance `tol`.
pub fn integrate<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> Result<f64> {
    if a == b {
        return Ok(0.0);
    }
    let whole = gl_panel(f, a, b);
    adaptive_rec(f, a, b, whole, tol.max(1e-300), 48)
}

/// Adaptive integration on [a, b], splitting first at the interior points of
/// `breaks` (kinks of the integrand, in ascending order).
pub fn integrate_with_breaks<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    breaks: &[f64],
    tol: f64,
) -> Result<f64> {
    let mut cuts = vec![a];
    for &k in breaks {
        if k > a && k < b {
            cuts.push(k);
        }
    }
    cuts.push(b);
    let per = tol / cuts.len() as f64;
    let mut acc = 0.0;
    for w in cuts.windows(2) {
        acc += integrate(f, w[0], w[1], per)?;
    }
    Ok(acc)
}

/// Root of a continuous strictly monotone-through-zero function on [lo, hi],
/// where g(lo) and g(hi) have opposite signs. Bisection with a secant
/// acceleration step; always keeps the bracket.
pub fn bracket_root<G: Fn(f64) -> f64>(g: &G, mut lo: f64, mut hi: f64, tol: f64) -> f64 {
    let mut glo = g(lo);
    let mut ghi = g(hi);
    debug_assert!(glo * ghi <= 0.0, "bracket_root requires a sign change");
    if glo == 0.0 {
        return lo;
    }
    if ghi == 0.0 {
        return hi;
    }
    for _ in 0..200 {
        if (hi - lo).abs() <= tol {
            break;
        }
        // Secant proposal, clipped into the middle 90% of the bracket.
        let mut x = (lo * ghi - hi * glo) / (ghi - glo);
        let guard = 0.05 * (hi - lo);
        if !(x > lo + guard && x < hi - guard) {
            x = 0.5 * (lo + hi);
        }
        let gx = g(x);
        if gx == 0.0 {
            return x;
        }
        if gx * glo < 0.0 {
            hi = x;
            ghi = gx;
        } else {
            lo = x;
            glo = gx;
        }
    }
    0.5 * (lo + hi)
}

/// Golden-section minimizer of a convex function; ties broken toward the
/// leftmost minimizer by the final left-edge report on flat objectives.
pub fn golden_min<F: Fn(f64) -> f64>(f: &F, mut a: f64, mut b: f64, tol: f64) -> f64 {
    const INV_PHI: f64 = 0.618_033_988_749_894_9;
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    while (b - a).abs() > tol {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d);
        }
    }
    a
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn panel_is_exact_for_polynomials() {
        // 15-point rule is exact for degree 29.
        let f = |x: f64| x.powi(20) - 3.0 * x.powi(7) + 1.0;
        let exact = 2.0 / 21.0 + 2.0; // odd term cancels on [-1, 1]
        assert_relative_eq!(gl_panel(&f, -1.0, 1.0), exact, max_relative = 1e-13);
    }

    #[test]
    fn adaptive_handles_peaked_integrand() {
        let f = |x: f64| (-(x * x) / 2.0).exp();
        let v = integrate(&f, -40.0, 40.0, 1e-12).unwrap();
        assert_relative_eq!(v, (2.0 * std::f64::consts::PI).sqrt(), epsilon = 1e-10);
    }

    #[test]
    fn breaks_split_kinked_integrand() {
        let f = |x: f64| (-x.abs()).exp();
        let v = integrate_with_breaks(&f, -30.0, 30.0, &[0.0], 1e-12).unwrap();
        assert_relative_eq!(v, 2.0, epsilon = 1e-10);
    }

    #[test]
    fn root_finds_crossing() {
        let g = |x: f64| x * x * x - 2.0;
        let r = bracket_root(&g, 0.0, 4.0, 1e-14);
        assert_relative_eq!(r, 2f64.powf(1.0 / 3.0), epsilon = 1e-12);
    }

    #[test]
    fn golden_finds_leftmost_on_flat() {
        let f = |x: f64| (x.abs() - 1.0).max(0.0);
        let m = golden_min(&f, -5.0, 5.0, 1e-10);
        assert!(m >= -1.0 - 1e-8 && m <= 1.0);
    }
}
