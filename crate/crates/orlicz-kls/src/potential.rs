//! One-dimensional convex potentials and the product measures they induce.
//!
//! A raw potential is a convex `W: R -> R` with `min W = 0`. Normalizing
//! produces `V = W + ln z` with `z = integral exp(-W)`, so that
//! `exp(-V(y)) dy` is a probability measure. Assembling a product applies the
//! joint rescaling `V_i(y) = W_i(z y) + ln z_i - ln z` with `z` the geometric
//! mean of the `z_i`, which forces `sum_i min V_i = 0`.
//!
//! All integrals are adaptive Gauss-Legendre with panels split at declared
//! kinks; derivative queries at a kink are one-sided.

use crate::error::{Error, Result};
use crate::quad;
use std::sync::{Arc, OnceLock};

/// Which one-sided derivative to take at a kink (irrelevant elsewhere).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Side {
    Left,
    Right,
}

type EvalFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;
type DerivFn = Arc<dyn Fn(f64, Side) -> f64 + Send + Sync>;

/// Default relative quadrature tolerance.
pub const DEFAULT_QUAD_TOL: f64 = 1e-10;

/// Density values below `peak * TRUNC_EPS` are treated as zero when choosing
/// truncation windows.
pub const TRUNC_EPS: f64 = 1e-16;

/// Coefficient values above this threshold are reported as infinite, which
/// routes downstream bounds through the dimension-dependent estimate.
pub const ALPHA_INFINITE_THRESHOLD: f64 = 1e6;

/// A convex 1D potential `W` with `min W = 0`, prior to normalization.
#[derive(Clone)]
pub struct RawPotential {
    eval: EvalFn,
    deriv: DerivFn,
    kinks: Vec<f64>,
    minimizer: f64,
    label: String,
}

impl std::fmt::Debug for RawPotential {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RawPotential")
            .field("label", &self.label)
            .field("minimizer", &self.minimizer)
            .field("kinks", &self.kinks)
            .finish()
    }
}

impl RawPotential {
    /// `W(y) = y^2 / 2`.
    pub fn gaussian() -> Self {
        Self {
            eval: Arc::new(|y| 0.5 * y * y),
            deriv: Arc::new(|y, _| y),
            kinks: vec![],
            minimizer: 0.0,
            label: "gaussian".into(),
        }
    }

    /// `W(y) = |y|`.
    pub fn laplace() -> Self {
        Self {
            eval: Arc::new(|y| y.abs()),
            deriv: Arc::new(|y, side| {
                if y > 0.0 || (y == 0.0 && side == Side::Right) {
                    1.0
                } else {
                    -1.0
                }
            }),
            kinks: vec![0.0],
            minimizer: 0.0,
            label: "laplace".into(),
        }
    }

    /// Asymmetric power potential `W(y) = y_+^{p_plus} + y_-^{p_minus}`,
    /// with `p_plus, p_minus >= 1`.
    pub fn power(p_plus: f64, p_minus: f64) -> Result<Self> {
        Self::power_scaled(1.0, p_plus, 1.0, p_minus)
    }

    /// `W(y) = c_plus * y_+^{p_plus} + c_minus * y_-^{p_minus}`.
    pub fn power_scaled(c_plus: f64, p_plus: f64, c_minus: f64, p_minus: f64) -> Result<Self> {
        for (name, p) in [("p_plus", p_plus), ("p_minus", p_minus)] {
            if !(p >= 1.0) {
                return Err(Error::NonConvex {
                    location: 0.0,
                    detail: format!("{name} = {p} < 1 gives a non-convex branch"),
                });
            }
        }
        if !(c_plus > 0.0 && c_minus > 0.0) {
            return Err(Error::NonIntegrable(
                "power coefficients must be positive".into(),
            ));
        }
        let eval = move |y: f64| {
            if y >= 0.0 {
                c_plus * y.powf(p_plus)
            } else {
                c_minus * (-y).powf(p_minus)
            }
        };
        let deriv = move |y: f64, side: Side| {
            if y > 0.0 || (y == 0.0 && side == Side::Right) {
                if y == 0.0 {
                    if p_plus == 1.0 {
                        c_plus
                    } else {
                        0.0
                    }
                } else {
                    c_plus * p_plus * y.powf(p_plus - 1.0)
                }
            } else if y == 0.0 {
                if p_minus == 1.0 {
                    -c_minus
                } else {
                    0.0
                }
            } else {
                -c_minus * p_minus * (-y).powf(p_minus - 1.0)
            }
        };
        Ok(Self {
            eval: Arc::new(eval),
            deriv: Arc::new(deriv),
            kinks: vec![0.0],
            minimizer: 0.0,
            label: format!("power({p_plus},{p_minus})"),
        })
    }

    /// Piecewise-linear convex potential through the given `(y, value)` knots
    /// (at least two), extended past the ends with the terminal slopes. The
    /// minimum value is subtracted so that `min W = 0`.
    pub fn piecewise_linear(knots: &[(f64, f64)]) -> Result<Self> {
        Self::from_points(knots, "piecewise_linear")
    }

    /// Tabulated potential with convex (piecewise-linear) interpolation.
    pub fn from_table(points: &[(f64, f64)]) -> Result<Self> {
        Self::from_points(points, "table")
    }

    fn from_points(points: &[(f64, f64)], label: &str) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::NonIntegrable(format!(
                "{label} needs at least two points"
            )));
        }
        let mut pts = points.to_vec();
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        for w in pts.windows(2) {
            if w[1].0 - w[0].0 <= 0.0 {
                return Err(Error::NonIntegrable(format!(
                    "{label} has duplicate abscissa {}",
                    w[0].0
                )));
            }
        }
        for &(y, v) in &pts {
            if !v.is_finite() {
                return Err(Error::NonFinite(y));
            }
        }
        let slopes: Vec<f64> = pts
            .windows(2)
            .map(|w| (w[1].1 - w[0].1) / (w[1].0 - w[0].0))
            .collect();
        for (i, w) in slopes.windows(2).enumerate() {
            if w[1] < w[0] - 1e-12 * (1.0 + w[0].abs()) {
                return Err(Error::NonConvex {
                    location: pts[i + 1].0,
                    detail: format!("slope decreases from {} to {}", w[0], w[1]),
                });
            }
        }
        if !(slopes[0] < 0.0 && slopes[slopes.len() - 1] > 0.0) {
            return Err(Error::NonIntegrable(format!(
                "{label} terminal slopes ({}, {}) do not decay on both sides",
                slopes[0],
                slopes[slopes.len() - 1]
            )));
        }
        let vmin = pts.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
        let pts: Vec<(f64, f64)> = pts.iter().map(|&(y, v)| (y, v - vmin)).collect();
        // Leftmost point attaining the minimum (flat bottoms allowed).
        let minimizer = pts
            .iter()
            .find(|p| p.1 <= 1e-14 * (1.0 + vmin.abs()))
            .map(|p| p.0)
            .unwrap_or(pts[0].0);
        let kinks: Vec<f64> = pts.iter().map(|p| p.0).collect();
        let pts2 = pts.clone();
        let slopes2 = slopes.clone();
        let eval = move |y: f64| -> f64 {
            let (first, last) = (pts2[0], pts2[pts2.len() - 1]);
            if y <= first.0 {
                return first.1 + slopes2[0] * (y - first.0);
            }
            if y >= last.0 {
                return last.1 + slopes2[slopes2.len() - 1] * (y - last.0);
            }
            let idx = pts2.partition_point(|p| p.0 <= y) - 1;
            pts2[idx].1 + slopes2[idx] * (y - pts2[idx].0)
        };
        let pts3 = pts.clone();
        let slopes3 = slopes.clone();
        let deriv = move |y: f64, side: Side| -> f64 {
            // At a knot, Side::Left selects the segment ending there and
            // Side::Right the segment starting there; the terminal slopes
            // extrapolate past the ends.
            let idx = match side {
                Side::Right => pts3.partition_point(|p| p.0 <= y),
                Side::Left => pts3.partition_point(|p| p.0 < y),
            };
            if idx == 0 {
                slopes3[0]
            } else if idx >= pts3.len() {
                slopes3[slopes3.len() - 1]
            } else {
                slopes3[idx - 1]
            }
        };
        let raw = Self {
            eval: Arc::new(eval),
            deriv: Arc::new(deriv),
            kinks,
            minimizer,
            label: label.into(),
        };
        raw.probe()?;
        Ok(raw)
    }

    /// Custom potential from closures. The caller must supply `min W = 0` at
    /// `minimizer`; this is validated along with convexity and finiteness.
    pub fn from_fn<E, D>(
        eval: E,
        deriv: D,
        kinks: Vec<f64>,
        minimizer: f64,
        label: &str,
    ) -> Result<Self>
    where
        E: Fn(f64) -> f64 + Send + Sync + 'static,
        D: Fn(f64, Side) -> f64 + Send + Sync + 'static,
    {
        let raw = Self {
            eval: Arc::new(eval),
            deriv: Arc::new(deriv),
            kinks,
            minimizer,
            label: label.into(),
        };
        raw.probe()?;
        Ok(raw)
    }

    /// Translate: `W(y - a)`.
    pub fn shifted(&self, a: f64) -> Self {
        let eval = self.eval.clone();
        let deriv = self.deriv.clone();
        Self {
            eval: Arc::new(move |y| eval(y - a)),
            deriv: Arc::new(move |y, s| deriv(y - a, s)),
            kinks: self.kinks.iter().map(|k| k + a).collect(),
            minimizer: self.minimizer + a,
            label: format!("{}+shift", self.label),
        }
    }

    pub fn eval(&self, y: f64) -> f64 {
        (self.eval)(y)
    }

    pub fn deriv(&self, y: f64, side: Side) -> f64 {
        (self.deriv)(y, side)
    }

    pub fn kinks(&self) -> &[f64] {
        &self.kinks
    }

    pub fn minimizer(&self) -> f64 {
        self.minimizer
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    fn shares_eval(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.eval, &other.eval) && self.minimizer == other.minimizer
    }

    /// Finiteness, nonnegativity, vanishing minimum and midpoint convexity on
    /// probe grids of increasing extent. Indicator-type potentials (infinite
    /// values) are rejected here.
    fn probe(&self) -> Result<()> {
        let v0 = self.eval(self.minimizer);
        if !v0.is_finite() {
            return Err(Error::NonFinite(self.minimizer));
        }
        if v0.abs() > 1e-9 {
            return Err(Error::NonConvex {
                location: self.minimizer,
                detail: format!("minimum value {v0} is not 0"),
            });
        }
        for scale in [1.0, 8.0, 64.0] {
            let n = 64;
            let mut prev2: Option<(f64, f64)> = None;
            let mut prev1: Option<(f64, f64)> = None;
            for j in 0..=n {
                let y = self.minimizer + scale * (2.0 * j as f64 / n as f64 - 1.0);
                let v = self.eval(y);
                if !v.is_finite() {
                    return Err(Error::NonFinite(y));
                }
                if v < -1e-9 * (1.0 + v.abs()) {
                    return Err(Error::NonConvex {
                        location: y,
                        detail: format!("value {v} below the declared minimum 0"),
                    });
                }
                if let (Some((_, va)), Some((yb, vb))) = (prev2, prev1) {
                    let bound = 0.5 * (va + v);
                    if vb > bound + 1e-9 * (1.0 + va.abs() + v.abs()) {
                        return Err(Error::NonConvex {
                            location: yb,
                            detail: format!("midpoint value {vb} exceeds chord value {bound}"),
                        });
                    }
                }
                prev2 = prev1;
                prev1 = Some((y, v));
            }
        }
        Ok(())
    }

    /// Truncation window `[l, r]` around the minimizer where
    /// `exp(-W) > TRUNC_EPS`, found by geometric expansion and refined by
    /// root bracketing. Fails with `NonIntegrable` when no decay is found.
    fn window(&self) -> Result<(f64, f64)> {
        let target = -TRUNC_EPS.ln() + 5.0; // W-level defining the window edge
        let mut edges = [0.0; 2];
        for (slot, dir) in [(0usize, -1.0), (1usize, 1.0)] {
            let mut d = 1.0;
            let mut found = None;
            for _ in 0..120 {
                let y = self.minimizer + dir * d;
                let v = self.eval(y);
                if !v.is_finite() {
                    return Err(Error::NonFinite(y));
                }
                if v >= target {
                    found = Some(d);
                    break;
                }
                d *= 2.0;
            }
            let d_hi = match found {
                Some(d) => d,
                None => {
                    return Err(Error::NonIntegrable(format!(
                        "no decay found in direction {dir} for {}",
                        self.label
                    )))
                }
            };
            let g = |d: f64| self.eval(self.minimizer + dir * d) - target;
            let d_lo = (d_hi / 2.0).min(d_hi);
            let d_star = if g(d_lo) >= 0.0 {
                d_lo
            } else {
                quad::bracket_root(&g, d_lo, d_hi, 1e-12 * d_hi)
            };
            edges[slot] = self.minimizer + dir * d_star;
        }
        Ok((edges[0], edges[1]))
    }
}

/// Normalize a raw potential: returns `z = integral exp(-W)` and the shifted
/// potential `V = W + ln z` whose measure `exp(-V) dy` is a probability law.
pub fn normalize_1d(raw: &RawPotential, quad_tol: f64) -> Result<(f64, NormalizedPotential)> {
    let (l, r) = raw.window()?;
    let f = |y: f64| (-raw.eval(y)).exp();
    let rough = quad::integrate_with_breaks(&f, l, r, &raw.kinks, 1e-3)?;
    let z = quad::integrate_with_breaks(&f, l, r, &raw.kinks, quad_tol * rough)?;
    if !(z.is_finite() && z > 0.0) {
        return Err(Error::NonIntegrable(format!(
            "normalization of {} came out as {z}",
            raw.label
        )));
    }
    NormalizedPotential::build(raw.clone(), z, 1.0, z.ln(), (l, r), quad_tol).map(|p| (z, p))
}

/// A potential `V` with `integral exp(-V) = 1`, together with the cached
/// 1D statistics used throughout the pipeline.
pub struct NormalizedPotential {
    raw: RawPotential,
    /// Coordinate scaling: `V(y) = W(scale * y) + shift`.
    scale: f64,
    shift: f64,
    /// 1D normalization of the underlying raw potential.
    z: f64,
    /// `min V`.
    m: f64,
    minimizer: f64,
    kinks: Vec<f64>,
    window: (f64, f64),
    barycenter: f64,
    variance: f64,
    expected_potential: f64,
    quad_tol: f64,
    sampler: OnceLock<Sampler1d>,
}

impl std::fmt::Debug for NormalizedPotential {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("NormalizedPotential")
            .field("label", &self.raw.label)
            .field("z", &self.z)
            .field("m", &self.m)
            .field("barycenter", &self.barycenter)
            .finish()
    }
}

impl NormalizedPotential {
    fn build(
        raw: RawPotential,
        z: f64,
        scale: f64,
        shift: f64,
        raw_window: (f64, f64),
        quad_tol: f64,
    ) -> Result<Self> {
        let minimizer = raw.minimizer / scale;
        let kinks: Vec<f64> = raw.kinks.iter().map(|k| k / scale).collect();
        let window = (raw_window.0 / scale, raw_window.1 / scale);
        let mut p = Self {
            raw,
            scale,
            shift,
            z,
            m: shift,
            minimizer,
            kinks,
            window,
            barycenter: 0.0,
            variance: 0.0,
            expected_potential: 0.0,
            quad_tol,
            sampler: OnceLock::new(),
        };
        let total = p.integrate_density(|_| 1.0)?;
        if (total - 1.0).abs() > 1e3 * quad_tol.max(1e-12) {
            return Err(Error::NonIntegrable(format!(
                "normalized mass is {total}, not 1"
            )));
        }
        p.barycenter = p.integrate_density(|y| y)? / total;
        let b = p.barycenter;
        p.variance = p.integrate_density(|y| (y - b) * (y - b))? / total;
        p.expected_potential = p.integrate_density(|y| p.eval(y))? / total;
        Ok(p)
    }

    /// `V(y)`.
    pub fn eval(&self, y: f64) -> f64 {
        self.raw.eval(self.scale * y) + self.shift
    }

    /// One-sided `V'(y)`.
    pub fn deriv(&self, y: f64, side: Side) -> f64 {
        self.scale * self.raw.deriv(self.scale * y, side)
    }

    /// `exp(-V(y))`.
    pub fn density(&self, y: f64) -> f64 {
        (-self.eval(y)).exp()
    }

    pub fn z(&self) -> f64 {
        self.z
    }

    /// `min V`.
    pub fn min_value(&self) -> f64 {
        self.m
    }

    pub fn minimizer(&self) -> f64 {
        self.minimizer
    }

    pub fn kinks(&self) -> &[f64] {
        &self.kinks
    }

    pub fn window(&self) -> (f64, f64) {
        self.window
    }

    pub fn label(&self) -> &str {
        self.raw.label()
    }

    /// Barycenter of `exp(-V) dy`.
    pub fn barycenter(&self) -> f64 {
        self.barycenter
    }

    pub fn variance(&self) -> f64 {
        self.variance
    }

    /// `E V(X)` under the potential's own law.
    pub fn expected_potential(&self) -> f64 {
        self.expected_potential
    }

    /// Adaptive integral of `g(y) exp(-V(y))` over the truncation window.
    pub fn integrate_density<G: Fn(f64) -> f64>(&self, g: G) -> Result<f64> {
        let f = |y: f64| g(y) * self.density(y);
        let (l, r) = self.window;
        let rough = quad::integrate_with_breaks(&f, l, r, &self.kinks, 1e-3)?;
        let tol = self.quad_tol * rough.abs().max(1e-3);
        quad::integrate_with_breaks(&f, l, r, &self.kinks, tol)
    }

    /// `|| V'(y)(y - b) ||_{L^2}` under the potential's law.
    pub fn alpha2(&self, b: f64) -> Result<f64> {
        let v = self.integrate_density(|y| {
            let d = self.deriv(y, Side::Right);
            let t = d * (y - b);
            t * t
        })?;
        Ok(v.max(0.0).sqrt())
    }

    /// Essential supremum of `(V'(y)(y-b))_-`, by dense one-sided scanning
    /// over (an extension of) the truncation window. The negative part
    /// vanishes outside `[min(b, minimizer), max(b, minimizer)]`, so the scan
    /// range is conservative.
    pub fn neg_part_sup(&self, b: f64) -> f64 {
        let lo = self.window.0.min(b - 1.0);
        let hi = self.window.1.max(b + 1.0);
        let n = 8192;
        let mut sup: f64 = 0.0;
        let step = (hi - lo) / n as f64;
        for j in 0..=n {
            let y = lo + step * j as f64;
            let d = self.deriv(y, Side::Right);
            sup = sup.max(-(d * (y - b)));
        }
        for &k in &self.kinks {
            for side in [Side::Left, Side::Right] {
                let d = self.deriv(k, side);
                sup = sup.max(-(d * (k - b)));
            }
        }
        sup
    }

    /// `(1 + ||(V'(y)(y-b))_-||_inf) max ||V'(y)(y-b)||_{L^2}`.
    pub fn alpha_inf2(&self, b: f64) -> Result<f64> {
        let a2 = self.alpha2(b)?;
        Ok((1.0 + self.neg_part_sup(b)).max(a2))
    }

    /// Endpoints `(a_minus, a_plus)` of the level interval `{V <= t}`.
    pub fn level_endpoints(&self, t: f64) -> Result<(f64, f64)> {
        if t < self.m - 1e-12 * (1.0 + self.m.abs()) {
            return Err(Error::BelowMinimum {
                level: t,
                minimum: self.m,
            });
        }
        let t = t.max(self.m);
        if t == self.m {
            return Ok((self.minimizer, self.minimizer));
        }
        let tol = 1e-13 * (1.0 + self.minimizer.abs());
        let mut out = [0.0; 2];
        for (slot, dir) in [(0usize, -1.0), (1usize, 1.0)] {
            let g = |y: f64| self.eval(y) - t;
            let mut d = (self.window.1 - self.window.0) / 64.0;
            let mut hi = self.minimizer + dir * d;
            let mut guard = 0;
            while g(hi) < 0.0 {
                d *= 2.0;
                hi = self.minimizer + dir * d;
                guard += 1;
                if guard > 200 {
                    return Err(Error::NonIntegrable(format!(
                        "no level crossing found at t = {t}"
                    )));
                }
            }
            let (a, b) = if dir < 0.0 {
                (hi, self.minimizer)
            } else {
                (self.minimizer, hi)
            };
            out[slot] = quad::bracket_root(&g, a, b, tol);
        }
        Ok((out[0], out[1]))
    }

    /// Law of `V(X)` for `X ~ exp(-V) dy`, as node masses on the uniform grid
    /// `t_k = min V + k h`. Cell masses are computed from the exact level
    /// strips in `y`-space; each cell's mass is split between its two
    /// neighboring nodes so that the first moment is preserved exactly.
    pub fn tilted_law(&self, h: f64, tail_mass: f64) -> Result<crate::profile::GriddedDensity> {
        let width = self.window.1 - self.window.0;
        let t_hi = self.m - tail_mass.ln() + (2.0 * width + 2.0).ln();
        let cells = ((t_hi - self.m) / h).ceil() as usize + 2;
        let mut node_mass = vec![0.0f64; cells + 2];

        // Level boundaries tau_0 = m, tau_j = m + (j - 1/2) h for j >= 1.
        let mut a_lo_prev = self.minimizer;
        let mut a_hi_prev = self.minimizer;
        let mut total = 0.0;
        for j in 1..=cells {
            let tau = self.m + (j as f64 - 0.5) * h;
            let (a_lo, a_hi) = self.level_endpoints(tau)?;
            let (mass_r, mom_r) = self.strip_integrals(a_hi_prev, a_hi)?;
            let (mass_l, mom_l) = self.strip_integrals(a_lo, a_lo_prev)?;
            let mass = mass_r + mass_l;
            if mass > 0.0 {
                let c = (mom_r + mom_l) / mass;
                // Node-centered cells: cell j-1 spans [tau_{j-1}, tau_j].
                let k = j - 1;
                let t_k = self.m + k as f64 * h;
                let lam = ((c - t_k) / h).clamp(-1.0, 1.0);
                if lam >= 0.0 {
                    node_mass[k] += mass * (1.0 - lam);
                    node_mass[k + 1] += mass * lam;
                } else if k > 0 {
                    node_mass[k] += mass * (1.0 + lam);
                    node_mass[k - 1] += mass * (-lam);
                } else {
                    // Cell 0 starts at the support edge; barycenters there
                    // cannot fall below the first node.
                    node_mass[0] += mass;
                }
                total += mass;
            }
            a_lo_prev = a_lo;
            a_hi_prev = a_hi;
        }
        if (1.0 - total) > 1e4 * tail_mass {
            return Err(Error::GridDeficit {
                mass: total,
                tol: 1e4 * tail_mass,
            });
        }
        Ok(crate::profile::GriddedDensity::new(self.m, h, node_mass))
    }

    /// Mass and first `t`-moment of the density over the strip `[ya, yb]`:
    /// `(integral exp(-V), integral V exp(-V))`.
    fn strip_integrals(&self, ya: f64, yb: f64) -> Result<(f64, f64)> {
        if yb <= ya {
            return Ok((0.0, 0.0));
        }
        let mut cuts = vec![ya];
        for &k in &self.kinks {
            if k > ya && k < yb {
                cuts.push(k);
            }
        }
        cuts.push(yb);
        let mut mass = 0.0;
        let mut mom = 0.0;
        for w in cuts.windows(2) {
            mass += quad::gl_panel(&|y| self.density(y), w[0], w[1]);
            mom += quad::gl_panel(&|y| self.eval(y) * self.density(y), w[0], w[1]);
        }
        Ok((mass, mom))
    }

    fn sampler(&self) -> &Sampler1d {
        self.sampler.get_or_init(|| Sampler1d::build(self, 8192))
    }

    /// Inverse-CDF sample at uniform `u` in (0, 1); monotone in `u`.
    pub fn sample_1d(&self, u: f64) -> f64 {
        self.sampler().quantile(u)
    }

    /// CDF of the potential's law at `y` (tabulated).
    pub fn cdf(&self, y: f64) -> f64 {
        self.sampler().cdf(y)
    }
}

/// Tabulated CDF for inverse-transform sampling.
struct Sampler1d {
    ys: Vec<f64>,
    cdf: Vec<f64>,
}

impl Sampler1d {
    fn build(p: &NormalizedPotential, n: usize) -> Self {
        let (l, r) = p.window();
        let mut ys: Vec<f64> = (0..=n)
            .map(|j| l + (r - l) * j as f64 / n as f64)
            .collect();
        // Keep kinks on the table so panels stay smooth.
        for &k in p.kinks() {
            if k > l && k < r {
                ys.push(k);
            }
        }
        ys.sort_by(f64::total_cmp);
        ys.dedup();
        let mut cdf = vec![0.0f64];
        let mut acc = 0.0;
        for w in ys.windows(2) {
            acc += quad::gl_panel(&|y| p.density(y), w[0], w[1]);
            cdf.push(acc);
        }
        let total = acc;
        for c in cdf.iter_mut() {
            *c /= total;
        }
        Self { ys, cdf }
    }

    fn quantile(&self, u: f64) -> f64 {
        let u = u.clamp(0.0, 1.0);
        let idx = self.cdf.partition_point(|&c| c < u);
        if idx == 0 {
            return self.ys[0];
        }
        if idx >= self.cdf.len() {
            return *self.ys.last().unwrap();
        }
        let (c0, c1) = (self.cdf[idx - 1], self.cdf[idx]);
        let (y0, y1) = (self.ys[idx - 1], self.ys[idx]);
        if c1 > c0 {
            y0 + (y1 - y0) * (u - c0) / (c1 - c0)
        } else {
            y0
        }
    }

    fn cdf(&self, y: f64) -> f64 {
        let idx = self.ys.partition_point(|&t| t < y);
        if idx == 0 {
            return 0.0;
        }
        if idx >= self.ys.len() {
            return 1.0;
        }
        let (y0, y1) = (self.ys[idx - 1], self.ys[idx]);
        let (c0, c1) = (self.cdf[idx - 1], self.cdf[idx]);
        c0 + (c1 - c0) * (y - y0) / (y1 - y0)
    }
}

/// The rescaled product potential `V(x) = sum_i V_i(x_i)` with
/// `sum_i min V_i = 0`, together with its criterion quantities.
pub struct ProductPotential {
    components: Vec<Arc<NormalizedPotential>>,
    z: f64,
    big_m: f64,
    b_mu: Vec<f64>,
    alpha2s: Vec<f64>,
    alpha_inf2s: Vec<f64>,
    a2: f64,
    a_inf2: f64,
    label: String,
}

impl std::fmt::Debug for ProductPotential {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ProductPotential")
            .field("n", &self.components.len())
            .field("z", &self.z)
            .field("m_max", &self.big_m)
            .field("a2", &self.a2)
            .finish()
    }
}

impl ProductPotential {
    /// Assemble from raw potentials, applying the joint rescaling
    /// `V_i(y) = W_i(z y) + ln z_i - ln z` with `z = (prod z_i)^{1/n}`.
    pub fn assemble(raws: &[RawPotential], quad_tol: f64) -> Result<Self> {
        if raws.is_empty() {
            return Err(Error::NonIntegrable("empty product".into()));
        }
        let mut zs = Vec::with_capacity(raws.len());
        let mut windows = Vec::with_capacity(raws.len());
        for raw in raws {
            let (l, r) = raw.window()?;
            let f = |y: f64| (-raw.eval(y)).exp();
            let rough = quad::integrate_with_breaks(&f, l, r, raw.kinks(), 1e-3)?;
            let z_i = quad::integrate_with_breaks(&f, l, r, raw.kinks(), quad_tol * rough)?;
            if !(z_i.is_finite() && z_i > 0.0) {
                return Err(Error::NonIntegrable(format!(
                    "normalization of {} failed",
                    raw.label()
                )));
            }
            zs.push(z_i);
            windows.push((l, r));
        }
        let log_z = zs.iter().map(|z| z.ln()).sum::<f64>() / zs.len() as f64;
        let z = log_z.exp();

        let mut components: Vec<Arc<NormalizedPotential>> = Vec::with_capacity(raws.len());
        for (i, raw) in raws.iter().enumerate() {
            // Identical raw components share one normalized instance.
            let dup = raws[..i]
                .iter()
                .position(|r| r.shares_eval(raw))
                .map(|j| components[j].clone());
            let comp = match dup {
                Some(c) => c,
                None => Arc::new(NormalizedPotential::build(
                    raw.clone(),
                    zs[i],
                    z,
                    zs[i].ln() - log_z,
                    windows[i],
                    quad_tol,
                )?),
            };
            components.push(comp);
        }

        let m_sum: f64 = components.iter().map(|c| c.min_value()).sum();
        debug_assert!(m_sum.abs() < 1e-9, "minima must sum to zero: {m_sum}");
        let big_m = components
            .iter()
            .map(|c| c.min_value().exp())
            .fold(f64::NEG_INFINITY, f64::max);
        let b_mu: Vec<f64> = components.iter().map(|c| c.barycenter()).collect();

        let mut alpha2s = Vec::new();
        let mut alpha_inf2s = Vec::new();
        for (c, &b) in components.iter().zip(&b_mu) {
            let a2 = c.alpha2(b)?;
            let ai = c.alpha_inf2(b)?;
            alpha2s.push(if a2 > ALPHA_INFINITE_THRESHOLD {
                f64::INFINITY
            } else {
                a2
            });
            alpha_inf2s.push(if ai > ALPHA_INFINITE_THRESHOLD {
                f64::INFINITY
            } else {
                ai
            });
        }
        let n = components.len() as f64;
        let a2 = (alpha2s.iter().map(|a| a * a).sum::<f64>() / n).sqrt();
        let a_inf2 = (alpha_inf2s.iter().map(|a| a * a).sum::<f64>() / n).sqrt();
        let label = if raws.iter().all(|r| r.shares_eval(&raws[0])) {
            format!("{}^{}", raws[0].label(), raws.len())
        } else {
            "mixed".to_string()
        };
        Ok(Self {
            components,
            z,
            big_m,
            b_mu,
            alpha2s,
            alpha_inf2s,
            a2,
            a_inf2,
            label,
        })
    }

    pub fn dim(&self) -> usize {
        self.components.len()
    }

    pub fn components(&self) -> &[Arc<NormalizedPotential>] {
        &self.components
    }

    pub fn component(&self, i: usize) -> &NormalizedPotential {
        &self.components[i]
    }

    /// Geometric mean of the 1D normalizations.
    pub fn z(&self) -> f64 {
        self.z
    }

    /// `max_i exp(min V_i)`.
    pub fn m_max(&self) -> f64 {
        self.big_m
    }

    pub fn b_mu(&self) -> &[f64] {
        &self.b_mu
    }

    pub fn alpha2s(&self) -> &[f64] {
        &self.alpha2s
    }

    pub fn alpha_inf2s(&self) -> &[f64] {
        &self.alpha_inf2s
    }

    /// Root-mean-square of the per-coordinate L2 coefficients at the
    /// barycenter; may be infinite.
    pub fn a2(&self) -> f64 {
        self.a2
    }

    pub fn a_inf2(&self) -> f64 {
        self.a_inf2
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    /// `V(x) = sum_i V_i(x_i)`.
    pub fn v_at(&self, x: &[f64]) -> f64 {
        x.iter()
            .zip(&self.components)
            .map(|(&xi, c)| c.eval(xi))
            .sum()
    }

    pub fn v_at_origin(&self) -> f64 {
        self.components.iter().map(|c| c.eval(0.0)).sum()
    }

    /// `1 + sum_i E V_i(X_i)`.
    pub fn e_v(&self) -> f64 {
        1.0 + self
            .components
            .iter()
            .map(|c| c.expected_potential())
            .sum::<f64>()
    }

    /// Diagonal of the product measure's covariance.
    pub fn cov_mu_diag(&self) -> Vec<f64> {
        self.components.iter().map(|c| c.variance()).collect()
    }

    /// Linear-functional relaxation constant of the product measure:
    /// square root of the largest 1D variance.
    pub fn d_lin_mu(&self) -> f64 {
        self.cov_mu_diag()
            .into_iter()
            .fold(0.0f64, f64::max)
            .sqrt()
    }

    /// Draw one product sample using per-coordinate inverse CDFs.
    pub fn sample<R: rand::Rng>(&self, rng: &mut R) -> Vec<f64> {
        self.components
            .iter()
            .map(|c| c.sample_1d(rng.gen::<f64>()))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::{assert_abs_diff_eq, assert_relative_eq};

    // Independent oracle: plain midpoint-refined Romberg-style integration,
    // no shared code with the adaptive engine.
    fn oracle_integral<F: Fn(f64) -> f64>(f: F, a: f64, b: f64) -> f64 {
        let mut n = 1 << 14;
        let mut prev = f64::NAN;
        loop {
            let h = (b - a) / n as f64;
            let mut s = 0.0;
            for j in 0..n {
                s += f(a + (j as f64 + 0.5) * h);
            }
            s *= h;
            if (s - prev).abs() < 1e-11 * (1.0 + s.abs()) || n > 1 << 22 {
                return s;
            }
            prev = s;
            n *= 2;
        }
    }

    #[test]
    fn normalize_gaussian_matches_oracle() {
        let (z, p) = normalize_1d(&RawPotential::gaussian(), 1e-10).unwrap();
        let oracle = oracle_integral(|y| (-0.5 * y * y).exp(), -40.0, 40.0);
        assert_relative_eq!(z, oracle, epsilon = 1e-9);
        assert_relative_eq!(z, (2.0 * std::f64::consts::PI).sqrt(), epsilon = 1e-9);
        assert_relative_eq!(p.integrate_density(|_| 1.0).unwrap(), 1.0, epsilon = 1e-9);
    }

    #[test]
    fn normalize_laplace_is_exact() {
        let (z, _) = normalize_1d(&RawPotential::laplace(), 1e-10).unwrap();
        assert_relative_eq!(z, 2.0, epsilon = 1e-10);
    }

    #[test]
    fn normalize_half_linear_half_quadratic() {
        // W = y_+ + y_-^2: z = 1 + sqrt(pi)/2, by split quadrature oracle.
        let raw = RawPotential::power(1.0, 2.0).unwrap();
        let (z, _) = normalize_1d(&raw, 1e-10).unwrap();
        let oracle = oracle_integral(|y| (-y).exp(), 0.0, 60.0)
            + oracle_integral(|y| (-(y * y)).exp(), -30.0, 0.0);
        assert_relative_eq!(z, oracle, epsilon = 1e-9);
        assert_relative_eq!(z, 1.0 + std::f64::consts::PI.sqrt() / 2.0, epsilon = 1e-9);
    }

    #[test]
    fn non_convex_power_is_rejected() {
        assert!(matches!(
            RawPotential::power(0.5, 2.0),
            Err(Error::NonConvex { .. })
        ));
    }

    #[test]
    fn non_convex_table_is_rejected() {
        let pts = [(-1.0, 1.0), (0.0, 0.0), (0.5, 0.8), (1.0, 1.0)];
        assert!(matches!(
            RawPotential::from_table(&pts),
            Err(Error::NonConvex { .. })
        ));
    }

    #[test]
    fn non_integrable_table_is_rejected() {
        let pts = [(-1.0, 1.0), (0.0, 0.0), (1.0, 0.0)];
        assert!(matches!(
            RawPotential::from_table(&pts),
            Err(Error::NonIntegrable(_))
        ));
    }

    #[test]
    fn barycenters() {
        let (_, gauss) = normalize_1d(&RawPotential::gaussian(), 1e-10).unwrap();
        assert_abs_diff_eq!(gauss.barycenter(), 0.0, epsilon = 1e-9);

        // W = y_+ + 2 y_-: slower decay on the right, so the mean is positive.
        let skew = RawPotential::power_scaled(1.0, 1.0, 2.0, 1.0).unwrap();
        let (_, skew) = normalize_1d(&skew, 1e-10).unwrap();
        assert!(skew.barycenter() > 0.0);

        // Shifted Laplace: translation equivariance.
        let (_, shifted) = normalize_1d(&RawPotential::laplace().shifted(3.0), 1e-10).unwrap();
        assert_relative_eq!(shifted.barycenter(), 3.0, epsilon = 1e-9);
    }

    #[test]
    fn expected_potential_values() {
        let (_, lap) = normalize_1d(&RawPotential::laplace(), 1e-10).unwrap();
        assert_relative_eq!(
            lap.expected_potential(),
            1.0 + 2f64.ln(),
            epsilon = 1e-9
        );
        let (_, gauss) = normalize_1d(&RawPotential::gaussian(), 1e-10).unwrap();
        let expect = 0.5 + 0.5 * (2.0 * std::f64::consts::PI).ln();
        assert_relative_eq!(gauss.expected_potential(), expect, epsilon = 1e-9);
        assert!(gauss.expected_potential() >= gauss.min_value());
    }

    #[test]
    fn alpha_coefficients() {
        let (_, gauss) = normalize_1d(&RawPotential::gaussian(), 1e-10).unwrap();
        assert_relative_eq!(gauss.alpha2(0.0).unwrap(), 3f64.sqrt(), epsilon = 1e-8);
        let (_, lap) = normalize_1d(&RawPotential::laplace(), 1e-10).unwrap();
        assert_relative_eq!(lap.alpha2(0.0).unwrap(), 2f64.sqrt(), epsilon = 1e-8);
        // (V'(y) y)_- = 0 for the symmetric Laplace, so the sup term is 1.
        assert_abs_diff_eq!(lap.neg_part_sup(0.0), 0.0, epsilon = 1e-12);
        assert_relative_eq!(lap.alpha_inf2(0.0).unwrap(), 2f64.sqrt(), epsilon = 1e-8);
    }

    #[test]
    fn level_endpoints_basic() {
        let (_, lap) = normalize_1d(&RawPotential::laplace(), 1e-10).unwrap();
        // V = |y| + ln 2; the level t = 1 + ln 2 cuts out [-1, 1].
        let (a, b) = lap.level_endpoints(1.0 + 2f64.ln()).unwrap();
        assert_relative_eq!(a, -1.0, epsilon = 1e-9);
        assert_relative_eq!(b, 1.0, epsilon = 1e-9);
        // Degenerate at the minimum level.
        let (a, b) = lap.level_endpoints(lap.min_value()).unwrap();
        assert_eq!((a, b), (0.0, 0.0));
        assert!(lap.level_endpoints(lap.min_value() - 1.0).is_err());
        // The gaussian at level m + 2 cuts out |y| <= 2.
        let (_, gauss) = normalize_1d(&RawPotential::gaussian(), 1e-10).unwrap();
        let (a, b) = gauss.level_endpoints(gauss.min_value() + 2.0).unwrap();
        assert_relative_eq!(a, -2.0, epsilon = 1e-9);
        assert_relative_eq!(b, 2.0, epsilon = 1e-9);
    }

    #[test]
    fn sampler_quantiles_and_moments() {
        let (_, lap) = normalize_1d(&RawPotential::laplace(), 1e-10).unwrap();
        assert_abs_diff_eq!(lap.sample_1d(0.5), 0.0, epsilon = 1e-5);
        assert_relative_eq!(lap.sample_1d(0.75), 2f64.ln(), epsilon = 1e-4);
        // Empirical variance of 1e5 stratified draws vs quadrature variance.
        let n = 100_000;
        let mut acc = 0.0;
        let mut acc2 = 0.0;
        for j in 0..n {
            let u = (j as f64 + 0.5) / n as f64;
            let y = lap.sample_1d(u);
            acc += y;
            acc2 += y * y;
        }
        let mean = acc / n as f64;
        let var = acc2 / n as f64 - mean * mean;
        assert_relative_eq!(var, lap.variance(), max_relative = 5e-3);
    }

    #[test]
    fn product_assembly_laplace() {
        let raw = RawPotential::laplace();
        let raws: Vec<_> = (0..4).map(|_| raw.clone()).collect();
        let prod = ProductPotential::assemble(&raws, 1e-10).unwrap();
        assert_relative_eq!(prod.z(), 2.0, epsilon = 1e-9);
        assert_relative_eq!(prod.m_max(), 1.0, epsilon = 1e-12);
        for c in prod.components() {
            assert_abs_diff_eq!(c.min_value(), 0.0, epsilon = 1e-12);
            // V_i(y) = 2|y| after rescaling.
            assert_relative_eq!(c.eval(0.7), 1.4, epsilon = 1e-9);
        }
        // Components are shared between identical coordinates.
        assert!(Arc::ptr_eq(&prod.components()[0], &prod.components()[3]));
        assert_relative_eq!(prod.a2(), 2f64.sqrt(), epsilon = 1e-8);
    }

    #[test]
    fn product_assembly_mixed() {
        let raws = vec![RawPotential::gaussian(), RawPotential::laplace()];
        let prod = ProductPotential::assemble(&raws, 1e-10).unwrap();
        let z_expect = (2.0 * (2.0 * std::f64::consts::PI).sqrt()).sqrt();
        assert_relative_eq!(prod.z(), z_expect, epsilon = 1e-9);
        let m_expect = (2.0 * std::f64::consts::PI).sqrt() / z_expect;
        assert_relative_eq!(prod.m_max(), m_expect, epsilon = 1e-9);
        let m_sum: f64 = prod.components().iter().map(|c| c.min_value()).sum();
        assert_abs_diff_eq!(m_sum, 0.0, epsilon = 1e-12);
        // Each rescaled component is still a probability law.
        for c in prod.components() {
            assert_relative_eq!(c.integrate_density(|_| 1.0).unwrap(), 1.0, epsilon = 1e-8);
        }
    }

    #[test]
    fn integration_by_parts_identity() {
        // integral V'(y) (y - b) exp(-V) dy = 1 for every b.
        for raw in [
            RawPotential::gaussian(),
            RawPotential::laplace(),
            RawPotential::power(1.0, 3.0).unwrap(),
        ] {
            let (_, p) = normalize_1d(&raw, 1e-10).unwrap();
            for b in [0.0, -0.7, 1.3] {
                let v = p
                    .integrate_density(|y| p.deriv(y, Side::Right) * (y - b))
                    .unwrap();
                assert_relative_eq!(v, 1.0, epsilon = 1e-8);
            }
        }
    }

    #[test]
    fn alpha_invariance_under_shift_and_rescale() {
        // Coefficients at the barycenter are unchanged by translating the raw
        // potential and by the joint product rescaling.
        let raw = RawPotential::power(1.0, 3.0).unwrap();
        let (_, p) = normalize_1d(&raw, 1e-10).unwrap();
        let a_ref = p.alpha2(p.barycenter()).unwrap();

        let (_, shifted) = normalize_1d(&raw.shifted(2.5), 1e-10).unwrap();
        assert_relative_eq!(
            shifted.alpha2(shifted.barycenter()).unwrap(),
            a_ref,
            epsilon = 1e-7
        );

        let raws: Vec<_> = (0..3).map(|_| raw.clone()).collect();
        let prod = ProductPotential::assemble(&raws, 1e-10).unwrap();
        let c = prod.component(0);
        assert_relative_eq!(c.alpha2(c.barycenter()).unwrap(), a_ref, epsilon = 1e-7);
    }

    #[test]
    fn lemma_bounds_on_coefficients() {
        // L2 coefficient >= sqrt(2) for every b; negative-part sup <= 1 at
        // the barycenter.
        let raws = [
            RawPotential::gaussian(),
            RawPotential::laplace(),
            RawPotential::power(1.0, 3.0).unwrap(),
            RawPotential::power(2.0, 4.0).unwrap(),
        ];
        for raw in raws {
            let (_, p) = normalize_1d(&raw, 1e-10).unwrap();
            for b in [p.barycenter(), 0.3, -1.1] {
                assert!(p.alpha2(b).unwrap() >= 2f64.sqrt() - 1e-6);
            }
            assert!(p.neg_part_sup(p.barycenter()) <= 1.0 + 1e-6);
        }
    }

    #[test]
    fn tilted_law_matches_closed_forms() {
        // Laplace: law of |Y| + ln 2 is Exp(1) shifted by ln 2.
        let (_, lap) = normalize_1d(&RawPotential::laplace(), 1e-10).unwrap();
        let law = lap.tilted_law(0.01, 1e-12).unwrap();
        assert_relative_eq!(law.total_mass(), 1.0, epsilon = 1e-9);
        assert_relative_eq!(law.mean(), lap.expected_potential(), epsilon = 1e-9);
        // Spot densities away from the support edge.
        for &t in &[0.5, 1.0, 2.0, 5.0] {
            let dens = law.density_at(lap.min_value() + t);
            assert_relative_eq!(dens, (-t).exp(), max_relative = 1e-4);
        }

        // Gaussian: shifted chi-square(1)/2 law; check mass and mean only
        // (the density is singular at the edge).
        let (_, gauss) = normalize_1d(&RawPotential::gaussian(), 1e-10).unwrap();
        let law = gauss.tilted_law(0.01, 1e-12).unwrap();
        assert_relative_eq!(law.total_mass(), 1.0, epsilon = 1e-9);
        assert_relative_eq!(law.mean(), gauss.expected_potential(), epsilon = 1e-9);
    }
}
