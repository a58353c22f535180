//! The level-volume curve `phi(E) = exp(-E) Vol(K_E)` and its derived
//! quantities.
//!
//! `phi` is the density of `sum_i V_i(X_i) + Exp(1)` under the product
//! measure, so it is built as an (n+1)-fold convolution of probability mass
//! arrays: the per-coordinate laws of `V_i(X_i)` and one exponential factor.
//! Working with probability masses keeps every intermediate bounded by one,
//! so no `e^n` rescaling is ever needed. Volumes are recovered in the log
//! domain: `ln Vol(K_E) = E + ln phi(E)`.

use crate::check::CheckRow;
use crate::conv::{convolve, ConvMode};
use crate::error::{Error, Result};
use crate::potential::ProductPotential;
use crate::special::{inv_gamma_p, ln_factorial};
use std::sync::Arc;

/// Probability masses attached to the nodes of a uniform grid
/// `t_k = origin + k * spacing`. Node `k` carries the mass of the cell
/// around it, split between neighboring nodes so that the first moment of
/// the law is preserved exactly.
#[derive(Clone, Debug)]
pub struct GriddedDensity {
    origin: f64,
    spacing: f64,
    mass: Vec<f64>,
}

impl GriddedDensity {
    pub fn new(origin: f64, spacing: f64, mass: Vec<f64>) -> Self {
        debug_assert!(mass.iter().all(|&m| m >= 0.0));
        Self {
            origin,
            spacing,
            mass,
        }
    }

    pub fn origin(&self) -> f64 {
        self.origin
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn mass(&self) -> &[f64] {
        &self.mass
    }

    pub fn len(&self) -> usize {
        self.mass.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mass.is_empty()
    }

    pub fn node(&self, k: usize) -> f64 {
        self.origin + k as f64 * self.spacing
    }

    pub fn total_mass(&self) -> f64 {
        self.mass.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        let total = self.total_mass();
        self.mass
            .iter()
            .enumerate()
            .map(|(k, m)| m * self.node(k))
            .sum::<f64>()
            / total
    }

    pub fn variance(&self) -> f64 {
        let mean = self.mean();
        let total = self.total_mass();
        self.mass
            .iter()
            .enumerate()
            .map(|(k, m)| {
                let d = self.node(k) - mean;
                m * d * d
            })
            .sum::<f64>()
            / total
    }

    /// Density estimate at `t` by linear interpolation of node masses over
    /// the spacing. Intended for spot checks away from support edges.
    pub fn density_at(&self, t: f64) -> f64 {
        let x = (t - self.origin) / self.spacing;
        if x < 0.0 || x > (self.mass.len() - 1) as f64 {
            return 0.0;
        }
        let k = x.floor() as usize;
        let frac = x - k as f64;
        let lo = self.mass[k];
        let hi = self.mass[(k + 1).min(self.mass.len() - 1)];
        (lo * (1.0 - frac) + hi * frac) / self.spacing
    }
}

/// Grid construction policy for profiles.
#[derive(Clone, Debug)]
pub struct GridSpec {
    /// Minimum resolution of each 1D law across its own mass window.
    pub cells_per_law: usize,
    /// Tail mass dropped per 1D law.
    pub tail_mass: f64,
    /// Optional hard cap on the spacing.
    pub max_spacing: Option<f64>,
    /// Convolution engine.
    pub conv: ConvMode,
    /// Upper end of the grid in standard deviations of the total law.
    pub cap_sigmas: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            cells_per_law: 2000,
            tail_mass: 1e-12,
            max_spacing: None,
            conv: ConvMode::Auto,
            cap_sigmas: 12.0,
        }
    }
}

impl GridSpec {
    /// Fine grid with tail-accurate direct convolution, for equality-case
    /// diagnostics.
    pub fn high_accuracy() -> Self {
        Self {
            cells_per_law: 20_000,
            conv: ConvMode::Direct,
            ..Self::default()
        }
    }
}

/// The level curve on a uniform grid, with node masses and densities.
pub struct LevelProfile {
    n: usize,
    origin: f64,
    spacing: f64,
    /// Node masses of the law of `sum V_i(X_i) + Exp(1)`.
    mass: Vec<f64>,
    /// Densities `phi(E_k) = mass_k / spacing`.
    phi: Vec<f64>,
}

/// The interval of levels whose curve value clears the `q`-threshold.
#[derive(Clone, Copy, Debug)]
pub struct LevelInterval {
    pub q: f64,
    pub e_min: f64,
    pub e_max: f64,
}

impl LevelInterval {
    pub fn width(&self) -> f64 {
        self.e_max - self.e_min
    }

    pub fn contains(&self, e: f64) -> bool {
        e >= self.e_min && e <= self.e_max
    }
}

/// Both computations of the distinguished level.
#[derive(Clone, Copy, Debug)]
pub struct EvRoutes {
    /// `1 + sum_i E V_i(X_i)` by per-coordinate quadrature.
    pub quadrature: f64,
    /// Barycenter of the level curve, from the convolved masses.
    pub profile: f64,
}

/// Monotone transport from the model level law onto the profile's law,
/// sampled on a quantile grid.
pub struct ContractionMap {
    /// Model quantiles (source points).
    pub s: Vec<f64>,
    /// Transported points `T(s)`.
    pub t: Vec<f64>,
}

impl ContractionMap {
    /// Largest slope over adjacent quantile pairs.
    pub fn max_slope(&self) -> f64 {
        self.s
            .windows(2)
            .zip(self.t.windows(2))
            .filter(|(sw, _)| sw[1] - sw[0] > 1e-9)
            .map(|(sw, tw)| (tw[1] - tw[0]) / (sw[1] - sw[0]))
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn is_monotone(&self) -> bool {
        self.t.windows(2).all(|w| w[1] >= w[0] - 1e-12)
    }

    /// `T` evaluated at the model point `s` by interpolation.
    pub fn at(&self, s: f64) -> f64 {
        let idx = self.s.partition_point(|&x| x < s);
        if idx == 0 {
            return self.t[0];
        }
        if idx >= self.s.len() {
            return *self.t.last().unwrap();
        }
        let (s0, s1) = (self.s[idx - 1], self.s[idx]);
        let (t0, t1) = (self.t[idx - 1], self.t[idx]);
        if s1 > s0 {
            t0 + (t1 - t0) * (s - s0) / (s1 - s0)
        } else {
            t0
        }
    }
}

/// Build the level profile of a product potential by convolving the tilted
/// 1D laws with one exponential factor.
pub fn build_profile(prod: &ProductPotential, spec: &GridSpec) -> Result<LevelProfile> {
    let n = prod.dim();

    // Shared spacing: every law must see at least `cells_per_law` cells
    // across its own tail window.
    let mut h = f64::INFINITY;
    let mut uniq: Vec<(usize, usize)> = Vec::new(); // (index into components, count)
    for (i, c) in prod.components().iter().enumerate() {
        let dup = prod.components()[..i]
            .iter()
            .position(|c2| Arc::ptr_eq(c, c2));
        match dup {
            Some(j) => {
                let slot = uniq.iter_mut().find(|(k, _)| *k == j).unwrap();
                slot.1 += 1;
            }
            None => uniq.push((i, 1)),
        }
        let width = c.window().1 - c.window().0;
        let t_span = -spec.tail_mass.ln() + (2.0 * width + 2.0).ln();
        h = h.min(t_span / spec.cells_per_law as f64);
    }
    // The exponential factor also constrains the spacing.
    let exp_span = -spec.tail_mass.ln();
    h = h.min(exp_span / spec.cells_per_law as f64);
    if let Some(cap) = spec.max_spacing {
        h = h.min(cap);
    }

    // Per-law node masses (shared components computed once).
    let mut parts: Vec<(Vec<f64>, f64, usize)> = Vec::new(); // (mass, origin, count)
    let mut mean_sum = 1.0; // exponential factor
    let mut var_sum = 1.0;
    for &(i, count) in &uniq {
        let law = prod.component(i).tilted_law(h, spec.tail_mass)?;
        mean_sum += law.mean() * count as f64;
        var_sum += law.variance() * count as f64;
        parts.push((law.mass().to_vec(), law.origin(), count));
    }
    parts.push((exp_law_nodes(h, spec.tail_mass), 0.0, 1));

    // Grid cap: the total law's upper tail in its own standard deviations.
    // Twelve sigmas put the retained-curve floor far below any level-set
    // threshold of interest.
    let e_cap = mean_sum + spec.cap_sigmas * var_sum.sqrt() + 10.0;
    let cap_len = (e_cap / h).ceil() as usize + 2;

    // Fold everything. Since the origins (= per-law minima) sum to zero,
    // every intermediate may be truncated to `cap_len` nodes exactly.
    let mut acc: Option<(Vec<f64>, f64)> = None;
    for (mass, origin, count) in parts {
        let powed = pow_conv(&mass, count, cap_len, spec.conv);
        let p_origin = origin * count as f64;
        acc = Some(match acc {
            None => (powed, p_origin),
            Some((a, ao)) => (convolve(&a, &powed, cap_len, spec.conv), ao + p_origin),
        });
    }
    let (mass, origin) = acc.unwrap();

    let total: f64 = mass.iter().sum();
    if total < 1.0 - 1e4 * spec.tail_mass * (n + 1) as f64 - 1e-9 {
        return Err(Error::GridDeficit {
            mass: total,
            tol: 1e4 * spec.tail_mass * (n + 1) as f64,
        });
    }

    let phi: Vec<f64> = mass.iter().map(|m| m / h).collect();
    Ok(LevelProfile {
        n,
        origin,
        spacing: h,
        mass,
        phi,
    })
}

/// Node masses of the Exp(1) factor (exact cell integrals, moment-preserving
/// node assignment).
fn exp_law_nodes(h: f64, tail_mass: f64) -> Vec<f64> {
    let t_hi = -tail_mass.ln();
    let cells = (t_hi / h).ceil() as usize + 2;
    let mut node = vec![0.0f64; cells + 2];
    let bound = |j: usize| -> f64 {
        if j == 0 {
            0.0
        } else {
            (j as f64 - 0.5) * h
        }
    };
    for j in 1..=cells {
        let (a, b) = (bound(j - 1), bound(j));
        let mass = (-a).exp() - (-b).exp();
        if mass <= 0.0 {
            continue;
        }
        let moment = (a + 1.0) * (-a).exp() - (b + 1.0) * (-b).exp();
        let c = moment / mass;
        let k = j - 1;
        let t_k = k as f64 * h;
        let lam = ((c - t_k) / h).clamp(-1.0, 1.0);
        if lam >= 0.0 {
            node[k] += mass * (1.0 - lam);
            node[k + 1] += mass * lam;
        } else if k > 0 {
            node[k] += mass * (1.0 + lam);
            node[k - 1] += mass * (-lam);
        } else {
            node[0] += mass;
        }
    }
    node
}

/// `base` convolved with itself `count` times (binary exponentiation), each
/// intermediate truncated to `cap_len` nodes.
fn pow_conv(base: &[f64], count: usize, cap_len: usize, mode: ConvMode) -> Vec<f64> {
    debug_assert!(count >= 1);
    let mut result: Option<Vec<f64>> = None;
    let mut sq = base.to_vec();
    let mut c = count;
    loop {
        if c & 1 == 1 {
            result = Some(match result {
                None => sq.clone(),
                Some(r) => convolve(&r, &sq, cap_len, mode),
            });
        }
        c >>= 1;
        if c == 0 {
            break;
        }
        sq = convolve(&sq, &sq, cap_len, mode);
    }
    result.unwrap()
}

impl LevelProfile {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn origin(&self) -> f64 {
        self.origin
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn len(&self) -> usize {
        self.phi.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phi.is_empty()
    }

    pub fn node(&self, k: usize) -> f64 {
        self.origin + k as f64 * self.spacing
    }

    pub fn phi(&self) -> &[f64] {
        &self.phi
    }

    pub fn mass(&self) -> &[f64] {
        &self.mass
    }

    /// `integral phi dE` over the grid.
    pub fn total_mass(&self) -> f64 {
        self.mass.iter().sum()
    }

    /// Barycenter of the level curve.
    pub fn mean(&self) -> f64 {
        let total = self.total_mass();
        self.mass
            .iter()
            .enumerate()
            .map(|(k, m)| m * self.node(k))
            .sum::<f64>()
            / total
    }

    /// `phi(E)` by linear interpolation.
    pub fn phi_at(&self, e: f64) -> f64 {
        let x = (e - self.origin) / self.spacing;
        if x < 0.0 || x > (self.phi.len() - 1) as f64 {
            return 0.0;
        }
        let k = x.floor() as usize;
        let frac = x - k as f64;
        let hi = self.phi[(k + 1).min(self.phi.len() - 1)];
        self.phi[k] * (1.0 - frac) + hi * frac
    }

    /// `ln Vol(K_E) = E + ln phi(E)`; `-inf` where the curve vanishes.
    pub fn ln_vol_at(&self, e: f64) -> f64 {
        let p = self.phi_at(e);
        if p > 0.0 {
            e + p.ln()
        } else {
            f64::NEG_INFINITY
        }
    }

    /// `Vol(K_E)^{1/n}`, computed in the log domain.
    pub fn vol_pow_inv_n_at(&self, e: f64) -> f64 {
        (self.ln_vol_at(e) / self.n as f64).exp()
    }

    /// `ln Z_E = ln(n! e^n / n^n) + ln phi(E)`.
    pub fn ln_z_at(&self, e: f64) -> f64 {
        let nf = self.n as f64;
        let p = self.phi_at(e);
        if p > 0.0 {
            ln_factorial(self.n as u64) + nf - nf * nf.ln() + p.ln()
        } else {
            f64::NEG_INFINITY
        }
    }

    /// Argmax of the curve with its value, refined by a three-point parabola
    /// on `ln phi` around the grid maximum.
    pub fn peak(&self) -> (f64, f64) {
        let (k, &mx) = self
            .phi
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .unwrap();
        if k == 0 || k + 1 >= self.phi.len() || self.phi[k - 1] <= 0.0 || self.phi[k + 1] <= 0.0 {
            return (self.node(k), mx);
        }
        let (lm, l0, lp) = (
            self.phi[k - 1].ln(),
            self.phi[k].ln(),
            self.phi[k + 1].ln(),
        );
        let denom = lp - 2.0 * l0 + lm;
        if denom >= -1e-300 {
            return (self.node(k), mx);
        }
        let x = 0.5 * (lm - lp) / denom; // vertex offset in grid units
        let x = x.clamp(-1.0, 1.0);
        let lval = l0 + 0.5 * (lp - lm) * x + 0.5 * denom * x * x;
        (self.node(k) + x * self.spacing, lval.exp())
    }

    /// The interval of levels `E >= 0` with
    /// `phi(E) >= exp(-q) n^n e^{-n} / n!`, endpoints refined by log-linear
    /// interpolation on the monotone flanks.
    pub fn level_interval(&self, q: f64) -> Result<LevelInterval> {
        let nf = self.n as f64;
        let ln_thresh = -q + nf * nf.ln() - nf - ln_factorial(self.n as u64);
        let above: Vec<usize> = (0..self.phi.len())
            .filter(|&k| self.node(k) >= 0.0 && self.phi[k].ln() >= ln_thresh)
            .collect();
        let (first, last) = match (above.first(), above.last()) {
            (Some(&f), Some(&l)) => (f, l),
            _ => return Err(Error::EmptyLevelSet { q }),
        };
        let cross = |k_out: usize, k_in: usize| -> f64 {
            let (p_out, p_in) = (self.phi[k_out], self.phi[k_in]);
            if p_out <= 0.0 {
                return self.node(k_in);
            }
            let (lo, li) = (p_out.ln(), p_in.ln());
            if (li - lo).abs() < 1e-300 {
                return self.node(k_in);
            }
            let frac = (ln_thresh - lo) / (li - lo);
            self.node(k_out) + frac.clamp(0.0, 1.0) * (self.node(k_in) - self.node(k_out))
        };
        let e_min = if first == 0 || self.node(first) <= 0.0 {
            self.node(first).max(0.0)
        } else {
            cross(first - 1, first).max(0.0)
        };
        let e_max = if last + 1 >= self.phi.len() {
            self.node(last)
        } else {
            cross(last + 1, last)
        };
        Ok(LevelInterval { q, e_min, e_max })
    }

    /// CDF of the level law at `e` (piecewise-linear between nodes).
    pub fn cdf_at(&self, e: f64) -> f64 {
        let total = self.total_mass();
        let x = (e - self.origin) / self.spacing;
        if x <= 0.0 {
            return 0.0;
        }
        let k = (x.floor() as usize).min(self.mass.len() - 1);
        let mut acc: f64 = self.mass[..k].iter().sum();
        acc += self.mass[k] * (x - k as f64).min(1.0);
        (acc / total).min(1.0)
    }

    /// Quantile of the level law.
    pub fn quantile(&self, u: f64) -> f64 {
        let total = self.total_mass();
        let target = u.clamp(0.0, 1.0) * total;
        let mut acc = 0.0;
        for (k, &m) in self.mass.iter().enumerate() {
            if acc + m >= target {
                let frac = if m > 0.0 { (target - acc) / m } else { 0.0 };
                return self.node(k) + frac * self.spacing;
            }
            acc += m;
        }
        self.node(self.mass.len() - 1)
    }

    /// Discrete slopes of `W(E) = -ln phi(E)` on the support; each slope
    /// should not exceed 1.
    pub fn max_w_slope(&self) -> f64 {
        let floor = self.phi.iter().fold(0.0f64, |a, &b| a.max(b)) * 1e-12;
        let mut worst = f64::NEG_INFINITY;
        for k in 0..self.phi.len() - 1 {
            if self.phi[k] > floor && self.phi[k + 1] > floor {
                let w0 = -self.phi[k].ln();
                let w1 = -self.phi[k + 1].ln();
                worst = worst.max((w1 - w0) / self.spacing);
            }
        }
        worst
    }

    /// Largest discrete second difference of
    /// `g(E) = (e^E phi(E))^{1/n}` over the support (concavity gives
    /// nonpositive values up to grid error).
    pub fn max_g_convexity_defect(&self) -> f64 {
        let floor = self.phi.iter().fold(0.0f64, |a, &b| a.max(b)) * 1e-9;
        let nf = self.n as f64;
        let g: Vec<Option<f64>> = (0..self.phi.len())
            .map(|k| {
                if self.phi[k] > floor {
                    Some(((self.node(k) + self.phi[k].ln()) / nf).exp())
                } else {
                    None
                }
            })
            .collect();
        let h2 = self.spacing * self.spacing;
        let mut worst = f64::NEG_INFINITY;
        for k in 1..g.len() - 1 {
            if let (Some(a), Some(b), Some(c)) = (g[k - 1], g[k], g[k + 1]) {
                worst = worst.max((a - 2.0 * b + c) / h2);
            }
        }
        worst
    }
}

/// Compute the distinguished level by its two independent routes. Errors
/// with `RouteMismatch` when they disagree beyond `tol`, which indicates an
/// inconsistency between quadrature and convolution.
pub fn compute_ev(prod: &ProductPotential, profile: &LevelProfile, tol: f64) -> Result<EvRoutes> {
    let routes = EvRoutes {
        quadrature: prod.e_v(),
        profile: profile.mean(),
    };
    if (routes.quadrature - routes.profile).abs() > tol {
        return Err(Error::RouteMismatch {
            route_a: routes.quadrature,
            route_b: routes.profile,
            tol,
        });
    }
    Ok(routes)
}

/// Monotone CDF-matching transport from the model law
/// `e^{-t} t^n / n! dt` onto the profile's level law, sampled on a quantile
/// grid.
pub fn build_contraction_map(profile: &LevelProfile, points: usize) -> ContractionMap {
    let shape = profile.n as f64 + 1.0;
    let mut s = Vec::with_capacity(points);
    let mut t = Vec::with_capacity(points);
    for j in 0..points {
        let u = (j as f64 + 0.5) / points as f64;
        s.push(inv_gamma_p(shape, u));
        t.push(profile.quantile(u));
    }
    ContractionMap { s, t }
}

/// The level-set property suite for one profile: interval shape, volume
/// normalization, the distinguished level, and the barycenter bound.
pub fn check_level_properties(
    prod: &ProductPotential,
    profile: &LevelProfile,
    q: f64,
) -> Result<Vec<CheckRow>> {
    let n = profile.n;
    let nf = n as f64;
    let grid_tol = 4.0 * profile.spacing;
    let interval = profile.level_interval(q)?;
    let routes = compute_ev(prod, profile, 1e-6)?;
    let e_v = routes.quadrature;
    let (t_peak, m_peak) = profile.peak();

    let ln_width_cap = q + ln_factorial(n as u64) + nf - nf * nf.ln();
    let c_nq = (-q / nf + nf.ln() - 1.0 - ln_factorial(n as u64) / nf).exp();
    let vol_min = profile.vol_pow_inv_n_at(interval.e_min);
    let vol_max = profile.vol_pow_inv_n_at(interval.e_max);
    let vol_upper_slack = (ln_width_cap.exp() / nf).exp(); // e^{(E_max-E_min)/n} cap

    let v_b_mu = prod.v_at(prod.b_mu());
    let ln_peak_floor = nf * nf.ln() - nf - ln_factorial(n as u64);

    let mut rows = vec![
        CheckRow::bound(
            "level_interval_min_below_n",
            interval.e_min,
            nf,
            grid_tol,
            "lower endpoint of the level interval",
        ),
        CheckRow::bound(
            "level_interval_width_lower",
            q,
            interval.width(),
            grid_tol,
            "interval width at least q",
        ),
        CheckRow::bound(
            "level_interval_width_upper",
            interval.width(),
            ln_width_cap.exp(),
            grid_tol,
            "interval width cap",
        ),
        CheckRow::bound(
            "peak_location_below_n",
            t_peak,
            nf,
            grid_tol,
            "argmax of the level curve",
        ),
        CheckRow::bound(
            "peak_value_floor",
            ln_peak_floor.exp(),
            m_peak,
            1e-6 * m_peak.abs() + grid_tol * m_peak,
            "model floor for the curve maximum",
        ),
        CheckRow::bound(
            "volume_at_emin_lower",
            c_nq,
            vol_min,
            1e-6 + grid_tol,
            "normalized volume at the lower endpoint",
        ),
        CheckRow::bound(
            "volume_at_emin_upper",
            vol_min,
            (std::f64::consts::E * c_nq).max(1.0),
            1e-6 + grid_tol,
            "normalized volume cap at the lower endpoint",
        ),
        CheckRow::bound(
            "volume_at_emax_lower",
            c_nq,
            vol_max,
            1e-6 + grid_tol,
            "normalized volume at the upper endpoint",
        ),
        CheckRow::bound(
            "volume_at_emax_upper",
            vol_max,
            std::f64::consts::E * c_nq * vol_upper_slack,
            1e-6 + grid_tol,
            "normalized volume cap at the upper endpoint",
        ),
        CheckRow::bound(
            "ev_below_n_plus_one",
            e_v,
            nf + 1.0,
            1e-9,
            "distinguished level against n + 1",
        ),
        CheckRow::bound(
            "ev_routes_agree",
            (routes.quadrature - routes.profile).abs(),
            1e-6,
            0.0,
            "two-route agreement for the distinguished level",
        ),
        CheckRow::bound(
            "barycenter_potential_bound",
            v_b_mu,
            e_v - 1.0,
            1e-6,
            "potential at the product barycenter vs the distinguished level",
        ),
        CheckRow::bound(
            "barycenter_potential_below_n",
            v_b_mu,
            nf,
            1e-6,
            "potential at the product barycenter vs n",
        ),
        CheckRow::bound(
            "normalization_mass",
            (profile.total_mass() - 1.0).abs(),
            1e-6,
            0.0,
            "level curve integrates to one",
        ),
        CheckRow::bound(
            "w_slope_below_one",
            profile.max_w_slope(),
            1.0,
            grid_tol.max(1e-6),
            "slopes of -ln phi stay below 1",
        ),
    ];

    // The distinguished level lies in the q = 1 interval.
    let interval1 = profile.level_interval(1.0)?;
    rows.push(CheckRow::bound(
        "ev_in_level_interval",
        (e_v - interval1.e_max).max(interval1.e_min - e_v),
        0.0,
        grid_tol,
        "distinguished level inside the level interval",
    ));

    // Transport-map diagnostics (monotone, contracting, T(n) <= n).
    let map = build_contraction_map(profile, 2000);
    rows.push(CheckRow::bound(
        "transport_map_contracting",
        map.max_slope(),
        1.0,
        5e-3 + 20.0 * profile.spacing,
        "discrete Lipschitz constant of the model transport",
    ));
    rows.push(CheckRow::bound(
        "transport_of_n_below_n",
        map.at(nf),
        nf,
        grid_tol,
        "model transport evaluated at n",
    ));

    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::potential::RawPotential;
    use approx::{assert_abs_diff_eq, assert_relative_eq};

    fn laplace_product(n: usize) -> ProductPotential {
        let raw = RawPotential::laplace();
        let raws: Vec<_> = (0..n).map(|_| raw.clone()).collect();
        ProductPotential::assemble(&raws, 1e-10).unwrap()
    }

    /// Analytic density of Gamma(n+1, 1) evaluated in the log domain.
    fn gamma_density(n: usize, e: f64) -> f64 {
        if e <= 0.0 {
            return 0.0;
        }
        (-e + n as f64 * e.ln() - ln_factorial(n as u64)).exp()
    }

    #[test]
    fn l1_profile_matches_gamma_law() {
        // V(x) = 2 sum |x_i|: the level curve is the Gamma(n+1, 1) density.
        // Pointwise comparison runs over the good-level interval, the range
        // the downstream quantities are read from; near the support edge the
        // relative scale of the curve collapses faster than any fixed grid.
        for n in [2usize, 4] {
            let nf = n as f64;
            let prod = laplace_product(n);
            let profile = build_profile(&prod, &GridSpec::high_accuracy()).unwrap();
            assert_relative_eq!(profile.total_mass(), 1.0, epsilon = 1e-8);
            let ln_thresh = -1.0 + nf * nf.ln() - nf - ln_factorial(n as u64);
            let g = |e: f64| -e + nf * e.ln() - ln_factorial(n as u64) - ln_thresh;
            let e_lo = crate::quad::bracket_root(&g, 1e-6, nf, 1e-12);
            let e_hi = crate::quad::bracket_root(&g, nf, 60.0, 1e-12);
            let mut checked = 0;
            for k in 0..profile.len() {
                let e = profile.node(k);
                if e >= e_lo && e <= e_hi {
                    let truth = gamma_density(n, e);
                    assert_relative_eq!(profile.phi()[k], truth, max_relative = 1e-6);
                    checked += 1;
                }
            }
            assert!(checked > 1000);
        }
    }

    #[test]
    fn l1_peak_and_interval_match_analytic_oracle() {
        let n = 4usize;
        let nf = n as f64;
        let prod = laplace_product(n);
        let profile = build_profile(&prod, &GridSpec::high_accuracy()).unwrap();

        let (t_peak, m_peak) = profile.peak();
        assert_relative_eq!(t_peak, nf, max_relative = 1e-6);
        assert_relative_eq!(m_peak, gamma_density(n, nf), max_relative = 1e-6);

        // Oracle endpoints: root-find on the analytic curve around the peak.
        let ln_thresh = -1.0 + nf * nf.ln() - nf - ln_factorial(n as u64);
        let g = |e: f64| -e + nf * e.ln() - ln_factorial(n as u64) - ln_thresh;
        let e_min_oracle = crate::quad::bracket_root(&g, 1e-6, nf, 1e-12);
        let e_max_oracle = crate::quad::bracket_root(&g, nf, 40.0, 1e-12);
        let interval = profile.level_interval(1.0).unwrap();
        assert_abs_diff_eq!(interval.e_min, e_min_oracle, epsilon = 1e-5);
        assert_abs_diff_eq!(interval.e_max, e_max_oracle, epsilon = 1e-5);
    }

    #[test]
    fn ev_routes_agree_for_l1_and_gaussian() {
        let prod = laplace_product(4);
        let profile = build_profile(&prod, &GridSpec::default()).unwrap();
        let routes = compute_ev(&prod, &profile, 1e-6).unwrap();
        assert_relative_eq!(routes.quadrature, 5.0, epsilon = 1e-8);
        assert_relative_eq!(routes.profile, 5.0, epsilon = 1e-6);

        // Rescaled gaussian product: V_i(y) = pi y^2, so E V_i(X_i) = 1/2
        // and the distinguished level is 1 + n/2 (below n + 1, as the joint
        // normalization requires).
        let raws: Vec<_> = (0..3).map(|_| RawPotential::gaussian()).collect();
        let prod = ProductPotential::assemble(&raws, 1e-10).unwrap();
        let profile = build_profile(&prod, &GridSpec::default()).unwrap();
        let routes = compute_ev(&prod, &profile, 1e-6).unwrap();
        assert_relative_eq!(routes.quadrature, 2.5, epsilon = 1e-8);
    }

    #[test]
    fn single_laplace_profile_matches_convolution_oracle() {
        // n = 1, V = 2|y|: law of V(X) is Exp(1); adding Exp(1) gives the
        // Gamma(2, 1) density.
        let prod = laplace_product(1);
        let profile = build_profile(&prod, &GridSpec::high_accuracy()).unwrap();
        for &e in &[0.5, 1.0, 2.0, 5.0] {
            assert_relative_eq!(profile.phi_at(e), e * (-e).exp(), max_relative = 1e-5);
        }
    }

    #[test]
    fn lp_family_peak_location() {
        // Power potentials |y|^p: homogeneity places the peak at n / p.
        for (p, n) in [(2.0, 4usize), (4.0, 4)] {
            let raw = RawPotential::power(p, p).unwrap();
            let raws: Vec<_> = (0..n).map(|_| raw.clone()).collect();
            let prod = ProductPotential::assemble(&raws, 1e-10).unwrap();
            let profile = build_profile(&prod, &GridSpec::default()).unwrap();
            let (t_peak, _) = profile.peak();
            assert_abs_diff_eq!(t_peak, n as f64 / p, epsilon = 1e-3);
        }
    }

    #[test]
    fn contraction_map_is_identity_for_l1() {
        let prod = laplace_product(4);
        let profile = build_profile(&prod, &GridSpec::high_accuracy()).unwrap();
        let map = build_contraction_map(&profile, 800);
        assert!(map.is_monotone());
        for (s, t) in map.s.iter().zip(&map.t) {
            if *s > 0.2 && *s < 20.0 {
                assert_abs_diff_eq!(s, t, epsilon = 5e-3);
            }
        }
        assert!(map.max_slope() <= 1.0 + 1e-2);
    }

    #[test]
    fn gaussian_product_transport_is_contracting() {
        let raws: Vec<_> = (0..4).map(|_| RawPotential::gaussian()).collect();
        let prod = ProductPotential::assemble(&raws, 1e-10).unwrap();
        let profile = build_profile(&prod, &GridSpec::default()).unwrap();
        let map = build_contraction_map(&profile, 4000);
        assert!(map.is_monotone());
        assert!(map.max_slope() <= 1.0 + 1e-3, "slope {}", map.max_slope());
        assert!(map.at(4.0) <= 4.0 + 1e-3);
    }

    #[test]
    fn level_property_suite_passes_for_mixed_family() {
        let raws = vec![
            RawPotential::gaussian(),
            RawPotential::laplace(),
            RawPotential::power(1.0, 3.0).unwrap(),
        ];
        let prod = ProductPotential::assemble(&raws, 1e-10).unwrap();
        let profile = build_profile(&prod, &GridSpec::default()).unwrap();
        for row in check_level_properties(&prod, &profile, 1.0).unwrap() {
            assert!(row.passed(), "failed: {row:?}");
        }
    }

    #[test]
    fn profile_monotonicity_and_concavity() {
        let raws = vec![
            RawPotential::power(1.0, 2.0).unwrap(),
            RawPotential::laplace(),
            RawPotential::gaussian(),
            RawPotential::power(3.0, 1.5).unwrap(),
        ];
        let prod = ProductPotential::assemble(&raws, 1e-10).unwrap();
        let profile = build_profile(&prod, &GridSpec::default()).unwrap();
        // Volume nondecreasing in E.
        let mut prev = f64::NEG_INFINITY;
        for k in 0..profile.len() {
            if profile.phi()[k] > 1e-12 {
                let lv = profile.ln_vol_at(profile.node(k));
                assert!(lv >= prev - 1e-7, "volume decreased at node {k}");
                prev = lv;
            }
        }
        // Concavity defect of g at grid scale.
        assert!(profile.max_g_convexity_defect() <= 1e-4);
        // W slopes bounded by 1.
        assert!(profile.max_w_slope() <= 1.0 + 4.0 * profile.spacing);
    }
}
