//! Concentration machinery: empirical profiles for fixed Lipschitz
//! witnesses, the dual-exponent transfer bound, one-sided tail inequalities
//! for `<grad V(X), X> - n`, density-ratio moments of the annulus measure
//! against the product measure, the explicit radial coupling cost, and the
//! boundary first-moment inequality.
//!
//! Profiles here are computed for *fixed* trial functions, so they are lower
//! witnesses of the true (sup over all 1-Lipschitz f) profile; reports state
//! this explicitly.

use crate::check::{CheckRow, CheckStatus};
use crate::error::{Error, Result};
use crate::geometry::{
    chain_rng, sample_product, sample_radial, sample_uniform, unit_direction, OrliczBody,
    SampleBatch,
};
use crate::potential::{ProductPotential, Side};
use crate::special::gamma_p;
use rand::Rng;
use serde::Serialize;

/// A named 1-Lipschitz trial function.
pub struct TrialFn {
    pub name: String,
    f: Box<dyn Fn(&[f64]) -> f64 + Send + Sync>,
}

impl TrialFn {
    pub fn new<F: Fn(&[f64]) -> f64 + Send + Sync + 'static>(name: &str, f: F) -> Self {
        Self {
            name: name.into(),
            f: Box::new(f),
        }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        (self.f)(x)
    }

    /// Coordinate projection `x_i`.
    pub fn coordinate(i: usize) -> Self {
        Self::new(&format!("coord_{i}"), move |x| x[i])
    }

    /// `<x, theta>` for a unit vector.
    pub fn direction(theta: Vec<f64>, tag: usize) -> Self {
        Self::new(&format!("dir_{tag}"), move |x| {
            x.iter().zip(&theta).map(|(a, b)| a * b).sum()
        })
    }

    /// Euclidean norm.
    pub fn euclidean() -> Self {
        Self::new("euclid_norm", |x| {
            x.iter().map(|c| c * c).sum::<f64>().sqrt()
        })
    }

    /// Distance to a fixed point.
    pub fn distance_to(p: Vec<f64>, tag: usize) -> Self {
        Self::new(&format!("dist_{tag}"), move |x| {
            x.iter()
                .zip(&p)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt()
        })
    }

    /// The standard trial family: coordinates, random directions, the
    /// Euclidean norm, and distances to random interior points.
    pub fn standard_family(n: usize, seed: u64) -> Vec<TrialFn> {
        let mut rng = chain_rng(seed, 1_000_003);
        let mut fam = Vec::new();
        for i in 0..n.min(3) {
            fam.push(Self::coordinate(i));
        }
        for tag in 0..2 {
            fam.push(Self::direction(unit_direction(&mut rng, n), tag));
        }
        fam.push(Self::euclidean());
        for tag in 0..2 {
            let p: Vec<f64> = (0..n).map(|_| 0.2 * (rng.gen::<f64>() - 0.5)).collect();
            fam.push(Self::distance_to(p, tag));
        }
        fam
    }
}

/// Empirical upper-median tail curve of one trial function over a batch.
#[derive(Clone, Debug, Serialize)]
pub struct ConcentrationProfile {
    pub r: Vec<f64>,
    pub k_hat: Vec<f64>,
    pub label: String,
    pub count: usize,
    /// Bootstrap standard error of the underlying median.
    pub median_se: f64,
}

/// Sample median (average-of-middle convention for even counts).
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn bootstrap_median_se(values: &[f64], resamples: usize, seed: u64) -> f64 {
    let mut rng = chain_rng(seed, 31);
    let n = values.len();
    let mut meds = Vec::with_capacity(resamples);
    for _ in 0..resamples {
        let sample: Vec<f64> = (0..n).map(|_| values[rng.gen_range(0..n)]).collect();
        meds.push(median(&sample));
    }
    let m = meds.iter().sum::<f64>() / resamples as f64;
    (meds.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (resamples - 1) as f64).sqrt()
}

/// Empirical profile `r -> min(1/2, P{ f >= med + r })` for a fixed trial
/// function; a lower witness of the true profile. The Lipschitz constant is
/// spot-verified on sampled pairs.
pub fn empirical_profile(
    batch: &SampleBatch,
    f: &TrialFn,
    r_grid: &[f64],
) -> Result<ConcentrationProfile> {
    let values = batch.map(|p| f.eval(p));
    // Lipschitz probe on consecutive sample pairs.
    for pair in batch.points.windows(2).take(2000) {
        let dist = pair[0]
            .iter()
            .zip(&pair[1])
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        if dist > 1e-12 {
            let quotient = (f.eval(&pair[0]) - f.eval(&pair[1])).abs() / dist;
            if quotient > 1.0 + 1e-9 {
                return Err(Error::LipschitzViolation { quotient });
            }
        }
    }
    let med = median(&values);
    let count = values.len();
    let k_hat: Vec<f64> = r_grid
        .iter()
        .map(|&r| {
            let frac = values.iter().filter(|&&v| v >= med + r).count() as f64 / count as f64;
            frac.min(0.5)
        })
        .collect();
    Ok(ConcentrationProfile {
        r: r_grid.to_vec(),
        k_hat,
        label: f.name.clone(),
        count,
        median_se: bootstrap_median_se(&values, 500, batch.seed),
    })
}

impl ConcentrationProfile {
    /// Profile value at `r` by linear interpolation (clamped).
    pub fn at(&self, r: f64) -> f64 {
        if r <= self.r[0] {
            return self.k_hat[0];
        }
        if r >= *self.r.last().unwrap() {
            return *self.k_hat.last().unwrap();
        }
        let idx = self.r.partition_point(|&x| x < r);
        let (r0, r1) = (self.r[idx - 1], self.r[idx]);
        let (k0, k1) = (self.k_hat[idx - 1], self.k_hat[idx]);
        k0 + (k1 - k0) * (r - r0) / (r1 - r0)
    }
}

/// Dual-exponent transfer of a concentration profile through a density-ratio
/// moment bound `|| d nu2 / d nu1 ||_{L^p(nu1)} <= L`.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct TransferBound {
    pub p: f64,
    pub l: f64,
}

impl TransferBound {
    pub fn new(p: f64, l: f64) -> Self {
        assert!(p > 1.0, "transfer requires p > 1");
        assert!(l >= 1.0, "a density-ratio moment is at least 1");
        Self { p, l }
    }

    /// Conjugate exponent `q = p / (p - 1)`; 1 when `p` is infinite.
    pub fn q(&self) -> f64 {
        if self.p.is_infinite() {
            1.0
        } else {
            self.p / (self.p - 1.0)
        }
    }

    /// Transferred bound `r -> min(1/2, 2 L k1(r/2)^{1/q})`.
    pub fn transfer<K: Fn(f64) -> f64>(&self, k1: K, r: f64) -> f64 {
        let base = k1(0.5 * r).max(0.0);
        (2.0 * self.l * base.powf(1.0 / self.q())).min(0.5)
    }
}

/// One-sided sum tail bound from per-term norm data
/// `(||(Y_i)_-||_inf, ||Y_i||_2)`; vacuous (identically 1) when any norm is
/// infinite.
#[derive(Clone, Copy, Debug)]
pub struct HoeffdingBound {
    denom: Option<f64>,
}

pub fn hoeffding_bound(norm_data: &[(f64, f64)]) -> HoeffdingBound {
    let mut denom = 0.0;
    for &(neg_inf, l2) in norm_data {
        if !(neg_inf.is_finite() && l2.is_finite()) {
            return HoeffdingBound { denom: None };
        }
        denom += neg_inf * neg_inf + l2 * l2;
    }
    HoeffdingBound { denom: Some(denom) }
}

impl HoeffdingBound {
    /// `P(sum Y_i <= -r)` bound.
    pub fn at(&self, r: f64) -> f64 {
        match self.denom {
            None => 1.0,
            Some(d) => {
                if r <= 0.0 {
                    1.0
                } else {
                    (-0.5 * r * r / d).exp().min(1.0)
                }
            }
        }
    }

    pub fn is_vacuous(&self) -> bool {
        self.denom.is_none()
    }
}

/// Empirical tail against a theoretical bound on a grid of thresholds.
#[derive(Clone, Debug, Serialize)]
pub struct TailReport {
    pub thresholds: Vec<f64>,
    pub empirical: Vec<f64>,
    pub bound: Vec<f64>,
    /// Largest `(empirical - bound) / se` over the grid.
    pub max_violation_sigma: f64,
    pub status: CheckStatus,
    pub detail: String,
}

fn tail_compare(
    thresholds: &[f64],
    empirical: Vec<f64>,
    bound: Vec<f64>,
    count: usize,
    detail: String,
) -> TailReport {
    let mut worst = f64::NEG_INFINITY;
    for (e, b) in empirical.iter().zip(&bound) {
        let se = (e.max(1.0 / count as f64) * (1.0 - e) / count as f64)
            .sqrt()
            .max(1e-12);
        worst = worst.max((e - b) / se);
    }
    TailReport {
        thresholds: thresholds.to_vec(),
        empirical,
        bound,
        max_violation_sigma: worst,
        status: if worst <= 3.0 {
            CheckStatus::Pass
        } else {
            CheckStatus::Fail
        },
        detail,
    }
}

/// Exact norm data for `Y_i = V_i'(X_i) X_i - 1`: the essential sup of the
/// negative part (by scanning) and the L2 norm (from quadrature, using
/// `E Y_i = 0`).
pub fn grad_dot_norm_data(prod: &ProductPotential) -> Result<Vec<(f64, f64)>> {
    let mut out = Vec::with_capacity(prod.dim());
    for c in prod.components() {
        // sup of (V'(y) y - 1)_- over the window.
        let (lo, hi) = c.window();
        let steps = 4096;
        let mut sup: f64 = 0.0;
        for j in 0..=steps {
            let y = lo + (hi - lo) * j as f64 / steps as f64;
            let t = c.deriv(y, Side::Right) * y - 1.0;
            sup = sup.max(-t);
        }
        for &k in c.kinks() {
            for side in [Side::Left, Side::Right] {
                sup = sup.max(-(c.deriv(k, side) * k - 1.0));
            }
        }
        let second = c.integrate_density(|y| {
            let t = c.deriv(y, Side::Right) * y;
            t * t
        })?;
        let l2 = (second - 1.0).max(0.0).sqrt();
        out.push((sup, l2));
    }
    Ok(out)
}

/// Tail check for `<grad V(X), X> - n` under the product measure: the
/// empirical lower tail at thresholds `-sqrt(n) s` must stay below
/// `exp(-s^2 / (4 A^2))` with `A` the sup-L2 coefficient aggregate. Skipped
/// when `A` is infinite. Also verifies `E Y_i = 0` empirically.
pub fn grad_dot_tail_check(
    prod: &ProductPotential,
    count: usize,
    seed: u64,
    s_grid: &[f64],
) -> Result<TailReport> {
    let a = prod.a_inf2();
    if !a.is_finite() {
        return Ok(TailReport {
            thresholds: s_grid.to_vec(),
            empirical: vec![],
            bound: vec![],
            max_violation_sigma: f64::NAN,
            status: CheckStatus::SkippedInfinite,
            detail: "sup-L2 coefficient aggregate is infinite".into(),
        });
    }
    let n = prod.dim();
    let nf = n as f64;
    let batch = sample_product(prod, count, seed);
    let sums: Vec<f64> = batch.map(|x| {
        x.iter()
            .enumerate()
            .map(|(i, &xi)| prod.component(i).deriv(xi, Side::Right) * xi - 1.0)
            .sum()
    });
    // E Y_i = 0: the mean of the sums in units of its standard error.
    let mean = sums.iter().sum::<f64>() / count as f64;
    let var = sums.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / (count - 1) as f64;
    let mean_z = mean / (var / count as f64).sqrt();
    let empirical: Vec<f64> = s_grid
        .iter()
        .map(|&s| sums.iter().filter(|&&y| y <= -nf.sqrt() * s).count() as f64 / count as f64)
        .collect();
    let bound: Vec<f64> = s_grid
        .iter()
        .map(|&s| (-0.25 * s * s / (a * a)).exp().min(1.0))
        .collect();
    let mut report = tail_compare(
        s_grid,
        empirical,
        bound,
        count,
        format!("sup-L2 aggregate {a}; centered-sum mean z = {mean_z:.2}"),
    );
    if mean_z.abs() > 4.0 {
        report.status = CheckStatus::Fail;
        report.detail.push_str("; centered sum mean is biased");
    }
    Ok(report)
}

/// Fitted lower-slope constant of the radial truncation mass: samples the
/// Gamma(n, n) radial law and fits `c = min over w0 of P(gauge in
/// [1 - w0/sqrt(n), 1]) / w0`.
#[derive(Clone, Debug, Serialize)]
pub struct TruncationFit {
    pub w0_grid: Vec<f64>,
    pub ratio_over_w0: Vec<f64>,
    pub c: f64,
}

pub fn fit_truncation_c(n: usize, count: usize, seed: u64, w0_grid: &[f64]) -> TruncationFit {
    let mut rng = chain_rng(seed, 77);
    let nf = n as f64;
    let radii: Vec<f64> = (0..count)
        .map(|_| {
            let mut acc = 0.0;
            for _ in 0..n {
                acc += -(1.0 - rng.gen::<f64>()).ln();
            }
            acc / nf
        })
        .collect();
    let mut ratios = Vec::with_capacity(w0_grid.len());
    for &w0 in w0_grid {
        let w = w0 / nf.sqrt();
        let hits = radii.iter().filter(|&&r| r >= 1.0 - w && r <= 1.0).count();
        ratios.push(hits as f64 / count as f64 / w0);
    }
    let c = ratios.iter().copied().fold(f64::INFINITY, f64::min);
    TruncationFit {
        w0_grid: w0_grid.to_vec(),
        ratio_over_w0: ratios,
        c,
    }
}

/// Density-ratio moment report for the annulus measure against the product
/// measure at exponent `p` and annulus parameter `w0`.
#[derive(Clone, Debug, Serialize)]
pub struct DensityRatioReport {
    pub p: f64,
    pub w0: f64,
    /// `E_mu rho^p` over product samples.
    pub moment_mu: f64,
    pub moment_mu_se: f64,
    /// `E_annulus rho^(p-1)` over annulus samples (the same integral).
    pub moment_annulus: f64,
    pub moment_annulus_se: f64,
    /// Moment bound with the fitted truncation constant; NaN when the
    /// sup-L2 aggregate is infinite or `w0 > 1/2`.
    pub bound_fitted: f64,
    /// Same bound with the conservative constant 0.1.
    pub bound_conservative: f64,
    /// Sup of the sampled ratio and its theoretical cap.
    pub linf_observed: f64,
    pub linf_bound_fitted: f64,
    pub status: CheckStatus,
}

fn mean_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Estimate the `L^p` moment of `d(annulus)/d(mu)` two ways and evaluate the
/// theoretical bounds. `ln_z_e` is the log of the level normalization
/// `Z_E = (n! e^n / n^n) e^{-E} Vol(K_E)`.
#[allow(clippy::too_many_arguments)]
pub fn density_ratio_moment(
    body: &OrliczBody,
    ln_z_e: f64,
    w0: f64,
    p: f64,
    count: usize,
    seed: u64,
    fitted_c: f64,
) -> Result<DensityRatioReport> {
    let prod = body.prod();
    let n = body.dim();
    let nf = n as f64;
    let e = body.level();
    let w = w0 / nf.sqrt();
    let trunc_prob = gamma_p(nf, nf) - gamma_p(nf, nf * (1.0 - w));
    let ln_z_ew = ln_z_e + trunc_prob.ln();
    let ln_rho = |x: &[f64]| -> Option<f64> {
        let g = body.gauge(x);
        if g < 1.0 - w - 1e-9 || g > 1.0 + 1e-9 {
            return None;
        }
        Some(prod.v_at(x) - e - nf * (g - 1.0) - ln_z_ew)
    };

    let mu_batch = sample_product(prod, count, seed);
    let vals_mu: Vec<f64> = mu_batch
        .points
        .iter()
        .map(|x| match ln_rho(x) {
            Some(l) => (p * l).exp(),
            None => 0.0,
        })
        .collect();
    let (moment_mu, moment_mu_se) = mean_se(&vals_mu);

    let ann_batch = sample_radial(body, count, seed.wrapping_add(1), Some(w))?;
    let mut linf_observed: f64 = 0.0;
    let vals_ann: Vec<f64> = ann_batch
        .points
        .iter()
        .map(|x| match ln_rho(x) {
            Some(l) => {
                linf_observed = linf_observed.max(l.exp());
                ((p - 1.0) * l).exp()
            }
            None => 0.0,
        })
        .collect();
    let (moment_annulus, moment_annulus_se) = mean_se(&vals_ann);

    let a = prod.a_inf2();
    let bound_with = |c: f64| -> f64 {
        if !a.is_finite() || w0 > 0.5 {
            return f64::NAN;
        }
        // (1 + sqrt(2 pi)) / Z_E^p * (c w0)^{-p} * exp(8 p^2 w0^2 A^2)
        let ln = (1.0 + (2.0 * std::f64::consts::PI).sqrt()).ln() - p * ln_z_e
            - p * (c * w0).ln()
            + 8.0 * p * p * w0 * w0 * a * a;
        ln.exp()
    };
    let bound_fitted = bound_with(fitted_c);
    let bound_conservative = bound_with(0.1);
    let linf_bound_fitted = (-(fitted_c * w0).ln() - ln_z_e + w0 * nf.sqrt()).exp();

    let status = if !a.is_finite() {
        CheckStatus::SkippedInfinite
    } else {
        let route_gap =
            (moment_mu - moment_annulus).abs() / (moment_mu_se + moment_annulus_se).max(1e-12);
        let ok_routes = route_gap <= 4.0;
        let ok_bound =
            bound_fitted.is_nan() || moment_annulus <= bound_fitted + 3.0 * moment_annulus_se;
        let ok_linf = linf_observed <= linf_bound_fitted * (1.0 + 1e-6);
        if ok_routes && ok_bound && ok_linf {
            CheckStatus::Pass
        } else {
            CheckStatus::Fail
        }
    };
    Ok(DensityRatioReport {
        p,
        w0,
        moment_mu,
        moment_mu_se,
        moment_annulus,
        moment_annulus_se,
        bound_fitted,
        bound_conservative,
        linf_observed,
        linf_bound_fitted,
        status,
    })
}

/// Explicit radial coupling cost against its bound.
#[derive(Clone, Debug, Serialize)]
pub struct CouplingReport {
    pub w: f64,
    /// `E || x / gauge(x) - x ||` over annulus samples.
    pub cost: f64,
    pub cost_se: f64,
    /// `(n+1)/n * w * E_lambda |x|` over uniform samples.
    pub bound: f64,
    pub bound_se: f64,
    pub status: CheckStatus,
}

/// The transport `x -> x / gauge(x)` couples the annulus measure with the
/// cone measure; its expected cost upper-bounds their 1-Wasserstein
/// distance and must stay below the radial bound.
pub fn w1_radial_coupling(
    body: &OrliczBody,
    w: f64,
    count: usize,
    seed: u64,
) -> Result<CouplingReport> {
    let n = body.dim() as f64;
    let ann = sample_radial(body, count, seed, Some(w))?;
    let costs: Vec<f64> = ann
        .points
        .iter()
        .map(|x| {
            let g = body.gauge(x);
            x.iter()
                .map(|&c| {
                    let d = c / g - c;
                    d * d
                })
                .sum::<f64>()
                .sqrt()
        })
        .collect();
    let (cost, cost_se) = mean_se(&costs);
    let uni = sample_uniform(body, count, seed.wrapping_add(2))?;
    let norms: Vec<f64> = uni.map(|x| x.iter().map(|c| c * c).sum::<f64>().sqrt());
    let (mean_norm, norm_se) = mean_se(&norms);
    let factor = (n + 1.0) / n * w;
    let bound = factor * mean_norm;
    let bound_se = factor * norm_se;
    let status = if cost <= bound + 3.0 * (cost_se + bound_se) {
        CheckStatus::Pass
    } else {
        CheckStatus::Fail
    };
    Ok(CouplingReport {
        w,
        cost,
        cost_se,
        bound,
        bound_se,
        status,
    })
}

/// Mean absolute deviation about the median, with a bootstrap standard
/// error (500 resamples).
pub fn first_moment_concentration(values: &[f64], seed: u64) -> (f64, f64) {
    let med = median(values);
    let mad = values.iter().map(|v| (v - med).abs()).sum::<f64>() / values.len() as f64;
    let mut rng = chain_rng(seed, 97);
    let mut boots = Vec::with_capacity(500);
    let n = values.len();
    for _ in 0..500 {
        let sample: Vec<f64> = (0..n).map(|_| values[rng.gen_range(0..n)]).collect();
        let m = median(&sample);
        boots.push(sample.iter().map(|v| (v - m).abs()).sum::<f64>() / n as f64);
    }
    let bm = boots.iter().sum::<f64>() / boots.len() as f64;
    let se = (boots.iter().map(|b| (b - bm) * (b - bm)).sum::<f64>() / (boots.len() - 1) as f64)
        .sqrt();
    (mad, se)
}

/// Boundary first-moment inequality for a family of 1-Lipschitz trials:
/// `MAD_lambda(f) <= (1/n) E_lambda |x| + MAD_cone(f)`, within combined
/// Monte Carlo error.
pub fn hardy_first_moment_check(
    body: &OrliczBody,
    trials: &[TrialFn],
    uniform: &SampleBatch,
    cone: &SampleBatch,
) -> Result<Vec<CheckRow>> {
    if uniform.is_empty() || cone.is_empty() {
        return Err(Error::InsufficientSamples { needed: 1, got: 0 });
    }
    let n = body.dim() as f64;
    let norms: Vec<f64> = uniform.map(|x| x.iter().map(|c| c * c).sum::<f64>().sqrt());
    let (mean_norm, mean_norm_se) = mean_se(&norms);
    let mut rows = Vec::new();
    for trial in trials {
        let vals_u = uniform.map(|x| trial.eval(x));
        let vals_c = cone.map(|x| trial.eval(x));
        let (lhs, lhs_se) = first_moment_concentration(&vals_u, uniform.seed);
        let (mad_c, mad_c_se) = first_moment_concentration(&vals_c, cone.seed);
        let rhs = mean_norm / n + mad_c;
        let slack = 3.0 * (lhs_se + mad_c_se + mean_norm_se / n);
        rows.push(CheckRow::bound(
            &format!("hardy_first_moment_{}", trial.name),
            lhs,
            rhs,
            slack,
            "interior first moment vs radial term plus boundary first moment",
        ));
    }
    Ok(rows)
}

/// Soundness of the profile transfer: the annulus profile of each trial
/// function must stay below the transferred product profile, using the
/// density-ratio bound as the transfer constant.
#[allow(clippy::too_many_arguments)]
pub fn transfer_soundness(
    body: &OrliczBody,
    ln_z_e: f64,
    trials: &[TrialFn],
    w0: f64,
    p: f64,
    count: usize,
    seed: u64,
    fitted_c: f64,
) -> Result<Vec<CheckRow>> {
    let prod = body.prod();
    let n = body.dim() as f64;
    let a = prod.a_inf2();
    if !a.is_finite() || w0 > 0.5 {
        return Ok(vec![CheckRow::skipped_infinite(
            "transfer_soundness",
            "sup-L2 aggregate infinite or annulus too wide for the moment bound",
        )]);
    }
    let l = ((1.0 + (2.0 * std::f64::consts::PI).sqrt()).ln() / p
        - ln_z_e
        - (fitted_c * w0).ln()
        + 8.0 * p * w0 * w0 * a * a)
        .exp()
        .max(1.0);
    let tb = TransferBound::new(p, l);
    let w = w0 / n.sqrt();
    let mu_batch = sample_product(prod, count, seed);
    let ann_batch = sample_radial(body, count, seed.wrapping_add(3), Some(w))?;
    let r_grid: Vec<f64> = (1..=20).map(|k| k as f64 * 0.25).collect();
    let mut rows = Vec::new();
    for trial in trials {
        let prof_mu = empirical_profile(&mu_batch, trial, &r_grid)?;
        let prof_ann = empirical_profile(&ann_batch, trial, &r_grid)?;
        let mut worst = f64::INFINITY;
        for (i, &r) in r_grid.iter().enumerate() {
            let bound = tb.transfer(|x| prof_mu.at(x), r);
            let e = prof_ann.k_hat[i];
            let se = (e.max(1.0 / count as f64) * (1.0 - e) / count as f64).sqrt();
            worst = worst.min(bound + 3.0 * se - e);
        }
        let mut row = CheckRow::bound(
            &format!("transfer_soundness_{}", trial.name),
            0.0,
            worst,
            0.0,
            "min over r of transferred bound + 3 se - empirical annulus profile",
        );
        row.margin = worst;
        rows.push(row);
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::potential::{ProductPotential, RawPotential};
    use approx::{assert_abs_diff_eq, assert_relative_eq};
    use std::sync::Arc;

    fn laplace_product(n: usize) -> Arc<ProductPotential> {
        let raws: Vec<_> = (0..n).map(|_| RawPotential::laplace()).collect();
        Arc::new(ProductPotential::assemble(&raws, 1e-10).unwrap())
    }

    #[test]
    fn hoeffding_closed_form_for_centered_exponentials() {
        // Y_i = Exp(1) - 1: negative-part sup 1, L2 norm 1.
        let n = 8;
        let data = vec![(1.0, 1.0); n];
        let hb = hoeffding_bound(&data);
        for &r in &[0.5, 1.0, 3.0] {
            assert_relative_eq!(hb.at(r), (-r * r / (4.0 * n as f64)).exp(), epsilon = 1e-12);
        }
        assert_eq!(hb.at(0.0), 1.0);
        let vac = hoeffding_bound(&[(f64::INFINITY, 1.0)]);
        assert!(vac.is_vacuous());
        assert_eq!(vac.at(10.0), 1.0);
    }

    #[test]
    fn hoeffding_never_violated_by_simulation() {
        // Direct simulation oracle: sums of centered exponentials.
        let n = 8;
        let count = 100_000;
        let mut rng = chain_rng(5, 0);
        let sums: Vec<f64> = (0..count)
            .map(|_| {
                (0..n)
                    .map(|_| -(1.0 - rng.gen::<f64>()).ln() - 1.0)
                    .sum::<f64>()
            })
            .collect();
        let hb = hoeffding_bound(&vec![(1.0, 1.0); n]);
        for &r in &[0.5, 1.0, 2.0, 4.0, 8.0] {
            let emp = sums.iter().filter(|&&s| s <= -r).count() as f64 / count as f64;
            let se = (emp.max(1.0 / count as f64) * (1.0 - emp) / count as f64).sqrt();
            assert!(emp <= hb.at(r) + 3.0 * se, "r = {r}: {emp} > {}", hb.at(r));
        }
    }

    #[test]
    fn grad_dot_norms_for_laplace_and_gaussian() {
        // Laplace (V = 2|y|): V'(y) y = 2|y| ~ Exp(1), so the centered
        // norms are (1, 1), while the coefficient itself is
        // (1 + 0) max sqrt(2) = sqrt(2) (the negative part of V'(y) y
        // vanishes).
        let prod = laplace_product(4);
        let data = grad_dot_norm_data(&prod).unwrap();
        for &(neg, l2) in &data {
            assert_relative_eq!(neg, 1.0, epsilon = 1e-6);
            assert_relative_eq!(l2, 1.0, epsilon = 1e-6);
        }
        assert_relative_eq!(prod.a_inf2(), 2f64.sqrt(), epsilon = 1e-6);

        // Gaussian (V = pi y^2): V'(y) y = 2 pi y^2 >= 0, so the
        // coefficient is sqrt(3), while the centered negative part is 1 and
        // the centered L2 norm is sqrt(2).
        let raws: Vec<_> = (0..4).map(|_| RawPotential::gaussian()).collect();
        let prod = Arc::new(ProductPotential::assemble(&raws, 1e-10).unwrap());
        assert_relative_eq!(prod.a_inf2(), 3f64.sqrt(), epsilon = 1e-6);
        let data = grad_dot_norm_data(&prod).unwrap();
        for &(neg, l2) in &data {
            assert_relative_eq!(neg, 1.0, epsilon = 1e-6);
            assert_relative_eq!(l2, 2f64.sqrt(), epsilon = 1e-6);
        }
    }

    #[test]
    fn grad_dot_tail_holds_for_laplace_product() {
        let prod = laplace_product(4);
        let s_grid: Vec<f64> = (0..12).map(|k| 0.5 * k as f64).collect();
        let report = grad_dot_tail_check(&prod, 50_000, 11, &s_grid).unwrap();
        assert_eq!(report.status, CheckStatus::Pass, "{report:?}");
        assert_abs_diff_eq!(report.bound[0], 1.0, epsilon = 1e-12);
        assert!(report.empirical[0] > 0.3 && report.empirical[0] < 0.7);
    }

    #[test]
    fn transfer_formula_plug_in() {
        let tb = TransferBound::new(f64::INFINITY, 1.0);
        // k1 = exp(-r)/2: transferred value 2 * exp(-r/2)/2 capped at 1/2.
        let k1 = |r: f64| 0.5 * (-r).exp();
        assert_relative_eq!(tb.transfer(k1, 4.0), (-2.0f64).exp(), epsilon = 1e-12);
        assert_eq!(tb.transfer(k1, 0.1), 0.5);
        let tb2 = TransferBound::new(2.0, 1.0);
        assert_eq!(tb2.q(), 2.0);
        // Square-root weakening of the tail under p = 2.
        assert_relative_eq!(
            tb2.transfer(k1, 6.0),
            2.0 * (0.5f64 * (-3.0f64).exp()).sqrt(),
            epsilon = 1e-12
        );
        assert_eq!(tb2.transfer(k1, 4.0), 0.5); // cap engages
    }

    #[test]
    fn profile_of_laplace_coordinate() {
        let prod = laplace_product(2);
        let batch = sample_product(&prod, 60_000, 3);
        let f = TrialFn::coordinate(0);
        let grid = [0.25, 0.5, 1.0];
        let prof = empirical_profile(&batch, &f, &grid).unwrap();
        // Coordinates follow the rescaled law with density exp(-2|y|).
        for (i, &r) in grid.iter().enumerate() {
            let truth = 0.5 * (-2.0 * r).exp();
            let se = (truth * (1.0 - truth) / batch.len() as f64).sqrt();
            assert!(
                (prof.k_hat[i] - truth).abs() <= 4.0 * se + 1e-3,
                "r = {r}: {} vs {truth}",
                prof.k_hat[i]
            );
        }
        // Constant functions give a null profile at positive radii.
        let c = TrialFn::new("const", |_| 1.0);
        let prof = empirical_profile(&batch, &c, &grid).unwrap();
        assert!(prof.k_hat.iter().all(|&k| k == 0.0));
        // A 2-Lipschitz function is rejected.
        let bad = TrialFn::new("bad", |x| 2.0 * x[0]);
        assert!(empirical_profile(&batch, &bad, &grid).is_err());
    }

    #[test]
    fn truncation_fit_is_positive() {
        let grid: Vec<f64> = (1..=10).map(|k| k as f64 / 10.0).collect();
        let fit = fit_truncation_c(4, 50_000, 7, &grid);
        assert!(fit.c > 0.05, "fitted c = {}", fit.c);
        // Exact-incomplete-gamma cross-check on one grid point.
        let nf = 4.0f64;
        let w = 0.5 / nf.sqrt();
        let exact = gamma_p(nf, nf) - gamma_p(nf, nf * (1.0 - w));
        let idx = 4; // w0 = 0.5
        let emp = fit.ratio_over_w0[idx] * 0.5;
        assert!((emp - exact).abs() < 4.0 * (exact / 50_000f64).sqrt() + 2e-3);
    }

    #[test]
    fn density_ratio_p1_is_exactly_one_on_annulus_route() {
        let prod = laplace_product(2);
        let body = OrliczBody::new(prod, 3.0).unwrap();
        // ln Z_E from the analytic volume: Vol(K_E) = E^2/2 at n = 2.
        let n = 2.0f64;
        let e = 3.0f64;
        let ln_z_e = crate::special::ln_factorial(2) + n - n * n.ln() - e + (e * e / 2.0).ln();
        let rep = density_ratio_moment(&body, ln_z_e, 0.25, 1.0, 20_000, 5, 0.3).unwrap();
        assert_abs_diff_eq!(rep.moment_annulus, 1.0, epsilon = 1e-12);
        assert!((rep.moment_mu - 1.0).abs() <= 4.0 * rep.moment_mu_se);
        assert_eq!(rep.status, CheckStatus::Pass);
    }

    #[test]
    fn coupling_cost_below_bound() {
        let prod = laplace_product(3);
        let body = OrliczBody::new(prod, 4.0).unwrap();
        let w = 1.0 / (2.0 * 3.0f64.sqrt());
        let rep = w1_radial_coupling(&body, w, 8_000, 3).unwrap();
        assert_eq!(rep.status, CheckStatus::Pass, "{rep:?}");
        assert!(rep.cost > 0.0 && rep.cost < rep.bound);
        // Cost shrinks linearly-ish with w.
        let rep2 = w1_radial_coupling(&body, w / 4.0, 8_000, 3).unwrap();
        assert!(rep2.cost < rep.cost / 2.0);
    }

    #[test]
    fn hardy_inequality_on_l1_body() {
        let prod = laplace_product(2);
        let body = OrliczBody::new(prod, 2.0).unwrap();
        let uniform = sample_uniform(&body, 12_000, 5).unwrap();
        let cone = crate::geometry::sample_cone(&body, 12_000, 6).unwrap();
        let trials = TrialFn::standard_family(2, 9);
        let rows = hardy_first_moment_check(&body, &trials, &uniform, &cone).unwrap();
        for row in rows {
            assert!(row.passed(), "{row:?}");
        }
    }

    #[test]
    fn mad_is_dominated_by_std_dev() {
        let mut rng = chain_rng(3, 0);
        let vals: Vec<f64> = (0..5000).map(|_| rng.gen::<f64>()).collect();
        let (mad, se) = first_moment_concentration(&vals, 1);
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let sd =
            (vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / vals.len() as f64).sqrt();
        assert!(mad <= sd + 3.0 * se);
        assert_relative_eq!(mad, 0.25, max_relative = 0.05);
    }
}
