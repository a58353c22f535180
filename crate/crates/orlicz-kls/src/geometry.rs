//! The level-set body `K_E = { x : V(x) <= E }` as a computational object:
//! gauge-norm and chord oracles, seeded samplers for the uniform, cone,
//! radial and annulus measures, and moment statistics of sample batches.
//!
//! Sampler defaults (burn-in `10 n^2`, thinning `n`, chains started at the
//! interior origin) are heuristics, not proved mixing bounds.

use crate::error::{Error, Result};
use crate::potential::ProductPotential;
use crate::quad;
use crate::special::{gamma_p, inv_gamma_p};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::sync::Arc;

/// Relative tolerance (in units of `E - V(0)`) for boundary root-finds.
const ROOT_TOL: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum MeasureTag {
    /// The product measure `exp(-V(x)) dx`.
    Product,
    /// Uniform on the body (hit-and-run).
    Uniform,
    /// Cone measure on the boundary.
    Cone,
    /// Radial measure: cone direction, Gamma(n, n) radius.
    Radial,
    /// Radial measure conditioned on `gauge in [1-w, 1]`.
    Annulus { w: f64 },
}

/// The body `K_E` for a product potential at level `E > V(0)`.
pub struct OrliczBody {
    prod: Arc<ProductPotential>,
    level: f64,
    v0: f64,
}

impl OrliczBody {
    pub fn new(prod: Arc<ProductPotential>, level: f64) -> Result<Self> {
        let v0 = prod.v_at_origin();
        if !(level > v0) {
            return Err(Error::LevelBelowOrigin {
                level,
                at_origin: v0,
            });
        }
        Ok(Self { prod, level, v0 })
    }

    pub fn prod(&self) -> &ProductPotential {
        &self.prod
    }

    pub fn prod_arc(&self) -> Arc<ProductPotential> {
        self.prod.clone()
    }

    pub fn dim(&self) -> usize {
        self.prod.dim()
    }

    pub fn level(&self) -> f64 {
        self.level
    }

    fn v_tol(&self) -> f64 {
        ROOT_TOL * (self.level - self.v0)
    }

    pub fn membership(&self, x: &[f64]) -> bool {
        self.prod.v_at(x) <= self.level + self.v_tol()
    }

    /// Gauge norm of `x`: the unique `t > 0` with `V(x/t) = E`
    /// (`gauge(0) = 0` by convention). Positively homogeneous.
    pub fn gauge(&self, x: &[f64]) -> f64 {
        if x.iter().all(|&c| c == 0.0) {
            return 0.0;
        }
        // psi(s) = V(s x) is convex with psi(0) = V(0) < E; the set
        // { psi <= E } is [0, s*], and gauge(x) = 1 / s*.
        let psi = |s: f64| self.prod.v_at(&x.iter().map(|&c| c * s).collect::<Vec<_>>());
        let mut s_lo;
        let mut s_hi;
        if psi(1.0) <= self.level {
            s_lo = 1.0;
            s_hi = 2.0;
            while psi(s_hi) <= self.level {
                s_lo = s_hi;
                s_hi *= 2.0;
            }
        } else {
            s_hi = 1.0;
            s_lo = 0.5;
            while psi(s_lo) > self.level {
                s_hi = s_lo;
                s_lo *= 0.5;
                if s_lo < 1e-280 {
                    return f64::INFINITY;
                }
            }
        }
        let tol_v = self.v_tol();
        for _ in 0..200 {
            let mid = 0.5 * (s_lo + s_hi);
            let v = psi(mid);
            if (v - self.level).abs() <= tol_v {
                return 1.0 / mid;
            }
            if v <= self.level {
                s_lo = mid;
            } else {
                s_hi = mid;
            }
            if s_hi - s_lo <= 1e-15 * s_hi {
                break;
            }
        }
        2.0 / (s_lo + s_hi)
    }

    /// Chord of the body through `x` in direction `u`: the maximal `[t_lo,
    /// t_hi]` with `x + t u` inside. Requires `x` inside.
    pub fn chord(&self, x: &[f64], u: &[f64]) -> Result<(f64, f64)> {
        let vx = self.prod.v_at(x);
        if vx > self.level + self.v_tol() {
            return Err(Error::NotInside {
                value: vx,
                level: self.level,
            });
        }
        let f = |t: f64| {
            let y: Vec<f64> = x.iter().zip(u).map(|(&xi, &ui)| xi + t * ui).collect();
            self.prod.v_at(&y) - self.level
        };
        let tol_v = self.v_tol();
        let mut out = [0.0f64; 2];
        for (slot, dir) in [(0usize, -1.0), (1usize, 1.0)] {
            let mut step = 1.0;
            let mut hi = dir * step;
            let mut guard = 0;
            while f(hi) < 0.0 {
                step *= 2.0;
                hi = dir * step;
                guard += 1;
                if guard > 300 {
                    return Err(Error::NonIntegrable(
                        "chord failed to exit the body".into(),
                    ));
                }
            }
            // Bisection with value tolerance along the convex section.
            let mut inside = 0.0;
            let mut outside = hi;
            for _ in 0..200 {
                let mid = 0.5 * (inside + outside);
                let v = f(mid);
                if v.abs() <= tol_v {
                    inside = mid;
                    break;
                }
                if v < 0.0 {
                    inside = mid;
                } else {
                    outside = mid;
                }
                if (outside - inside).abs() <= 1e-15 * (1.0 + outside.abs()) {
                    break;
                }
            }
            out[slot] = inside;
        }
        Ok((out[0], out[1]))
    }
}

/// Chain metadata carried with a batch.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct ChainDiagnostics {
    pub burnin: usize,
    pub thin: usize,
    pub chains: usize,
}

/// Seeded samples from one of the body-attached measures.
pub struct SampleBatch {
    pub measure: MeasureTag,
    pub points: Vec<Vec<f64>>,
    pub seed: u64,
    pub level: f64,
    pub diagnostics: ChainDiagnostics,
}

impl SampleBatch {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Evaluate a scalar function over the batch.
    pub fn map<F: Fn(&[f64]) -> f64>(&self, f: F) -> Vec<f64> {
        self.points.iter().map(|p| f(p)).collect()
    }
}

pub(crate) fn std_normal<R: Rng>(rng: &mut R) -> f64 {
    // Marsaglia polar method.
    loop {
        let a = 2.0 * rng.gen::<f64>() - 1.0;
        let b = 2.0 * rng.gen::<f64>() - 1.0;
        let s = a * a + b * b;
        if s > 0.0 && s < 1.0 {
            return a * (-2.0 * s.ln() / s).sqrt();
        }
    }
}

pub(crate) fn unit_direction<R: Rng>(rng: &mut R, n: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..n).map(|_| std_normal(rng)).collect();
        let norm = v.iter().map(|c| c * c).sum::<f64>().sqrt();
        if norm > 1e-12 {
            return v.into_iter().map(|c| c / norm).collect();
        }
    }
}

pub(crate) fn chain_rng(seed: u64, chain: usize) -> ChaCha8Rng {
    // One master seed; per-chain streams so runs are reproducible regardless
    // of how chains are scheduled.
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((chain as u64).wrapping_add(1));
    rng
}

/// Uniform samples on the body by hit-and-run, merged from `chains`
/// independent chains in index order.
pub fn sample_uniform_chains(
    body: &OrliczBody,
    count: usize,
    seed: u64,
    burnin: usize,
    thin: usize,
    chains: usize,
) -> Result<SampleBatch> {
    let n = body.dim();
    let thin = thin.max(1);
    let chains = chains.max(1);
    let per = count.div_ceil(chains);
    let mut points = Vec::with_capacity(count);
    for chain in 0..chains {
        let mut rng = chain_rng(seed, chain);
        let mut x = vec![0.0f64; n];
        let mut kept = 0usize;
        let mut step = 0usize;
        while kept < per && points.len() < count {
            let u = unit_direction(&mut rng, n);
            let (t_lo, t_hi) = body.chord(&x, &u)?;
            let t = t_lo + (t_hi - t_lo) * rng.gen::<f64>();
            for (xi, ui) in x.iter_mut().zip(&u) {
                *xi += t * ui;
            }
            step += 1;
            if step > burnin && step % thin == 0 {
                points.push(x.clone());
                kept += 1;
            }
        }
    }
    Ok(SampleBatch {
        measure: MeasureTag::Uniform,
        points,
        seed,
        level: body.level(),
        diagnostics: ChainDiagnostics {
            burnin,
            thin,
            chains,
        },
    })
}

/// Uniform sampler with the default burn-in `10 n^2` and thinning `n`.
pub fn sample_uniform(body: &OrliczBody, count: usize, seed: u64) -> Result<SampleBatch> {
    let n = body.dim();
    sample_uniform_chains(body, count, seed, 10 * n * n, n, 1)
}

/// Cone-measure samples: uniform points pushed to the boundary along rays.
pub fn sample_cone(body: &OrliczBody, count: usize, seed: u64) -> Result<SampleBatch> {
    let uniform = sample_uniform(body, count, seed)?;
    let points = uniform
        .points
        .into_iter()
        .map(|p| {
            let g = body.gauge(&p);
            p.into_iter().map(|c| c / g).collect()
        })
        .collect();
    Ok(SampleBatch {
        measure: MeasureTag::Cone,
        points,
        seed,
        level: body.level(),
        diagnostics: uniform.diagnostics,
    })
}

/// Samples from the radial measure (density proportional to
/// `exp(-n * gauge(x))`), or from its annulus restriction
/// `gauge in [1-w, 1]` when `w` is given. Direction and radius are drawn
/// independently: the direction from the cone measure, the radius from the
/// (optionally truncated) Gamma(n, rate n) law, truncation done by inverse
/// CDF on the regularized incomplete gamma.
pub fn sample_radial(
    body: &OrliczBody,
    count: usize,
    seed: u64,
    w: Option<f64>,
) -> Result<SampleBatch> {
    let n = body.dim();
    let cone = sample_cone(body, count, seed)?;
    let mut rng = chain_rng(seed, usize::MAX);
    let nf = n as f64;
    let (p_lo, p_hi) = match w {
        None => (0.0, 1.0),
        Some(w) => {
            if !(w > 0.0 && w <= 1.0) {
                return Err(Error::ValidationError {
                    field: "w".into(),
                    detail: format!("annulus width {w} outside (0, 1]"),
                });
            }
            (gamma_p(nf, nf * (1.0 - w)), gamma_p(nf, nf))
        }
    };
    let points = cone
        .points
        .into_iter()
        .map(|dir| {
            let r = match w {
                None => {
                    // Gamma(n, rate n) as a normalized sum of exponentials.
                    let mut acc = 0.0;
                    for _ in 0..n {
                        acc += -(1.0 - rng.gen::<f64>()).ln();
                    }
                    acc / nf
                }
                Some(_) => {
                    let u = p_lo + (p_hi - p_lo) * rng.gen::<f64>();
                    inv_gamma_p(nf, u) / nf
                }
            };
            dir.into_iter().map(|c| c * r).collect()
        })
        .collect();
    Ok(SampleBatch {
        measure: match w {
            None => MeasureTag::Radial,
            Some(w) => MeasureTag::Annulus { w },
        },
        points,
        seed,
        level: body.level(),
        diagnostics: cone.diagnostics,
    })
}

/// Samples from the product measure itself (per-coordinate inverse CDF).
pub fn sample_product(prod: &ProductPotential, count: usize, seed: u64) -> SampleBatch {
    let mut rng = chain_rng(seed, 0);
    let points = (0..count).map(|_| prod.sample(&mut rng)).collect();
    SampleBatch {
        measure: MeasureTag::Product,
        points,
        seed,
        level: f64::NAN,
        diagnostics: ChainDiagnostics {
            burnin: 0,
            thin: 1,
            chains: 1,
        },
    }
}

/// Moment statistics of a uniform batch.
#[derive(Clone, Debug, Serialize)]
pub struct BodyStats {
    pub barycenter: Vec<f64>,
    pub cov: Vec<Vec<f64>>,
    /// `sqrt` of the covariance operator norm: the linear-functional
    /// relaxation of the Poincare constant.
    pub d_lin: f64,
    pub count: usize,
    /// Standard errors of the barycenter estimate.
    pub se_mean: Vec<f64>,
    /// Block standard error of `d_lin`.
    pub d_lin_se: f64,
}

/// Largest eigenvalue of a symmetric PSD matrix by power iteration.
pub fn spectral_norm_psd(m: &[Vec<f64>]) -> f64 {
    let n = m.len();
    if n == 0 {
        return 0.0;
    }
    let mut v = vec![1.0 / (n as f64).sqrt(); n];
    let mut lambda = 0.0;
    for _ in 0..500 {
        let mut w = vec![0.0; n];
        for i in 0..n {
            for j in 0..n {
                w[i] += m[i][j] * v[j];
            }
        }
        let norm = w.iter().map(|c| c * c).sum::<f64>().sqrt();
        if norm == 0.0 {
            return 0.0;
        }
        for c in w.iter_mut() {
            *c /= norm;
        }
        let prev = lambda;
        lambda = norm;
        v = w;
        if (lambda - prev).abs() <= 1e-12 * lambda {
            break;
        }
    }
    lambda
}

fn moments(points: &[Vec<f64>]) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = points[0].len();
    let count = points.len() as f64;
    let mut mean = vec![0.0; n];
    for p in points {
        for (m, &c) in mean.iter_mut().zip(p) {
            *m += c;
        }
    }
    for m in mean.iter_mut() {
        *m /= count;
    }
    let mut cov = vec![vec![0.0; n]; n];
    for p in points {
        for i in 0..n {
            let di = p[i] - mean[i];
            for j in i..n {
                cov[i][j] += di * (p[j] - mean[j]);
            }
        }
    }
    for i in 0..n {
        for j in i..n {
            cov[i][j] /= count - 1.0;
            cov[j][i] = cov[i][j];
        }
    }
    (mean, cov)
}

/// Barycenter, covariance and the covariance operator norm of a batch.
pub fn body_stats(batch: &SampleBatch) -> Result<BodyStats> {
    if batch.len() < 1000 {
        return Err(Error::InsufficientSamples {
            needed: 1000,
            got: batch.len(),
        });
    }
    let (mean, cov) = moments(&batch.points);
    let n = mean.len();
    let count = batch.len();
    let d_lin = spectral_norm_psd(&cov).sqrt();
    let se_mean: Vec<f64> = (0..n)
        .map(|i| (cov[i][i] / count as f64).sqrt())
        .collect();
    // Block estimate of the operator-norm noise.
    let blocks = 8;
    let per = count / blocks;
    let mut vals = Vec::with_capacity(blocks);
    for b in 0..blocks {
        let chunk = &batch.points[b * per..(b + 1) * per];
        let (_, c) = moments(chunk);
        vals.push(spectral_norm_psd(&c).sqrt());
    }
    let m = vals.iter().sum::<f64>() / blocks as f64;
    let var = vals.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (blocks - 1) as f64;
    let d_lin_se = (var / blocks as f64).sqrt();
    Ok(BodyStats {
        barycenter: mean,
        cov,
        d_lin,
        count,
        se_mean,
        d_lin_se,
    })
}

/// Comparison of body statistics against the product measure's exact
/// (diagonal) covariance: the normalized barycenter distance and the
/// normalized covariance domination factor. The corresponding universal
/// constants are unspecified, so these are fitted ratios, not asserted
/// bounds.
#[derive(Clone, Debug, Serialize)]
pub struct CovCompare {
    /// `|b_E - b_mu| / (log(1+n) d_lin(mu))`.
    pub barycenter_ratio: f64,
    /// `lambda_max(D^{-1/2} Cov_E D^{-1/2}) / log^2(1+n)` with `D = Cov_mu`.
    pub cov_ratio: f64,
}

pub fn compare_to_mu(stats: &BodyStats, prod: &ProductPotential) -> CovCompare {
    let n = prod.dim();
    let logn = (1.0 + n as f64).ln();
    let b_mu = prod.b_mu();
    let dist = stats
        .barycenter
        .iter()
        .zip(b_mu)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    let d_lin_mu = prod.d_lin_mu();
    let vars = prod.cov_mu_diag();
    let mut scaled = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            scaled[i][j] = stats.cov[i][j] / (vars[i] * vars[j]).sqrt();
        }
    }
    CovCompare {
        barycenter_ratio: dist / (logn * d_lin_mu),
        cov_ratio: spectral_norm_psd(&scaled) / (logn * logn),
    }
}

/// Geweke-style split diagnostic for a scalar chain: difference of the means
/// of the two halves in units of their batch-means standard errors.
pub fn geweke_z(values: &[f64]) -> f64 {
    let half = values.len() / 2;
    let (a, b) = (&values[..half], &values[half..]);
    let stat = |v: &[f64]| -> (f64, f64) {
        let k = ((v.len() as f64).sqrt() as usize).max(2);
        let per = v.len() / k;
        let means: Vec<f64> = (0..k)
            .map(|i| v[i * per..(i + 1) * per].iter().sum::<f64>() / per as f64)
            .collect();
        let m = means.iter().sum::<f64>() / k as f64;
        let var = means.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (k - 1) as f64;
        (m, (var / k as f64).sqrt())
    };
    let (ma, sa) = stat(a);
    let (mb, sb) = stat(b);
    (ma - mb) / (sa * sa + sb * sb).sqrt().max(1e-300)
}

/// Exact (quadrature) volume, barycenter and covariance of a 2D body.
pub struct BodyMoments2d {
    pub volume: f64,
    pub barycenter: [f64; 2],
    pub cov: [[f64; 2]; 2],
}

/// Exact moments for `n = 2` via nested slice quadrature: the slice at
/// `x_0 = s` is the 1D level interval of the second coordinate at level
/// `E - V_0(s)`.
pub fn body_moments_2d(body: &OrliczBody) -> Result<BodyMoments2d> {
    assert_eq!(body.dim(), 2, "body_moments_2d requires n = 2");
    let prod = body.prod();
    let c0 = prod.component(0);
    let c1 = prod.component(1);
    let e = body.level();
    let (x_lo, x_hi) = c0.level_endpoints(e - c1.min_value())?;
    let slice = |s: f64| -> (f64, f64, f64) {
        let rem = e - c0.eval(s);
        match c1.level_endpoints(rem) {
            Ok((c, d)) => (d - c, 0.5 * (d * d - c * c), (d * d * d - c * c * c) / 3.0),
            Err(_) => (0.0, 0.0, 0.0),
        }
    };
    let tol = 1e-11;
    let breaks = c0.kinks();
    let vol = quad::integrate_with_breaks(&|s| slice(s).0, x_lo, x_hi, breaks, tol)?;
    let mx = quad::integrate_with_breaks(&|s| s * slice(s).0, x_lo, x_hi, breaks, tol)?;
    let my = quad::integrate_with_breaks(&|s| slice(s).1, x_lo, x_hi, breaks, tol)?;
    let mxx = quad::integrate_with_breaks(&|s| s * s * slice(s).0, x_lo, x_hi, breaks, tol)?;
    let mxy = quad::integrate_with_breaks(&|s| s * slice(s).1, x_lo, x_hi, breaks, tol)?;
    let myy = quad::integrate_with_breaks(&|s| slice(s).2, x_lo, x_hi, breaks, tol)?;
    let bx = mx / vol;
    let by = my / vol;
    Ok(BodyMoments2d {
        volume: vol,
        barycenter: [bx, by],
        cov: [
            [mxx / vol - bx * bx, mxy / vol - bx * by],
            [mxy / vol - bx * by, myy / vol - by * by],
        ],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::potential::RawPotential;
    use approx::{assert_abs_diff_eq, assert_relative_eq};

    fn l1_body(n: usize, level: f64) -> OrliczBody {
        let raws: Vec<_> = (0..n).map(|_| RawPotential::laplace()).collect();
        let prod = Arc::new(ProductPotential::assemble(&raws, 1e-10).unwrap());
        OrliczBody::new(prod, level).unwrap()
    }

    #[test]
    fn gauge_closed_form_for_l1() {
        // V(x) = 2 sum |x_i|; gauge(x) = 2 ||x||_1 / E.
        let body = l1_body(3, 5.0);
        for x in [[1.0, -0.5, 0.25], [0.1, 0.0, 0.0], [2.0, 2.0, 2.0]] {
            let l1: f64 = x.iter().map(|c: &f64| c.abs()).sum();
            assert_relative_eq!(body.gauge(&x), 2.0 * l1 / 5.0, epsilon = 1e-8);
        }
        assert_eq!(body.gauge(&[0.0, 0.0, 0.0]), 0.0);
        // Positive homogeneity.
        let x = [0.3, -0.7, 0.2];
        assert_relative_eq!(
            body.gauge(&x.map(|c| 2.0 * c)),
            2.0 * body.gauge(&x),
            epsilon = 1e-8
        );
    }

    #[test]
    fn chord_matches_coordinate_slice() {
        let body = l1_body(2, 3.0);
        let (lo, hi) = body.chord(&[0.0, 0.0], &[1.0, 0.0]).unwrap();
        assert_relative_eq!(lo, -1.5, epsilon = 1e-8);
        assert_relative_eq!(hi, 1.5, epsilon = 1e-8);
        // Chord endpoints sit on the boundary.
        let (lo, hi) = body.chord(&[0.2, -0.1], &[0.6, 0.8]).unwrap();
        for t in [lo, hi] {
            let p = [0.2 + t * 0.6, -0.1 + t * 0.8];
            assert_abs_diff_eq!(body.prod().v_at(&p), 3.0, epsilon = 1e-8);
        }
        assert!(body.chord(&[10.0, 10.0], &[1.0, 0.0]).is_err());
    }

    #[test]
    fn uniform_sampler_matches_analytic_moments() {
        // E = 2 makes K the unit cross-polytope; Var(x_1) = 1/6.
        let body = l1_body(2, 2.0);
        let batch = sample_uniform(&body, 40_000, 7).unwrap();
        for p in &batch.points {
            assert!(body.membership(p));
        }
        let stats = body_stats(&batch).unwrap();
        assert!(stats.barycenter[0].abs() <= 4.0 * stats.se_mean[0]);
        assert!(stats.barycenter[1].abs() <= 4.0 * stats.se_mean[1]);
        assert_relative_eq!(stats.cov[0][0], 1.0 / 6.0, max_relative = 0.05);
        assert_relative_eq!(stats.cov[1][1], 1.0 / 6.0, max_relative = 0.05);
        // Exact moments agree.
        let exact = body_moments_2d(&body).unwrap();
        assert_relative_eq!(exact.volume, 2.0, epsilon = 1e-8);
        assert_abs_diff_eq!(exact.barycenter[0], 0.0, epsilon = 1e-9);
        assert_relative_eq!(exact.cov[0][0], 1.0 / 6.0, epsilon = 1e-8);
        let cov_rows: Vec<Vec<f64>> = exact.cov.iter().map(|r| r.to_vec()).collect();
        assert_relative_eq!(
            spectral_norm_psd(&cov_rows).sqrt(),
            (1.0f64 / 6.0).sqrt(),
            epsilon = 1e-8
        );
    }

    #[test]
    fn cone_points_sit_on_boundary() {
        let body = l1_body(2, 2.0);
        let batch = sample_cone(&body, 2_000, 11).unwrap();
        for p in &batch.points {
            assert_abs_diff_eq!(body.gauge(p), 1.0, epsilon = 1e-7);
        }
        // Quadrant symmetry within Monte Carlo error.
        let frac = batch
            .points
            .iter()
            .filter(|p| p[0] > 0.0 && p[1] > 0.0)
            .count() as f64
            / batch.len() as f64;
        assert!((frac - 0.25).abs() < 3.0 * (0.25 * 0.75 / batch.len() as f64).sqrt() + 0.01);
    }

    #[test]
    fn radial_law_mean_and_variance() {
        let body = l1_body(4, 5.0);
        let batch = sample_radial(&body, 30_000, 3, None).unwrap();
        let gauges = batch.map(|p| body.gauge(p));
        let n = gauges.len() as f64;
        let mean = gauges.iter().sum::<f64>() / n;
        let var = gauges.iter().map(|g| (g - mean) * (g - mean)).sum::<f64>() / (n - 1.0);
        let se_mean = (var / n).sqrt();
        assert!((mean - 1.0).abs() <= 3.0 * se_mean, "mean {mean}");
        assert_relative_eq!(var, 0.25, max_relative = 0.1);
    }

    #[test]
    fn annulus_support_and_truncation() {
        let body = l1_body(4, 5.0);
        let w = 0.25;
        let batch = sample_radial(&body, 5_000, 9, Some(w)).unwrap();
        for p in &batch.points {
            let g = body.gauge(p);
            assert!(g >= 1.0 - w - 1e-7 && g <= 1.0 + 1e-7, "gauge {g}");
        }
        // w = 1 keeps everything inside the body.
        let batch = sample_radial(&body, 1_000, 9, Some(1.0)).unwrap();
        for p in &batch.points {
            assert!(body.membership(p));
        }
    }

    #[test]
    fn radius_and_direction_are_uncorrelated() {
        let body = l1_body(3, 4.0);
        let batch = sample_radial(&body, 20_000, 5, None).unwrap();
        let gauges = batch.map(|p| body.gauge(p));
        for i in 0..3 {
            let dirs: Vec<f64> = batch
                .points
                .iter()
                .zip(&gauges)
                .map(|(p, g)| p[i] / g)
                .collect();
            let mg = gauges.iter().sum::<f64>() / gauges.len() as f64;
            let md = dirs.iter().sum::<f64>() / dirs.len() as f64;
            let mut cov = 0.0;
            let mut vg = 0.0;
            let mut vd = 0.0;
            for (g, d) in gauges.iter().zip(&dirs) {
                cov += (g - mg) * (d - md);
                vg += (g - mg) * (g - mg);
                vd += (d - md) * (d - md);
            }
            let corr = cov / (vg * vd).sqrt();
            let se = 1.0 / (gauges.len() as f64).sqrt();
            assert!(corr.abs() <= 4.0 * se, "corr {corr}");
        }
    }

    #[test]
    fn chain_halves_are_compatible() {
        let body = l1_body(3, 4.0);
        let batch = sample_uniform(&body, 12_000, 13).unwrap();
        for i in 0..3 {
            let xs: Vec<f64> = batch.points.iter().map(|p| p[i]).collect();
            let z = geweke_z(&xs);
            assert!(z.abs() < 4.0, "geweke z = {z} on coordinate {i}");
        }
    }

    #[test]
    fn isotropic_rescale_scales_d_lin() {
        // Doubling E for the homogeneous l1 potential doubles the body.
        let b1 = l1_body(2, 2.0);
        let b2 = l1_body(2, 4.0);
        let s1 = body_stats(&sample_uniform(&b1, 20_000, 21).unwrap()).unwrap();
        let s2 = body_stats(&sample_uniform(&b2, 20_000, 21).unwrap()).unwrap();
        assert_relative_eq!(s2.d_lin, 2.0 * s1.d_lin, max_relative = 0.08);
    }

    #[test]
    fn membership_gauge_consistency() {
        let raws = vec![
            RawPotential::gaussian(),
            RawPotential::laplace(),
            RawPotential::power(1.0, 3.0).unwrap(),
        ];
        let prod = Arc::new(ProductPotential::assemble(&raws, 1e-10).unwrap());
        let body = OrliczBody::new(prod, 4.0).unwrap();
        let mut rng = chain_rng(17, 0);
        for _ in 0..2_000 {
            let x: Vec<f64> = (0..3).map(|_| 3.0 * (rng.gen::<f64>() - 0.5)).collect();
            let g = body.gauge(&x);
            assert_eq!(body.membership(&x), g <= 1.0 + 1e-9, "x {x:?} gauge {g}");
        }
    }

    #[test]
    fn grunbaum_halfspace_fraction() {
        let body = l1_body(3, 4.0);
        let batch = sample_uniform(&body, 30_000, 19).unwrap();
        let stats = body_stats(&batch).unwrap();
        let n = 3.0f64;
        let floor = (n / (n + 1.0)).powi(3);
        let mut rng = chain_rng(23, 0);
        for _ in 0..8 {
            let theta = unit_direction(&mut rng, 3);
            let frac = batch
                .points
                .iter()
                .filter(|p| {
                    p.iter()
                        .zip(&theta)
                        .zip(&stats.barycenter)
                        .map(|((&c, &t), &b)| (c - b) * t)
                        .sum::<f64>()
                        >= 0.0
                })
                .count() as f64
                / batch.len() as f64;
            let se = (frac * (1.0 - frac) / batch.len() as f64).sqrt();
            assert!(frac >= floor - 3.0 * se, "fraction {frac} below {floor}");
        }
    }
}
