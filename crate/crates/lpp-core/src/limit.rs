//! Brownian-bridge limit probabilities and the limit sides of the
//! fluctuation theorems.

use crate::error::{LppError, Result, Warning};
use crate::scaling::{classify_region, make_params, ModelParams, RegionQuery, RegionTag};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use libm::erfc;
use std::f64::consts::{PI, SQRT_2};

/// Standard normal upper tail `1 - Phi(x)`, accurate far into both tails.
pub fn normal_survival(x: f64) -> f64 {
    0.5 * erfc(x / SQRT_2)
}

pub fn normal_cdf(x: f64) -> f64 {
    normal_survival(-x)
}

pub fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

/// Adaptive Gauss-Kronrod (7/15) on `[a, b]` to absolute tolerance `tol`.
pub fn integrate_adaptive(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    const XGK: [f64; 8] = [
        0.991_455_371_120_812_6,
        0.949_107_912_342_758_5,
        0.864_864_423_359_769_1,
        0.741_531_185_599_394_4,
        0.586_087_235_467_691_1,
        0.405_845_151_377_397_2,
        0.207_784_955_007_898_5,
        0.0,
    ];
    const WGK: [f64; 8] = [
        0.022_935_322_010_529_22,
        0.063_092_092_629_978_55,
        0.104_790_010_322_250_2,
        0.140_653_259_715_525_9,
        0.169_004_726_639_267_9,
        0.190_350_578_064_785_4,
        0.204_432_940_075_298_9,
        0.209_482_141_084_727_8,
    ];
    const WG: [f64; 4] = [
        0.129_484_966_168_869_7,
        0.279_705_391_489_276_7,
        0.381_830_050_505_118_9,
        0.417_959_183_673_469_4,
    ];
    fn rule(f: &dyn Fn(f64) -> f64, a: f64, b: f64) -> (f64, f64) {
        let c = 0.5 * (a + b);
        let h = 0.5 * (b - a);
        let fc = f(c);
        let mut k = WGK[7] * fc;
        let mut g = WG[3] * fc;
        for j in 0..7 {
            let x = h * XGK[j];
            let s = f(c - x) + f(c + x);
            k += WGK[j] * s;
            if j % 2 == 1 {
                g += WG[j / 2] * s;
            }
        }
        (k * h, ((k - g) * h).abs())
    }
    fn rec(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64, depth: usize) -> f64 {
        let (v, err) = rule(f, a, b);
        if err <= tol || depth == 0 {
            return v;
        }
        let m = 0.5 * (a + b);
        rec(f, a, m, tol / 2.0, depth - 1) + rec(f, m, b, tol / 2.0, depth - 1)
    }
    rec(f, a, b, tol, 40)
}

/// `P(X > h, Y > k)` for a standard bivariate normal with correlation `rho`.
pub fn bivariate_normal_survival(h: f64, k: f64, rho: f64) -> Result<f64> {
    if !(rho > -1.0 && rho < 1.0) {
        return Err(LppError::Domain(format!("correlation {rho} outside (-1, 1)")));
    }
    let s = (1.0 - rho * rho).sqrt();
    // Integrate over the variable whose conditional tail is smoother.
    let (h, k) = if h >= k { (h, k) } else { (k, h) };
    let lo = h.max(-40.0);
    if lo >= 40.0 {
        return Ok(0.0);
    }
    let g = |x: f64| normal_pdf(x) * normal_survival((k - rho * x) / s);
    let mut total = 0.0;
    let mut a = lo;
    while a < 40.0 {
        let b = (a + 2.0).min(40.0);
        total += integrate_adaptive(&g, a, b, 1e-14);
        a = b;
    }
    Ok(total.clamp(0.0, 1.0))
}

/// `P(sqrt(A) B(a_i / A) > b_i, i = 1..m-1)` for a standard bridge `B`.
#[derive(Debug, Clone, PartialEq)]
pub struct BridgeSpec {
    pub total: f64,
    pub times: Vec<f64>,
    pub thresholds: Vec<f64>,
}

impl BridgeSpec {
    pub fn new(total: f64, times: Vec<f64>, thresholds: Vec<f64>) -> Result<Self> {
        let spec = BridgeSpec {
            total,
            times,
            thresholds,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.total > 0.0) {
            return Err(LppError::Domain(format!("bridge length {} must be positive", self.total)));
        }
        if self.times.len() != self.thresholds.len() || self.times.is_empty() {
            return Err(LppError::Shape("bridge spec needs matching nonempty times and thresholds".into()));
        }
        let mut prev = 0.0;
        for &t in &self.times {
            if !(t > prev && t < self.total) {
                return Err(LppError::Domain(format!("bridge times must increase strictly inside (0, {})", self.total)));
            }
            prev = t;
        }
        if self.thresholds.iter().any(|b| b.is_nan()) {
            return Err(LppError::Domain("threshold is NaN".into()));
        }
        Ok(())
    }

    /// Number of vertical lines in the contour representation.
    pub fn lines(&self) -> usize {
        self.times.len() + 1
    }

    /// Correlation of the bridge at two of the fixed times.
    pub fn correlation(&self, i: usize, j: usize) -> f64 {
        let (s, t) = (self.times[i.min(j)] / self.total, self.times[i.max(j)] / self.total);
        (s * (1.0 - t)) / (s * (1.0 - s) * t * (1.0 - t)).sqrt()
    }

    pub fn std_dev(&self, i: usize) -> f64 {
        let s = self.times[i] / self.total;
        (self.total * s * (1.0 - s)).sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BridgeMethod {
    ClosedForm,
    GaussianMc { paths: u64, seed: u64 },
    Contour,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Probability {
    pub value: f64,
    pub error: f64,
    pub warnings: Vec<Warning>,
}

pub fn bridge_crossing(spec: &BridgeSpec, method: BridgeMethod) -> Result<Probability> {
    spec.validate()?;
    match method {
        BridgeMethod::ClosedForm => bridge_closed_form(spec),
        BridgeMethod::GaussianMc { paths, seed } => Ok(bridge_mc(spec, paths, seed)),
        BridgeMethod::Contour => bridge_contour(spec),
    }
}

fn bridge_closed_form(spec: &BridgeSpec) -> Result<Probability> {
    let value = match spec.times.len() {
        1 => normal_survival(spec.thresholds[0] / spec.std_dev(0)),
        2 => bivariate_normal_survival(
            spec.thresholds[0] / spec.std_dev(0),
            spec.thresholds[1] / spec.std_dev(1),
            spec.correlation(0, 1),
        )?,
        k => {
            return Err(LppError::Method {
                method: "closed form".into(),
                detail: format!("{k} fixed times"),
            })
        }
    };
    Ok(Probability {
        value,
        error: 1e-12,
        warnings: vec![],
    })
}

/// Samples the bridge exactly at the fixed times through its Markov
/// transitions, so no time discretization enters.
fn bridge_mc(spec: &BridgeSpec, paths: u64, seed: u64) -> Probability {
    let chunk = 8192u64;
    let hits: u64 = (0..paths.div_ceil(chunk))
        .into_par_iter()
        .map(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(crate::lattice::replica_seed(seed, c));
            let lo = c * chunk;
            let hi = (lo + chunk).min(paths);
            let mut h = 0;
            for _ in lo..hi {
                let (mut t, mut x) = (0.0, 0.0);
                let mut ok = true;
                for (&s, &b) in spec.times.iter().zip(&spec.thresholds) {
                    let rest = spec.total - t;
                    let dt = s - t;
                    let mean = x * (rest - dt) / rest;
                    let var = dt * (rest - dt) / rest;
                    let z: f64 = rng.sample(StandardNormal);
                    x = mean + var.sqrt() * z;
                    t = s;
                    if x <= b {
                        ok = false;
                        break;
                    }
                }
                if ok {
                    h += 1;
                }
            }
            h
        })
        .sum();
    let p = hits as f64 / paths as f64;
    Probability {
        value: p,
        error: (p * (1.0 - p) / paths as f64).sqrt(),
        warnings: vec![],
    }
}

/// The vertical-line integral of the bridge identity: lines at abscissae
/// `1, ..., m` (left to right), trapezoid in the imaginary direction.
fn bridge_contour(spec: &BridgeSpec) -> Result<Probability> {
    let m = spec.lines();
    let mut a = vec![0.0];
    a.extend(spec.times.iter().copied());
    a.push(spec.total);
    let mut b = vec![0.0];
    b.extend(spec.thresholds.iter().copied());
    b.push(0.0);
    let gaps: Vec<f64> = (1..=m).map(|i| a[i] - a[i - 1]).collect();
    let min_gap = gaps.iter().cloned().fold(f64::INFINITY, f64::min);
    let extent = 12.0 / min_gap.sqrt();
    let step = 0.2;
    let n = (2.0 * extent / step).ceil() as usize + 1;
    let ys: Vec<f64> = (0..n).map(|k| -extent + k as f64 * step).collect();
    type C = num_complex::Complex64;
    let factor = |i: usize, y: f64| -> C {
        let u = C::new((i + 1) as f64, y);
        (0.5 * gaps[i] * u * u + (b[i + 1] - b[i]) * u).exp()
    };
    // Chain contraction: v_i(y) = factor_i(y) * sum_y' v_{i-1}(y') / (u_i(y) - u_{i-1}(y')).
    let mut v: Vec<C> = ys.iter().map(|&y| factor(0, y) * step).collect();
    let mut edge: f64 = v.first().unwrap().norm().max(v.last().unwrap().norm());
    for i in 1..m {
        let prev = v;
        v = ys
            .par_iter()
            .map(|&y| {
                let ui = C::new((i + 1) as f64, y);
                let s: C = prev
                    .iter()
                    .zip(&ys)
                    .map(|(&p, &y2)| p / (ui - C::new(i as f64, y2)))
                    .sum();
                factor(i, y) * s * step
            })
            .collect();
        edge = edge.max(v.first().unwrap().norm()).max(v.last().unwrap().norm());
    }
    let total: C = v.iter().sum();
    let value = total * (2.0 * PI * spec.total).sqrt() / (2.0 * PI).powi(m as i32);
    let mut warnings = Vec::new();
    if edge > 1e-12 {
        warnings.push(Warning::Truncation {
            tail: edge,
            value: value.re,
        });
    }
    Ok(Probability {
        value: value.re,
        error: value.im.abs().max(edge),
        warnings,
    })
}

/// Constraints `min{sqrt2 c+ B+(t) - s, sqrt2 c- B-(t) + s} > h` for each
/// `(shift s, time t, threshold h)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagSpec {
    pub params: ModelParams,
    pub constraints: Vec<(f64, f64, f64)>,
}

fn branch_probability(times_thresholds: &[(f64, f64)], scale: f64) -> Result<f64> {
    let mut pts: Vec<(f64, f64)> = times_thresholds.to_vec();
    pts.sort_by(|x, y| x.0.total_cmp(&y.0));
    let mut merged: Vec<(f64, f64)> = Vec::new();
    for (t, h) in pts {
        match merged.last_mut() {
            Some(last) if last.0 == t => last.1 = last.1.max(h),
            _ => merged.push((t, h)),
        }
    }
    let spec = BridgeSpec::new(
        1.0,
        merged.iter().map(|p| p.0).collect(),
        merged.iter().map(|p| p.1 / scale).collect(),
    )?;
    let method = if spec.times.len() <= 2 {
        BridgeMethod::ClosedForm
    } else {
        BridgeMethod::Contour
    };
    Ok(bridge_crossing(&spec, method)?.value)
}

/// Limit of the diagonal multi-point fluctuations as a product of two
/// independent bridge crossing probabilities.
pub fn diag_limit(spec: &DiagSpec) -> Result<f64> {
    if spec.constraints.is_empty() {
        return Ok(1.0);
    }
    if spec.constraints.iter().any(|&(_, t, _)| !(t > 0.0 && t < 1.0)) {
        return Err(LppError::Domain("diagonal times must lie in (0, 1)".into()));
    }
    let p = &spec.params;
    let plus: Vec<(f64, f64)> = spec.constraints.iter().map(|&(s, t, h)| (t, h + s)).collect();
    let minus: Vec<(f64, f64)> = spec.constraints.iter().map(|&(s, t, h)| (t, h - s)).collect();
    Ok(branch_probability(&plus, SQRT_2 * p.c_plus)? * branch_probability(&minus, SQRT_2 * p.c_minus)?)
}

/// `E[B1(t) B2(t)]` for the two correlated bridges of the diagonal limit.
pub fn bridge_covariance(p: &ModelParams, t: f64) -> f64 {
    let (a, b, ell) = (p.a, p.b, p.ell);
    (a - b) * p.sqrt_d() / ((a + b) * ell - (a - b) * (a - b)) * t * (1.0 - t)
}

/// Bridge time of an off-diagonal point below the diagonal.
pub fn bridge_time(p: &ModelParams, x: f64, y: f64) -> f64 {
    (p.m_slope * y - x) / (p.m_slope - 1.0)
}

/// Two-point off-diagonal limit `P(c+ B(u1) > r1, c+ B(u2) > r2)`. Points
/// above the diagonal are handled by transposing the lattice.
pub fn offdiag_two_point_limit(p: &ModelParams, q: &RegionQuery, r1: f64, r2: f64) -> Result<f64> {
    let below = |x: f64, y: f64| y < x;
    let above = |x: f64, y: f64| y > x;
    let (p, q) = if below(q.x1, q.y1) && below(q.x2, q.y2) {
        (*p, *q)
    } else if above(q.x1, q.y1) && above(q.x2, q.y2) {
        (make_params(p.b, p.a, p.ell)?, RegionQuery::new(q.y1, q.x1, q.y2, q.x2))
    } else {
        return Err(LppError::Domain("both points must lie strictly on one side of the diagonal".into()));
    };
    let u1 = bridge_time(&p, q.x1, q.y1);
    let u2 = bridge_time(&p, q.x2, q.y2);
    for u in [u1, u2] {
        if !(u > 0.0 && u < 1.0) {
            return Err(LppError::Domain(format!("bridge time {u} outside (0, 1)")));
        }
    }
    let c = p.c_plus;
    let sd = |u: f64| c * (u * (1.0 - u)).sqrt();
    if (u1 - u2).abs() <= 1e-14 {
        return Ok(normal_survival(r1.max(r2) / sd(u1)));
    }
    let (ua, ra, ub, rb) = if u1 < u2 { (u1, r1, u2, r2) } else { (u2, r2, u1, r1) };
    let rho = (ua * (1.0 - ub)) / (ua * (1.0 - ua) * ub * (1.0 - ub)).sqrt();
    bivariate_normal_survival(ra / sd(ua), rb / sd(ub), rho)
}

/// Region of a query, for reporting.
pub fn region_of(p: &ModelParams, q: &RegionQuery) -> Result<RegionTag> {
    Ok(classify_region(p, q)?.tag)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bivariate_survival_special_cases() {
        for &(h, k) in &[(0.3, -0.7), (1.5, 2.0), (-2.0, -1.0)] {
            let v = bivariate_normal_survival(h, k, 0.0).unwrap();
            assert!((v - normal_survival(h) * normal_survival(k)).abs() < 1e-12);
        }
        for rho in [-0.9, -0.3, 0.2, 0.8] {
            let v = bivariate_normal_survival(0.0, 0.0, rho).unwrap();
            assert!((v - (0.25 + rho.asin() / (2.0 * PI))).abs() < 1e-11);
        }
        assert!(bivariate_normal_survival(0.0, 0.0, 1.0).is_err());
    }

    #[test]
    fn bridge_marginals() {
        let s = BridgeSpec::new(1.0, vec![0.5], vec![0.0]).unwrap();
        assert!((bridge_crossing(&s, BridgeMethod::ClosedForm).unwrap().value - 0.5).abs() < 1e-14);
        let s = BridgeSpec::new(1.0, vec![0.25], vec![(3.0f64 / 16.0).sqrt()]).unwrap();
        assert!((bridge_crossing(&s, BridgeMethod::ClosedForm).unwrap().value - 0.158_655_253_931_457).abs() < 1e-12);
    }

    #[test]
    fn contour_side_equals_closed_form() {
        let s = BridgeSpec::new(2.0, vec![0.5, 1.3], vec![0.2, -0.4]).unwrap();
        let c = bridge_crossing(&s, BridgeMethod::Contour).unwrap();
        let f = bridge_crossing(&s, BridgeMethod::ClosedForm).unwrap();
        assert!((c.value - f.value).abs() < 1e-8, "{} vs {}", c.value, f.value);
        let s = BridgeSpec::new(1.0, vec![0.3], vec![0.1]).unwrap();
        let c = bridge_crossing(&s, BridgeMethod::Contour).unwrap();
        let f = bridge_crossing(&s, BridgeMethod::ClosedForm).unwrap();
        assert!((c.value - f.value).abs() < 1e-8, "{} vs {}", c.value, f.value);
    }

    #[test]
    fn monte_carlo_bridge_agrees() {
        let s = BridgeSpec::new(1.0, vec![0.2, 0.6, 0.9], vec![-0.3, 0.1, -0.1]).unwrap();
        let mc = bridge_crossing(&s, BridgeMethod::GaussianMc { paths: 400_000, seed: 3 }).unwrap();
        let c = bridge_crossing(&s, BridgeMethod::Contour).unwrap();
        assert!((mc.value - c.value).abs() < 4.0 * mc.error, "{} vs {}", mc.value, c.value);
    }

    #[test]
    fn covariance_matches_tilt() {
        for (a, b, ell) in [(1.0, 1.0, 5.0), (2.0, 0.5, 6.0), (0.3, 1.7, 4.0)] {
            let p = ModelParams::new(a, b, ell).unwrap();
            for t in [0.1, 0.5, 0.77] {
                let want = p.bridge_tilt() * t * (1.0 - t);
                assert!((bridge_covariance(&p, t) - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn diagonal_single_constraint_factorizes() {
        let p = ModelParams::new(1.0, 1.0, 5.0).unwrap();
        let t = 0.4;
        let h = 0.3;
        let v = diag_limit(&DiagSpec {
            params: p,
            constraints: vec![(0.0, t, h)],
        })
        .unwrap();
        let sd = (t * (1.0 - t)).sqrt();
        let want = normal_survival(h / (SQRT_2 * p.c_plus * sd)) * normal_survival(h / (SQRT_2 * p.c_minus * sd));
        assert!((v - want).abs() < 1e-12);
        let far = diag_limit(&DiagSpec {
            params: p,
            constraints: vec![(0.2, 0.3, -60.0), (0.1, 0.7, -60.0)],
        })
        .unwrap();
        assert!((far - 1.0).abs() < 1e-10);
    }

    #[test]
    fn offdiagonal_coincident_points_reduce_to_a_marginal() {
        let p = ModelParams::new(1.0, 1.0, 5.0).unwrap();
        let q = RegionQuery::new(0.6, 0.3, 0.6, 0.3);
        let v = offdiag_two_point_limit(&p, &q, 0.1, 0.1).unwrap();
        let u = bridge_time(&p, 0.6, 0.3);
        let want = normal_survival(0.1 / (p.c_plus * (u * (1.0 - u)).sqrt()));
        assert!((v - want).abs() < 1e-14);
        let q = RegionQuery::new(0.7, 0.3, 0.8, 0.5);
        assert!((offdiag_two_point_limit(&p, &q, -50.0, -50.0).unwrap() - 1.0).abs() < 1e-12);
    }
}
