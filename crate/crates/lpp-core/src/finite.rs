//! Exact finite-size distributions: the single-point density and distribution
//! function, the multi-level series and the conditional ratio.

use crate::cauchy::pi_n_kernel;
use crate::contour::{default_radii, fit_family, geometric_radii, Contour, ContourFamily};
use crate::error::{LppError, Result, Warning};
use crate::integral::{integrate_kernel, steepest_targets, ConvergenceCheck, QuadOptions, VariableSpec};
use crate::logc::{LogComplex, LogSum};
use crate::plan::{Exponents, ObservationPlan};
use crate::scaling::ModelParams;
use num_complex::Complex64;
use rayon::prelude::*;

/// `log Z_L`, the ratio of the master integrand at its two critical points.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Normalization {
    pub log_z: f64,
}

pub fn z_normalization(p: &ModelParams, l: f64) -> Normalization {
    let sd = p.sqrt_d();
    let (a, b, ell) = (p.a, p.b, p.ell);
    let ma = (a * l).ceil();
    let nb = (b * l).ceil();
    let log_z = ma * ((ell + a - b + sd) / (ell + a - b - sd)).ln() + nb * ((ell - a + b + sd) / (ell - a + b - sd)).ln()
        - sd * l;
    Normalization { log_z }
}

/// Normalization used for a plan: `Z_L` for scaled plans, 1 otherwise.
pub fn plan_log_norm(plan: &ObservationPlan, params: Option<&ModelParams>) -> f64 {
    match (plan.scale, params) {
        (Some(l), Some(p)) => z_normalization(p, l).log_z,
        _ => 0.0,
    }
}

/// How circles are chosen for the finite-size integrals.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RadiusStrategy {
    /// Fixed radii `0.10 + 0.05 k`.
    Default,
    /// Saddle-point radii nested with the given ratio.
    Steepest { ratio: f64 },
    /// Radii `inner * ratio^k`.
    Geometric { inner: f64, ratio: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeriesOptions {
    pub radii: RadiusStrategy,
    /// Node count override; `None` picks by dimension.
    pub nodes: Option<usize>,
    pub check: Option<ConvergenceCheck>,
    pub max_cost: f64,
}

impl Default for SeriesOptions {
    fn default() -> Self {
        SeriesOptions {
            radii: RadiusStrategy::Default,
            nodes: None,
            check: None,
            max_cost: 2e10,
        }
    }
}

impl SeriesOptions {
    pub fn quad(&self, dim: usize) -> QuadOptions {
        let mut q = QuadOptions::for_dimension(dim);
        if let Some(n) = self.nodes {
            q.nodes = n;
        }
        if let Some(c) = self.check {
            q.check = c;
        }
        q.max_cost = self.max_cost;
        q
    }
}

/// Truncated series value.
#[derive(Debug, Clone)]
pub struct SeriesResult {
    /// Value divided by `exp(log_norm)`.
    pub value: f64,
    pub log_norm: f64,
    pub n_max: usize,
    pub included_terms: Vec<(Vec<usize>, f64)>,
    /// NaN when only the lowest shell `|n| = m` was summed.
    pub tail_estimate: f64,
    pub quadrature_error: f64,
    pub warnings: Vec<Warning>,
}

impl SeriesResult {
    /// The value with the normalization put back.
    pub fn raw_value(&self) -> f64 {
        self.value * self.log_norm.exp()
    }
}

// ---------------------------------------------------------------------------
// Single point
// ---------------------------------------------------------------------------

/// Circle pair for a single-point integrand.
pub fn single_point_radii(e: &Exponents, strategy: RadiusStrategy) -> (f64, f64) {
    match strategy {
        RadiusStrategy::Default | RadiusStrategy::Geometric { .. } => (0.25, 0.25),
        RadiusStrategy::Steepest { .. } => {
            let (xi, eta) = steepest_targets(e);
            let s = xi + eta;
            if s > 0.9 {
                (xi * 0.9 / s, eta * 0.9 / s)
            } else {
                (xi, eta)
            }
        }
    }
}

/// Terms of the single-point series: element `k` is the order-`k+1` term.
#[derive(Debug, Clone)]
pub struct SinglePointTerms {
    /// Density terms, already divided by `exp(log_norm)`.
    pub density: Vec<Complex64>,
    /// Distribution-function terms (unnormalized, dimensionless).
    pub cdf: Vec<Complex64>,
    pub log_norm: f64,
}

#[derive(Clone, Copy, Debug)]
struct DualC {
    re: Complex64,
    eps: Complex64,
}

impl DualC {
    fn mul(self, o: DualC) -> DualC {
        DualC {
            re: self.re * o.re,
            eps: self.re * o.eps + self.eps * o.re,
        }
    }
    fn add(self, o: DualC) -> DualC {
        DualC {
            re: self.re + o.re,
            eps: self.eps + o.eps,
        }
    }
    fn scale(self, s: Complex64) -> DualC {
        DualC {
            re: self.re * s,
            eps: self.eps * s,
        }
    }
}

fn zero() -> Complex64 {
    Complex64::new(0.0, 0.0)
}

/// Single-point series by the Cauchy-Binet identity.
///
/// Summing the `n`-fold double integral over product grids collapses to the
/// elementary symmetric function `e_n` of a `q x q` matrix; the density rides
/// along as the dual part of the same matrix.
pub fn single_point_terms(
    e: &Exponents,
    xi_contour: &Contour,
    eta_contour: &Contour,
    n_max: usize,
    log_norm: f64,
) -> Result<SinglePointTerms> {
    let xs = xi_contour.points(0.0);
    let ys = eta_contour.points(0.0);
    let alpha: Vec<LogComplex> = xs
        .iter()
        .map(|&(z, w)| Ok(e.eval(z)? * LogComplex::from_complex(w)))
        .collect::<Result<_>>()?;
    let beta: Vec<LogComplex> = ys
        .iter()
        .map(|&(z, w)| Ok(e.eval(z)?.recip() * LogComplex::from_complex(w)))
        .collect::<Result<_>>()?;
    let qa = xs.len();
    let qb = ys.len();
    // Each product alpha_a beta_b is moderate even when the factors are not;
    // the normalization is split evenly across the order so terms stay finite.
    let shift = log_norm;
    let mut mat = vec![
        DualC {
            re: zero(),
            eps: zero()
        };
        qa * qa
    ];
    mat.par_chunks_mut(qa).enumerate().for_each(|(a, row)| {
        for b in 0..qb {
            let ab = (alpha[a] * beta[b]).scale_log(-shift).to_complex();
            let ca = (xs[a].0 - ys[b].0).inv();
            for (a2, slot) in row.iter_mut().enumerate() {
                let ca2 = (xs[a2].0 - ys[b].0).inv();
                slot.re += ab * ca * ca2;
                slot.eps += ab * ca2;
            }
        }
    });
    // Power sums p_k = tr(M^k) in dual arithmetic, then Newton's identities.
    let mut power = mat.clone();
    let mut sums = Vec::with_capacity(n_max);
    for k in 0..n_max {
        let tr = (0..qa).fold(
            DualC {
                re: zero(),
                eps: zero(),
            },
            |acc, i| acc.add(power[i * qa + i]),
        );
        sums.push(tr);
        if k + 1 < n_max {
            let prev = power;
            power = vec![
                DualC {
                    re: zero(),
                    eps: zero()
                };
                qa * qa
            ];
            power.par_chunks_mut(qa).enumerate().for_each(|(i, row)| {
                for l in 0..qa {
                    let pil = prev[i * qa + l];
                    if pil.re == zero() && pil.eps == zero() {
                        continue;
                    }
                    for (j, slot) in row.iter_mut().enumerate() {
                        *slot = slot.add(pil.mul(mat[l * qa + j]));
                    }
                }
            });
        }
    }
    let mut elem = vec![DualC {
        re: Complex64::new(1.0, 0.0),
        eps: zero(),
    }];
    for n in 1..=n_max {
        let mut acc = DualC {
            re: zero(),
            eps: zero(),
        };
        for k in 1..=n {
            let sgn = if k % 2 == 1 { 1.0 } else { -1.0 };
            acc = acc.add(elem[n - k].mul(sums[k - 1]).scale(Complex64::new(sgn, 0.0)));
        }
        elem.push(acc.scale(Complex64::new(1.0 / n as f64, 0.0)));
    }
    // The distribution-function terms carry exp(n * shift) from the scaling.
    let density = elem[1..].iter().map(|d| d.eps).collect();
    let cdf = elem[1..]
        .iter()
        .enumerate()
        .map(|(k, d)| d.re * ((k + 1) as f64 * shift).exp())
        .collect();
    Ok(SinglePointTerms { density, cdf, log_norm })
}

/// Single-point evaluation settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SinglePointOptions {
    pub nodes: usize,
    pub radii: RadiusStrategy,
    pub n_max: Option<usize>,
    /// Repeat at half the nodes to estimate the quadrature error.
    pub halving: bool,
}

impl Default for SinglePointOptions {
    fn default() -> Self {
        SinglePointOptions {
            nodes: 128,
            radii: RadiusStrategy::Steepest { ratio: 1.12 },
            n_max: None,
            halving: true,
        }
    }
}

/// Density, distribution function and upper tail at one point.
#[derive(Debug, Clone)]
pub struct SinglePointValue {
    pub density: SeriesResult,
    pub cdf: f64,
    pub upper_tail: f64,
    pub terms: SinglePointTerms,
}

fn single_point_n_max(e: &Exponents, opts: &SinglePointOptions) -> usize {
    opts.n_max.unwrap_or_else(|| (e.m.min(e.n) as usize + 1).min(12))
}

/// Series data at one point, normalized by `exp(log_norm)` for the density.
pub fn single_point(m: i64, n: i64, t: f64, log_norm: f64, opts: &SinglePointOptions) -> Result<SinglePointValue> {
    if m < 1 || n < 1 {
        return Err(LppError::Domain("lattice coordinates must be at least 1".into()));
    }
    if !(t > 0.0) {
        return Err(LppError::Domain(format!("threshold {t} must be positive")));
    }
    let e = Exponents { m, n, t };
    let (rx, re) = single_point_radii(&e, opts.radii);
    let xi = Contour::around_minus_one(rx, opts.nodes)?;
    let eta = Contour::around_origin(re, opts.nodes)?;
    let n_max = single_point_n_max(&e, opts);
    let terms = single_point_terms(&e, &xi, &eta, n_max, log_norm)?;
    let density: Complex64 = terms.density.iter().sum();
    let quadrature_error = if opts.halving {
        let half = single_point_terms(
            &e,
            &Contour::around_minus_one(rx, opts.nodes / 2)?,
            &Contour::around_origin(re, opts.nodes / 2)?,
            n_max,
            log_norm,
        )?;
        (density - half.density.iter().sum::<Complex64>()).norm()
    } else {
        0.0
    };
    let mut warnings = Vec::new();
    let last = terms.density.last().map_or(0.0, |d| d.norm());
    let prev = if terms.density.len() >= 2 {
        terms.density[terms.density.len() - 2].norm()
    } else {
        0.0
    };
    let tail_estimate = if prev > 0.0 && last < prev {
        last * last / (prev - last)
    } else {
        last
    };
    if tail_estimate > 1e-3 * density.norm() {
        warnings.push(Warning::Truncation {
            tail: tail_estimate,
            value: density.re,
        });
    }
    check_real(density, density.norm().max(1e-300))?;
    let cdf_terms: Complex64 = terms.cdf.iter().sum();
    let included_terms = terms
        .density
        .iter()
        .enumerate()
        .map(|(k, d)| (vec![k + 1], d.re))
        .collect();
    Ok(SinglePointValue {
        density: SeriesResult {
            value: density.re,
            log_norm,
            n_max,
            included_terms,
            tail_estimate,
            quadrature_error,
            warnings,
        },
        cdf: 1.0 + cdf_terms.re,
        upper_tail: -cdf_terms.re,
        terms,
    })
}

fn check_real(v: Complex64, scale: f64) -> Result<()> {
    if v.im.abs() > 1e-6 * scale.max(v.re.abs()) + 1e-15 {
        return Err(LppError::NonReal {
            value: v.re,
            residue: v.im,
        });
    }
    Ok(())
}

/// Density and upper tail of `L(M, N)` at `T` (unnormalized). The law is
/// symmetric in `(M, N)`, so both orders share one evaluation.
pub fn density_and_tail(m: i64, n: i64, t: f64, n_max: Option<usize>) -> Result<(f64, f64)> {
    let (m, n) = (m.min(n), m.max(n));
    if t == 0.0 && m >= 1 {
        return Ok((if m + n == 2 { 1.0 } else { 0.0 }, 1.0));
    }
    let opts = SinglePointOptions {
        n_max,
        ..Default::default()
    };
    let v = single_point(m, n, t, 0.0, &opts)?;
    Ok((v.density.value, v.upper_tail))
}

/// Upper tail by integrating the density on `[T, T + 40]` with adaptive
/// Simpson and extrapolating the remainder from the local log-slope.
pub fn tail_by_integration(m: i64, n: i64, t: f64) -> Result<f64> {
    let opts = SinglePointOptions {
        nodes: 96,
        halving: false,
        ..Default::default()
    };
    let dens = |s: f64| -> f64 { single_point(m, n, s, 0.0, &opts).map(|v| v.density.value).unwrap_or(f64::NAN) };
    let t_cut = t + 40.0;
    let body = adaptive_simpson(&dens, t, t_cut, 1e-10, 30);
    let d1 = dens(t_cut);
    let d0 = dens(t_cut - 1.0);
    let rate = (d0 / d1).ln();
    let rest = if rate > 0.0 && d1 > 0.0 { d1 / rate } else { 0.0 };
    if !body.is_finite() {
        return Err(LppError::Domain("density evaluation failed during tail integration".into()));
    }
    Ok(body + rest)
}

pub fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64, depth: usize) -> f64 {
    fn simpson(fa: f64, fm: f64, fb: f64, a: f64, b: f64) -> f64 {
        (b - a) / 6.0 * (fa + 4.0 * fm + fb)
    }
    #[allow(clippy::too_many_arguments)]
    fn rec(f: &dyn Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: usize) -> f64 {
        let m = 0.5 * (a + b);
        let lm = 0.5 * (a + m);
        let rm = 0.5 * (m + b);
        let flm = f(lm);
        let frm = f(rm);
        let left = simpson(fa, flm, fm, a, m);
        let right = simpson(fm, frm, fb, m, b);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            return left + right + delta / 15.0;
        }
        rec(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1) + rec(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
    }
    let fa = f(a);
    let fb = f(b);
    let fm = f(0.5 * (a + b));
    rec(f, a, b, fa, fm, fb, simpson(fa, fm, fb, a, b), tol, depth)
}

// ---------------------------------------------------------------------------
// Several levels
// ---------------------------------------------------------------------------

fn binomial_f(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// `(2 pi i)^{-1} \oint_{|z|=2} z^{j - n_level - 1} (z + 1)^{n_prev - n_level - 1} dz`
/// by the trapezoidal rule with `64 + 16 (n_prev + n_level)` nodes.
pub fn z_weight(j: usize, n_prev: usize, n_level: usize) -> f64 {
    let c = Contour::around_origin(2.0, 64 + 16 * (n_prev + n_level)).expect("valid circle");
    let pz = j as i32 - n_level as i32 - 1;
    let pw = n_prev as i32 - n_level as i32 - 1;
    c.integrate(|z| z.powi(pz) * (z + 1.0).powi(pw)).re
}

/// Generalized binomial `C(p, k)` for integer `p`, the exact value of [`z_weight`].
pub fn z_weight_exact(j: usize, n_prev: usize, n_level: usize) -> f64 {
    let p = n_prev as i64 - n_level as i64 - 1;
    let k = j as i64 - n_level as i64 + p;
    if k < 0 {
        return 0.0;
    }
    (0..k).fold(1.0, |acc, i| acc * (p - i) as f64 / (i + 1) as f64)
}

/// One in/out configuration of the bracketed contours: for each level `i >= 2`
/// the number of `xi` and `eta` variables placed on the outer circle.
#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    pub out_xi: Vec<usize>,
    pub out_eta: Vec<usize>,
    /// Product of binomial multiplicities.
    pub multiplicity: f64,
    /// Product of the `z`-integral weights.
    pub z_factor: f64,
}

/// All assignments; with `keep_zero = false` those killed by the `z`-integrals
/// are dropped.
pub fn assignments(n: &[usize], keep_zero: bool) -> Vec<Assignment> {
    let m = n.len();
    let mut out = vec![Assignment {
        out_xi: vec![],
        out_eta: vec![],
        multiplicity: 1.0,
        z_factor: 1.0,
    }];
    for lvl in 1..m {
        let mut next = Vec::new();
        for a in &out {
            for kx in 0..=n[lvl] {
                for ke in 0..=n[lvl] {
                    let w = z_weight(kx + ke, n[lvl - 1], n[lvl]);
                    if !keep_zero && w.abs() < 1e-8 {
                        continue;
                    }
                    let mut b = a.clone();
                    b.out_xi.push(kx);
                    b.out_eta.push(ke);
                    b.multiplicity *= binomial_f(n[lvl], kx) * binomial_f(n[lvl], ke);
                    b.z_factor *= w;
                    next.push(b);
                }
            }
        }
        out = next;
    }
    out
}

/// Slot index (inside to outside) of level `lvl` (1-based), outer or inner
/// circle, among `2m - 1` circles per side.
fn slot_of(m: usize, lvl: usize, outer: bool) -> usize {
    if lvl == 1 {
        m - 1
    } else if outer {
        m + lvl - 2
    } else {
        m - lvl
    }
}

fn level_of_slot(m: usize, slot: usize) -> usize {
    if slot + 1 == m {
        1
    } else if slot < m - 1 {
        m - slot
    } else {
        slot + 2 - m
    }
}

/// Circles for the bracketed contours of a plan: `2m - 1` per side.
pub fn level_family(plan: &ObservationPlan, strategy: RadiusStrategy, nodes: usize) -> Result<ContourFamily> {
    let m = plan.len();
    let count = 2 * m - 1;
    match strategy {
        RadiusStrategy::Default => ContourFamily::from_radii(&default_radii(count), &default_radii(count), nodes),
        RadiusStrategy::Geometric { inner, ratio } => {
            let radii = geometric_radii(count, inner, ratio)?;
            ContourFamily::from_radii(&radii, &radii, nodes)
        }
        RadiusStrategy::Steepest { ratio } => {
            let xi: Vec<f64> = (0..count)
                .map(|s| steepest_targets(&plan.segment(level_of_slot(m, s), level_of_slot(m, s))).0)
                .collect();
            let eta: Vec<f64> = (0..count)
                .map(|s| steepest_targets(&plan.segment(level_of_slot(m, s), level_of_slot(m, s))).1)
                .collect();
            fit_family(&xi, &eta, ratio, nodes)
        }
    }
}

/// Integral of one assignment: every variable on its slot circle.
fn assignment_integral(
    plan: &ObservationPlan,
    n: &[usize],
    asg: &Assignment,
    family: &ContourFamily,
    log_norm: f64,
    opts: &QuadOptions,
    with_linear: bool,
) -> Result<crate::integral::KernelIntegral> {
    let m = n.len();
    let (kernel, lay) = pi_n_kernel(n, with_linear);
    let mut vars: Vec<Option<VariableSpec>> = vec![None; lay.vars];
    for lvl in 1..=m {
        let e = plan.segment(lvl, lvl);
        let (kx, ke) = if lvl == 1 {
            (0, 0)
        } else {
            (asg.out_xi[lvl - 2], asg.out_eta[lvl - 2])
        };
        for (k, &v) in lay.xi[lvl - 1].iter().enumerate() {
            let outer = k < kx;
            vars[v] = Some(VariableSpec {
                contour: family.xi[slot_of(m, lvl, outer)],
                exponents: e,
                reciprocal: false,
            });
        }
        for (k, &v) in lay.eta[lvl - 1].iter().enumerate() {
            let outer = k < ke;
            vars[v] = Some(VariableSpec {
                contour: family.eta[slot_of(m, lvl, outer)],
                exponents: e,
                reciprocal: true,
            });
        }
    }
    let vars: Vec<VariableSpec> = vars.into_iter().map(|v| v.expect("every variable placed")).collect();
    integrate_kernel(&kernel, &vars, log_norm, opts)
}

/// Coefficients of the bracketed-contour polynomial in `z`: one entry per
/// assignment (with all multiplicities), normalized by `exp(log_norm)`.
pub fn eval_d_n_coefficients(
    plan: &ObservationPlan,
    n: &[usize],
    log_norm: f64,
    opts: &SeriesOptions,
) -> Result<Vec<(Assignment, LogComplex)>> {
    if n.len() != plan.len() {
        return Err(LppError::Shape(format!("n has {} levels, plan has {}", n.len(), plan.len())));
    }
    let dim = 2 * n.iter().sum::<usize>();
    let q = opts.quad(dim);
    let family = level_family(plan, opts.radii, q.nodes)?;
    assignments(n, true)
        .into_iter()
        .map(|a| {
            let v = assignment_integral(plan, n, &a, &family, log_norm, &q, true)?;
            Ok((a, v.density))
        })
        .collect()
}

/// The bracketed-contour polynomial evaluated at `z` (length `m - 1`).
pub fn eval_d_n(
    plan: &ObservationPlan,
    n: &[usize],
    z: &[Complex64],
    log_norm: f64,
    opts: &SeriesOptions,
) -> Result<Complex64> {
    if z.len() + 1 != plan.len() {
        return Err(LppError::Shape(format!("need {} z values", plan.len() - 1)));
    }
    let coeffs = eval_d_n_coefficients(plan, n, log_norm, opts)?;
    Ok(coeffs
        .iter()
        .map(|(a, v)| {
            let mut c = v.to_complex() * a.multiplicity;
            for i in 0..z.len() {
                c *= z[i].powi((a.out_xi[i] + a.out_eta[i]) as i32);
            }
            c
        })
        .sum())
}

/// One term of the multi-level series, with its quadrature spread.
#[derive(Debug, Clone)]
pub struct TermValue {
    pub value: Complex64,
    pub spread: f64,
    pub warnings: Vec<Warning>,
}

/// The `n`-th term of the multi-level series, normalized by `exp(log_norm)`.
pub fn eval_q_n(plan: &ObservationPlan, n: &[usize], log_norm: f64, opts: &SeriesOptions) -> Result<TermValue> {
    if n.len() != plan.len() {
        return Err(LppError::Shape(format!("n has {} levels, plan has {}", n.len(), plan.len())));
    }
    if n.iter().any(|&k| k == 0) {
        return Ok(TermValue {
            value: zero(),
            spread: 0.0,
            warnings: vec![],
        });
    }
    let m = n.len();
    let total: usize = n.iter().sum();
    let dim = 2 * total;
    let q = opts.quad(dim);
    let family = level_family(plan, opts.radii, q.nodes)?;
    let sign = if (total + m - 1) % 2 == 0 { 1.0 } else { -1.0 };
    let mut sum = LogSum::default();
    let mut spread = 0.0;
    let mut scale: f64 = 0.0;
    let mut warnings = Vec::new();
    for a in assignments(n, false) {
        let v = assignment_integral(plan, n, &a, &family, log_norm, &q, true)?;
        let w = sign * a.multiplicity * a.z_factor;
        let term = v.density * LogComplex::from_real(w);
        spread += v.spread.unwrap_or(0.0) * term.abs();
        scale = scale.max(term.abs());
        warnings.extend(v.warnings);
        sum.push(term);
    }
    let value = sum.value().to_complex();
    check_real(value, scale)?;
    if sum.cancellation_ratio() < 1e-12 {
        warnings.push(Warning::Cancellation {
            ratio: sum.cancellation_ratio(),
        });
    }
    Ok(TermValue { value, spread, warnings })
}

/// Multi-indices in `N^m` with `|n| <= n_max`, by increasing `|n|`.
pub fn multi_indices(m: usize, n_max: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    for total in m..=n_max {
        let mut cur = vec![1usize; m];
        fn rec(pos: usize, left: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
            if pos + 1 == cur.len() {
                cur[pos] = 1 + left;
                out.push(cur.clone());
                return;
            }
            for extra in 0..=left {
                cur[pos] = 1 + extra;
                rec(pos + 1, left - extra, cur, out);
            }
        }
        rec(0, total - m, &mut cur, &mut out);
    }
    out
}

fn factorial_sq(n: &[usize]) -> f64 {
    n.iter()
        .map(|&k| (1..=k).map(|i| i as f64).product::<f64>())
        .product::<f64>()
        .powi(2)
}

/// Truncated multi-level series. Single-point plans use the determinant route.
pub fn eval_q(
    plan: &ObservationPlan,
    n_max: usize,
    log_norm: f64,
    opts: &SeriesOptions,
) -> Result<SeriesResult> {
    let m = plan.len();
    if n_max < m {
        return Err(LppError::Domain(format!("n_max {n_max} is below the number of levels {m}")));
    }
    if m == 1 {
        let sp = SinglePointOptions {
            n_max: Some(n_max),
            radii: match opts.radii {
                RadiusStrategy::Default => RadiusStrategy::Steepest { ratio: 1.12 },
                s => s,
            },
            nodes: opts.nodes.unwrap_or(128).max(64),
            halving: true,
        };
        let e = plan.last();
        let v = single_point(e.m, e.n, e.t, log_norm, &sp)?;
        return Ok(v.density);
    }
    let indices = multi_indices(m, n_max);
    let results: Vec<(Vec<usize>, Result<TermValue>, f64)> = indices
        .into_par_iter()
        .map(|n| {
            let dim = 2 * n.iter().sum::<usize>();
            let q = opts.quad(dim);
            let (kernel, _) = pi_n_kernel(&n, true);
            let dims = vec![q.nodes; kernel.vars];
            let scopes: Vec<Vec<usize>> = kernel.pairs.iter().map(|&(u, v, _)| vec![u, v]).collect();
            let (_, cost, peak) = crate::engine::plan_with_peak(&dims, &scopes);
            if cost > opts.max_cost || peak > crate::integral::MAX_FACTOR_ENTRIES {
                return (n, Err(LppError::Method { method: "series".into(), detail: format!("{dim}") }), cost);
            }
            let r = eval_q_n(plan, &n, log_norm, opts);
            (n, r, cost)
        })
        .collect();
    let mut value = 0.0;
    let mut included = Vec::new();
    let mut warnings = Vec::new();
    let mut quad = 0.0;
    let mut shells: Vec<f64> = vec![0.0; n_max + 1];
    for (n, r, _) in results {
        let dim = 2 * n.iter().sum::<usize>();
        match r {
            Ok(t) => {
                let v = t.value.re / factorial_sq(&n);
                shells[n.iter().sum::<usize>()] += v.abs();
                value += v;
                quad += t.spread / factorial_sq(&n);
                warnings.extend(t.warnings);
                included.push((n, v));
            }
            Err(LppError::Method { .. }) => {
                warnings.push(Warning::SkippedTerm { n, dimension: dim });
            }
            Err(e) => return Err(e),
        }
    }
    let last = shells[n_max];
    let prev = if n_max > m { shells[n_max - 1] } else { 0.0 };
    let tail_estimate = if n_max == m {
        f64::NAN
    } else if prev > 0.0 && last < prev {
        last * last / (prev - last)
    } else {
        last
    };
    if tail_estimate > 1e-3 * value.abs() {
        warnings.push(Warning::Truncation {
            tail: tail_estimate,
            value,
        });
    }
    Ok(SeriesResult {
        value,
        log_norm,
        n_max,
        included_terms: included,
        tail_estimate,
        quadrature_error: quad,
        warnings,
    })
}

/// Conditional probability with its error bar.
#[derive(Debug, Clone)]
pub struct ConditionalResult {
    pub value: f64,
    pub error: f64,
    pub numerator: SeriesResult,
    pub denominator: SeriesResult,
}

/// `P(L(M_i, N_i) > T_i, i < m | L(M_m, N_m) = T_m)` as a ratio of series
/// sharing one normalization.
pub fn conditional_probability(
    plan: &ObservationPlan,
    n_max: usize,
    params: Option<&ModelParams>,
    opts: &SeriesOptions,
) -> Result<ConditionalResult> {
    if !(2..=3).contains(&plan.len()) {
        return Err(LppError::Shape(format!("conditional ratio needs 2 or 3 points, got {}", plan.len())));
    }
    plan.check_hypotheses()?;
    let log_norm = match params {
        Some(p) if plan.scale.is_some() => plan_log_norm(plan, Some(p)),
        _ => {
            let e = plan.last();
            single_point_terms_scale(&e)
        }
    };
    let numerator = eval_q(plan, n_max, log_norm, opts)?;
    let den_plan = plan.conditioning_point()?;
    let denominator = eval_q(&den_plan, n_max.max(3), log_norm, opts)?;
    let den = denominator.value;
    let den_err = denominator.tail_estimate + denominator.quadrature_error;
    if den.abs() <= den_err || den == 0.0 {
        return Err(LppError::Division { value: den, err: den_err });
    }
    let value = numerator.value / den;
    let error = (numerator.tail_estimate + numerator.quadrature_error) / den.abs() + value.abs() * den_err / den.abs();
    Ok(ConditionalResult {
        value,
        error,
        numerator,
        denominator,
    })
}

/// A normalization for unscaled plans: the log-modulus ratio of the last
/// factor at its two real saddle points, or zero if they are complex.
pub fn single_point_terms_scale(e: &Exponents) -> f64 {
    match crate::scaling::critical_points(e.m as f64, e.n as f64, e.t) {
        Ok(cp) if cp.z_minus > -1.0 && cp.z_plus < 0.0 => {
            e.log_abs(Complex64::new(cp.z_minus, 0.0)) - e.log_abs(Complex64::new(cp.z_plus, 0.0))
        }
        _ => 0.0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exponential_and_gamma_densities() {
        for t in [0.5, 1.0, 2.0] {
            let (d, tail) = density_and_tail(1, 1, t, None).unwrap();
            assert!((d / (-t).exp() - 1.0).abs() < 1e-10, "t={t} d={d}");
            assert!((tail / (-t).exp() - 1.0).abs() < 1e-10);
            let (d21, _) = density_and_tail(2, 1, t, None).unwrap();
            let (d12, _) = density_and_tail(1, 2, t, None).unwrap();
            let want = t * (-t).exp();
            assert!((d21 / want - 1.0).abs() < 1e-10 && (d12 / want - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn z_weights_match_binomials() {
        for np in 0..4 {
            for nl in 1..4 {
                for j in 0..=(2 * nl) {
                    let (w, x) = (z_weight(j, np, nl), z_weight_exact(j, np, nl));
                    assert!((w - x).abs() < 1e-10, "{j} {np} {nl}: {w} vs {x}");
                }
            }
        }
        assert_eq!(z_weight_exact(2, 1, 1), 1.0);
        assert_eq!(z_weight_exact(1, 1, 1), 0.0);
    }

    #[test]
    fn unit_multiplicity_keeps_only_outer_circles() {
        let a = assignments(&[1, 1, 1], false);
        assert_eq!(a.len(), 1);
        assert_eq!(a[0].out_xi, vec![1, 1]);
        let b = assignments(&[1, 2, 1], false);
        assert_eq!(b.len(), 2);
        assert!(b.iter().all(|x| x.out_xi[0] == 2 && x.out_eta[0] == 2));
    }

    #[test]
    fn slots_round_trip() {
        for m in 1..=3 {
            for lvl in 1..=m {
                for outer in [false, true] {
                    assert_eq!(level_of_slot(m, slot_of(m, lvl, outer)), lvl);
                }
            }
        }
    }

    #[test]
    fn multi_index_shells() {
        let v = multi_indices(3, 5);
        assert_eq!(v.len(), 1 + 3 + 6);
        assert_eq!(v[0], vec![1, 1, 1]);
    }

    #[test]
    fn two_level_column_matches_convolution() {
        let (t1, t2) = (0.7, 1.9);
        let plan = ObservationPlan::new(vec![1, 1], vec![1, 2], vec![t1, t2]).unwrap();
        let o = SeriesOptions {
            nodes: Some(64),
            ..Default::default()
        };
        let r = eval_q(&plan, 4, 0.0, &o).unwrap();
        let want = (t2 - t1) * (-t2).exp();
        assert!((r.value / want - 1.0).abs() < 1e-6, "{} vs {want}", r.value);
    }

    #[test]
    fn unit_term_is_minus_the_list_integral() {
        use crate::integral::eval_i;
        use crate::lists::IndexList;
        let plan = ObservationPlan::new(vec![1, 2, 3], vec![1, 2, 3], vec![1.0, 2.5, 4.0]).unwrap();
        let o = SeriesOptions {
            nodes: Some(40),
            check: Some(ConvergenceCheck::None),
            ..Default::default()
        };
        let q = eval_q_n(&plan, &[1, 1, 1], 0.0, &o).unwrap();
        let list = IndexList::parse("123").unwrap();
        let outer = &default_radii(5)[2..];
        let fam = ContourFamily::from_radii(outer, outer, 40).unwrap();
        let i = eval_i(&list, &list, &plan, &fam, 0.0, &o.quad(6)).unwrap();
        let i = i.density.to_complex();
        assert!((q.value + i).norm() < 1e-10 * i.norm(), "{} vs {}", q.value, i);
    }

    #[test]
    fn empty_levels_have_vanishing_weights() {
        for n in [[0usize, 1, 1], [1, 0, 2], [2, 0, 1], [0, 2, 3]] {
            for a in assignments(&n, true) {
                let touches_empty = (1..3).any(|l| n[l - 1] == 0 && n[l] >= 1);
                if touches_empty {
                    assert!(a.z_factor.abs() < 1e-10, "{n:?} {a:?}");
                }
            }
        }
    }

    #[test]
    fn transposed_points_share_a_density() {
        for (m, n) in [(2, 3), (1, 3), (3, 2)] {
            for t in [1.0, 4.0] {
                let (a, _) = density_and_tail(m, n, t, None).unwrap();
                let (b, _) = density_and_tail(n, m, t, None).unwrap();
                assert!((a - b).abs() < 1e-10 * a.abs().max(1e-300));
            }
        }
    }

    #[test]
    fn densities_are_nonnegative_on_a_grid() {
        for m in 1..=3 {
            for n in 1..=3 {
                for k in 0..40 {
                    let t = 0.1 + 0.5 * k as f64;
                    let (d, tail) = density_and_tail(m, n, t, None).unwrap();
                    assert!(d >= -1e-9 && tail >= -1e-9, "({m},{n},{t}) {d} {tail}");
                }
            }
        }
    }

    #[test]
    fn tails_match_integrated_densities() {
        let (_, tail0) = density_and_tail(2, 2, 1e-9, None).unwrap();
        assert!((tail0 - 1.0).abs() < 1e-6);
        let (_, tail) = density_and_tail(2, 2, 1.5, None).unwrap();
        let integrated = tail_by_integration(2, 2, 1.5).unwrap();
        assert!((tail - integrated).abs() < 1e-8, "{tail} vs {integrated}");
    }

    #[test]
    fn normalization_telescopes() {
        let p = ModelParams::new(1.0, 1.0, 5.0).unwrap();
        assert!((z_normalization(&p, 1.0).log_z.exp() - 0.73255).abs() < 5e-5);
        for l in [1.0, 3.7, 12.0] {
            let ma = (p.a * l).ceil() as i64;
            let nb = (p.b * l).ceil() as i64;
            let e = Exponents { m: ma, n: nb, t: p.ell * l };
            let cp = crate::scaling::critical_points(p.a, p.b, p.ell).unwrap();
            let ratio = e.log_abs(Complex64::new(cp.z_minus, 0.0)) - e.log_abs(Complex64::new(cp.z_plus, 0.0));
            assert!((ratio - z_normalization(&p, l).log_z).abs() < 1e-12 * (1.0 + ratio.abs()));
        }
    }
}
