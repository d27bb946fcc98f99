use crate::cauchy::{pi_sigma_tau_kernel, PairKernel};
use crate::contour::{default_radii, fit_family, geometric_radii, Contour, ContourFamily};
use crate::engine::{Dual, Network, Scalar};
use crate::error::{LppError, Result, Warning};
use crate::lists::IndexList;
use crate::logc::LogComplex;
use crate::plan::{Exponents, ObservationPlan};
use crate::scaling::critical_points;
use num_complex::Complex64;

/// One integration variable: its circle and the exponents of its factor.
/// `reciprocal` marks the variables that carry `1/f`.
#[derive(Debug, Clone, Copy)]
pub struct VariableSpec {
    pub contour: Contour,
    pub exponents: Exponents,
    pub reciprocal: bool,
}

/// How to pick node-convergence evidence.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ConvergenceCheck {
    None,
    /// Compare against the same rule with half the nodes.
    Halving,
    /// Compare `k` rotated copies of the grid.
    Rotations(usize),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadOptions {
    pub nodes: usize,
    pub check: ConvergenceCheck,
    pub abs_bound: bool,
    /// Refuse networks whose contraction exceeds this many multiply-adds.
    pub max_cost: f64,
}

impl Default for QuadOptions {
    fn default() -> Self {
        QuadOptions {
            nodes: 32,
            check: ConvergenceCheck::None,
            abs_bound: false,
            max_cost: 2e10,
        }
    }
}

impl QuadOptions {
    /// Node counts by total dimension: 32 up to 4, 16 up to 6, 10 beyond.
    pub fn for_dimension(dim: usize) -> Self {
        let nodes = match dim {
            0..=4 => 32,
            5..=6 => 16,
            _ => 10,
        };
        let check = if dim <= 6 {
            ConvergenceCheck::Halving
        } else {
            ConvergenceCheck::Rotations(3)
        };
        QuadOptions {
            nodes,
            check,
            ..Default::default()
        }
    }
}

/// Largest intermediate table the contraction may allocate.
pub const MAX_FACTOR_ENTRIES: f64 = (1u64 << 25) as f64;

/// A quadrature value with its diagnostics. `density` includes the linear
/// factor of the kernel (when present); `plain` omits it.
#[derive(Debug, Clone)]
pub struct KernelIntegral {
    pub density: LogComplex,
    pub plain: LogComplex,
    pub abs_log: Option<f64>,
    pub spread: Option<f64>,
    pub min_pole_distance: f64,
    pub cost: f64,
    pub warnings: Vec<Warning>,
}

fn unary_weights(spec: &VariableSpec, rotation: f64) -> Result<(Vec<Complex64>, Vec<LogComplex>)> {
    let pts = spec.contour.points(rotation);
    let mut nodes = Vec::with_capacity(pts.len());
    let mut vals = Vec::with_capacity(pts.len());
    for (z, w) in pts {
        let f = spec.exponents.eval(z)?;
        let g = if spec.reciprocal { f.recip() } else { f };
        nodes.push(z);
        vals.push(g * LogComplex::from_complex(w));
    }
    Ok((nodes, vals))
}

struct Prepared {
    nodes: Vec<Vec<Complex64>>,
    unary: Vec<Vec<Complex64>>,
    log_scale: f64,
    pairs: Vec<(usize, usize, Vec<Complex64>)>,
    min_pole_distance: f64,
}

fn prepare(kernel: &PairKernel, vars: &[VariableSpec], rotation: f64) -> Result<Prepared> {
    let mut nodes = Vec::with_capacity(vars.len());
    let mut unary = Vec::with_capacity(vars.len());
    let mut log_scale = 0.0;
    for spec in vars {
        let (z, vals) = unary_weights(spec, rotation)?;
        let peak = vals.iter().map(|v| v.log_mag).fold(f64::NEG_INFINITY, f64::max);
        log_scale += peak;
        unary.push(vals.iter().map(|v| v.scale_log(-peak).to_complex()).collect());
        nodes.push(z);
    }
    let mut min_pole_distance = f64::INFINITY;
    let mut pairs = Vec::with_capacity(kernel.pairs.len());
    for &(u, v, e) in &kernel.pairs {
        let mut data = Vec::with_capacity(nodes[u].len() * nodes[v].len());
        for &xu in &nodes[u] {
            for &xv in &nodes[v] {
                let d = xu - xv;
                let r = d.norm();
                if e < 0 {
                    min_pole_distance = min_pole_distance.min(r);
                    if r == 0.0 {
                        return Err(LppError::Pole(format!("variables {u} and {v} share a node")));
                    }
                }
                data.push(if e == 0 { Complex64::new(1.0, 0.0) } else { d.powi(e) });
            }
        }
        pairs.push((u, v, data));
    }
    Ok(Prepared {
        nodes,
        unary,
        log_scale,
        pairs,
        min_pole_distance,
    })
}

fn build_network<R: Scalar>(
    prep: &Prepared,
    kernel: &PairKernel,
    lift: impl Fn(Complex64, Complex64) -> R,
) -> Network<R> {
    let dims: Vec<usize> = prep.nodes.iter().map(|n| n.len()).collect();
    let mut net = Network::new(dims);
    for v in 0..prep.nodes.len() {
        let c = kernel.linear.as_ref().map_or(0.0, |c| c[v]);
        let data = prep.unary[v]
            .iter()
            .zip(&prep.nodes[v])
            .map(|(&g, &z)| lift(g, g * z * c))
            .collect();
        net.add_unary(v, data);
    }
    for (u, v, data) in &prep.pairs {
        net.add_pair(*u, *v, data.iter().map(|&d| lift(d, Complex64::new(0.0, 0.0))).collect());
    }
    net
}

fn single_pass(kernel: &PairKernel, vars: &[VariableSpec], rotation: f64, opts: &QuadOptions) -> Result<KernelIntegral> {
    if vars.len() != kernel.vars {
        return Err(LppError::Shape(format!(
            "kernel has {} variables but {} contours were given",
            kernel.vars,
            vars.len()
        )));
    }
    let prep = prepare(kernel, vars, rotation)?;
    let net = build_network(&prep, kernel, |re, eps| Dual { re, eps });
    let (_, cost) = net.plan();
    if cost > opts.max_cost || net.peak_size() > MAX_FACTOR_ENTRIES {
        return Err(LppError::Method {
            method: "tensor quadrature".into(),
            detail: format!("{cost:.3e} operations (cap {:.3e})", opts.max_cost),
        });
    }
    let out = net.contract();
    let scale = prep.log_scale + out.log_scale;
    let sign = LogComplex::from_real(kernel.sign);
    let density = if kernel.linear.is_some() { out.value.eps } else { out.value.re };
    let abs_log = if opts.abs_bound {
        let anet = build_network(&prep, kernel, |re: Complex64, eps: Complex64| Dual {
            re: re.norm(),
            eps: eps.norm(),
        });
        let a = anet.contract();
        let v = if kernel.linear.is_some() { a.value.eps } else { a.value.re };
        Some(v.ln() + a.log_scale + prep.log_scale)
    } else {
        None
    };
    Ok(KernelIntegral {
        density: sign * LogComplex::from_complex(density).scale_log(scale),
        plain: sign * LogComplex::from_complex(out.value.re).scale_log(scale),
        abs_log,
        spread: None,
        min_pole_distance: prep.min_pole_distance,
        cost,
        warnings: Vec::new(),
    })
}

fn relative_gap(a: LogComplex, b: LogComplex) -> f64 {
    let d = a.sub(&b);
    if a.is_zero() && b.is_zero() {
        return 0.0;
    }
    (d.log_mag - a.log_mag.max(b.log_mag)).exp()
}

/// Integrates `kernel * prod_v f_v(x_v)^{+-1}` over the product of circles,
/// dividing by `exp(log_norm)`.
pub fn integrate_kernel(
    kernel: &PairKernel,
    vars: &[VariableSpec],
    log_norm: f64,
    opts: &QuadOptions,
) -> Result<KernelIntegral> {
    let with_nodes = |q: usize| -> Vec<VariableSpec> {
        vars.iter()
            .map(|s| VariableSpec {
                contour: Contour { nodes: q, ..s.contour },
                ..*s
            })
            .collect()
    };
    let main_vars = with_nodes(opts.nodes);
    let mut res = single_pass(kernel, &main_vars, 0.0, opts)?;
    let mut spread = None;
    match opts.check {
        ConvergenceCheck::None => {}
        ConvergenceCheck::Halving => {
            let half = (opts.nodes / 2).max(2) & !1;
            let other = single_pass(kernel, &with_nodes(half), 0.0, opts)?;
            spread = Some(relative_gap(res.density, other.density).max(relative_gap(res.plain, other.plain)));
        }
        ConvergenceCheck::Rotations(k) => {
            let mut worst: f64 = 0.0;
            for r in 1..k.max(1) {
                let other = single_pass(kernel, &main_vars, r as f64 / k as f64, opts)?;
                worst = worst.max(relative_gap(res.density, other.density));
            }
            spread = Some(worst);
        }
    }
    res.spread = spread;
    res.density = res.density.scale_log(-log_norm);
    res.plain = res.plain.scale_log(-log_norm);
    res.abs_log = res.abs_log.map(|a| a - log_norm);
    if res.min_pole_distance < 1e-6 {
        res.warnings.push(Warning::PoleProximity {
            min_distance: res.min_pole_distance,
        });
    }
    if let Some(a) = res.abs_log {
        let ratio = (res.density.log_mag - a).exp();
        if ratio < 1e-12 {
            res.warnings.push(Warning::Cancellation { ratio });
        }
    }
    Ok(res)
}

/// Saddle-point radius targets for one factor: `(xi radius, eta radius)`.
pub fn steepest_targets(e: &Exponents) -> (f64, f64) {
    let fallback = (0.3, 0.3);
    if e.m == 0 || e.n == 0 {
        return fallback;
    }
    let (m, n, t) = (e.m as f64, e.n as f64, e.t);
    match critical_points(m, n, t) {
        Ok(cp) => {
            let inside = |z: f64| z > -1.0 && z < 0.0;
            let xi = [(cp.z_minus, cp.g2_minus), (cp.z_plus, cp.g2_plus)]
                .into_iter()
                .find(|&(z, g2)| inside(z) && g2 > 0.0)
                .map(|(z, _)| 1.0 + z);
            let eta = [(cp.z_minus, cp.g2_minus), (cp.z_plus, cp.g2_plus)]
                .into_iter()
                .find(|&(z, g2)| inside(z) && g2 < 0.0)
                .map(|(z, _)| -z);
            (xi.unwrap_or(fallback.0), eta.unwrap_or(fallback.1))
        }
        Err(_) => {
            if t <= 0.0 {
                return fallback;
            }
            // Complex conjugate saddles: roots of t z^2 + (t + n - m) z + n.
            let re = -(t + n - m) / (2.0 * t);
            let im = ((n / t) - re * re).max(0.0).sqrt();
            let z = Complex64::new(re, im);
            ((z + 1.0).norm(), z.norm())
        }
    }
}

/// Strategy for circle radii.
#[derive(Debug, Clone, PartialEq)]
pub enum RadiiMode {
    /// `0.10 + 0.05 k` on both sides.
    Default,
    /// Through the saddle points of each factor, nested with the given ratio.
    Steepest { ratio: f64 },
    /// `inner * ratio^k` on both sides.
    Geometric { inner: f64, ratio: f64 },
    /// Explicit radii, inside to outside.
    Explicit { xi: Vec<f64>, eta: Vec<f64> },
}

pub fn family_for_lists(
    sigma: &IndexList,
    tau: &IndexList,
    plan: &ObservationPlan,
    mode: &RadiiMode,
    nodes: usize,
) -> Result<ContourFamily> {
    match mode {
        RadiiMode::Default => ContourFamily::from_radii(&default_radii(sigma.len()), &default_radii(tau.len()), nodes),
        RadiiMode::Geometric { inner, ratio } => ContourFamily::from_radii(
            &geometric_radii(sigma.len(), *inner, *ratio)?,
            &geometric_radii(tau.len(), *inner, *ratio)?,
            nodes,
        ),
        RadiiMode::Explicit { xi, eta } => ContourFamily::from_radii(xi, eta, nodes),
        RadiiMode::Steepest { ratio } => {
            let xi: Vec<f64> = sigma.entries.iter().map(|&s| steepest_targets(&plan.symbol(s)).0).collect();
            let eta: Vec<f64> = tau.entries.iter().map(|&s| steepest_targets(&plan.symbol(s)).1).collect();
            fit_family(&xi, &eta, *ratio, nodes)
        }
    }
}

/// The list integral, divided by `exp(log_norm)`. Position `k` of each list
/// integrates over the `k`-th circle of its side.
pub fn eval_i(
    sigma: &IndexList,
    tau: &IndexList,
    plan: &ObservationPlan,
    family: &ContourFamily,
    log_norm: f64,
    opts: &QuadOptions,
) -> Result<KernelIntegral> {
    if plan.len() != 3 {
        return Err(LppError::Shape(format!("list integrals need three levels, plan has {}", plan.len())));
    }
    if family.xi.len() != sigma.len() || family.eta.len() != tau.len() {
        return Err(LppError::Shape(format!(
            "{} / {} circles for lists of length {} / {}",
            family.xi.len(),
            family.eta.len(),
            sigma.len(),
            tau.len()
        )));
    }
    family.validate()?;
    let kernel = pi_sigma_tau_kernel(sigma, tau)?;
    let mut vars = Vec::with_capacity(kernel.vars);
    for (k, &s) in sigma.entries.iter().enumerate() {
        vars.push(VariableSpec {
            contour: family.xi[k],
            exponents: plan.symbol(s),
            reciprocal: false,
        });
    }
    for (k, &s) in tau.entries.iter().enumerate() {
        vars.push(VariableSpec {
            contour: family.eta[k],
            exponents: plan.symbol(s),
            reciprocal: true,
        });
    }
    integrate_kernel(&kernel, &vars, log_norm, opts)
}
