//! Numerical verification of the contour-deformation identities between list
//! integrals, and numerical resolution of the merge signs of the rewrite rule.

use crate::error::{LppError, Result, Warning};
use crate::finite::{eval_q_n, plan_log_norm, RadiusStrategy, SeriesOptions};
use crate::integral::{eval_i, family_for_lists, ConvergenceCheck, QuadOptions, RadiiMode};
use crate::lists::{list_rewrite, IndexList, SignMarker};
use crate::logc::LogComplex;
use crate::plan::ObservationPlan;
use crate::scaling::{classify_region, ModelParams, RegionQuery, RegionTag};
use num_complex::Complex64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum IdentityId {
    Qq111A,
    Qq111B,
    Qq111C,
    Qq111D,
    Qq121,
}

impl IdentityId {
    pub const ALL: [IdentityId; 5] = [
        IdentityId::Qq111A,
        IdentityId::Qq111B,
        IdentityId::Qq111C,
        IdentityId::Qq111D,
        IdentityId::Qq121,
    ];

    pub fn name(self) -> &'static str {
        match self {
            IdentityId::Qq111A => "QQ111-a",
            IdentityId::Qq111B => "QQ111-b",
            IdentityId::Qq111C => "QQ111-c",
            IdentityId::Qq111D => "QQ111-d",
            IdentityId::Qq121 => "QQ121",
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        IdentityId::ALL
            .into_iter()
            .find(|id| id.name().eq_ignore_ascii_case(text.trim()))
            .ok_or_else(|| LppError::Domain(format!("unknown identity '{text}'")))
    }

    /// Regions whose critical-point ordering the deformation is built for.
    pub fn regions(self) -> &'static [RegionTag] {
        match self {
            IdentityId::Qq111A => &[RegionTag::R1, RegionTag::R2],
            IdentityId::Qq111B => &[RegionTag::R3, RegionTag::R4],
            IdentityId::Qq111C => &[RegionTag::R5],
            IdentityId::Qq111D => &[RegionTag::R6, RegionTag::R7],
            IdentityId::Qq121 => &[RegionTag::R6, RegionTag::R7],
        }
    }

    pub fn applies_to(self, tag: RegionTag) -> bool {
        self.regions().contains(&tag)
    }

    /// Integral dimension of the largest term.
    pub fn dimension(self) -> usize {
        match self {
            IdentityId::Qq121 => 8,
            _ => 6,
        }
    }

    /// Residual tolerance tier.
    pub fn tolerance(self) -> f64 {
        if self.dimension() <= 6 {
            1e-4
        } else {
            1e-2
        }
    }

    /// Right-hand side as `(coefficient, upper list, lower list)`.
    pub fn terms(self) -> Vec<(f64, &'static str, &'static str)> {
        match self {
            IdentityId::Qq111A => vec![(1.0, "231", "123"), (1.0, "3(12)", "123"), (1.0, "(123)", "123")],
            IdentityId::Qq111B => vec![
                (1.0, "321", "123"),
                (1.0, "(23)1", "123"),
                (1.0, "3(12)", "123"),
                (1.0, "(123)", "123"),
            ],
            IdentityId::Qq111C => vec![(1.0, "312", "123"), (1.0, "(23)1", "123"), (1.0, "(123)", "123")],
            IdentityId::Qq111D => vec![
                (1.0, "312", "213"),
                (1.0, "(23)1", "213"),
                (1.0, "(123)", "213"),
                (-1.0, "312", "(12)3"),
                (-1.0, "(23)1", "(12)3"),
                (1.0, "(123)", "(12)3"),
            ],
            IdentityId::Qq121 => vec![
                (2.0, "3122", "2231"),
                (2.0, "3122", "2(12)3"),
                (-2.0, "(23)12", "2231"),
                (-2.0, "(123)2", "2231"),
                (-2.0, "3122", "23(12)"),
                (4.0, "(23)12", "23(12)"),
                (-4.0, "(123)2", "23(12)"),
                (-2.0, "3122", "2(23)1"),
                (-4.0, "(23)12", "2(23)1"),
                (-4.0, "(123)2", "2(23)1"),
                (-2.0, "3122", "(23)(12)"),
                (-4.0, "(23)12", "(23)(12)"),
                (4.0, "(123)2", "(23)(12)"),
            ],
        }
    }
}

impl std::fmt::Display for IdentityId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Quadrature settings shared by both sides of an identity.
#[derive(Debug, Clone, PartialEq)]
pub struct IdentityOptions {
    pub r1: f64,
    pub r2: f64,
    pub radii: RadiiMode,
    /// Nodes per circle; `None` picks by dimension.
    pub nodes: Option<usize>,
    pub check: ConvergenceCheck,
    pub max_cost: f64,
}

impl Default for IdentityOptions {
    fn default() -> Self {
        IdentityOptions {
            r1: 0.0,
            r2: 0.0,
            radii: RadiiMode::Geometric { inner: 0.05, ratio: 1.75 },
            nodes: None,
            check: ConvergenceCheck::None,
            max_cost: 4e10,
        }
    }
}

impl IdentityOptions {
    fn quad(&self, dim: usize) -> QuadOptions {
        let mut q = QuadOptions::for_dimension(dim);
        if let Some(n) = self.nodes {
            q.nodes = n;
        }
        q.check = self.check;
        q.max_cost = self.max_cost;
        q
    }
}

#[derive(Debug, Clone)]
pub struct TermReport {
    pub coefficient: f64,
    pub upper: String,
    pub lower: String,
    pub value: f64,
}

#[derive(Debug, Clone)]
pub struct IdentityReport {
    pub id: IdentityId,
    pub region: RegionTag,
    pub applicable: bool,
    pub scale: f64,
    pub lhs: f64,
    pub rhs: f64,
    pub residual: f64,
    pub tolerance: f64,
    pub terms: Vec<TermReport>,
    pub warnings: Vec<Warning>,
}

impl IdentityReport {
    pub fn passed(&self) -> bool {
        self.residual < self.tolerance
    }
}

pub fn relative_residual(lhs: f64, rhs: f64) -> f64 {
    let scale = lhs.abs().max(rhs.abs());
    if scale == 0.0 {
        0.0
    } else {
        (lhs - rhs).abs() / scale
    }
}

fn list_value(
    upper: &IndexList,
    lower: &IndexList,
    plan: &ObservationPlan,
    log_norm: f64,
    opts: &IdentityOptions,
    warnings: &mut Vec<Warning>,
) -> Result<Complex64> {
    let dim = upper.len() + lower.len();
    let q = opts.quad(dim);
    let family = family_for_lists(upper, lower, plan, &opts.radii, q.nodes)?;
    let v = eval_i(upper, lower, plan, &family, log_norm, &q)?;
    warnings.extend(v.warnings);
    Ok(v.density.to_complex())
}

/// Evaluates both sides of an identity on the scaled plan of `q` at scale `l`.
pub fn verify_identity(
    id: IdentityId,
    p: &ModelParams,
    q: &RegionQuery,
    l: f64,
    opts: &IdentityOptions,
) -> Result<IdentityReport> {
    let label = classify_region(p, q)?;
    let plan = ObservationPlan::scaled_two_point(p, &label.query, opts.r1, opts.r2, l)?;
    let log_norm = plan_log_norm(&plan, Some(p));
    let mut warnings = Vec::new();
    let lhs = match id {
        IdentityId::Qq121 => {
            let so = SeriesOptions {
                radii: match opts.radii {
                    RadiiMode::Steepest { ratio } => RadiusStrategy::Steepest { ratio },
                    RadiiMode::Geometric { inner, ratio } => RadiusStrategy::Geometric { inner, ratio },
                    _ => RadiusStrategy::Default,
                },
                nodes: Some(opts.quad(8).nodes),
                check: Some(opts.check),
                max_cost: opts.max_cost,
            };
            let t = eval_q_n(&plan, &[1, 2, 1], log_norm, &so)?;
            warnings.extend(t.warnings);
            t.value
        }
        _ => {
            let l123 = IndexList::parse("123")?;
            list_value(&l123, &l123, &plan, log_norm, opts, &mut warnings)?
        }
    };
    let mut rhs = Complex64::new(0.0, 0.0);
    let mut terms = Vec::new();
    for (c, up, lo) in id.terms() {
        let upper = IndexList::parse(up)?;
        let lower = IndexList::parse(lo)?;
        let v = list_value(&upper, &lower, &plan, log_norm, opts, &mut warnings)?;
        rhs += v * c;
        terms.push(TermReport {
            coefficient: c,
            upper: up.to_string(),
            lower: lo.to_string(),
            value: v.re,
        });
    }
    let residual = relative_residual(lhs.re, rhs.re);
    Ok(IdentityReport {
        id,
        region: label.tag,
        applicable: id.applies_to(label.tag),
        scale: l,
        lhs: lhs.re,
        rhs: rhs.re,
        residual,
        tolerance: id.tolerance(),
        terms,
        warnings,
    })
}

/// A point pair well inside the given region (labels already ordered).
pub fn region_representative(p: &ModelParams, tag: RegionTag) -> Result<RegionQuery> {
    let mut best: Option<(f64, RegionQuery)> = None;
    let lo_ratio = 1.0 / p.m_slope;
    for i in 1..10 {
        let x1 = 0.1 * i as f64;
        for j in 1..10 {
            let y1 = x1 * (lo_ratio + (1.0 - lo_ratio) * j as f64 / 10.0);
            for k in 0..48 {
                let angle = std::f64::consts::PI * k as f64 / 24.0;
                let step = 0.15;
                let x2 = x1 + step * angle.cos();
                let y2 = y1 + step * angle.sin();
                let q = RegionQuery::new(x1, y1, x2, y2);
                if q.validate(p).is_err() {
                    continue;
                }
                let Ok(label) = classify_region(p, &q) else { continue };
                if label.tag != tag || label.swapped {
                    continue;
                }
                let score = region_margin(p, &q);
                if best.as_ref().is_none_or(|b| score > b.0) {
                    best = Some((score, q));
                }
            }
        }
    }
    best.map(|b| b.1)
        .ok_or_else(|| LppError::Domain(format!("no representative found for {tag}")))
}

/// Distance (in slope angle) of the connecting segment from the region cuts,
/// combined with the distance of both points from the wedge edges.
fn region_margin(p: &ModelParams, q: &RegionQuery) -> f64 {
    let dx = q.x2 - q.x1;
    let dy = q.y2 - q.y1;
    let theta = dy.atan2(dx);
    let cuts = [
        -1.0 / p.mu,
        0.0,
        1.0 / p.m_slope,
        q.y1 / q.x1,
        1.0,
        (1.0 - q.y1) / (1.0 - q.x1),
    ];
    let slope_margin = cuts
        .iter()
        .flat_map(|&c| {
            let a = c.atan();
            [a, a + std::f64::consts::PI, a - std::f64::consts::PI]
        })
        .map(|a| (theta - a).abs())
        .fold(f64::INFINITY, f64::min);
    let wedge = |x: f64, y: f64| {
        let r = y / x;
        (r - 1.0 / p.m_slope).min(1.0 - r).min(x).min(1.0 - x).min(y).min(1.0 - y)
    };
    slope_margin.min(3.0 * wedge(q.x1, q.y1)).min(3.0 * wedge(q.x2, q.y2))
}

/// A rewrite of one side of a list integral with the merge signs fitted.
#[derive(Debug, Clone)]
pub struct ResolvedRewrite {
    pub terms: Vec<(i64, IndexList)>,
    pub residual: f64,
    pub runner_up: f64,
}

/// Which list of `I^upper_lower` a rewrite acts on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Upper,
    Lower,
}

/// Applies `list_rewrite` to one side and fixes every unknown sign by
/// minimizing the residual over all sign patterns.
#[allow(clippy::too_many_arguments)]
pub fn resolve_rewrite_signs(
    upper: &IndexList,
    lower: &IndexList,
    side: Side,
    block: usize,
    plan: &ObservationPlan,
    log_norm: f64,
    opts: &IdentityOptions,
) -> Result<ResolvedRewrite> {
    let target = if side == Side::Upper { upper } else { lower };
    let rewrites = list_rewrite(target, block)?;
    let mut warnings = Vec::new();
    let lhs = list_value(upper, lower, plan, log_norm, opts, &mut warnings)?;
    let mut values = Vec::with_capacity(rewrites.len());
    for r in &rewrites {
        let (u, l) = match side {
            Side::Upper => (&r.list, lower),
            Side::Lower => (upper, &r.list),
        };
        let v = list_value(u, l, plan, log_norm, opts, &mut warnings)?;
        values.push(v * r.coefficient as f64);
    }
    let unknown: Vec<usize> = (0..rewrites.len()).filter(|&i| rewrites[i].sign == SignMarker::Unknown).collect();
    let mut scored: Vec<(f64, Vec<i64>)> = Vec::new();
    for mask in 0..(1u32 << unknown.len()) {
        let mut signs: Vec<i64> = rewrites
            .iter()
            .map(|r| if r.sign == SignMarker::Minus { -1 } else { 1 })
            .collect();
        for (bit, &idx) in unknown.iter().enumerate() {
            if mask & (1 << bit) != 0 {
                signs[idx] = -1;
            }
        }
        let rhs: Complex64 = values.iter().zip(&signs).map(|(v, &s)| v * s as f64).sum();
        scored.push((relative_residual(lhs.re, rhs.re), signs));
    }
    scored.sort_by(|a, b| a.0.total_cmp(&b.0));
    let (residual, signs) = scored[0].clone();
    let runner_up = scored.get(1).map_or(f64::INFINITY, |s| s.0);
    Ok(ResolvedRewrite {
        terms: rewrites
            .iter()
            .zip(&signs)
            .map(|(r, &s)| (s * r.coefficient as i64, r.list.clone()))
            .collect(),
        residual,
        runner_up,
    })
}

/// The leading list integral normalized for comparison with its bridge
/// limit: `-(2 pi L D / sqrt(ab)) I^(123)_123 / Z_L`.
pub fn normalized_leading_integral(
    p: &ModelParams,
    q: &RegionQuery,
    l: f64,
    r1: f64,
    r2: f64,
    opts: &IdentityOptions,
) -> Result<f64> {
    let label = classify_region(p, q)?;
    let plan = ObservationPlan::scaled_two_point(p, &label.query, r1, r2, l)?;
    let log_norm = plan_log_norm(&plan, Some(p));
    let upper = IndexList::parse("(123)")?;
    let lower = IndexList::parse("123")?;
    let mut w = Vec::new();
    let v = list_value(&upper, &lower, &plan, log_norm, opts, &mut w)?;
    let d = p.d;
    Ok(-(2.0 * std::f64::consts::PI * l * d / (p.a * p.b).sqrt()) * v.re)
}

/// `LogComplex` view of a value, for reporting in log scale.
pub fn log_view(v: f64) -> LogComplex {
    LogComplex::from_real(v)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_tables_are_consistent() {
        for id in IdentityId::ALL {
            assert_eq!(IdentityId::parse(id.name()).unwrap(), id);
            for (_, up, lo) in id.terms() {
                let u = IndexList::parse(up).unwrap();
                let l = IndexList::parse(lo).unwrap();
                let want = if id == IdentityId::Qq121 { [1, 2, 1] } else { [1, 1, 1] };
                assert_eq!(u.multiplicity(), want, "{up}");
                assert_eq!(l.multiplicity(), want, "{lo}");
            }
        }
        assert!(IdentityId::parse("QQ999").is_err());
    }

    #[test]
    fn representatives_land_in_their_regions() {
        let p = ModelParams::new(1.0, 1.0, 5.0).unwrap();
        for k in 1..=7 {
            let tag = RegionTag::from_index(k).unwrap();
            let q = region_representative(&p, tag).unwrap();
            let label = classify_region(&p, &q).unwrap();
            assert_eq!(label.tag, tag);
            assert!(!label.swapped);
        }
    }

    fn quick_opts() -> IdentityOptions {
        IdentityOptions { nodes: Some(32), ..Default::default() }
    }

    #[test]
    fn first_deformation_holds_in_its_regions() {
        let p = ModelParams::new(1.0, 1.0, 5.0).unwrap();
        for tag in IdentityId::Qq111A.regions() {
            let q = region_representative(&p, *tag).unwrap();
            let r = verify_identity(IdentityId::Qq111A, &p, &q, 6.0, &quick_opts()).unwrap();
            assert!(r.applicable);
            assert!(r.residual < 1e-6, "{tag:?}: {}", r.residual);
        }
    }

    #[test]
    fn rewrite_signs_are_recovered_from_values() {
        let p = ModelParams::new(1.0, 1.0, 5.0).unwrap();
        let q = region_representative(&p, RegionTag::R3).unwrap();
        let plan = ObservationPlan::scaled_two_point(&p, &q, 0.0, 0.0, 6.0).unwrap();
        let log_norm = plan_log_norm(&plan, Some(&p));
        let l123 = IndexList::parse("123").unwrap();
        let merged = IndexList::parse("(12)3").unwrap();
        for (side, sign) in [(Side::Upper, 1), (Side::Lower, -1)] {
            let r = resolve_rewrite_signs(&l123, &l123, side, 0, &plan, log_norm, &quick_opts()).unwrap();
            assert!(r.residual < 1e-6, "{side:?}: {}", r.residual);
            assert!(r.runner_up > 1e-2, "{side:?}: ambiguous fit {}", r.runner_up);
            assert!(r.terms.contains(&(sign, merged.clone())), "{side:?}: {:?}", r.terms);
        }
    }
}
