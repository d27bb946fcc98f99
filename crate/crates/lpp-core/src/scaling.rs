//! Closed-form scaling constants, the conditional law-of-large-numbers surface,
//! region classification for pairs of observation points, and critical points
//! of the exponent functions that drive every contour deformation.

use crate::error::{LppError, Result};

/// Model triple `(a, b, ell)` together with its derived constants.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelParams {
    pub a: f64,
    pub b: f64,
    pub ell: f64,
    pub d: f64,
    pub m_slope: f64,
    pub mu: f64,
    pub sigma: f64,
    pub c_plus: f64,
    pub c_minus: f64,
    pub j_rate: f64,
}

impl ModelParams {
    pub fn new(a: f64, b: f64, ell: f64) -> Result<Self> {
        if !(a.is_finite() && b.is_finite() && ell.is_finite()) || a <= 0.0 || b <= 0.0 {
            return Err(LppError::Domain(format!(
                "speeds must be positive and finite, got a={a}, b={b}, ell={ell}"
            )));
        }
        let lln = unconditional_lln(a, b, 1.0, 1.0);
        if ell <= lln {
            return Err(LppError::Domain(format!(
                "ell={ell} must exceed the typical value (sqrt a + sqrt b)^2 = {lln}"
            )));
        }
        let d = discriminant(a, b, ell);
        if d <= 0.0 {
            return Err(LppError::Domain(format!(
                "discriminant {d} is not positive (ell too close to {lln})"
            )));
        }
        let sd = d.sqrt();
        let m_slope = (ell - a - b + sd) / (ell - a - b - sd);
        let mu = (ell - a + b + sd) / (ell + a - b - sd);
        let spread = (a + b) * ell - (a - b) * (a - b);
        let sigma = spread.sqrt() * d.powf(0.25) / (2.0 * (a * b).sqrt());
        let tilt = (a - b) * sd / spread;
        let mut p = ModelParams {
            a,
            b,
            ell,
            d,
            m_slope,
            mu,
            sigma,
            c_plus: (1.0 + tilt).sqrt(),
            c_minus: (1.0 - tilt).sqrt(),
            j_rate: 0.0,
        };
        p.j_rate = rate_function(&p);
        Ok(p)
    }

    pub fn sqrt_d(&self) -> f64 {
        self.d.sqrt()
    }

    /// Larger critical point shared by all exponent functions of the two-point problem.
    pub fn z_c(&self) -> f64 {
        -(self.ell - self.a + self.b - self.sqrt_d()) / (2.0 * self.ell)
    }

    /// Smaller critical point of the master exponent.
    pub fn z_c_minus(&self) -> f64 {
        -(self.ell - self.a + self.b + self.sqrt_d()) / (2.0 * self.ell)
    }

    /// Linear coefficient of the conditional mean at a point: `h(x, y)` in the lower cone.
    pub fn mean_coefficient(&self, x: f64, y: f64) -> f64 {
        let sd = self.sqrt_d();
        0.5 * (x * (self.ell + self.a - self.b - sd) + y * (self.ell - self.a + self.b + sd))
    }

    /// Correlation coefficient of the two bridges driving the diagonal limit.
    pub fn bridge_tilt(&self) -> f64 {
        0.5 * (self.c_plus * self.c_plus - self.c_minus * self.c_minus)
    }
}

/// Alias kept for callers that prefer a free constructor.
pub fn make_params(a: f64, b: f64, ell: f64) -> Result<ModelParams> {
    ModelParams::new(a, b, ell)
}

pub fn discriminant(a: f64, b: f64, ell: f64) -> f64 {
    ell * ell - 2.0 * (a + b) * ell + (a - b) * (a - b)
}

pub fn rate_function(p: &ModelParams) -> f64 {
    let (a, b, ell) = (p.a, p.b, p.ell);
    let sd = p.d.sqrt();
    sd + a * ((ell + a - b - sd) / (ell + a - b + sd)).ln()
        + b * ((ell - a + b - sd) / (ell - a + b + sd)).ln()
}

pub fn unconditional_lln(a: f64, b: f64, x: f64, y: f64) -> f64 {
    let s = (x * a).sqrt() + (y * b).sqrt();
    s * s
}

/// Which part of the quarter plane a single point belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OmegaTag {
    Omega1,
    Omega2MinusOmega1,
    Outside,
}

impl std::fmt::Display for OmegaTag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            OmegaTag::Omega1 => "Omega1",
            OmegaTag::Omega2MinusOmega1 => "Omega2minusOmega1",
            OmegaTag::Outside => "Outside",
        };
        f.write_str(s)
    }
}

pub fn classify_omega(p: &ModelParams, x: f64, y: f64) -> OmegaTag {
    let m = p.m_slope;
    if x > 1.0 && y > 1.0 {
        let r = (y - 1.0) / (x - 1.0);
        if r > 1.0 / m && r < m {
            return OmegaTag::Omega1;
        }
    }
    let r = y / x;
    if r > 1.0 / m && r < m {
        OmegaTag::Omega2MinusOmega1
    } else {
        OmegaTag::Outside
    }
}

/// Value of the conditional LLN surface with the branch that produced it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LlnValue {
    pub value: f64,
    pub branch: OmegaTag,
    /// True when the point lies outside the closed unit square, where the surface is conjectural.
    pub conjectural: bool,
}

pub fn lln_surface_tagged(p: &ModelParams, x: f64, y: f64) -> Result<LlnValue> {
    if !(x > 0.0 && y > 0.0) || !x.is_finite() || !y.is_finite() {
        return Err(LppError::Domain(format!(
            "surface coordinates must be positive, got ({x}, {y})"
        )));
    }
    let branch = classify_omega(p, x, y);
    let value = match branch {
        OmegaTag::Omega1 => p.ell + unconditional_lln(p.a, p.b, x - 1.0, y - 1.0),
        OmegaTag::Omega2MinusOmega1 => {
            0.5 * ((p.ell + p.a - p.b) * x + (p.ell - p.a + p.b) * y - (x - y).abs() * p.sqrt_d())
        }
        OmegaTag::Outside => unconditional_lln(p.a, p.b, x, y),
    };
    let conjectural = branch != OmegaTag::Omega2MinusOmega1 || x > 1.0 || y > 1.0;
    Ok(LlnValue {
        value,
        branch,
        conjectural,
    })
}

pub fn lln_surface(p: &ModelParams, x: f64, y: f64) -> Result<f64> {
    lln_surface_tagged(p, x, y).map(|v| v.value)
}

/// Critical points of `-alpha1 log(z+1) + alpha2 log z + alpha3 z` and the second
/// derivative there.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CriticalPointResult {
    pub z_minus: f64,
    pub z_plus: f64,
    pub g2_minus: f64,
    pub g2_plus: f64,
    pub discriminant_q: f64,
}

/// Real part of the exponent `-alpha1 log(z+1) + alpha2 log z + alpha3 z` on the real line.
pub fn exponent_real(alpha1: f64, alpha2: f64, alpha3: f64, z: f64) -> f64 {
    -alpha1 * (z + 1.0).abs().ln() + alpha2 * z.abs().ln() + alpha3 * z
}

pub fn exponent_second_derivative(alpha1: f64, alpha2: f64, z: f64) -> f64 {
    alpha1 / ((z + 1.0) * (z + 1.0)) - alpha2 / (z * z)
}

pub fn critical_points(alpha1: f64, alpha2: f64, alpha3: f64) -> Result<CriticalPointResult> {
    if alpha1 == 0.0 || alpha2 == 0.0 || alpha3 == 0.0 {
        return Err(LppError::Domain(format!(
            "degenerate exponent coefficients ({alpha1}, {alpha2}, {alpha3})"
        )));
    }
    let q = alpha3 * alpha3 - 2.0 * (alpha1 + alpha2) * alpha3 + (alpha1 - alpha2).powi(2);
    if q < 0.0 {
        return Err(LppError::Domain(format!(
            "critical points are complex (discriminant {q})"
        )));
    }
    let sq = q.sqrt();
    let base = -alpha3 + alpha1 - alpha2;
    // Cancellation-free pair of roots of alpha3 z^2 + (alpha3 - alpha1 + alpha2) z + alpha2.
    let big = if base >= 0.0 { base + sq } else { base - sq };
    let (r1, r2) = if big == 0.0 {
        (0.0, 0.0)
    } else {
        (big / (2.0 * alpha3), 2.0 * alpha2 / big)
    };
    let (z_minus, z_plus) = if r1 <= r2 { (r1, r2) } else { (r2, r1) };
    Ok(CriticalPointResult {
        z_minus,
        z_plus,
        g2_minus: exponent_second_derivative(alpha1, alpha2, z_minus),
        g2_plus: exponent_second_derivative(alpha1, alpha2, z_plus),
        discriminant_q: q,
    })
}

/// Four-tuple of observation coordinates `(x1, y1, x2, y2)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegionQuery {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl RegionQuery {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Self {
        RegionQuery { x1, y1, x2, y2 }
    }

    pub fn swapped(&self) -> Self {
        RegionQuery {
            x1: self.x2,
            y1: self.y2,
            x2: self.x1,
            y2: self.y1,
        }
    }

    pub fn validate(&self, p: &ModelParams) -> Result<()> {
        for (x, y) in [(self.x1, self.y1), (self.x2, self.y2)] {
            let inside = x > 0.0 && x < 1.0 && y > 0.0 && y < 1.0;
            let r = y / x;
            if !inside || !(r > 1.0 / p.m_slope && r < 1.0) {
                return Err(LppError::Domain(format!(
                    "point ({x}, {y}) must lie in the open unit square with 1/m < y/x < 1"
                )));
            }
        }
        Ok(())
    }

    /// Sign of `h(x2, y2) - h(x1, y1)` expressed through the slope constant `mu`.
    pub fn ordering_gap(&self, p: &ModelParams) -> f64 {
        (self.x2 - self.x1) + p.mu * (self.y2 - self.y1)
    }

    /// `(X, Y)` for the exponents indexed by 1, 2, 3, 12, 23, 123.
    pub fn exponent_weights(&self) -> [(f64, f64); 6] {
        [
            (self.x1, self.y1),
            (self.x2 - self.x1, self.y2 - self.y1),
            (1.0 - self.x2, 1.0 - self.y2),
            (self.x2, self.y2),
            (1.0 - self.x1, 1.0 - self.y1),
            (1.0, 1.0),
        ]
    }
}

/// Critical points of the family `-aX log(1+z) + bY log z + h(X,Y) z`.
pub fn g_xy_critical(p: &ModelParams, x_weight: f64, y_weight: f64) -> Result<CriticalPointResult> {
    critical_points(
        p.a * x_weight,
        p.b * y_weight,
        p.mean_coefficient(x_weight, y_weight),
    )
}

/// Critical points of the six exponents, in the order 1, 2, 3, 12, 23, 123.
pub fn g_star_family(p: &ModelParams, q: &RegionQuery) -> Result<[CriticalPointResult; 6]> {
    q.validate(p)?;
    let w = q.exponent_weights();
    let mut out = [g_xy_critical(p, 1.0, 1.0)?; 6];
    for (slot, (x, y)) in out.iter_mut().zip(w) {
        *slot = g_xy_critical(p, x, y)?;
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RegionTag {
    R1,
    R2,
    R3,
    R4,
    R5,
    R6,
    R7,
    /// Exact hit of one of the separating slopes. `0` is the vertical direction,
    /// `1..=6` are `-1/mu, 0, 1/m, y1/x1, 1, (1-y1)/(1-x1)` and `7` is `h1 = h2`.
    Boundary(u8),
}

impl RegionTag {
    pub fn index(&self) -> Option<usize> {
        match self {
            RegionTag::R1 => Some(1),
            RegionTag::R2 => Some(2),
            RegionTag::R3 => Some(3),
            RegionTag::R4 => Some(4),
            RegionTag::R5 => Some(5),
            RegionTag::R6 => Some(6),
            RegionTag::R7 => Some(7),
            RegionTag::Boundary(_) => None,
        }
    }

    pub fn from_index(k: usize) -> Option<Self> {
        [
            RegionTag::R1,
            RegionTag::R2,
            RegionTag::R3,
            RegionTag::R4,
            RegionTag::R5,
            RegionTag::R6,
            RegionTag::R7,
        ]
        .get(k.wrapping_sub(1))
        .copied()
    }
}

impl std::fmt::Display for RegionTag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RegionTag::Boundary(k) => write!(f, "Boundary({k})"),
            other => write!(f, "R{}", other.index().unwrap_or(0)),
        }
    }
}

/// Region of a point pair, with a flag recording whether the labels 1 and 2 were swapped
/// so that the second point carries the larger mean.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegionLabel {
    pub tag: RegionTag,
    pub swapped: bool,
    pub query: RegionQuery,
}

const BOUNDARY_TOL: f64 = 1e-13;

pub fn classify_region(p: &ModelParams, q: &RegionQuery) -> Result<RegionLabel> {
    q.validate(p)?;
    let gap = q.ordering_gap(p);
    if gap.abs() <= BOUNDARY_TOL * (1.0 + p.mu) {
        return Ok(RegionLabel {
            tag: RegionTag::Boundary(7),
            swapped: false,
            query: *q,
        });
    }
    let (query, swapped) = if gap > 0.0 { (*q, false) } else { (q.swapped(), true) };
    let dx = query.x2 - query.x1;
    let dy = query.y2 - query.y1;
    if dx.abs() <= BOUNDARY_TOL {
        return Ok(RegionLabel {
            tag: RegionTag::Boundary(0),
            swapped,
            query,
        });
    }
    let s = dy / dx;
    let cuts = [
        -1.0 / p.mu,
        0.0,
        1.0 / p.m_slope,
        query.y1 / query.x1,
        1.0,
        (1.0 - query.y1) / (1.0 - query.x1),
    ];
    for (k, c) in cuts.iter().enumerate() {
        if (s - c).abs() <= BOUNDARY_TOL * (1.0 + c.abs()) {
            return Ok(RegionLabel {
                tag: RegionTag::Boundary(k as u8 + 1),
                swapped,
                query,
            });
        }
    }
    let tag = if s < cuts[0] {
        RegionTag::R1
    } else if s < cuts[1] {
        RegionTag::R7
    } else if s < cuts[2] {
        RegionTag::R6
    } else if s < cuts[3] {
        RegionTag::R5
    } else if s < cuts[4] {
        RegionTag::R4
    } else if s < cuts[5] {
        RegionTag::R3
    } else {
        RegionTag::R2
    };
    Ok(RegionLabel {
        tag,
        swapped,
        query,
    })
}

/// Ordered chain of critical points expected in a region, from left to right.
/// Each entry names an exponent (`"1"`, `"23"`, ...) and a side, or a fixed landmark.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChainEntry {
    Minus(usize),
    Plus(usize),
    MinusOne,
    Zero,
}

/// Index of each exponent in the arrays returned by [`g_star_family`].
pub const EXP_1: usize = 0;
pub const EXP_2: usize = 1;
pub const EXP_3: usize = 2;
pub const EXP_12: usize = 3;
pub const EXP_23: usize = 4;
pub const EXP_123: usize = 5;

/// Strict ordering of critical points that holds inside each region; ties with the
/// shared critical point are listed as adjacent `Plus`/`Minus` entries and checked for equality.
pub fn ordering_chain(tag: RegionTag) -> Option<Vec<ChainEntry>> {
    use ChainEntry::*;
    let chain = match tag {
        RegionTag::R1 => vec![
            Minus(EXP_2),
            MinusOne,
            Minus(EXP_23),
            Minus(EXP_3),
            Minus(EXP_123),
            Minus(EXP_12),
            Minus(EXP_1),
            Plus(EXP_2),
            Zero,
        ],
        RegionTag::R2 => vec![
            MinusOne,
            Minus(EXP_2),
            Minus(EXP_23),
            Minus(EXP_3),
            Minus(EXP_123),
            Minus(EXP_12),
            Minus(EXP_1),
            Plus(EXP_2),
            Zero,
        ],
        RegionTag::R3 => vec![
            MinusOne,
            Minus(EXP_3),
            Minus(EXP_23),
            Minus(EXP_2),
            Minus(EXP_123),
            Minus(EXP_12),
            Minus(EXP_1),
            Plus(EXP_2),
            Zero,
        ],
        RegionTag::R4 => vec![
            MinusOne,
            Minus(EXP_3),
            Minus(EXP_23),
            Minus(EXP_123),
            Minus(EXP_2),
            Minus(EXP_12),
            Minus(EXP_1),
            Plus(EXP_2),
            Zero,
        ],
        RegionTag::R5 => vec![
            MinusOne,
            Minus(EXP_3),
            Minus(EXP_23),
            Minus(EXP_123),
            Minus(EXP_1),
            Minus(EXP_12),
            Minus(EXP_2),
            Plus(EXP_2),
            Zero,
        ],
        RegionTag::R6 => vec![
            MinusOne,
            Minus(EXP_3),
            Minus(EXP_23),
            Minus(EXP_123),
            Minus(EXP_1),
            Minus(EXP_12),
            Minus(EXP_2),
            Plus(EXP_2),
            Zero,
        ],
        RegionTag::R7 => vec![
            MinusOne,
            Minus(EXP_3),
            Minus(EXP_23),
            Minus(EXP_123),
            Minus(EXP_1),
            Minus(EXP_12),
            Minus(EXP_2),
            Zero,
            Plus(EXP_2),
        ],
        RegionTag::Boundary(_) => return None,
    };
    Some(chain)
}

/// Checks the region's ordering chain and the shared larger critical point.
/// Returns the first violated link as an error message.
pub fn check_ordering(
    p: &ModelParams,
    tag: RegionTag,
    family: &[CriticalPointResult; 6],
    tol: f64,
) -> std::result::Result<(), String> {
    let zc = p.z_c();
    for (k, cp) in family.iter().enumerate() {
        if k == EXP_2 {
            continue;
        }
        if (cp.z_plus - zc).abs() > tol {
            return Err(format!("z_plus of exponent {k} is {} not {zc}", cp.z_plus));
        }
    }
    let chain = ordering_chain(tag).ok_or_else(|| "boundary has no chain".to_string())?;
    let value = |e: &ChainEntry| match *e {
        ChainEntry::Minus(k) => family[k].z_minus,
        ChainEntry::Plus(k) => family[k].z_plus,
        ChainEntry::MinusOne => -1.0,
        ChainEntry::Zero => 0.0,
    };
    // In R6 and R7 the smaller root of exponent 2 is the shared point; elsewhere the larger root is.
    let shared = match tag {
        RegionTag::R6 | RegionTag::R7 => family[EXP_2].z_minus,
        _ => family[EXP_2].z_plus,
    };
    if (shared - zc).abs() > tol {
        return Err(format!("exponent 2 does not pass through the shared point: {shared}"));
    }
    for w in chain.windows(2) {
        let (lo, hi) = (value(&w[0]), value(&w[1]));
        if lo >= hi {
            return Err(format!("{:?}={lo} is not below {:?}={hi}", w[0], w[1]));
        }
    }
    Ok(())
}

/// `H(t) = t ell + Lbar_{(ta, tb)}(xa, yb)`.
pub fn variational_objective(p: &ModelParams, x: f64, y: f64, t: f64) -> f64 {
    t * p.ell + unconditional_lln(p.a, p.b, (x - t).max(0.0), (y - t).max(0.0))
}

fn variational_slope(p: &ModelParams, x: f64, y: f64, t: f64) -> f64 {
    let u = ((x - t) * p.a).sqrt();
    let v = ((y - t) * p.b).sqrt();
    p.ell - (u + v) * (p.a / u + p.b / v)
}

/// Maximizer of `H` over `[0, min(x, y, 1)]` and the maximum value.
pub fn variational_tc(p: &ModelParams, x: f64, y: f64) -> Result<(f64, f64)> {
    if !(x > 0.0 && y > 0.0) {
        return Err(LppError::Domain(format!(
            "variational problem needs positive coordinates, got ({x}, {y})"
        )));
    }
    let hi = x.min(y).min(1.0);
    let h = |t: f64| variational_objective(p, x, y, t);
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut lo_t, mut hi_t) = (0.0, hi);
    let mut c = hi_t - inv_phi * (hi_t - lo_t);
    let mut d = lo_t + inv_phi * (hi_t - lo_t);
    let (mut hc, mut hd) = (h(c), h(d));
    while hi_t - lo_t > 1e-10 * (1.0 + hi) {
        if hc >= hd {
            hi_t = d;
            d = c;
            hd = hc;
            c = hi_t - inv_phi * (hi_t - lo_t);
            hc = h(c);
        } else {
            lo_t = c;
            c = d;
            hc = hd;
            d = lo_t + inv_phi * (hi_t - lo_t);
            hd = h(d);
        }
    }
    let mut t = 0.5 * (lo_t + hi_t);
    // Polish on the sign of the derivative, which resolves the flat top to full precision.
    let interior = x != y && t > 1e-9 && t < hi - 1e-9;
    if interior {
        let (mut a_t, mut b_t) = ((t - 1e-6).max(0.0), (t + 1e-6).min(hi));
        if variational_slope(p, x, y, a_t) > 0.0 && variational_slope(p, x, y, b_t) < 0.0 {
            for _ in 0..200 {
                let mid = 0.5 * (a_t + b_t);
                if mid <= a_t || mid >= b_t {
                    break;
                }
                if variational_slope(p, x, y, mid) > 0.0 {
                    a_t = mid;
                } else {
                    b_t = mid;
                }
            }
            t = 0.5 * (a_t + b_t);
        }
    }
    let candidates = [0.0, hi, t];
    let best = candidates
        .iter()
        .copied()
        .fold((t, h(t)), |acc, c| if h(c) > acc.1 { (c, h(c)) } else { acc });
    Ok(best)
}

/// Closed-form maximizer of `H` by Omega branch.
pub fn tc_closed_form(p: &ModelParams, x: f64, y: f64) -> f64 {
    let m = p.m_slope;
    match classify_omega(p, x, y) {
        OmegaTag::Omega1 => 1.0,
        OmegaTag::Omega2MinusOmega1 => {
            if y < x {
                (m * y - x) / (m - 1.0)
            } else {
                (m * x - y) / (m - 1.0)
            }
        }
        OmegaTag::Outside => 0.0,
    }
}

pub fn slope_functional(p: &ModelParams, u: f64) -> Result<f64> {
    if u.is_nan() || u <= 0.0 {
        return Err(LppError::Domain(format!("slope argument must be positive, got {u}")));
    }
    let (a, b, ell) = (p.a, p.b, p.ell);
    let sab = (a * b).sqrt();
    Ok(sab / (ell * p.sqrt_d())
        * ((ell + a - b) / u.sqrt() - (ell - a + b) * u.sqrt() - (a - b) * (ell - a - b) / sab))
}

/// Level-curve time `(m y - x)/(m - 1)` of a point in the lower cone.
pub fn level_time(p: &ModelParams, x: f64, y: f64) -> f64 {
    (p.m_slope * y - x) / (p.m_slope - 1.0)
}
