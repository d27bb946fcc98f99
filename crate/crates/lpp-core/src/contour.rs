use crate::error::{LppError, Result};
use num_complex::Complex64;
use std::f64::consts::PI;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Orientation {
    Ccw,
    Cw,
}

/// A circle discretized by the trapezoidal rule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Contour {
    pub center: Complex64,
    pub radius: f64,
    pub nodes: usize,
    pub orientation: Orientation,
}

impl Contour {
    pub fn new(center: Complex64, radius: f64, nodes: usize) -> Result<Self> {
        if !(radius > 0.0) || !radius.is_finite() {
            return Err(LppError::Domain(format!("circle radius {radius} must be positive")));
        }
        if nodes < 2 || nodes % 2 != 0 {
            return Err(LppError::Domain(format!("node count {nodes} must be even and at least 2")));
        }
        Ok(Contour {
            center,
            radius,
            nodes,
            orientation: Orientation::Ccw,
        })
    }

    pub fn around_minus_one(radius: f64, nodes: usize) -> Result<Self> {
        Contour::new(Complex64::new(-1.0, 0.0), radius, nodes)
    }

    pub fn around_origin(radius: f64, nodes: usize) -> Result<Self> {
        Contour::new(Complex64::new(0.0, 0.0), radius, nodes)
    }

    pub fn reversed(mut self) -> Self {
        self.orientation = match self.orientation {
            Orientation::Ccw => Orientation::Cw,
            Orientation::Cw => Orientation::Ccw,
        };
        self
    }

    /// Nodes `z_k` and weights `w_k` with `sum_k g(z_k) w_k ~ (2 pi i)^{-1} \oint g(z) dz`.
    ///
    /// `rotation` shifts every angle by a fraction of the node spacing.
    pub fn points(&self, rotation: f64) -> Vec<(Complex64, Complex64)> {
        let q = self.nodes as f64;
        let sign = match self.orientation {
            Orientation::Ccw => 1.0,
            Orientation::Cw => -1.0,
        };
        (0..self.nodes)
            .map(|k| {
                let theta = 2.0 * PI * (k as f64 + rotation) / q;
                let offset = Complex64::from_polar(self.radius, theta);
                (self.center + offset, offset * (sign / q))
            })
            .collect()
    }

    pub fn integrate<F: Fn(Complex64) -> Complex64>(&self, g: F) -> Complex64 {
        self.points(0.0).into_iter().map(|(z, w)| g(z) * w).sum()
    }
}

/// Circle radii `0.10 + 0.05 k` for `k = 0..count`.
pub fn default_radii(count: usize) -> Vec<f64> {
    (0..count).map(|k| 0.10 + 0.05 * k as f64).collect()
}

/// Circle radii `inner * ratio^k` for `k = 0..count`. Adjacent circles keep
/// a fixed modulus ratio, which sets the trapezoid convergence rate.
pub fn geometric_radii(count: usize, inner: f64, ratio: f64) -> Result<Vec<f64>> {
    if !(inner > 0.0 && ratio > 1.0) {
        return Err(LppError::Domain(format!("geometric radii need inner > 0 and ratio > 1, got {inner}, {ratio}")));
    }
    let radii: Vec<f64> = (0..count).map(|k| inner * ratio.powi(k as i32)).collect();
    match radii.last() {
        Some(&r) if r >= 0.5 => Err(LppError::ContourNesting(format!(
            "{count} geometric circles from {inner} with ratio {ratio} reach radius {r:.3}"
        ))),
        _ => Ok(radii),
    }
}

/// Pool-adjacent-violators fit of a non-decreasing sequence (unit weights).
pub fn isotonic_fit(values: &[f64]) -> Vec<f64> {
    let mut blocks: Vec<(f64, usize)> = Vec::with_capacity(values.len());
    for &v in values {
        blocks.push((v, 1));
        while blocks.len() > 1 {
            let (m2, c2) = blocks[blocks.len() - 1];
            let (m1, c1) = blocks[blocks.len() - 2];
            if m1 <= m2 {
                break;
            }
            blocks.pop();
            let last = blocks.last_mut().unwrap();
            *last = ((m1 * c1 as f64 + m2 * c2 as f64) / (c1 + c2) as f64, c1 + c2);
        }
    }
    blocks
        .into_iter()
        .flat_map(|(m, c)| std::iter::repeat(m).take(c))
        .collect()
}

/// Closest strictly nested radii (least squares in log radius) with consecutive
/// ratio at least `ratio`.
pub fn nest_radii(targets: &[f64], ratio: f64) -> Vec<f64> {
    let step = ratio.ln();
    let shifted: Vec<f64> = targets
        .iter()
        .enumerate()
        .map(|(k, r)| r.ln() - k as f64 * step)
        .collect();
    isotonic_fit(&shifted)
        .into_iter()
        .enumerate()
        .map(|(k, s)| (s + k as f64 * step).exp())
        .collect()
}

/// Nested circle families: `xi` around -1 and `eta` around 0, inside to outside.
#[derive(Debug, Clone, PartialEq)]
pub struct ContourFamily {
    pub xi: Vec<Contour>,
    pub eta: Vec<Contour>,
}

impl ContourFamily {
    pub fn from_radii(xi_radii: &[f64], eta_radii: &[f64], nodes: usize) -> Result<Self> {
        let xi = xi_radii
            .iter()
            .map(|&r| Contour::around_minus_one(r, nodes))
            .collect::<Result<Vec<_>>>()?;
        let eta = eta_radii
            .iter()
            .map(|&r| Contour::around_origin(r, nodes))
            .collect::<Result<Vec<_>>>()?;
        let fam = ContourFamily { xi, eta };
        fam.validate()?;
        Ok(fam)
    }

    pub fn with_nodes(&self, nodes: usize) -> Result<Self> {
        let xi: Vec<f64> = self.xi.iter().map(|c| c.radius).collect();
        let eta: Vec<f64> = self.eta.iter().map(|c| c.radius).collect();
        ContourFamily::from_radii(&xi, &eta, nodes)
    }

    pub fn scaled(&self, factor: f64) -> Result<Self> {
        let xi: Vec<f64> = self.xi.iter().map(|c| c.radius * factor).collect();
        let eta: Vec<f64> = self.eta.iter().map(|c| c.radius * factor).collect();
        ContourFamily::from_radii(&xi, &eta, self.xi.first().or(self.eta.first()).map_or(32, |c| c.nodes))
    }

    /// Checks strict nesting on each side and disjointness of the two sides.
    pub fn validate(&self) -> Result<()> {
        for (side, list, center) in [("xi", &self.xi, -1.0), ("eta", &self.eta, 0.0)] {
            for c in list.iter() {
                if (c.center - Complex64::new(center, 0.0)).norm() > 0.0 {
                    return Err(LppError::ContourNesting(format!("{side} circle has the wrong center")));
                }
            }
            for w in list.windows(2) {
                if !(w[1].radius > w[0].radius) {
                    return Err(LppError::ContourNesting(format!(
                        "{side} radii {} then {} are not strictly increasing",
                        w[0].radius, w[1].radius
                    )));
                }
            }
        }
        let rx = self.xi.iter().map(|c| c.radius).fold(0.0, f64::max);
        let re = self.eta.iter().map(|c| c.radius).fold(0.0, f64::max);
        if rx + re >= 1.0 {
            return Err(LppError::ContourNesting(format!(
                "outermost circles of radii {rx} and {re} intersect"
            )));
        }
        Ok(())
    }

    /// Smallest distance between points on distinct circles.
    pub fn min_separation(&self) -> f64 {
        let mut best = f64::INFINITY;
        for list in [&self.xi, &self.eta] {
            for w in list.windows(2) {
                best = best.min(w[1].radius - w[0].radius);
            }
        }
        let rx = self.xi.iter().map(|c| c.radius).fold(0.0, f64::max);
        let re = self.eta.iter().map(|c| c.radius).fold(0.0, f64::max);
        if !self.xi.is_empty() && !self.eta.is_empty() {
            best = best.min(1.0 - rx - re);
        }
        best
    }
}

/// Fits target radii into a valid family: enforces nesting ratio, then shrinks
/// both sides until the outermost circles are disjoint with a margin.
pub fn fit_family(xi_targets: &[f64], eta_targets: &[f64], ratio: f64, nodes: usize) -> Result<ContourFamily> {
    let mut xi = nest_radii(xi_targets, ratio);
    let mut eta = nest_radii(eta_targets, ratio);
    let rx = xi.last().copied().unwrap_or(0.0);
    let re = eta.last().copied().unwrap_or(0.0);
    let limit = 0.96;
    if rx + re > limit {
        let s = limit / (rx + re);
        xi.iter_mut().for_each(|r| *r *= s);
        eta.iter_mut().for_each(|r| *r *= s);
    }
    ContourFamily::from_radii(&xi, &eta, nodes)
}
