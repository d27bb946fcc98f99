use crate::error::{LppError, Result};
use crate::lists::Symbol;
use crate::logc::LogComplex;
use crate::scaling::{lln_surface, ModelParams, RegionQuery};
use num_complex::Complex64;

/// `z^N e^{T z} / (z+1)^M` in log space.
pub fn f_eval(m: i64, n: i64, t: f64, z: Complex64) -> Result<LogComplex> {
    if z.norm() == 0.0 && n != 0 {
        return Err(LppError::Pole("f evaluated at 0".into()));
    }
    if (z + 1.0).norm() == 0.0 && m != 0 {
        return Err(LppError::Pole("f evaluated at -1".into()));
    }
    let mut w = z * t;
    if n != 0 {
        w += z.ln() * n as f64;
    }
    if m != 0 {
        w -= (z + 1.0).ln() * m as f64;
    }
    Ok(LogComplex::exp(w))
}

/// Exponents `(M, N, T)` of one factor of the integrand.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Exponents {
    pub m: i64,
    pub n: i64,
    pub t: f64,
}

impl Exponents {
    pub fn eval(&self, z: Complex64) -> Result<LogComplex> {
        f_eval(self.m, self.n, self.t, z)
    }

    /// `log |f|` and its phase derivative are cheap; the real part suffices for
    /// locating saddle points.
    pub fn log_abs(&self, z: Complex64) -> f64 {
        self.n as f64 * z.norm().ln() - self.m as f64 * (z + 1.0).norm().ln() + self.t * z.re
    }
}

/// Observation points `(M_i, N_i)` with thresholds `T_i`, the last one being the
/// conditioning point.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationPlan {
    pub m_coord: Vec<i64>,
    pub n_coord: Vec<i64>,
    pub thresholds: Vec<f64>,
    pub scale: Option<f64>,
}

impl ObservationPlan {
    pub fn new(m_coord: Vec<i64>, n_coord: Vec<i64>, thresholds: Vec<f64>) -> Result<Self> {
        let plan = ObservationPlan {
            m_coord,
            n_coord,
            thresholds,
            scale: None,
        };
        plan.check_shape()?;
        Ok(plan)
    }

    pub fn single(m: i64, n: i64, t: f64) -> Result<Self> {
        ObservationPlan::new(vec![m], vec![n], vec![t])
    }

    fn check_shape(&self) -> Result<()> {
        let k = self.m_coord.len();
        if k == 0 || k > 3 || self.n_coord.len() != k || self.thresholds.len() != k {
            return Err(LppError::Shape(format!(
                "plan needs 1 to 3 points with matching lengths, got {} / {} / {}",
                self.m_coord.len(),
                self.n_coord.len(),
                self.thresholds.len()
            )));
        }
        if self.m_coord.iter().chain(&self.n_coord).any(|&c| c < 1) {
            return Err(LppError::Domain("lattice coordinates must be at least 1".into()));
        }
        if self.thresholds.iter().any(|t| !t.is_finite()) {
            return Err(LppError::Domain("thresholds must be finite".into()));
        }
        Ok(())
    }

    /// Ordering and distinctness required by the conditional formula.
    pub fn check_hypotheses(&self) -> Result<()> {
        self.check_shape()?;
        if !(self.thresholds[0] > 0.0) {
            return Err(LppError::Hypothesis(format!("first threshold {} is not positive", self.thresholds[0])));
        }
        for w in self.thresholds.windows(2) {
            if w[1] < w[0] {
                return Err(LppError::Hypothesis(format!("thresholds {} > {} are not ordered", w[0], w[1])));
            }
        }
        for i in 0..self.len() {
            for j in (i + 1)..self.len() {
                if self.n_coord[i] == self.n_coord[j] && self.thresholds[i] == self.thresholds[j] {
                    return Err(LppError::Hypothesis(format!("points {} and {} share (N, T)", i + 1, j + 1)));
                }
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.m_coord.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m_coord.is_empty()
    }

    /// Exponents of the product of the per-level ratios over levels `lo..=hi`
    /// (1-based, level 0 being the origin with all exponents zero).
    pub fn segment(&self, lo: usize, hi: usize) -> Exponents {
        assert!(lo >= 1 && lo <= hi && hi <= self.len(), "segment {lo}..={hi} out of range");
        let (m0, n0, t0) = if lo == 1 {
            (0, 0, 0.0)
        } else {
            (self.m_coord[lo - 2], self.n_coord[lo - 2], self.thresholds[lo - 2])
        };
        Exponents {
            m: self.m_coord[hi - 1] - m0,
            n: self.n_coord[hi - 1] - n0,
            t: self.thresholds[hi - 1] - t0,
        }
    }

    pub fn symbol(&self, s: Symbol) -> Exponents {
        let (lo, hi) = s.levels();
        self.segment(lo, hi)
    }

    pub fn last(&self) -> Exponents {
        self.segment(1, self.len())
    }

    /// The per-level ratio `f_i`, or the merged product for a symbol.
    pub fn f_ratio_eval(&self, level: usize, z: Complex64) -> Result<LogComplex> {
        self.segment(level, level).eval(z)
    }

    /// Two observation points scaled with `L` around the conditional mean, plus
    /// the conditioning point `(ceil(aL), ceil(bL), ell L)`.
    pub fn scaled_two_point(p: &ModelParams, q: &RegionQuery, r1: f64, r2: f64, l: f64) -> Result<Self> {
        if !(l > 0.0) {
            return Err(LppError::Domain(format!("scale {l} must be positive")));
        }
        let t = |x: f64, y: f64, r: f64| -> Result<f64> {
            Ok(lln_surface(p, x, y)? * l + std::f64::consts::SQRT_2 * p.sigma * r * l.sqrt())
        };
        let ceil = |v: f64| v.ceil().max(1.0) as i64;
        let plan = ObservationPlan {
            m_coord: vec![ceil(q.x1 * p.a * l), ceil(q.x2 * p.a * l), ceil(p.a * l)],
            n_coord: vec![ceil(q.y1 * p.b * l), ceil(q.y2 * p.b * l), ceil(p.b * l)],
            thresholds: vec![t(q.x1, q.y1, r1)?, t(q.x2, q.y2, r2)?, p.ell * l],
            scale: Some(l),
        };
        plan.check_shape()?;
        Ok(plan)
    }

    /// The conditioning point alone.
    pub fn conditioning_point(&self) -> Result<Self> {
        let k = self.len() - 1;
        let mut out = ObservationPlan::single(self.m_coord[k], self.n_coord[k], self.thresholds[k])?;
        out.scale = self.scale;
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn f_special_cases() {
        let z = Complex64::new(-0.4, 0.3);
        let v = f_eval(0, 0, 2.5, z).unwrap().to_complex();
        assert!((v - (z * 2.5).exp()).norm() < 1e-14);
        let v = f_eval(1, 1, 0.0, z).unwrap().to_complex();
        assert!((v - z / (z + 1.0)).norm() < 1e-14);
        let a = f_eval(3, 2, 1.7, z).unwrap().to_complex();
        let b = f_eval(3, 2, 1.7, z.conj()).unwrap().to_complex();
        assert!((a.conj() - b).norm() < 1e-13 * a.norm());
        assert!(matches!(f_eval(1, 0, 1.0, Complex64::new(-1.0, 0.0)), Err(LppError::Pole(_))));
    }

    #[test]
    fn ratios_telescope() {
        let plan = ObservationPlan::new(vec![2, 4, 7], vec![1, 3, 6], vec![1.5, 3.0, 6.5]).unwrap();
        let z = Complex64::new(-0.7, 0.2);
        let prod = (1..=3).fold(LogComplex::ONE, |acc, i| acc * plan.f_ratio_eval(i, z).unwrap());
        let full = f_eval(7, 6, 6.5, z).unwrap();
        assert!((prod.log_mag - full.log_mag).abs() < 1e-12);
        let merged = plan.symbol(Symbol::S12).eval(z).unwrap();
        let pair = plan.f_ratio_eval(1, z).unwrap() * plan.f_ratio_eval(2, z).unwrap();
        assert!((merged.log_mag - pair.log_mag).abs() < 1e-12);
        assert!((merged.to_complex() - pair.to_complex()).norm() < 1e-12 * merged.abs());
    }

    #[test]
    fn hypotheses_are_checked() {
        let bad = ObservationPlan::new(vec![1, 2], vec![1, 2], vec![3.0, 2.0]).unwrap();
        assert!(matches!(bad.check_hypotheses(), Err(LppError::Hypothesis(_))));
        let dup = ObservationPlan::new(vec![1, 2], vec![2, 2], vec![3.0, 3.0]).unwrap();
        assert!(matches!(dup.check_hypotheses(), Err(LppError::Hypothesis(_))));
        assert!(ObservationPlan::new(vec![0], vec![1], vec![1.0]).is_err());
    }
}
