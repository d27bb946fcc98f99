use num_complex::Complex64;
use std::f64::consts::PI;
use std::ops::{Div, Mul, Neg};

/// A complex number stored as `exp(log_mag) * exp(i * phase)`.
///
/// Zero is encoded by `log_mag == -inf`. Products never overflow, which matters
/// for quantities like `e^{T z}` with `T` in the hundreds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogComplex {
    pub log_mag: f64,
    pub phase: f64,
}

pub fn wrap_phase(theta: f64) -> f64 {
    if theta > -PI && theta <= PI {
        return theta;
    }
    let mut t = theta.rem_euclid(2.0 * PI);
    if t > PI {
        t -= 2.0 * PI;
    }
    if t <= -PI {
        t += 2.0 * PI;
    }
    t
}

impl LogComplex {
    pub const ZERO: LogComplex = LogComplex {
        log_mag: f64::NEG_INFINITY,
        phase: 0.0,
    };
    pub const ONE: LogComplex = LogComplex {
        log_mag: 0.0,
        phase: 0.0,
    };

    pub fn new(log_mag: f64, phase: f64) -> Self {
        if log_mag == f64::NEG_INFINITY {
            return Self::ZERO;
        }
        LogComplex {
            log_mag,
            phase: wrap_phase(phase),
        }
    }

    pub fn from_complex(z: Complex64) -> Self {
        if z.re == 0.0 && z.im == 0.0 {
            return Self::ZERO;
        }
        LogComplex::new(z.norm().ln(), z.arg())
    }

    pub fn from_real(x: f64) -> Self {
        Self::from_complex(Complex64::new(x, 0.0))
    }

    /// `exp(w)` for a complex exponent `w`.
    pub fn exp(w: Complex64) -> Self {
        LogComplex::new(w.re, w.im)
    }

    pub fn is_zero(&self) -> bool {
        self.log_mag == f64::NEG_INFINITY
    }

    pub fn to_complex(&self) -> Complex64 {
        if self.is_zero() {
            return Complex64::new(0.0, 0.0);
        }
        Complex64::from_polar(self.log_mag.exp(), self.phase)
    }

    /// Principal logarithm as a complex number.
    pub fn ln(&self) -> Complex64 {
        Complex64::new(self.log_mag, self.phase)
    }

    pub fn re(&self) -> f64 {
        self.to_complex().re
    }

    pub fn im(&self) -> f64 {
        self.to_complex().im
    }

    pub fn abs(&self) -> f64 {
        self.log_mag.exp()
    }

    pub fn conj(&self) -> Self {
        if self.is_zero() {
            return *self;
        }
        LogComplex::new(self.log_mag, -self.phase)
    }

    pub fn recip(&self) -> Self {
        LogComplex::new(-self.log_mag, -self.phase)
    }

    pub fn powi(&self, k: i32) -> Self {
        if self.is_zero() {
            return if k == 0 { Self::ONE } else { *self };
        }
        LogComplex::new(self.log_mag * k as f64, self.phase * k as f64)
    }

    pub fn scale_log(&self, log_factor: f64) -> Self {
        if self.is_zero() {
            return *self;
        }
        LogComplex::new(self.log_mag + log_factor, self.phase)
    }

    /// Sum of two values, factoring out the larger modulus.
    pub fn add(&self, other: &Self) -> Self {
        if self.is_zero() {
            return *other;
        }
        if other.is_zero() {
            return *self;
        }
        let (big, small) = if self.log_mag >= other.log_mag {
            (self, other)
        } else {
            (other, self)
        };
        let rel = Complex64::from_polar((small.log_mag - big.log_mag).exp(), small.phase - big.phase);
        let s = Complex64::new(1.0, 0.0) + rel;
        LogComplex::from_complex(s).times(&LogComplex::new(big.log_mag, big.phase))
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.add(&-*other)
    }

    pub fn times(&self, other: &Self) -> Self {
        if self.is_zero() || other.is_zero() {
            return Self::ZERO;
        }
        LogComplex::new(self.log_mag + other.log_mag, self.phase + other.phase)
    }
}

impl Mul for LogComplex {
    type Output = LogComplex;
    fn mul(self, rhs: LogComplex) -> LogComplex {
        self.times(&rhs)
    }
}

impl Div for LogComplex {
    type Output = LogComplex;
    fn div(self, rhs: LogComplex) -> LogComplex {
        self.times(&rhs.recip())
    }
}

impl Neg for LogComplex {
    type Output = LogComplex;
    fn neg(self) -> LogComplex {
        if self.is_zero() {
            return self;
        }
        LogComplex::new(self.log_mag, self.phase + PI)
    }
}

impl std::fmt::Display for LogComplex {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "exp({:.17e}) * exp(i {:.17e})", self.log_mag, self.phase)
    }
}

/// Accumulates a sum of `LogComplex` terms and tracks cancellation against the
/// largest summand.
#[derive(Debug, Clone, Copy)]
pub struct LogSum {
    total: LogComplex,
    pivot_log: f64,
}

impl Default for LogSum {
    fn default() -> Self {
        LogSum {
            total: LogComplex::ZERO,
            pivot_log: f64::NEG_INFINITY,
        }
    }
}

impl LogSum {
    pub fn push(&mut self, x: LogComplex) {
        self.pivot_log = self.pivot_log.max(x.log_mag);
        self.total = self.total.add(&x);
    }

    pub fn value(&self) -> LogComplex {
        self.total
    }

    /// `|sum| / max |term|`; equals 1 when nothing cancels.
    pub fn cancellation_ratio(&self) -> f64 {
        if self.pivot_log == f64::NEG_INFINITY {
            return 1.0;
        }
        (self.total.log_mag - self.pivot_log).exp()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: Complex64, b: Complex64, tol: f64) -> bool {
        (a - b).norm() <= tol * b.norm().max(1e-300)
    }

    #[test]
    fn round_trip() {
        let z = Complex64::new(-0.3, 1.7);
        assert!(close(LogComplex::from_complex(z).to_complex(), z, 1e-15));
        assert!(LogComplex::from_complex(Complex64::new(0.0, 0.0)).is_zero());
    }

    #[test]
    fn add_handles_zero_and_opposites() {
        let x = LogComplex::from_complex(Complex64::new(2.0, -1.0));
        assert_eq!(x.add(&LogComplex::ZERO), x);
        assert!(x.sub(&x).abs() < 1e-15);
        let y = LogComplex::from_complex(Complex64::new(0.5, 4.0));
        assert!(close(x.add(&y).to_complex(), Complex64::new(2.5, 3.0), 1e-14));
    }

    #[test]
    fn huge_magnitudes_do_not_overflow() {
        let big = LogComplex::exp(Complex64::new(2000.0, 0.3));
        let tiny = LogComplex::exp(Complex64::new(-2000.0, -0.3));
        let p = big * tiny;
        assert!((p.log_mag).abs() < 1e-12 && p.phase.abs() < 1e-15);
    }

    #[test]
    fn phase_is_wrapped() {
        let x = LogComplex::new(0.0, 7.0 * PI);
        assert!((x.phase - PI).abs() < 1e-12);
        assert!(wrap_phase(-PI) == PI);
    }

    #[test]
    fn log_sum_reports_cancellation() {
        let mut s = LogSum::default();
        s.push(LogComplex::from_real(1.0));
        s.push(LogComplex::from_real(-1.0 + 1e-10));
        assert!(s.cancellation_ratio() < 1e-9);
    }
}
