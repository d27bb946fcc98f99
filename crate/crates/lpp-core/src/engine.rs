//! Tensor-network contraction of discretized contour integrals.
//!
//! An integrand of the form `prod_v u_v(x_v) * prod_{u<v} p_uv(x_u, x_v)`
//! discretized on a node grid per variable is summed by eliminating variables
//! one at a time, always picking the variable whose neighbourhood is cheapest.

use num_complex::Complex64;
use rayon::prelude::*;

/// Values the contraction can run over.
pub trait Scalar: Copy + Send + Sync + 'static {
    fn zero() -> Self;
    fn one() -> Self;
    fn add(self, o: Self) -> Self;
    fn mul(self, o: Self) -> Self;
    fn from_complex(c: Complex64) -> Self;
    fn scale(self, s: f64) -> Self;
    fn magnitude(self) -> f64;
}

impl Scalar for Complex64 {
    fn zero() -> Self {
        Complex64::new(0.0, 0.0)
    }
    fn one() -> Self {
        Complex64::new(1.0, 0.0)
    }
    fn add(self, o: Self) -> Self {
        self + o
    }
    fn mul(self, o: Self) -> Self {
        self * o
    }
    fn from_complex(c: Complex64) -> Self {
        c
    }
    fn scale(self, s: f64) -> Self {
        self * s
    }
    fn magnitude(self) -> f64 {
        self.norm()
    }
}

/// Absolute values: contracting these bounds the integral of the modulus.
impl Scalar for f64 {
    fn zero() -> Self {
        0.0
    }
    fn one() -> Self {
        1.0
    }
    fn add(self, o: Self) -> Self {
        self + o
    }
    fn mul(self, o: Self) -> Self {
        self * o
    }
    fn from_complex(c: Complex64) -> Self {
        c.norm()
    }
    fn scale(self, s: f64) -> Self {
        self * s
    }
    fn magnitude(self) -> f64 {
        self.abs()
    }
}

/// First-order dual numbers `re + eps * d` with `d^2 = 0`.
///
/// Multiplying `(1 + d c_v x_v)` over all variables leaves `sum_v c_v x_v` in
/// the `eps` part, so a linear factor rides along a product-form contraction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dual<T> {
    pub re: T,
    pub eps: T,
}

impl<T: Scalar> Scalar for Dual<T> {
    fn zero() -> Self {
        Dual { re: T::zero(), eps: T::zero() }
    }
    fn one() -> Self {
        Dual { re: T::one(), eps: T::zero() }
    }
    fn add(self, o: Self) -> Self {
        Dual {
            re: self.re.add(o.re),
            eps: self.eps.add(o.eps),
        }
    }
    fn mul(self, o: Self) -> Self {
        Dual {
            re: self.re.mul(o.re),
            eps: self.re.mul(o.eps).add(self.eps.mul(o.re)),
        }
    }
    fn from_complex(c: Complex64) -> Self {
        Dual {
            re: T::from_complex(c),
            eps: T::zero(),
        }
    }
    fn scale(self, s: f64) -> Self {
        Dual {
            re: self.re.scale(s),
            eps: self.eps.scale(s),
        }
    }
    fn magnitude(self) -> f64 {
        self.re.magnitude().max(self.eps.magnitude())
    }
}

#[derive(Debug, Clone)]
struct Factor<R> {
    scope: Vec<usize>,
    dims: Vec<usize>,
    data: Vec<R>,
}

impl<R> Factor<R> {
    fn stride_of(&self, v: usize) -> usize {
        match self.scope.iter().position(|&s| s == v) {
            None => 0,
            Some(k) => self.dims[k + 1..].iter().product(),
        }
    }
}

/// A factor graph over `dims.len()` discrete variables.
#[derive(Debug, Clone)]
pub struct Network<R> {
    dims: Vec<usize>,
    factors: Vec<Factor<R>>,
}

/// Result of a contraction: `value * exp(log_scale)`.
#[derive(Debug, Clone, Copy)]
pub struct Contracted<R> {
    pub value: R,
    pub log_scale: f64,
}

impl<R: Scalar> Network<R> {
    pub fn new(dims: Vec<usize>) -> Self {
        Network { dims, factors: Vec::new() }
    }

    pub fn add_unary(&mut self, v: usize, data: Vec<R>) {
        assert_eq!(data.len(), self.dims[v]);
        self.factors.push(Factor {
            scope: vec![v],
            dims: vec![self.dims[v]],
            data,
        });
    }

    /// Adds a factor on `(u, v)`, `u < v`, stored row-major in `u`.
    pub fn add_pair(&mut self, u: usize, v: usize, data: Vec<R>) {
        assert!(u < v);
        assert_eq!(data.len(), self.dims[u] * self.dims[v]);
        self.factors.push(Factor {
            scope: vec![u, v],
            dims: vec![self.dims[u], self.dims[v]],
            data,
        });
    }

    fn scopes(&self) -> Vec<Vec<usize>> {
        self.factors.iter().map(|f| f.scope.clone()).collect()
    }

    /// Greedy elimination order and the total number of multiply-adds.
    pub fn plan(&self) -> (Vec<usize>, f64) {
        plan_elimination(&self.dims, &self.scopes())
    }

    /// Largest intermediate factor, in entries.
    pub fn peak_size(&self) -> f64 {
        plan_with_peak(&self.dims, &self.scopes()).2
    }

    pub fn contract(mut self) -> Contracted<R> {
        let (order, _) = self.plan();
        let mut log_scale = 0.0;
        for v in order {
            let (touching, rest): (Vec<Factor<R>>, Vec<Factor<R>>) =
                self.factors.drain(..).partition(|f| f.scope.contains(&v));
            self.factors = rest;
            let mut scope: Vec<usize> = touching
                .iter()
                .flat_map(|f| f.scope.iter().copied())
                .filter(|&s| s != v)
                .collect();
            scope.sort_unstable();
            scope.dedup();
            let dims: Vec<usize> = scope.iter().map(|&s| self.dims[s]).collect();
            let size: usize = dims.iter().product();
            let qv = self.dims[v];
            let strides: Vec<Vec<usize>> = touching
                .iter()
                .map(|f| scope.iter().map(|&s| f.stride_of(s)).collect())
                .collect();
            let vstrides: Vec<usize> = touching.iter().map(|f| f.stride_of(v)).collect();
            let mut data = vec![R::zero(); size];
            let chunk = (size / (rayon::current_num_threads() * 8)).max(64);
            data.par_chunks_mut(chunk).enumerate().for_each(|(ci, out)| {
                let mut digits = vec![0usize; scope.len()];
                let mut base = vec![0usize; touching.len()];
                for (k, slot) in out.iter_mut().enumerate() {
                    let mut o = ci * chunk + k;
                    for j in (0..scope.len()).rev() {
                        digits[j] = o % dims[j];
                        o /= dims[j];
                    }
                    for (fi, b) in base.iter_mut().enumerate() {
                        *b = digits.iter().zip(&strides[fi]).map(|(d, s)| d * s).sum();
                    }
                    let mut acc = R::zero();
                    for i in 0..qv {
                        let mut term = R::one();
                        for (fi, f) in touching.iter().enumerate() {
                            term = term.mul(f.data[base[fi] + i * vstrides[fi]]);
                        }
                        acc = acc.add(term);
                    }
                    *slot = acc;
                }
            });
            let peak = data.iter().map(|x| x.magnitude()).fold(0.0, f64::max);
            if peak > 0.0 && peak.is_finite() {
                let inv = 1.0 / peak;
                data.iter_mut().for_each(|x| *x = x.scale(inv));
                log_scale += peak.ln();
            }
            self.factors.push(Factor { scope, dims, data });
        }
        let value = self
            .factors
            .iter()
            .fold(R::one(), |acc, f| acc.mul(f.data[0]));
        Contracted { value, log_scale }
    }
}

/// Greedy min-neighbourhood elimination on factor scopes.
pub fn plan_elimination(dims: &[usize], scopes: &[Vec<usize>]) -> (Vec<usize>, f64) {
    let (order, cost, _) = plan_with_peak(dims, scopes);
    (order, cost)
}

/// Elimination order, multiply-add count and the largest intermediate factor size.
pub fn plan_with_peak(dims: &[usize], scopes: &[Vec<usize>]) -> (Vec<usize>, f64, f64) {
    let mut scopes: Vec<Vec<usize>> = scopes.to_vec();
    let mut alive: Vec<bool> = vec![true; dims.len()];
    let mut order = Vec::with_capacity(dims.len());
    let mut cost = 0.0;
    let mut peak: f64 = 1.0;
    for _ in 0..dims.len() {
        let mut best: Option<(f64, usize, Vec<usize>)> = None;
        for v in (0..dims.len()).filter(|&v| alive[v]) {
            let mut nb: Vec<usize> = scopes
                .iter()
                .filter(|s| s.contains(&v))
                .flat_map(|s| s.iter().copied())
                .filter(|&s| s != v)
                .collect();
            nb.sort_unstable();
            nb.dedup();
            let c = nb.iter().map(|&s| dims[s] as f64).product::<f64>() * dims[v] as f64;
            if best.as_ref().map_or(true, |b| c < b.0) {
                best = Some((c, v, nb));
            }
        }
        let (c, v, nb) = best.unwrap();
        cost += c;
        peak = peak.max(c / dims[v] as f64);
        alive[v] = false;
        order.push(v);
        scopes.retain(|s| !s.contains(&v));
        scopes.push(nb);
    }
    (order, cost, peak)
}
