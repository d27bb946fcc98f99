use crate::error::{LppError, Result};
use crate::lists::{IndexList, Symbol};
use crate::logc::LogComplex;
use num_complex::Complex64;
use std::collections::BTreeMap;

/// Cauchy determinant `det[1/(r_i - s_j)]` via its product formula, in log space.
pub fn cauchy_det(r: &[Complex64], s: &[Complex64]) -> Result<LogComplex> {
    if r.len() != s.len() {
        return Err(LppError::Shape(format!("cauchy_det sizes {} and {}", r.len(), s.len())));
    }
    let n = r.len();
    let mut acc = LogComplex::ONE;
    for i in 0..n {
        for j in 0..n {
            let d = r[i] - s[j];
            if d.re == 0.0 && d.im == 0.0 {
                return Err(LppError::Pole(format!("r[{i}] = s[{j}] = {}", r[i])));
            }
            acc = acc / LogComplex::from_complex(d);
        }
        for j in (i + 1)..n {
            acc = acc * LogComplex::from_complex(r[i] - r[j]) * LogComplex::from_complex(s[j] - s[i]);
        }
    }
    Ok(acc)
}

/// `sum_i (r_i - s_i)`.
pub fn s_sum(r: &[Complex64], s: &[Complex64]) -> Complex64 {
    r.iter().sum::<Complex64>() - s.iter().sum::<Complex64>()
}

/// A kernel written as `sign * prod_{u<v} (x_u - x_v)^{e_uv} * S(x)` where
/// `S(x) = sum_v c_v x_v` is present only for the density kernels.
#[derive(Debug, Clone, PartialEq)]
pub struct PairKernel {
    pub vars: usize,
    pub sign: f64,
    pub pairs: Vec<(usize, usize, i32)>,
    pub linear: Option<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct KernelBuilder {
    vars: usize,
    sign: f64,
    exps: BTreeMap<(usize, usize), i32>,
    linear: Option<Vec<f64>>,
}

impl KernelBuilder {
    pub fn new(vars: usize) -> Self {
        KernelBuilder {
            vars,
            sign: 1.0,
            exps: BTreeMap::new(),
            linear: None,
        }
    }

    fn factor(&mut self, u: usize, v: usize, e: i32) {
        debug_assert!(u != v);
        if u < v {
            *self.exps.entry((u, v)).or_insert(0) += e;
        } else {
            if e.rem_euclid(2) == 1 {
                self.sign = -self.sign;
            }
            *self.exps.entry((v, u)).or_insert(0) += e;
        }
    }

    /// Multiplies by the Cauchy determinant with rows `r` and columns `s`.
    pub fn cauchy(&mut self, r: &[usize], s: &[usize]) -> &mut Self {
        assert_eq!(r.len(), s.len(), "Cauchy blocks must be square");
        for i in 0..r.len() {
            for j in (i + 1)..r.len() {
                self.factor(r[i], r[j], 1);
                self.factor(s[j], s[i], 1);
            }
            for &sj in s {
                self.factor(r[i], sj, -1);
            }
        }
        self
    }

    /// Multiplies by `sum r - sum s`.
    pub fn linear(&mut self, r: &[usize], s: &[usize]) -> &mut Self {
        let mut c = vec![0.0; self.vars];
        r.iter().for_each(|&u| c[u] += 1.0);
        s.iter().for_each(|&u| c[u] -= 1.0);
        self.linear = Some(c);
        self
    }

    pub fn build(&self) -> PairKernel {
        PairKernel {
            vars: self.vars,
            sign: self.sign,
            pairs: self
                .exps
                .iter()
                .filter(|(_, &e)| e != 0)
                .map(|(&(u, v), &e)| (u, v, e))
                .collect(),
            linear: self.linear.clone(),
        }
    }
}

impl PairKernel {
    pub fn evaluate(&self, x: &[Complex64]) -> Result<LogComplex> {
        if x.len() != self.vars {
            return Err(LppError::Shape(format!("kernel over {} variables got {}", self.vars, x.len())));
        }
        let mut acc = LogComplex::from_real(self.sign);
        for &(u, v, e) in &self.pairs {
            let d = x[u] - x[v];
            if e < 0 && d.norm() == 0.0 {
                return Err(LppError::Pole(format!("variables {u} and {v} coincide")));
            }
            acc = acc * LogComplex::from_complex(d).powi(e);
        }
        if let Some(c) = &self.linear {
            let s: Complex64 = c.iter().zip(x).map(|(ci, xi)| xi * *ci).sum();
            acc = acc * LogComplex::from_complex(s);
        }
        Ok(acc)
    }

    /// Variables that share a factor with `v`.
    pub fn neighbours(&self, v: usize) -> Vec<usize> {
        let mut out: Vec<usize> = self
            .pairs
            .iter()
            .filter_map(|&(a, b, _)| if a == v { Some(b) } else if b == v { Some(a) } else { None })
            .collect();
        out.sort_unstable();
        out.dedup();
        out
    }
}

/// Variable indices for the level kernel: `xi[i][k]` and `eta[i][k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelLayout {
    pub xi: Vec<Vec<usize>>,
    pub eta: Vec<Vec<usize>>,
    pub vars: usize,
}

impl LevelLayout {
    pub fn new(n: &[usize]) -> Self {
        let mut next = 0;
        let mut xi = Vec::new();
        let mut eta = Vec::new();
        for &ni in n {
            xi.push((next..next + ni).collect());
            next += ni;
        }
        for &ni in n {
            eta.push((next..next + ni).collect());
            next += ni;
        }
        LevelLayout { xi, eta, vars: next }
    }
}

fn concat(parts: &[&[usize]]) -> Vec<usize> {
    parts.iter().flat_map(|p| p.iter().copied()).collect()
}

/// The level kernel with multiplicities `n` (one entry per level).
///
/// `with_linear = false` drops the trailing linear factor, which yields the
/// kernel of the joint distribution function instead of the density.
pub fn pi_n_kernel(n: &[usize], with_linear: bool) -> (PairKernel, LevelLayout) {
    let lay = LevelLayout::new(n);
    let m = n.len();
    let mut b = KernelBuilder::new(lay.vars);
    b.cauchy(&lay.eta[0], &lay.xi[0]);
    for i in 0..m - 1 {
        b.cauchy(
            &concat(&[&lay.xi[i], &lay.eta[i + 1]]),
            &concat(&[&lay.eta[i], &lay.xi[i + 1]]),
        );
    }
    b.cauchy(&lay.xi[m - 1], &lay.eta[m - 1]);
    if with_linear {
        b.linear(&lay.xi[m - 1], &lay.eta[m - 1]);
    }
    (b.build(), lay)
}

/// Direct evaluation of the level kernel on grouped arguments.
pub fn pi_n(xi: &[Vec<Complex64>], eta: &[Vec<Complex64>]) -> Result<LogComplex> {
    if xi.len() != eta.len() || xi.is_empty() {
        return Err(LppError::Shape("xi and eta need the same nonzero number of levels".into()));
    }
    let m = xi.len();
    for i in 0..m {
        if xi[i].len() != eta[i].len() {
            return Err(LppError::Shape(format!("level {} has {} xi and {} eta", i + 1, xi[i].len(), eta[i].len())));
        }
    }
    let cat = |a: &[Complex64], b: &[Complex64]| -> Vec<Complex64> { a.iter().chain(b).copied().collect() };
    let mut acc = cauchy_det(&eta[0], &xi[0])?;
    for i in 0..m - 1 {
        acc = acc * cauchy_det(&cat(&xi[i], &eta[i + 1]), &cat(&eta[i], &xi[i + 1]))?;
    }
    acc = acc * cauchy_det(&xi[m - 1], &eta[m - 1])?;
    Ok(acc * LogComplex::from_complex(s_sum(&xi[m - 1], &eta[m - 1])))
}

fn group_positions(list: &IndexList, offset: usize) -> [Vec<usize>; 6] {
    let mut g: [Vec<usize>; 6] = Default::default();
    for (k, s) in list.entries.iter().enumerate() {
        g[s.slot()].push(offset + k);
    }
    g
}

/// Kernel of the list integrals. Variable `k < |sigma|` is the `xi` on the
/// `k`-th inner circle; variable `|sigma| + k` is the `eta` on the `k`-th circle.
pub fn pi_sigma_tau_kernel(sigma: &IndexList, tau: &IndexList) -> Result<PairKernel> {
    if sigma.multiplicity() != tau.multiplicity() {
        return Err(LppError::Shape(format!(
            "lists {sigma} and {tau} have multiplicities {:?} and {:?}",
            sigma.multiplicity(),
            tau.multiplicity()
        )));
    }
    let x = group_positions(sigma, 0);
    let e = group_positions(tau, sigma.len());
    use Symbol::*;
    let g = |t: &[Vec<usize>; 6], s: Symbol| t[s.slot()].clone();
    let mut b = KernelBuilder::new(sigma.len() + tau.len());
    b.cauchy(
        &concat(&[&g(&e, S123), &g(&e, S12), &g(&e, S1)]),
        &concat(&[&g(&x, S123), &g(&x, S12), &g(&x, S1)]),
    );
    b.cauchy(
        &concat(&[&g(&x, S1), &g(&e, S23), &g(&e, S2)]),
        &concat(&[&g(&e, S1), &g(&x, S23), &g(&x, S2)]),
    );
    b.cauchy(
        &concat(&[&g(&x, S12), &g(&x, S2), &g(&e, S3)]),
        &concat(&[&g(&e, S12), &g(&e, S2), &g(&x, S3)]),
    );
    let last_r = concat(&[&g(&x, S123), &g(&x, S23), &g(&x, S3)]);
    let last_s = concat(&[&g(&e, S123), &g(&e, S23), &g(&e, S3)]);
    b.cauchy(&last_r, &last_s);
    b.linear(&last_r, &last_s);
    Ok(b.build())
}

/// Direct evaluation of the list kernel; `xi[k]` sits at position `k` of `sigma`.
pub fn pi_sigma_tau(sigma: &IndexList, tau: &IndexList, xi: &[Complex64], eta: &[Complex64]) -> Result<LogComplex> {
    if xi.len() != sigma.len() || eta.len() != tau.len() {
        return Err(LppError::Shape("argument counts must match the list lengths".into()));
    }
    let kernel = pi_sigma_tau_kernel(sigma, tau)?;
    let all: Vec<Complex64> = xi.iter().chain(eta).copied().collect();
    kernel.evaluate(&all)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn det3(m: [[Complex64; 3]; 3]) -> Complex64 {
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    }

    #[test]
    fn product_formula_matches_direct_determinants() {
        let r = [c(0.3, 0.1), c(-0.2, 0.7), c(1.1, -0.4)];
        let s = [c(-1.0, 0.2), c(-0.8, -0.5), c(-1.3, 0.05)];
        let m2 = |i: usize, j: usize| (r[i] - s[j]).inv();
        let d2 = m2(0, 0) * m2(1, 1) - m2(0, 1) * m2(1, 0);
        let k2 = cauchy_det(&r[..2], &s[..2]).unwrap().to_complex();
        assert!((k2 - d2).norm() < 1e-12 * d2.norm());
        let mut mm = [[c(0.0, 0.0); 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                mm[i][j] = m2(i, j);
            }
        }
        let k3 = cauchy_det(&r, &s).unwrap().to_complex();
        assert!((k3 - det3(mm)).norm() < 1e-12 * k3.norm());
        let k1 = cauchy_det(&r[..1], &s[..1]).unwrap().to_complex();
        assert!((k1 - m2(0, 0)).norm() < 1e-15);
    }

    #[test]
    fn swapping_rows_flips_sign() {
        let r = [c(0.3, 0.1), c(-0.2, 0.7)];
        let rs = [r[1], r[0]];
        let s = [c(-1.0, 0.2), c(-0.8, -0.5)];
        let a = cauchy_det(&r, &s).unwrap().to_complex();
        let b = cauchy_det(&rs, &s).unwrap().to_complex();
        assert!((a + b).norm() < 1e-14);
    }

    #[test]
    fn coincident_arguments_are_poles() {
        assert!(matches!(cauchy_det(&[c(1.0, 0.0)], &[c(1.0, 0.0)]), Err(LppError::Pole(_))));
    }

    #[test]
    fn one_level_kernel_is_reciprocal_gap() {
        let xi = vec![vec![c(-0.9, 0.1)]];
        let eta = vec![vec![c(0.2, -0.1)]];
        let v = pi_n(&xi, &eta).unwrap().to_complex();
        assert!((v - (eta[0][0] - xi[0][0]).inv()).norm() < 1e-14);
    }

    #[test]
    fn unit_kernel_matches_closed_form() {
        let xi = [c(-0.9, 0.1), c(-1.2, 0.2), c(-0.7, -0.25)];
        let eta = [c(0.2, -0.1), c(-0.1, 0.3), c(0.05, 0.15)];
        let v = pi_n(
            &xi.iter().map(|&z| vec![z]).collect::<Vec<_>>(),
            &eta.iter().map(|&z| vec![z]).collect::<Vec<_>>(),
        )
        .unwrap()
        .to_complex();
        let mut closed = -(xi[2] - eta[2]).inv();
        for i in 0..2 {
            closed *= (xi[i] - eta[i + 1]) * (eta[i] - xi[i + 1])
                / ((xi[i] - xi[i + 1]) * (eta[i] - eta[i + 1]) * (xi[i] - eta[i]).powi(2));
        }
        assert!((v - closed).norm() < 1e-12 * closed.norm());
        let (kernel, _) = pi_n_kernel(&[1, 1, 1], true);
        let all: Vec<Complex64> = xi.iter().chain(eta.iter()).copied().collect();
        let w = kernel.evaluate(&all).unwrap().to_complex();
        assert!((w - closed).norm() < 1e-12 * closed.norm());
    }

    #[test]
    fn list_kernel_reduces_to_level_kernel() {
        let l = IndexList::parse("123").unwrap();
        let xi = [c(-0.9, 0.1), c(-1.2, 0.2), c(-0.7, -0.25)];
        let eta = [c(0.2, -0.1), c(-0.1, 0.3), c(0.05, 0.15)];
        let a = pi_sigma_tau(&l, &l, &xi, &eta).unwrap().to_complex();
        let b = pi_n(
            &xi.iter().map(|&z| vec![z]).collect::<Vec<_>>(),
            &eta.iter().map(|&z| vec![z]).collect::<Vec<_>>(),
        )
        .unwrap()
        .to_complex();
        assert!((a - b).norm() < 1e-12 * b.norm());
    }

    #[test]
    fn merged_list_kernel_closed_forms() {
        let s = IndexList::parse("(123)").unwrap();
        let t = IndexList::parse("123").unwrap();
        let xi = [c(-0.9, 0.1)];
        let eta = [c(0.2, -0.1), c(-0.1, 0.3), c(0.05, 0.15)];
        let v = pi_sigma_tau(&s, &t, &xi, &eta).unwrap().to_complex();
        let closed = ((eta[0] - xi[0]) * (eta[1] - eta[0]) * (eta[2] - eta[1])).inv();
        assert!((v - closed).norm() < 1e-12 * closed.norm());

        let s = IndexList::parse("(123)2").unwrap();
        let t = IndexList::parse("(23)(12)").unwrap();
        let xi = [c(-0.9, 0.1), c(-1.2, 0.2)];
        let eta = [c(0.2, -0.1), c(-0.1, 0.3)];
        let v = pi_sigma_tau(&s, &t, &xi, &eta).unwrap().to_complex();
        let (x123, x2, e23, e12) = (xi[0], xi[1], eta[0], eta[1]);
        let closed = ((e12 - x123) * (e23 - x2) * (x2 - e12)).inv();
        assert!((v - closed).norm() < 1e-12 * closed.norm());
    }

    #[test]
    fn list_kernel_depends_only_on_type() {
        let xi = [c(-0.9, 0.1), c(-1.2, 0.2), c(-0.7, -0.25)];
        let eta = [c(0.2, -0.1), c(-0.1, 0.3), c(0.05, 0.15)];
        let t = IndexList::parse("123").unwrap();
        let a = pi_sigma_tau(&IndexList::parse("231").unwrap(), &t, &xi, &eta).unwrap();
        let perm = [xi[2], xi[0], xi[1]];
        let b = pi_sigma_tau(&IndexList::parse("123").unwrap(), &t, &perm, &eta).unwrap();
        assert!((a.to_complex() - b.to_complex()).norm() < 1e-12 * a.abs());
    }

    #[test]
    fn level_kernel_is_symmetric_within_blocks() {
        let n = [1usize, 2, 1];
        let xi = vec![vec![c(-0.9, 0.1)], vec![c(-1.2, 0.2), c(-1.05, -0.3)], vec![c(-0.7, -0.25)]];
        let eta = vec![vec![c(0.2, -0.1)], vec![c(-0.1, 0.3), c(0.3, 0.2)], vec![c(0.05, 0.15)]];
        let a = pi_n(&xi, &eta).unwrap().to_complex();
        let mut xs = xi.clone();
        xs[1].swap(0, 1);
        let b = pi_n(&xs, &eta).unwrap().to_complex();
        assert!((a - b).norm() < 1e-12 * a.norm());
        let (kernel, lay) = pi_n_kernel(&n, true);
        let mut all = vec![c(0.0, 0.0); lay.vars];
        for i in 0..3 {
            for k in 0..n[i] {
                all[lay.xi[i][k]] = xi[i][k];
                all[lay.eta[i][k]] = eta[i][k];
            }
        }
        let w = kernel.evaluate(&all).unwrap().to_complex();
        assert!((w - a).norm() < 1e-12 * a.norm());
    }
}
