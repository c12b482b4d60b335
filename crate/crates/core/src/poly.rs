//! Truncated multivariate polynomials with complex coefficients.
//!
//! Used for the symbolic side of graph normal forms: the defining function
//! `h(x, w, w_bar)` is a polynomial once `w` and `w_bar` are treated as
//! independent variables, and recentering is composition plus series
//! inversion of such polynomials.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use num_complex::Complex64;

pub type Exponent = Vec<u32>;

#[derive(Debug, Clone, PartialEq)]
pub struct Poly {
    nvars: usize,
    terms: BTreeMap<Exponent, Complex64>,
}

impl Poly {
    pub fn zero(nvars: usize) -> Self {
        Self {
            nvars,
            terms: BTreeMap::new(),
        }
    }

    pub fn constant(nvars: usize, c: Complex64) -> Self {
        let mut p = Self::zero(nvars);
        p.add_term(vec![0; nvars], c);
        p
    }

    /// The coordinate function of variable `index`.
    pub fn var(nvars: usize, index: usize) -> Self {
        let mut e = vec![0; nvars];
        e[index] = 1;
        let mut p = Self::zero(nvars);
        p.add_term(e, Complex64::new(1.0, 0.0));
        p
    }

    pub fn nvars(&self) -> usize {
        self.nvars
    }

    pub fn terms(&self) -> impl Iterator<Item = (&Exponent, &Complex64)> {
        self.terms.iter()
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn coefficient(&self, exponent: &[u32]) -> Complex64 {
        self.terms.get(exponent).copied().unwrap_or_default()
    }

    pub fn add_term(&mut self, exponent: Exponent, c: Complex64) {
        debug_assert_eq!(exponent.len(), self.nvars);
        if c == Complex64::new(0.0, 0.0) {
            return;
        }
        let slot = self.terms.entry(exponent).or_default();
        *slot += c;
    }

    pub fn degree(&self) -> u32 {
        self.terms.keys().map(|e| e.iter().sum()).max().unwrap_or(0)
    }

    /// Terms of total degree `k`.
    pub fn homogeneous(&self, k: u32) -> Self {
        Self {
            nvars: self.nvars,
            terms: self
                .terms
                .iter()
                .filter(|(e, _)| e.iter().sum::<u32>() == k)
                .map(|(e, c)| (e.clone(), *c))
                .collect(),
        }
    }

    pub fn truncate(&mut self, max_degree: u32) {
        self.terms.retain(|e, _| e.iter().sum::<u32>() <= max_degree);
    }

    /// Drops coefficients with modulus at most `tol`.
    pub fn prune(&mut self, tol: f64) {
        self.terms.retain(|_, c| c.norm() > tol);
    }

    pub fn scale(&self, s: Complex64) -> Self {
        Self {
            nvars: self.nvars,
            terms: self.terms.iter().map(|(e, c)| (e.clone(), c * s)).collect(),
        }
    }

    pub fn add(&self, other: &Self) -> Self {
        let mut out = self.clone();
        out.add_assign(other);
        out
    }

    pub fn add_assign(&mut self, other: &Self) {
        debug_assert_eq!(self.nvars, other.nvars);
        for (e, c) in &other.terms {
            *self.terms.entry(e.clone()).or_default() += *c;
        }
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.add(&other.scale(Complex64::new(-1.0, 0.0)))
    }

    pub fn mul(&self, other: &Self, max_degree: u32) -> Self {
        debug_assert_eq!(self.nvars, other.nvars);
        let mut out = Self::zero(self.nvars);
        for (ea, ca) in &self.terms {
            let da: u32 = ea.iter().sum();
            for (eb, cb) in &other.terms {
                let db: u32 = eb.iter().sum();
                if da + db > max_degree {
                    continue;
                }
                let e: Exponent = ea.iter().zip(eb).map(|(a, b)| a + b).collect();
                *out.terms.entry(e).or_default() += ca * cb;
            }
        }
        out
    }

    /// Substitutes variable `i` by `subs[i]`; all substitutes share one
    /// variable count, which becomes the result's.
    pub fn compose(&self, subs: &[Poly], max_degree: u32) -> Self {
        debug_assert_eq!(subs.len(), self.nvars);
        let target = subs.first().map(|p| p.nvars).unwrap_or(0);
        let mut powers: Vec<Vec<Poly>> = subs
            .iter()
            .map(|_| vec![Poly::constant(target, Complex64::new(1.0, 0.0))])
            .collect();
        let mut out = Poly::zero(target);
        for (e, c) in &self.terms {
            let mut term = Poly::constant(target, *c);
            for (i, &k) in e.iter().enumerate() {
                if k == 0 {
                    continue;
                }
                while powers[i].len() <= k as usize {
                    let next = powers[i].last().unwrap().mul(&subs[i], max_degree);
                    powers[i].push(next);
                }
                term = term.mul(&powers[i][k as usize], max_degree);
            }
            out.add_assign(&term);
        }
        out
    }

    pub fn eval(&self, point: &[Complex64]) -> Complex64 {
        self.terms
            .iter()
            .map(|(e, c)| {
                e.iter()
                    .zip(point)
                    .fold(*c, |acc, (&k, z)| acc * z.powu(k))
            })
            .sum()
    }

    /// Conjugates every coefficient and relabels variables by `perm`
    /// (variable `i` becomes `perm[i]`). With `perm` swapping `w` and `w_bar`
    /// this is complex conjugation of the represented function.
    pub fn conjugate(&self, perm: &[usize]) -> Self {
        let mut out = Self::zero(self.nvars);
        for (e, c) in &self.terms {
            let mut ne = vec![0; self.nvars];
            for (i, &k) in e.iter().enumerate() {
                ne[perm[i]] = k;
            }
            out.add_term(ne, c.conj());
        }
        out
    }

    /// Partial derivative with respect to variable `index`.
    pub fn derivative(&self, index: usize) -> Self {
        let mut out = Self::zero(self.nvars);
        for (e, c) in &self.terms {
            if e[index] == 0 {
                continue;
            }
            let mut ne = e.clone();
            ne[index] -= 1;
            out.add_term(ne, c * e[index] as f64);
        }
        out
    }

    /// Largest coefficient modulus.
    pub fn max_coefficient(&self) -> f64 {
        self.terms.values().map(|c| c.norm()).fold(0.0, f64::max)
    }
}
