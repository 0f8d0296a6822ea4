//! Multivariate polynomials in `Z ∈ ℝ^d` with complex coefficients, stored
//! as a sorted map from exponent vectors to coefficients.

use std::collections::BTreeMap;

use crate::linalg::C64;

#[derive(Debug, Clone, PartialEq)]
pub struct Poly {
    pub d: usize,
    pub terms: BTreeMap<Vec<u32>, C64>,
}

impl Poly {
    pub fn zero(d: usize) -> Self {
        Self { d, terms: BTreeMap::new() }
    }

    pub fn constant(d: usize, c: C64) -> Self {
        let mut p = Self::zero(d);
        p.add_term(vec![0; d], c);
        p
    }

    /// The coordinate function `Z_j`.
    pub fn coord(d: usize, j: usize) -> Self {
        let mut e = vec![0; d];
        e[j] = 1;
        let mut p = Self::zero(d);
        p.add_term(e, C64::new(1.0, 0.0));
        p
    }

    pub fn monomial(exps: Vec<u32>, c: C64) -> Self {
        let mut p = Self::zero(exps.len());
        p.add_term(exps, c);
        p
    }

    pub fn add_term(&mut self, exps: Vec<u32>, c: C64) {
        debug_assert_eq!(exps.len(), self.d);
        let entry = self.terms.entry(exps).or_insert(C64::new(0.0, 0.0));
        *entry += c;
        self.prune();
    }

    fn prune(&mut self) {
        self.terms.retain(|_, c| *c != C64::new(0.0, 0.0));
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn add(&self, other: &Poly) -> Poly {
        let mut out = self.clone();
        for (e, c) in &other.terms {
            *out.terms.entry(e.clone()).or_insert(C64::new(0.0, 0.0)) += c;
        }
        out.prune();
        out
    }

    pub fn scale(&self, s: C64) -> Poly {
        let mut out = self.clone();
        out.terms.values_mut().for_each(|c| *c *= s);
        out.prune();
        out
    }

    pub fn mul(&self, other: &Poly) -> Poly {
        let mut out = Poly::zero(self.d);
        for (ea, ca) in &self.terms {
            for (eb, cb) in &other.terms {
                let e: Vec<u32> = ea.iter().zip(eb).map(|(a, b)| a + b).collect();
                *out.terms.entry(e).or_insert(C64::new(0.0, 0.0)) += ca * cb;
            }
        }
        out.prune();
        out
    }

    pub fn partial(&self, j: usize) -> Poly {
        let mut out = Poly::zero(self.d);
        for (e, c) in &self.terms {
            if e[j] == 0 {
                continue;
            }
            let mut e2 = e.clone();
            e2[j] -= 1;
            *out.terms.entry(e2).or_insert(C64::new(0.0, 0.0)) += c * e[j] as f64;
        }
        out.prune();
        out
    }

    pub fn eval(&self, z: &[f64]) -> C64 {
        self.terms
            .iter()
            .map(|(e, c)| c * e.iter().zip(z).map(|(&k, &zj)| zj.powi(k as i32)).product::<f64>())
            .sum()
    }

    /// Highest total degree; `None` for the zero polynomial.
    pub fn degree(&self) -> Option<u32> {
        self.terms.keys().map(|e| e.iter().sum()).max()
    }

    pub fn min_degree(&self) -> Option<u32> {
        self.terms.keys().map(|e| e.iter().sum()).min()
    }

    pub fn is_homogeneous(&self, r: u32) -> bool {
        self.terms.keys().all(|e| e.iter().sum::<u32>() == r)
    }

    /// Largest coefficient magnitude.
    pub fn max_coeff(&self) -> f64 {
        self.terms.values().fold(0.0, |a, c| a.max(c.norm()))
    }

    /// Drop coefficients below `tol`.
    pub fn chop(&self, tol: f64) -> Poly {
        let mut out = self.clone();
        out.terms.retain(|_, c| c.norm() > tol);
        out
    }
}

/// All multi-indices in `d` variables with total degree `r`.
pub fn multi_indices(d: usize, r: u32) -> Vec<Vec<u32>> {
    fn rec(d: usize, r: u32, prefix: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
        if prefix.len() + 1 == d {
            prefix.push(r);
            out.push(prefix.clone());
            prefix.pop();
            return;
        }
        for k in (0..=r).rev() {
            prefix.push(k);
            rec(d, r - k, prefix, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    rec(d, r, &mut Vec::new(), &mut out);
    out
}

pub fn factorial(n: u32) -> f64 {
    (1..=n).map(f64::from).product()
}

/// `α!` for a multi-index.
pub fn multi_factorial(alpha: &[u32]) -> f64 {
    alpha.iter().map(|&a| factorial(a)).product()
}
