//! Sparse multivariate polynomials over `(x_1..x_n, y_1..y_m)`.
//!
//! Exponents of the `x` coordinates may be negative (Laurent terms such as
//! `y_2^2 / x^2`), which is only valid on domains that keep those coordinates
//! away from zero; `y` exponents are non-negative.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::ops::{Add, Mul, Neg, Sub};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Term {
    pub powers: Vec<i32>,
    pub coeff: f64,
}

/// Polynomial in `nvars` variables stored as exponent vector -> coefficient.
#[derive(Debug, Clone, PartialEq)]
pub struct Poly {
    nvars: usize,
    terms: BTreeMap<Vec<i32>, f64>,
}

impl Poly {
    pub fn zero(nvars: usize) -> Self {
        Self {
            nvars,
            terms: BTreeMap::new(),
        }
    }

    pub fn constant(nvars: usize, c: f64) -> Self {
        let mut p = Self::zero(nvars);
        if c != 0.0 {
            p.terms.insert(vec![0; nvars], c);
        }
        p
    }

    /// The coordinate function for variable `idx`.
    pub fn var(nvars: usize, idx: usize) -> Self {
        Self::monomial(nvars, idx, 1, 1.0)
    }

    pub fn monomial(nvars: usize, idx: usize, power: i32, coeff: f64) -> Self {
        let mut e = vec![0; nvars];
        e[idx] = power;
        let mut p = Self::zero(nvars);
        if coeff != 0.0 {
            p.terms.insert(e, coeff);
        }
        p
    }

    pub fn nvars(&self) -> usize {
        self.nvars
    }

    pub fn scale(&self, c: f64) -> Self {
        let mut out = Self::zero(self.nvars);
        for (e, v) in &self.terms {
            let t = v * c;
            if t != 0.0 {
                out.terms.insert(e.clone(), t);
            }
        }
        out
    }

    pub fn powi(&self, k: u32) -> Self {
        let mut out = Self::constant(self.nvars, 1.0);
        for _ in 0..k {
            out = &out * self;
        }
        out
    }

    /// Terms in canonical (exponent-lexicographic) order.
    pub fn to_terms(&self) -> Vec<Term> {
        self.terms
            .iter()
            .map(|(e, c)| Term {
                powers: e.clone(),
                coeff: *c,
            })
            .collect()
    }

    pub fn from_terms(nvars: usize, terms: &[Term]) -> Self {
        let mut p = Self::zero(nvars);
        for t in terms {
            p.add_term(t.powers.clone(), t.coeff);
        }
        p
    }

    fn add_term(&mut self, e: Vec<i32>, c: f64) {
        let entry = self.terms.entry(e).or_insert(0.0);
        *entry += c;
        if *entry == 0.0 {
            // keep the map free of cancelled terms
            let key: Vec<Vec<i32>> = self
                .terms
                .iter()
                .filter(|(_, v)| **v == 0.0)
                .map(|(k, _)| k.clone())
                .collect();
            for k in key {
                self.terms.remove(&k);
            }
        }
    }
}

impl Add for &Poly {
    type Output = Poly;
    fn add(self, rhs: &Poly) -> Poly {
        assert_eq!(self.nvars, rhs.nvars);
        let mut out = self.clone();
        for (e, c) in &rhs.terms {
            out.add_term(e.clone(), *c);
        }
        out
    }
}

impl Sub for &Poly {
    type Output = Poly;
    fn sub(self, rhs: &Poly) -> Poly {
        self + &rhs.scale(-1.0)
    }
}

impl Mul for &Poly {
    type Output = Poly;
    fn mul(self, rhs: &Poly) -> Poly {
        assert_eq!(self.nvars, rhs.nvars);
        let mut out = Poly::zero(self.nvars);
        for (e1, c1) in &self.terms {
            for (e2, c2) in &rhs.terms {
                let e: Vec<i32> = e1.iter().zip(e2).map(|(a, b)| a + b).collect();
                out.add_term(e, c1 * c2);
            }
        }
        out
    }
}

impl Neg for &Poly {
    type Output = Poly;
    fn neg(self) -> Poly {
        self.scale(-1.0)
    }
}

macro_rules! owned_ops {
    ($tr:ident, $f:ident) => {
        impl $tr for Poly {
            type Output = Poly;
            fn $f(self, rhs: Poly) -> Poly {
                (&self).$f(&rhs)
            }
        }
        impl $tr<&Poly> for Poly {
            type Output = Poly;
            fn $f(self, rhs: &Poly) -> Poly {
                (&self).$f(rhs)
            }
        }
        impl $tr<f64> for Poly {
            type Output = Poly;
            fn $f(self, rhs: f64) -> Poly {
                let c = Poly::constant(self.nvars, rhs);
                (&self).$f(&c)
            }
        }
    };
}
owned_ops!(Add, add);
owned_ops!(Sub, sub);
owned_ops!(Mul, mul);

impl Neg for Poly {
    type Output = Poly;
    fn neg(self) -> Poly {
        self.scale(-1.0)
    }
}
