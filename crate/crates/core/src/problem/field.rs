//! Piecewise-polynomial scalar fields over `(x, y)` with exact derivatives.

use super::poly::{Poly, Term};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Smoothness {
    C0,
    C1,
    C2,
}

impl Smoothness {
    /// Highest derivative order that must agree across seams.
    pub fn order(self) -> usize {
        match self {
            Smoothness::C0 => 0,
            Smoothness::C1 => 1,
            Smoothness::C2 => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct CompiledTerm {
    coeff: f64,
    /// (variable index, exponent) for the nonzero exponents only.
    factors: Vec<(usize, i32)>,
}

/// One polynomial piece, valid on the closed box `lo <= x <= hi` (bounds may be infinite).
#[derive(Debug, Clone, PartialEq)]
pub struct Piece {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    poly: Poly,
    terms: Vec<CompiledTerm>,
}

impl Piece {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>, poly: Poly) -> Self {
        let terms = compile(&poly);
        Self { lo, hi, poly, terms }
    }

    pub fn poly(&self) -> &Poly {
        &self.poly
    }

    fn contains(&self, x: &[f64]) -> bool {
        x.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .all(|(v, (lo, hi))| *v >= *lo && *v <= *hi)
    }

    fn distance(&self, x: &[f64]) -> f64 {
        x.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .map(|(v, (lo, hi))| (lo - v).max(v - hi).max(0.0))
            .fold(0.0, f64::max)
    }
}

fn compile(poly: &Poly) -> Vec<CompiledTerm> {
    poly.to_terms()
        .into_iter()
        .map(|t| CompiledTerm {
            coeff: t.coeff,
            factors: t
                .powers
                .iter()
                .enumerate()
                .filter(|(_, e)| **e != 0)
                .map(|(i, e)| (i, *e))
                .collect(),
        })
        .collect()
}

#[inline]
fn pw(v: f64, e: i32) -> f64 {
    match e {
        0 => 1.0,
        1 => v,
        2 => v * v,
        e if e > 0 => v.powi(e),
        e => 1.0 / v.powi(-e),
    }
}

/// Value, gradient and Hessian (row-major, `nvars x nvars`) of a field at one point.
/// Entries above the requested order are left at zero.
#[derive(Debug, Clone, PartialEq)]
pub struct Jet {
    pub value: f64,
    pub grad: Vec<f64>,
    pub hess: Vec<f64>,
}

impl Jet {
    pub fn zeros(nvars: usize) -> Self {
        Self {
            value: 0.0,
            grad: vec![0.0; nvars],
            hess: vec![0.0; nvars * nvars],
        }
    }

    fn reset(&mut self) {
        self.value = 0.0;
        self.grad.iter_mut().for_each(|v| *v = 0.0);
        self.hess.iter_mut().for_each(|v| *v = 0.0);
    }
}

/// A scalar field given by polynomial pieces on axis-aligned boxes in `x`.
#[derive(Debug, Clone, PartialEq)]
pub struct PiecewisePolyField {
    n: usize,
    m: usize,
    pieces: Vec<Piece>,
    smoothness: Smoothness,
}

impl PiecewisePolyField {
    /// A single polynomial valid for every `x`.
    pub fn smooth(n: usize, m: usize, poly: Poly) -> Self {
        assert_eq!(poly.nvars(), n + m);
        Self {
            n,
            m,
            pieces: vec![Piece::new(
                vec![f64::NEG_INFINITY; n],
                vec![f64::INFINITY; n],
                poly,
            )],
            smoothness: Smoothness::C2,
        }
    }

    pub fn piecewise(n: usize, m: usize, pieces: Vec<Piece>, smoothness: Smoothness) -> Self {
        Self {
            n,
            m,
            pieces,
            smoothness,
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn pieces(&self) -> &[Piece] {
        &self.pieces
    }

    pub fn smoothness(&self) -> Smoothness {
        self.smoothness
    }

    /// First piece whose closed box contains `x`; the nearest piece if none does.
    pub fn piece_for(&self, x: &[f64]) -> &Piece {
        self.pieces
            .iter()
            .find(|p| p.contains(x))
            .unwrap_or_else(|| {
                self.pieces
                    .iter()
                    .min_by(|a, b| a.distance(x).total_cmp(&b.distance(x)))
                    .expect("field has at least one piece")
            })
    }

    /// Evaluates up to derivative order `order` (0, 1 or 2) at `z = (x, y)`.
    pub fn eval_into(&self, z: &[f64], order: usize, out: &mut Jet) {
        let piece = self.piece_for(&z[..self.n]);
        eval_terms(&piece.terms, z, order, out);
    }

    pub fn eval(&self, z: &[f64], order: usize) -> Jet {
        let mut out = Jet::zeros(self.n + self.m);
        self.eval_into(z, order, &mut out);
        out
    }

    pub fn value(&self, z: &[f64]) -> f64 {
        let piece = self.piece_for(&z[..self.n]);
        piece
            .terms
            .iter()
            .map(|t| t.coeff * t.factors.iter().map(|&(i, e)| pw(z[i], e)).product::<f64>())
            .sum()
    }

    /// Adds `terms` to every piece. Zero coefficients are skipped so that a zero
    /// addition leaves evaluations bitwise unchanged.
    pub fn add_terms(&mut self, terms: &[Term]) {
        let extra: Vec<&Term> = terms.iter().filter(|t| t.coeff != 0.0).collect();
        if extra.is_empty() {
            return;
        }
        for piece in &mut self.pieces {
            for t in &extra {
                piece.terms.push(CompiledTerm {
                    coeff: t.coeff,
                    factors: t
                        .powers
                        .iter()
                        .enumerate()
                        .filter(|(_, e)| **e != 0)
                        .map(|(i, e)| (i, *e))
                        .collect(),
                });
            }
            piece.poly = &piece.poly + &Poly::from_terms(self.n + self.m, &extra.iter().map(|t| (*t).clone()).collect::<Vec<_>>());
        }
    }

    /// Largest total degree in the `y` variables over all pieces.
    pub fn y_degree(&self) -> i32 {
        self.pieces
            .iter()
            .flat_map(|p| p.poly.to_terms())
            .map(|t| t.powers[self.n..].iter().sum::<i32>())
            .max()
            .unwrap_or(0)
    }

    /// Raw evaluation of one piece, ignoring its box (used by seam checks).
    pub fn eval_piece(&self, index: usize, z: &[f64], order: usize) -> Jet {
        let mut out = Jet::zeros(self.n + self.m);
        eval_terms(&self.pieces[index].terms, z, order, &mut out);
        out
    }
}

fn eval_terms(terms: &[CompiledTerm], z: &[f64], order: usize, out: &mut Jet) {
    out.reset();
    let nv = out.grad.len();
    // per-factor value, first and second derivative
    let mut f = [0.0f64; 8];
    let mut d1 = [0.0f64; 8];
    let mut d2 = [0.0f64; 8];
    for t in terms {
        let nf = t.factors.len();
        if nf > 8 {
            eval_term_slow(t, z, order, out);
            continue;
        }
        for (s, &(i, e)) in t.factors.iter().enumerate() {
            let v = z[i];
            f[s] = pw(v, e);
            if order >= 1 {
                d1[s] = e as f64 * pw(v, e - 1);
            }
            if order >= 2 {
                let c = e * (e - 1);
                d2[s] = if c == 0 { 0.0 } else { c as f64 * pw(v, e - 2) };
            }
        }
        let prod_except = |skip_a: usize, skip_b: usize| -> f64 {
            let mut p = t.coeff;
            for s in 0..nf {
                if s != skip_a && s != skip_b {
                    p *= f[s];
                }
            }
            p
        };
        out.value += prod_except(usize::MAX, usize::MAX);
        if order >= 1 {
            for a in 0..nf {
                let ia = t.factors[a].0;
                out.grad[ia] += d1[a] * prod_except(a, usize::MAX);
                if order >= 2 {
                    out.hess[ia * nv + ia] += d2[a] * prod_except(a, usize::MAX);
                    for b in (a + 1)..nf {
                        let ib = t.factors[b].0;
                        let v = d1[a] * d1[b] * prod_except(a, b);
                        out.hess[ia * nv + ib] += v;
                        out.hess[ib * nv + ia] += v;
                    }
                }
            }
        }
    }
}

fn eval_term_slow(t: &CompiledTerm, z: &[f64], order: usize, out: &mut Jet) {
    let nv = out.grad.len();
    let nf = t.factors.len();
    let f: Vec<f64> = t.factors.iter().map(|&(i, e)| pw(z[i], e)).collect();
    let d1: Vec<f64> = t
        .factors
        .iter()
        .map(|&(i, e)| e as f64 * pw(z[i], e - 1))
        .collect();
    let d2: Vec<f64> = t
        .factors
        .iter()
        .map(|&(i, e)| {
            let c = e * (e - 1);
            if c == 0 {
                0.0
            } else {
                c as f64 * pw(z[i], e - 2)
            }
        })
        .collect();
    let prod = |a: usize, b: usize| -> f64 {
        (0..nf)
            .filter(|s| *s != a && *s != b)
            .fold(t.coeff, |p, s| p * f[s])
    };
    out.value += prod(usize::MAX, usize::MAX);
    if order >= 1 {
        for a in 0..nf {
            let ia = t.factors[a].0;
            out.grad[ia] += d1[a] * prod(a, usize::MAX);
            if order >= 2 {
                out.hess[ia * nv + ia] += d2[a] * prod(a, usize::MAX);
                for b in (a + 1)..nf {
                    let ib = t.factors[b].0;
                    let v = d1[a] * d1[b] * prod(a, b);
                    out.hess[ia * nv + ib] += v;
                    out.hess[ib * nv + ia] += v;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derivatives_of_mixed_monomial() {
        // f = 3 x y^2 at (x, y) = (2, -1)
        let p = Poly::from_terms(
            2,
            &[Term {
                powers: vec![1, 2],
                coeff: 3.0,
            }],
        );
        let f = PiecewisePolyField::smooth(1, 1, p);
        let j = f.eval(&[2.0, -1.0], 2);
        assert_eq!(j.value, 6.0);
        assert_eq!(j.grad, vec![3.0, -12.0]);
        assert_eq!(j.hess, vec![0.0, -6.0, -6.0, 12.0]);
    }

    #[test]
    fn negative_power_of_x() {
        // f = y^2 / x^2
        let p = Poly::from_terms(
            2,
            &[Term {
                powers: vec![-2, 2],
                coeff: 1.0,
            }],
        );
        let f = PiecewisePolyField::smooth(1, 1, p);
        let j = f.eval(&[2.0, 1.0], 2);
        assert_eq!(j.value, 0.25);
        assert_eq!(j.grad[0], -0.25);
        assert_eq!(j.grad[1], 0.5);
        assert_eq!(j.hess[0], 0.375);
        assert_eq!(j.hess[1], -0.5);
        assert_eq!(j.hess[3], 0.5);
    }

    #[test]
    fn piece_selection_prefers_first_match_at_seam() {
        let x = Poly::var(2, 0);
        let lo = Piece::new(vec![f64::NEG_INFINITY], vec![0.0], x.powi(3));
        let mid = Piece::new(vec![0.0], vec![1.0], Poly::zero(2));
        let f = PiecewisePolyField::piecewise(1, 1, vec![lo, mid], Smoothness::C2);
        assert_eq!(f.value(&[-0.5, 0.0]), -0.125);
        assert_eq!(f.value(&[0.5, 0.0]), 0.0);
        // outside every piece: nearest piece is used
        assert_eq!(f.value(&[3.0, 0.0]), 0.0);
    }
}
