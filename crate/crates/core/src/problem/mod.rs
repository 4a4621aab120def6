//! Parametric lower-level problems `min_y g(x, y) s.t. h_i(x, y) <= 0`.

pub mod corpus;
mod fd;
pub mod field;
pub mod file;
pub mod poly;

pub use corpus::{list_corpus, load_corpus, CorpusEntry};
pub use fd::fd_check;
pub use field::{Jet, Piece, PiecewisePolyField, Smoothness};
pub use file::{load_problem, parse_problem, ProblemFile};
pub use poly::{Poly, Term};

use crate::error::{DiagError, Result};
use nalgebra::{DMatrix, DVector};

/// How far outside the domain box `x` may lie before it is rejected instead of clamped.
pub const DOMAIN_SLACK: f64 = 1e-9;

/// Largest derivative jump tolerated across a declared seam.
pub const SEAM_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct ParametricProblem {
    pub name: String,
    pub n: usize,
    pub m: usize,
    pub k: usize,
    pub x_domain: Vec<(f64, f64)>,
    /// Search box for `y`; every seeded solve and grid scan stays inside it.
    pub y_box: Vec<(f64, f64)>,
    pub g: PiecewisePolyField,
    pub h: Vec<PiecewisePolyField>,
    pub slater_margin: Option<f64>,
}

/// Everything the KKT machinery needs at one `(x, y)`.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalRecord {
    pub g: f64,
    pub grad_y_g: DVector<f64>,
    pub hess_yy_g: DMatrix<f64>,
    /// `(a, b)` entry is the mixed second derivative in `x_a` and `y_b`.
    pub hess_xy_g: DMatrix<f64>,
    pub h: DVector<f64>,
    pub jac_y_h: DMatrix<f64>,
    pub jac_x_h: DMatrix<f64>,
    pub hess_yy_h: Vec<DMatrix<f64>>,
    pub hess_xy_h: Vec<DMatrix<f64>>,
}

impl EvalRecord {
    /// Hessian of the Lagrangian `g + sum lambda_i h_i` in `y`.
    pub fn hess_lagrangian(&self, lambda: &[f64]) -> DMatrix<f64> {
        let mut hl = self.hess_yy_g.clone();
        for (i, l) in lambda.iter().enumerate() {
            if *l != 0.0 {
                hl += &self.hess_yy_h[i] * *l;
            }
        }
        hl
    }

    /// Mixed Hessian of the Lagrangian, `n x m`.
    pub fn hess_xy_lagrangian(&self, lambda: &[f64]) -> DMatrix<f64> {
        let mut hl = self.hess_xy_g.clone();
        for (i, l) in lambda.iter().enumerate() {
            if *l != 0.0 {
                hl += &self.hess_xy_h[i] * *l;
            }
        }
        hl
    }

    /// Gradient of the Lagrangian in `y`.
    pub fn grad_lagrangian(&self, lambda: &[f64]) -> DVector<f64> {
        let mut gl = self.grad_y_g.clone();
        for (i, l) in lambda.iter().enumerate() {
            if *l != 0.0 {
                gl += self.jac_y_h.row(i).transpose() * *l;
            }
        }
        gl
    }

    /// Rows of `jac_y_h` for the indices in `set`.
    pub fn active_jacobian(&self, set: &[usize]) -> DMatrix<f64> {
        let m = self.jac_y_h.ncols();
        DMatrix::from_fn(set.len(), m, |r, c| self.jac_y_h[(set[r], c)])
    }
}

impl ParametricProblem {
    /// Checks `x` against the domain box, clamping roundoff-sized excursions.
    pub fn clamp_x(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.n {
            return Err(DiagError::Precondition(format!(
                "x has dimension {}, expected {}",
                x.len(),
                self.n
            )));
        }
        let mut out = Vec::with_capacity(self.n);
        for (v, (lo, hi)) in x.iter().zip(&self.x_domain) {
            if !v.is_finite() || *v < lo - DOMAIN_SLACK || *v > hi + DOMAIN_SLACK {
                return Err(DiagError::Domain { x: x.to_vec() });
            }
            out.push(v.clamp(*lo, *hi));
        }
        Ok(out)
    }

    fn point(&self, x: &[f64], y: &[f64]) -> Result<Vec<f64>> {
        let x = self.clamp_x(x)?;
        if y.len() != self.m {
            return Err(DiagError::Precondition(format!(
                "y has dimension {}, expected {}",
                y.len(),
                self.m
            )));
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(DiagError::NonFinite {
                what: "y".to_string(),
            });
        }
        let mut z = x;
        z.extend_from_slice(y);
        Ok(z)
    }

    /// Full derivative record at `(x, y)`.
    pub fn evaluate(&self, x: &[f64], y: &[f64]) -> Result<EvalRecord> {
        let z = self.point(x, y)?;
        self.evaluate_at(&z).finite()
    }

    /// Same as [`evaluate`](Self::evaluate) without the domain check; `z = (x, y)`.
    pub(crate) fn evaluate_at(&self, z: &[f64]) -> EvalRecord {
        let (n, m, k) = (self.n, self.m, self.k);
        let nv = n + m;
        let mut jet = Jet::zeros(nv);
        self.g.eval_into(z, 2, &mut jet);
        let g = jet.value;
        let grad_y_g = DVector::from_fn(m, |b, _| jet.grad[n + b]);
        let hess_yy_g = DMatrix::from_fn(m, m, |a, b| jet.hess[(n + a) * nv + n + b]);
        let hess_xy_g = DMatrix::from_fn(n, m, |a, b| jet.hess[a * nv + n + b]);
        let mut h = DVector::zeros(k);
        let mut jac_y_h = DMatrix::zeros(k, m);
        let mut jac_x_h = DMatrix::zeros(k, n);
        let mut hess_yy_h = Vec::with_capacity(k);
        let mut hess_xy_h = Vec::with_capacity(k);
        for (i, f) in self.h.iter().enumerate() {
            f.eval_into(z, 2, &mut jet);
            h[i] = jet.value;
            for b in 0..m {
                jac_y_h[(i, b)] = jet.grad[n + b];
            }
            for a in 0..n {
                jac_x_h[(i, a)] = jet.grad[a];
            }
            hess_yy_h.push(DMatrix::from_fn(m, m, |a, b| jet.hess[(n + a) * nv + n + b]));
            hess_xy_h.push(DMatrix::from_fn(n, m, |a, b| jet.hess[a * nv + n + b]));
        }
        EvalRecord {
            g,
            grad_y_g,
            hess_yy_g,
            hess_xy_g,
            h,
            jac_y_h,
            jac_x_h,
            hess_yy_h,
            hess_xy_h,
        }
    }

    pub fn g_value(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        let z = self.point(x, y)?;
        finite_scalar(self.g.value(&z), "g")
    }

    pub fn h_values(&self, x: &[f64], y: &[f64]) -> Result<Vec<f64>> {
        let z = self.point(x, y)?;
        let h: Vec<f64> = self.h.iter().map(|f| f.value(&z)).collect();
        if h.iter().any(|v| !v.is_finite()) {
            return Err(DiagError::NonFinite {
                what: "h".to_string(),
            });
        }
        Ok(h)
    }

    /// Constraint values and `y`-gradients without domain checks; `z = (x, y)`.
    pub(crate) fn constraint_jets(&self, z: &[f64], jet: &mut Jet, h: &mut [f64], jac: &mut DMatrix<f64>) {
        let n = self.n;
        for (i, f) in self.h.iter().enumerate() {
            f.eval_into(z, 1, jet);
            h[i] = jet.value;
            for b in 0..self.m {
                jac[(i, b)] = jet.grad[n + b];
            }
        }
    }

    /// `x` at fraction `t` along the diagonal of the domain box.
    pub fn domain_point(&self, t: f64) -> Vec<f64> {
        self.x_domain
            .iter()
            .map(|(lo, hi)| lo + t * (hi - lo))
            .collect()
    }

    /// Structural checks plus the seam test for fields declared C0/C1/C2.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(DiagError::InvalidProblem(msg));
        if self.n == 0 || self.m == 0 {
            return bad("n and m must be at least 1".into());
        }
        if self.h.len() != self.k {
            return bad(format!("k = {} but {} constraints given", self.k, self.h.len()));
        }
        if self.x_domain.len() != self.n {
            return bad("x_domain must have one interval per x coordinate".into());
        }
        if self.y_box.len() != self.m {
            return bad("y_box must have one interval per y coordinate".into());
        }
        for (lo, hi) in self.x_domain.iter().chain(&self.y_box) {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return bad(format!("invalid interval [{lo}, {hi}]"));
            }
        }
        if let Some(rho) = self.slater_margin {
            if !(rho > 0.0) {
                return bad("slater_margin must be positive".into());
            }
        }
        for (name, f) in self.fields() {
            if f.n() != self.n || f.m() != self.m {
                return bad(format!("field {name} has the wrong dimensions"));
            }
            for p in f.pieces() {
                for t in p.poly().to_terms() {
                    if t.powers[self.n..].iter().any(|e| *e < 0) {
                        return bad(format!("field {name}: negative power of a y variable"));
                    }
                    for (a, e) in t.powers[..self.n].iter().enumerate() {
                        let (lo, hi) = self.x_domain[a];
                        if *e < 0 && lo <= 0.0 && hi >= 0.0 {
                            return bad(format!(
                                "field {name}: negative power of x{} on a domain containing 0",
                                a + 1
                            ));
                        }
                    }
                }
            }
            self.check_seams(&name, f)?;
        }
        Ok(())
    }

    fn fields(&self) -> Vec<(String, &PiecewisePolyField)> {
        let mut out = vec![("g".to_string(), &self.g)];
        for (i, f) in self.h.iter().enumerate() {
            out.push((format!("h{}", i + 1), f));
        }
        out
    }

    fn seam_y_samples(&self) -> Vec<Vec<f64>> {
        let mut pts = vec![Vec::new()];
        for (lo, hi) in &self.y_box {
            let w = hi - lo;
            let vals = [lo + 0.25 * w, lo + 0.5 * w, lo + 0.8 * w];
            pts = pts
                .into_iter()
                .flat_map(|p| {
                    vals.iter().map(move |v| {
                        let mut q = p.clone();
                        q.push(*v);
                        q
                    })
                })
                .collect();
        }
        pts
    }

    fn check_seams(&self, name: &str, f: &PiecewisePolyField) -> Result<()> {
        let order = f.smoothness().order();
        let pieces = f.pieces();
        let ys = self.seam_y_samples();
        for (ia, a) in pieces.iter().enumerate() {
            for (ib, b) in pieces.iter().enumerate() {
                if ia == ib {
                    continue;
                }
                for c in 0..self.n {
                    let bp = a.hi[c];
                    if !bp.is_finite() || bp != b.lo[c] {
                        continue;
                    }
                    let (dlo, dhi) = self.x_domain[c];
                    if bp < dlo || bp > dhi {
                        continue;
                    }
                    // seam point: breakpoint in coordinate c, overlap midpoint elsewhere
                    let mut x = Vec::with_capacity(self.n);
                    let mut overlap = true;
                    for d in 0..self.n {
                        if d == c {
                            x.push(bp);
                            continue;
                        }
                        let lo = a.lo[d].max(b.lo[d]).max(self.x_domain[d].0);
                        let hi = a.hi[d].min(b.hi[d]).min(self.x_domain[d].1);
                        if lo > hi {
                            overlap = false;
                        }
                        x.push(0.5 * (lo + hi));
                    }
                    if !overlap {
                        continue;
                    }
                    for y in &ys {
                        let mut z = x.clone();
                        z.extend_from_slice(y);
                        let ja = f.eval_piece(ia, &z, order);
                        let jb = f.eval_piece(ib, &z, order);
                        let jumps = [
                            (ja.value - jb.value).abs(),
                            max_diff(&ja.grad, &jb.grad),
                            max_diff(&ja.hess, &jb.hess),
                        ];
                        for (o, jump) in jumps.iter().enumerate().take(order + 1) {
                            if *jump > SEAM_TOL || !jump.is_finite() {
                                return Err(DiagError::Seam {
                                    field: name.to_string(),
                                    breakpoint: bp,
                                    order: o,
                                    jump: *jump,
                                });
                            }
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// Grid search for a point with `h_i <= -rho` for all `i` at `samples` values of `x`
    /// spread along the domain diagonal.
    pub fn slater_check(&self, rho: f64, samples: usize, grid: usize) -> Result<()> {
        let grid = grid.max(2);
        let total = grid.pow(self.m as u32);
        for s in 0..samples {
            let t = if samples == 1 { 0.5 } else { s as f64 / (samples - 1) as f64 };
            let x = self.domain_point(t);
            let mut found = false;
            let mut y = vec![0.0; self.m];
            for idx in 0..total {
                let mut r = idx;
                for (j, (lo, hi)) in self.y_box.iter().enumerate() {
                    let i = r % grid;
                    r /= grid;
                    y[j] = lo + (hi - lo) * i as f64 / (grid - 1) as f64;
                }
                let h = self.h_values(&x, &y)?;
                if h.iter().all(|v| *v <= -rho) {
                    found = true;
                    break;
                }
            }
            if !found {
                return Err(DiagError::InvalidProblem(format!(
                    "no point with margin {rho} found at x = {x:?}"
                )));
            }
        }
        Ok(())
    }
}

impl EvalRecord {
    fn finite(self) -> Result<Self> {
        let ok = self.g.is_finite()
            && self.grad_y_g.iter().all(|v| v.is_finite())
            && self.hess_yy_g.iter().all(|v| v.is_finite())
            && self.hess_xy_g.iter().all(|v| v.is_finite())
            && self.h.iter().all(|v| v.is_finite())
            && self.jac_y_h.iter().all(|v| v.is_finite())
            && self.jac_x_h.iter().all(|v| v.is_finite())
            && self.hess_yy_h.iter().flat_map(|h| h.iter()).all(|v| v.is_finite())
            && self.hess_xy_h.iter().flat_map(|h| h.iter()).all(|v| v.is_finite());
        if ok {
            Ok(self)
        } else {
            Err(DiagError::NonFinite {
                what: "evaluation record".to_string(),
            })
        }
    }
}

fn finite_scalar(v: f64, what: &str) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(DiagError::NonFinite {
            what: what.to_string(),
        })
    }
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(p, q)| (p - q).abs())
        .fold(0.0, f64::max)
}
