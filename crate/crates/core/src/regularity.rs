//! LICQ, strict complementarity and second-order margins at KKT points, the
//! bordered-matrix conditioning, and the near-active gradient scan.

use crate::error::{DiagError, Result};
use crate::kkt::{kkt_matrix, KktPoint};
use crate::linalg;
use crate::problem::{EvalRecord, Jet, ParametricProblem};
use crate::ser;
use crate::tol::Tolerances;
use nalgebra::DMatrix;
use serde::Serialize;

/// Rows of the weakly active gradients may be violated by a direction up to
/// this (relative to the row norm) and still count as on the feasible side.
const CONE_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RegularityReport {
    #[serde(serialize_with = "ser::float")]
    pub licq_margin: f64,
    #[serde(serialize_with = "ser::float")]
    pub scsc_margin: f64,
    #[serde(serialize_with = "ser::float")]
    pub sosc_modulus: f64,
    #[serde(serialize_with = "ser::float")]
    pub kkt_sigma_min: f64,
    pub licq: bool,
    pub scsc: bool,
    pub sosc: bool,
}

impl RegularityReport {
    pub fn all_hold(&self) -> bool {
        self.licq && self.scsc && self.sosc
    }
}

/// `sigma_min` of the stacked rows for `set`: `+inf` when empty, `0` when `|set| > m`.
pub fn licq_margin_at(rec: &EvalRecord, set: &[usize]) -> f64 {
    let m = rec.grad_y_g.len();
    if set.is_empty() {
        return f64::INFINITY;
    }
    if set.len() > m {
        return 0.0;
    }
    linalg::sigma_min_rows(&rec.active_jacobian(set))
}

/// LICQ at a feasible point with the active set taken at `act_tol`.
pub fn check_licq(problem: &ParametricProblem, x: &[f64], y: &[f64], tol: &Tolerances) -> Result<(f64, bool)> {
    let rec = problem.evaluate(x, y)?;
    let max_h = rec.h.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max_h > tol.act_tol {
        return Err(DiagError::Infeasible { max_h });
    }
    let active: Vec<usize> = (0..problem.k).filter(|&i| rec.h[i].abs() <= tol.act_tol).collect();
    let margin = licq_margin_at(&rec, &active);
    Ok((margin, margin > tol.reg_tol && active.len() <= problem.m))
}

/// `min(min_{i active} lambda_i, min_{i inactive} -h_i)`; `+inf` when `k = 0`.
pub fn scsc_margin(kkt: &KktPoint) -> f64 {
    (0..kkt.h.len())
        .map(|i| {
            if kkt.active.contains(&i) {
                kkt.lambda[i]
            } else {
                -kkt.h[i]
            }
        })
        .fold(f64::INFINITY, f64::min)
}

pub fn check_scsc(kkt: &KktPoint, tol: &Tolerances) -> (f64, bool) {
    let m = scsc_margin(kkt);
    (m, m > tol.reg_tol)
}

fn min_eig_on(h: &DMatrix<f64>, z: &DMatrix<f64>) -> f64 {
    if z.ncols() == 0 {
        return f64::INFINITY;
    }
    let reduced = z.transpose() * h * z;
    linalg::sym_eigen(&reduced).0[0]
}

fn rows(rec: &EvalRecord, set: &[usize]) -> DMatrix<f64> {
    rec.active_jacobian(set)
}

fn stack(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let m = a.ncols().max(b.ncols());
    let mut out = DMatrix::zeros(a.nrows() + b.nrows(), m);
    if a.nrows() > 0 {
        out.view_mut((0, 0), (a.nrows(), a.ncols())).copy_from(a);
    }
    if b.nrows() > 0 {
        out.view_mut((a.nrows(), 0), (b.nrows(), b.ncols())).copy_from(b);
    }
    out
}

/// Minimum of `d^T H d` over unit `d` with `A_plus d = 0` and `A_zero d <= 0`,
/// for a symmetric `h` and gradient rows in `a_plus`, `a_zero`.
///
/// The minimizer lies in the relative interior of some face of the cone, where
/// it is an eigenvector of `H` restricted to the face's span; every face
/// (a subset of `A_zero` held at equality) is enumerated and each signed
/// eigenvector checked against the remaining inequalities. `+inf` when the
/// cone is `{0}`.
pub fn cone_modulus(h: &DMatrix<f64>, a_plus: &DMatrix<f64>, a_zero: &DMatrix<f64>) -> f64 {
    let m = h.nrows();
    let ns_tol = 1e-12;
    if a_zero.nrows() == 0 {
        let z = linalg::null_space(a_plus, m, ns_tol);
        return min_eig_on(h, &z);
    }
    let q = a_zero.nrows();
    let row_norms: Vec<f64> = (0..q).map(|r| a_zero.row(r).norm()).collect();
    let mut best = f64::INFINITY;
    for mask in 0..(1usize << q) {
        let held: Vec<usize> = (0..q).filter(|r| mask & (1 << r) != 0).collect();
        let mut eq = DMatrix::zeros(held.len(), m);
        for (i, &r) in held.iter().enumerate() {
            eq.row_mut(i).copy_from(&a_zero.row(r));
        }
        let z = linalg::null_space(&stack(a_plus, &eq), m, ns_tol);
        if z.ncols() == 0 {
            continue;
        }
        let reduced = z.transpose() * h * &z;
        let (vals, vecs) = linalg::sym_eigen(&reduced);
        for (e, val) in vals.iter().enumerate() {
            if *val >= best {
                continue;
            }
            let d = &z * vecs.column(e);
            for sign in [1.0, -1.0] {
                let ok = (0..q).all(|r| sign * a_zero.row(r).dot(&d.transpose()) <= CONE_SLACK * row_norms[r].max(1.0));
                if ok {
                    best = best.min(*val);
                }
            }
        }
    }
    best
}

/// Second-order modulus with `plus` held at equality and `zero` on the
/// feasible side; `lambda` is the full multiplier vector.
pub fn sosc_modulus_with(rec: &EvalRecord, lambda: &[f64], plus: &[usize], zero: &[usize]) -> f64 {
    let h = rec.hess_lagrangian(lambda);
    cone_modulus(&h, &rows(rec, plus), &rows(rec, zero))
}

/// Modulus on the critical cone, splitting the active set at `reg_tol`.
pub fn sosc_modulus(problem: &ParametricProblem, kkt: &KktPoint, tol: &Tolerances) -> Result<f64> {
    let rec = problem.evaluate(&kkt.x, &kkt.y)?;
    Ok(sosc_modulus_with(
        &rec,
        &kkt.lambda,
        &kkt.strong_active(tol.reg_tol),
        &kkt.weak_active(tol.reg_tol),
    ))
}

pub fn check_sosc(problem: &ParametricProblem, kkt: &KktPoint, tol: &Tolerances) -> Result<(f64, bool)> {
    let m = sosc_modulus(problem, kkt, tol)?;
    Ok((m, m > tol.reg_tol))
}

/// `sigma_min` of `[[H_L, A_J^T], [A_J, 0]]` with `J` the active set.
pub fn kkt_matrix_sigma_min(problem: &ParametricProblem, kkt: &KktPoint) -> Result<f64> {
    let rec = problem.evaluate(&kkt.x, &kkt.y)?;
    Ok(linalg::sigma_min(&kkt_matrix(&rec, &kkt.lambda, &kkt.active)))
}

pub fn full_report(problem: &ParametricProblem, kkt: &KktPoint, tol: &Tolerances) -> Result<RegularityReport> {
    let rec = problem.evaluate(&kkt.x, &kkt.y)?;
    let licq_margin = licq_margin_at(&rec, &kkt.active);
    let (scsc_margin, scsc) = check_scsc(kkt, tol);
    let sosc_modulus = sosc_modulus_with(
        &rec,
        &kkt.lambda,
        &kkt.strong_active(tol.reg_tol),
        &kkt.weak_active(tol.reg_tol),
    );
    Ok(RegularityReport {
        licq_margin,
        licq: licq_margin > tol.reg_tol && kkt.active.len() <= problem.m,
        scsc_margin,
        scsc,
        sosc_modulus,
        sosc: sosc_modulus > tol.reg_tol,
        kkt_sigma_min: linalg::sigma_min(&kkt_matrix(&rec, &kkt.lambda, &kkt.active)),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradientMarginScan {
    pub rho: f64,
    #[serde(serialize_with = "ser::float")]
    pub sigma_star: f64,
    pub witness_y: Vec<f64>,
    #[serde(serialize_with = "ser::one_based")]
    pub witness_set: Vec<usize>,
    /// Grid points inside the band.
    pub band_points: usize,
}

struct Cand {
    sigma: f64,
    slack: f64,
    y: Vec<f64>,
    set: Vec<usize>,
}

fn better(a: &Cand, b: &Cand) -> bool {
    use std::cmp::Ordering::*;
    match a.sigma.total_cmp(&b.sigma) {
        Less => true,
        Greater => false,
        Equal => match a.slack.total_cmp(&b.slack) {
            Less => true,
            Greater => false,
            Equal => a
                .y
                .iter()
                .zip(&b.y)
                .find(|(p, q)| p != q)
                .is_some_and(|(p, q)| p < q),
        },
    }
}

/// Grid scan of `y_box` for the smallest `sigma_min(grad_y h_J)` over points
/// with `max h <= rho`, taking `J = {j : |h_j| <= rho}` at each point. The
/// largest such set bounds every subset from below, so only it is evaluated.
/// The witness is then pulled onto `h_J = 0` by Gauss-Newton when that does
/// not increase its margin.
pub fn gradient_margin_scan(
    problem: &ParametricProblem,
    x: &[f64],
    rho: f64,
    grid_res: usize,
) -> Result<GradientMarginScan> {
    if !(rho > 0.0) || grid_res < 2 {
        return Err(DiagError::Precondition("rho must be positive and grid_res >= 2".into()));
    }
    let x = problem.clamp_x(x)?;
    let (n, m, k) = (problem.n, problem.m, problem.k);
    let total = grid_res.pow(m as u32);
    let mut z = x.clone();
    z.resize(n + m, 0.0);
    let mut jet = Jet::zeros(n + m);
    let mut h = vec![0.0; k];
    let mut jac = DMatrix::zeros(k, m);
    let mut best: Option<Cand> = None;
    let mut band_points = 0usize;
    for idx in 0..total {
        let mut r = idx;
        for (j, (lo, hi)) in problem.y_box.iter().enumerate() {
            let i = r % grid_res;
            r /= grid_res;
            z[n + j] = lo + (hi - lo) * i as f64 / (grid_res - 1) as f64;
        }
        problem.constraint_jets(&z, &mut jet, &mut h, &mut jac);
        if h.iter().any(|v| *v > rho) {
            continue;
        }
        let set: Vec<usize> = (0..k).filter(|&i| h[i].abs() <= rho).collect();
        if set.is_empty() {
            continue;
        }
        band_points += 1;
        let sigma = set_sigma(&jac, &set, m);
        let cand = Cand {
            sigma,
            slack: set.iter().map(|&i| h[i].abs()).sum(),
            y: z[n..].to_vec(),
            set,
        };
        if best.as_ref().map_or(true, |b| better(&cand, b)) {
            best = Some(cand);
        }
    }
    let Some(mut w) = best else {
        return Err(DiagError::EmptyBand);
    };
    if let Some((y, sigma)) = refine_witness(problem, &x, &w.y, &w.set, rho) {
        if sigma <= w.sigma {
            w.y = y;
            w.sigma = sigma;
        }
    }
    Ok(GradientMarginScan {
        rho,
        sigma_star: w.sigma,
        witness_y: w.y,
        witness_set: w.set,
        band_points,
    })
}

fn set_sigma(jac: &DMatrix<f64>, set: &[usize], m: usize) -> f64 {
    if set.len() > m {
        return 0.0;
    }
    let a = DMatrix::from_fn(set.len(), m, |r, c| jac[(set[r], c)]);
    linalg::sigma_min_rows(&a)
}

/// Gauss-Newton on `h_J(y) = 0`; returns the point and its margin if it stays
/// inside the band with the same near-active set.
fn refine_witness(problem: &ParametricProblem, x: &[f64], y0: &[f64], set: &[usize], rho: f64) -> Option<(Vec<f64>, f64)> {
    let (n, m, k) = (problem.n, problem.m, problem.k);
    let mut z: Vec<f64> = x.iter().chain(y0).copied().collect();
    let mut jet = Jet::zeros(n + m);
    let mut h = vec![0.0; k];
    let mut jac = DMatrix::zeros(k, m);
    for _ in 0..30 {
        problem.constraint_jets(&z, &mut jet, &mut h, &mut jac);
        let a = DMatrix::from_fn(set.len(), m, |r, c| jac[(set[r], c)]);
        let r = nalgebra::DVector::from_fn(set.len(), |i, _| h[set[i]]);
        if r.norm() == 0.0 {
            break;
        }
        let svd = a.svd(true, true);
        let step = svd.solve(&(-r), 1e-12).ok()?;
        if step.norm() < 1e-16 {
            break;
        }
        for b in 0..m {
            z[n + b] += step[b];
        }
    }
    problem.constraint_jets(&z, &mut jet, &mut h, &mut jac);
    if h.iter().any(|v| *v > rho || !v.is_finite()) {
        return None;
    }
    let near: Vec<usize> = (0..k).filter(|&i| h[i].abs() <= rho).collect();
    if near != set {
        return None;
    }
    Some((z[n..].to_vec(), set_sigma(&jac, set, m)))
}
