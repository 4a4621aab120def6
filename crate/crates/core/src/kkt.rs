//! KKT points at fixed `x`: the appendix residual, Newton on the reduced
//! system, exhaustive active-set enumeration and second-order classification.

use crate::error::{DiagError, RejectReason, Result};
use crate::linalg;
use crate::problem::{EvalRecord, ParametricProblem};
use crate::regularity;
use crate::ser;
use crate::tol::Tolerances;
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

/// Below this the reduced Jacobian is treated as singular during the solve.
pub const JACOBIAN_SINGULAR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KktPoint {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    /// Full multiplier vector; zero outside `basis`.
    pub lambda: Vec<f64>,
    /// Constraints with `|h_i| <= act_tol`.
    #[serde(serialize_with = "ser::one_based")]
    pub active: Vec<usize>,
    /// Constraints held at equality by the reduced solve (a subset of `active`).
    #[serde(serialize_with = "ser::one_based")]
    pub basis: Vec<usize>,
    pub h: Vec<f64>,
    pub residual: f64,
}

impl KktPoint {
    /// Active constraints whose multiplier is at most `thresh`.
    pub fn weak_active(&self, thresh: f64) -> Vec<usize> {
        self.active
            .iter()
            .copied()
            .filter(|&i| self.lambda[i] <= thresh)
            .collect()
    }

    pub fn strong_active(&self, thresh: f64) -> Vec<usize> {
        self.active
            .iter()
            .copied()
            .filter(|&i| self.lambda[i] > thresh)
            .collect()
    }

    pub(crate) fn z(&self) -> Vec<f64> {
        self.x.iter().chain(&self.y).copied().collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ClassKind {
    StrictLocalMin,
    NotLocalMin,
    Undetermined,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Classification {
    pub kind: ClassKind,
    /// SOSC modulus, or the normalized drop `(g - g*) / r^2` when the probe decided.
    #[serde(serialize_with = "ser::float")]
    pub evidence: f64,
}

pub(crate) fn residual_from(rec: &EvalRecord, lambda: &[f64]) -> f64 {
    let stat = rec.grad_lagrangian(lambda).norm();
    let mut r = stat;
    for (l, h) in lambda.iter().zip(rec.h.iter()) {
        r += (l * h).abs() + (-l).max(0.0) + h.max(0.0);
    }
    r
}

/// `||grad_y L|| + sum |lambda_i h_i| + sum |min(0, lambda_i)| + sum |min(0, -h_i)|`.
pub fn kkt_residual(problem: &ParametricProblem, x: &[f64], y: &[f64], lambda: &[f64]) -> Result<f64> {
    if lambda.len() != problem.k {
        return Err(DiagError::Precondition(format!(
            "lambda has length {}, expected {}",
            lambda.len(),
            problem.k
        )));
    }
    let rec = problem.evaluate(x, y)?;
    let r = residual_from(&rec, lambda);
    if r.is_finite() {
        Ok(r)
    } else {
        Err(DiagError::NonFinite {
            what: "kkt residual".into(),
        })
    }
}

pub(crate) fn full_lambda(k: usize, basis: &[usize], lam: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; k];
    for (j, &i) in basis.iter().enumerate() {
        out[i] = lam[j];
    }
    out
}

fn psi(rec: &EvalRecord, basis: &[usize], lambda_full: &[f64]) -> DVector<f64> {
    let m = rec.grad_y_g.len();
    let stat = rec.grad_lagrangian(lambda_full);
    DVector::from_fn(m + basis.len(), |r, _| {
        if r < m {
            stat[r]
        } else {
            rec.h[basis[r - m]]
        }
    })
}

/// Bordered matrix `[[H_L, A^T], [A, 0]]` for the rows `set`.
pub fn kkt_matrix(rec: &EvalRecord, lambda_full: &[f64], set: &[usize]) -> DMatrix<f64> {
    let m = rec.grad_y_g.len();
    let p = set.len();
    let hl = rec.hess_lagrangian(lambda_full);
    let mut out = DMatrix::zeros(m + p, m + p);
    out.view_mut((0, 0), (m, m)).copy_from(&hl);
    for (r, &i) in set.iter().enumerate() {
        for c in 0..m {
            out[(m + r, c)] = rec.jac_y_h[(i, c)];
            out[(c, m + r)] = rec.jac_y_h[(i, c)];
        }
    }
    out
}

/// Newton on the reduced system; `z = (x, y)` with `x` already checked.
/// Returns `(y, lambda_basis, record)`.
pub(crate) fn reduced_newton(
    problem: &ParametricProblem,
    x: &[f64],
    basis: &[usize],
    y0: &[f64],
    lam0: &[f64],
    tol: &Tolerances,
) -> Result<(Vec<f64>, Vec<f64>, EvalRecord)> {
    reduced_newton_counted(problem, x, basis, y0, lam0, tol).map(|(y, l, r, _)| (y, l, r))
}

/// As [`reduced_newton`], also returning the iterations needed to reach `newton_tol`.
pub(crate) fn reduced_newton_counted(
    problem: &ParametricProblem,
    x: &[f64],
    basis: &[usize],
    y0: &[f64],
    lam0: &[f64],
    tol: &Tolerances,
) -> Result<(Vec<f64>, Vec<f64>, EvalRecord, usize)> {
    let (n, m, k) = (problem.n, problem.m, problem.k);
    let p = basis.len();
    let mut z: Vec<f64> = x.iter().chain(y0).copied().collect();
    let mut lam = lam0.to_vec();
    let mut rec = problem.evaluate_at(&z);
    let mut lf = full_lambda(k, basis, &lam);
    let mut norm = psi(&rec, basis, &lf).norm();
    let mut converged_at: Option<usize> = None;
    let mut it = 0usize;
    loop {
        if !norm.is_finite() {
            return Err(DiagError::NoConverge {
                iterations: it,
                residual: norm,
            });
        }
        if converged_at.is_none() && norm <= tol.newton_tol {
            converged_at = Some(it);
        }
        match converged_at {
            // keep polishing while the residual strictly decreases
            Some(c) if it >= c + tol.max_newton || norm == 0.0 => break,
            None if it >= tol.max_newton => {
                return Err(DiagError::NoConverge {
                    iterations: it,
                    residual: norm,
                })
            }
            _ => {}
        }
        let jac = kkt_matrix(&rec, &lf, basis);
        if converged_at.is_none() {
            let s = linalg::sigma_min(&jac);
            if s < JACOBIAN_SINGULAR {
                return Err(DiagError::SingularJacobian { sigma_min: s });
            }
        }
        let rhs = -psi(&rec, basis, &lf);
        let Some(step) = linalg::solve_vec(&jac, &rhs) else {
            if converged_at.is_some() {
                break;
            }
            return Err(DiagError::SingularJacobian { sigma_min: 0.0 });
        };
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..=tol.max_halvings {
            let mut zt = z.clone();
            for b in 0..m {
                zt[n + b] += t * step[b];
            }
            let lt: Vec<f64> = (0..p).map(|j| lam[j] + t * step[m + j]).collect();
            let rt = problem.evaluate_at(&zt);
            let lft = full_lambda(k, basis, &lt);
            let nt = psi(&rt, basis, &lft).norm();
            if nt < norm {
                z = zt;
                lam = lt;
                rec = rt;
                lf = lft;
                norm = nt;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            if converged_at.is_some() {
                break;
            }
            return Err(DiagError::NoConverge {
                iterations: it,
                residual: norm,
            });
        }
        it += 1;
    }
    Ok((z[n..].to_vec(), lam, rec, converged_at.unwrap_or(it)))
}

/// Builds and validates the KKT point for a converged reduced solve.
pub(crate) fn validate_point(
    x: &[f64],
    y: Vec<f64>,
    basis: &[usize],
    lam: &[f64],
    rec: &EvalRecord,
    tol: &Tolerances,
) -> Result<KktPoint> {
    let k = rec.h.len();
    for (j, &i) in basis.iter().enumerate() {
        if lam[j] < -tol.act_tol {
            return Err(DiagError::Rejected {
                index: i + 1,
                reason: RejectReason::NegativeMultiplier,
            });
        }
    }
    for i in 0..k {
        if !basis.contains(&i) && rec.h[i] > tol.act_tol {
            return Err(DiagError::Rejected {
                index: i + 1,
                reason: RejectReason::Infeasible,
            });
        }
    }
    let lambda = full_lambda(k, basis, lam);
    let active = (0..k).filter(|&i| rec.h[i].abs() <= tol.act_tol).collect();
    Ok(KktPoint {
        x: x.to_vec(),
        y,
        residual: residual_from(rec, &lambda),
        lambda,
        active,
        basis: basis.to_vec(),
        h: rec.h.iter().copied().collect(),
    })
}

fn check_basis(problem: &ParametricProblem, basis: &[usize]) -> Result<()> {
    if basis.len() > problem.m {
        return Err(DiagError::Precondition(format!(
            "|J| = {} exceeds m = {}",
            basis.len(),
            problem.m
        )));
    }
    if basis.windows(2).any(|w| w[0] >= w[1]) || basis.iter().any(|&i| i >= problem.k) {
        return Err(DiagError::Precondition(
            "J must be a sorted set of constraint indices".into(),
        ));
    }
    Ok(())
}

/// Newton on `Psi = (grad_y g + grad_y h_J^T lambda_J, h_J)` from `(y0, lam0)`,
/// then the sign and feasibility checks of a KKT point. `basis` is 0-based.
pub fn solve_reduced_kkt(
    problem: &ParametricProblem,
    x: &[f64],
    basis: &[usize],
    y0: &[f64],
    lam0: &[f64],
    tol: &Tolerances,
) -> Result<KktPoint> {
    check_basis(problem, basis)?;
    if lam0.len() != basis.len() || y0.len() != problem.m {
        return Err(DiagError::Precondition("seed dimensions do not match".into()));
    }
    if y0.iter().chain(lam0).any(|v| !v.is_finite()) {
        return Err(DiagError::NonFinite {
            what: "seed".into(),
        });
    }
    let x = problem.clamp_x(x)?;
    let (y, lam, rec) = reduced_newton(problem, &x, basis, y0, lam0, tol)?;
    validate_point(&x, y, basis, &lam, &rec, tol)
}

/// Least-squares multipliers `argmin ||grad g + A_J^T lambda||` at a seed.
pub(crate) fn multiplier_seed(rec: &EvalRecord, basis: &[usize]) -> Vec<f64> {
    if basis.is_empty() {
        return Vec::new();
    }
    let a = EvalRecord::active_jacobian(rec, basis);
    let gram = &a * a.transpose();
    let rhs = -(&a * &rec.grad_y_g);
    match linalg::solve_vec(&gram, &rhs) {
        Some(l) if l.iter().all(|v| v.is_finite()) => l.iter().copied().collect(),
        _ => vec![0.0; basis.len()],
    }
}

/// All index sets of size at most `max` drawn from `0..k`, by size then lexicographically.
pub fn subsets_up_to(k: usize, max: usize) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new()];
    let mut frontier = vec![Vec::new()];
    for _ in 0..max.min(k) {
        let mut next = Vec::new();
        for s in &frontier {
            let start = s.last().map_or(0, |l| l + 1);
            for i in start..k {
                let mut t: Vec<usize> = s.clone();
                t.push(i);
                next.push(t);
            }
        }
        out.extend(next.iter().cloned());
        frontier = next;
    }
    out
}

/// Seed grid over the `y` box; odd `per_axis` includes the box center.
pub fn seed_grid(problem: &ParametricProblem, per_axis: usize) -> Vec<Vec<f64>> {
    let mut pts = vec![Vec::new()];
    for (lo, hi) in &problem.y_box {
        let vals: Vec<f64> = (0..per_axis)
            .map(|i| lo + (hi - lo) * i as f64 / (per_axis - 1) as f64)
            .collect();
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

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Enumeration {
    pub points: Vec<KktPoint>,
    /// Reduced solves attempted.
    pub attempts: usize,
    /// Solves that did not converge, were singular or were rejected.
    pub failures: usize,
}

fn lex(a: &[f64], b: &[f64]) -> std::cmp::Ordering {
    for (p, q) in a.iter().zip(b) {
        match p.total_cmp(q) {
            std::cmp::Ordering::Equal => continue,
            o => return o,
        }
    }
    a.len().cmp(&b.len())
}

/// Canonical order: active set, then basis, then `y`.
pub fn canonical_order(a: &KktPoint, b: &KktPoint) -> std::cmp::Ordering {
    a.active
        .cmp(&b.active)
        .then_with(|| a.basis.cmp(&b.basis))
        .then_with(|| lex(&a.y, &b.y))
}

fn close(a: &KktPoint, b: &KktPoint, tol: f64) -> bool {
    a.y.iter()
        .zip(&b.y)
        .chain(a.lambda.iter().zip(&b.lambda))
        .all(|(p, q)| (p - q).abs() <= tol)
}

/// Greedy merge keeping the smaller residual, then canonical order.
pub fn dedup_points(mut pts: Vec<KktPoint>, tol: &Tolerances) -> Vec<KktPoint> {
    pts.sort_by(|a, b| a.residual.total_cmp(&b.residual).then_with(|| canonical_order(a, b)));
    let mut kept: Vec<KktPoint> = Vec::new();
    for p in pts {
        if !kept.iter().any(|q| close(&p, q, tol.dedup_tol)) {
            kept.push(p);
        }
    }
    kept.sort_by(canonical_order);
    kept
}

/// Every active set `|J| <= m` from every grid seed; points with residual above
/// `newton_tol` are discarded and the rest deduplicated.
pub fn enumerate_kkt_points(
    problem: &ParametricProblem,
    x: &[f64],
    seeds_per_axis: usize,
    tol: &Tolerances,
) -> Result<Enumeration> {
    if seeds_per_axis < 2 {
        return Err(DiagError::Precondition("seeds_per_axis must be at least 2".into()));
    }
    let x = problem.clamp_x(x)?;
    let seeds = seed_grid(problem, seeds_per_axis);
    let sets = subsets_up_to(problem.k, problem.m);
    let jobs: Vec<(&Vec<usize>, &Vec<f64>)> =
        sets.iter().flat_map(|s| seeds.iter().map(move |y| (s, y))).collect();
    let results: Vec<Option<KktPoint>> = jobs
        .par_iter()
        .map(|(basis, y0)| {
            let z: Vec<f64> = x.iter().chain(y0.iter()).copied().collect();
            let rec = problem.evaluate_at(&z);
            let lam0 = multiplier_seed(&rec, basis);
            let (y, lam, rec) = reduced_newton(problem, &x, basis, y0, &lam0, tol).ok()?;
            let p = validate_point(&x, y, basis, &lam, &rec, tol).ok()?;
            (p.residual <= tol.newton_tol).then_some(p)
        })
        .collect();
    let attempts = results.len();
    let found: Vec<KktPoint> = results.into_iter().flatten().collect();
    let failures = attempts - found.len();
    Ok(Enumeration {
        points: dedup_points(found, tol),
        attempts,
        failures,
    })
}

/// Probe directions: the two signs for `m = 1`, equally spaced angles for
/// `m = 2`, signed coordinate axes and diagonals otherwise.
fn probe_directions(m: usize, count: usize) -> Vec<Vec<f64>> {
    match m {
        1 => vec![vec![1.0], vec![-1.0]],
        2 => (0..count)
            .map(|i| {
                let t = 2.0 * std::f64::consts::PI * i as f64 / count as f64;
                vec![t.cos(), t.sin()]
            })
            .collect(),
        _ => {
            let mut dirs = Vec::new();
            for code in 1..3usize.pow(m as u32) {
                let mut d = vec![0.0; m];
                let mut c = code;
                for v in d.iter_mut() {
                    *v = (c % 3) as f64 - 1.0;
                    c /= 3;
                }
                let nrm = d.iter().map(|v| v * v).sum::<f64>().sqrt();
                dirs.push(d.iter().map(|v| v / nrm).collect());
                if dirs.len() >= count.max(2 * m) {
                    break;
                }
            }
            dirs
        }
    }
}

/// Slack allowed on strongly active constraints after retraction; the objective
/// gain it buys is far below `class_tol * probe_r^2`.
const RETRACT_SLACK: f64 = 1e-14;

/// Pulls `z` back onto `h_set = 0` by minimum-norm Newton steps in `y`.
fn retract(problem: &ParametricProblem, z: &mut [f64], set: &[usize]) {
    let (n, m) = (problem.n, problem.m);
    for _ in 0..8 {
        let rec = problem.evaluate_at(z);
        let r = DVector::from_fn(set.len(), |i, _| rec.h[set[i]]);
        if r.amax() <= RETRACT_SLACK {
            return;
        }
        let a = rec.active_jacobian(set);
        let Ok(step) = a.svd(true, true).solve(&(-r), 1e-12) else {
            return;
        };
        for b in 0..m {
            z[n + b] += step[b];
        }
    }
}

/// Most negative normalized drop `(g(y') - g(y)) / r^2` over feasible probe
/// points at distance about `r`: straight steps in every direction, plus steps
/// along the tangent space of the strongly active constraints retracted back
/// onto them (a straight step off a curved or strongly active boundary is
/// either infeasible or uphill).
fn probe_descent(problem: &ParametricProblem, kkt: &KktPoint, plus: &[usize], tol: &Tolerances) -> Option<f64> {
    let (n, m) = (problem.n, problem.m);
    let z0 = kkt.z();
    let g0 = problem.g.value(&z0);
    let r = tol.probe_r;
    let rec = problem.evaluate_at(&z0);
    let tangent = linalg::null_space(&rec.active_jacobian(plus), m, 1e-12);
    let mut steps: Vec<(Vec<f64>, bool)> = probe_directions(m, tol.probe_dirs)
        .into_iter()
        .map(|d| (d, false))
        .collect();
    if !plus.is_empty() && tangent.ncols() > 0 {
        for c in probe_directions(tangent.ncols(), tol.probe_dirs) {
            let d = &tangent * DVector::from_vec(c);
            steps.push((d.iter().copied().collect(), true));
        }
    }
    let mut best: Option<f64> = None;
    for (d, on_face) in steps {
        let mut z = z0.clone();
        for (b, v) in d.iter().enumerate() {
            z[n + b] += r * v;
        }
        if on_face {
            retract(problem, &mut z, plus);
        }
        let feasible = problem.h.iter().enumerate().all(|(i, f)| {
            let v = f.value(&z);
            v <= 0.0 || (on_face && plus.contains(&i) && v <= RETRACT_SLACK)
        });
        if !feasible {
            continue;
        }
        let drop = (problem.g.value(&z) - g0) / (r * r);
        best = Some(best.map_or(drop, |b: f64| b.min(drop)));
    }
    best
}

/// Second-order classification with the critical cone split at `reg_tol`.
pub fn classify_kkt(problem: &ParametricProblem, kkt: &KktPoint, tol: &Tolerances) -> Result<Classification> {
    let zero = kkt.weak_active(tol.reg_tol);
    classify_with_zero_set(problem, kkt, &zero, tol)
}

/// Classification where the constraints in `zero` (a subset of `active`) are
/// treated as weakly active and the remaining active ones as strongly active.
pub fn classify_with_zero_set(
    problem: &ParametricProblem,
    kkt: &KktPoint,
    zero: &[usize],
    tol: &Tolerances,
) -> Result<Classification> {
    let rec = problem.evaluate(&kkt.x, &kkt.y)?;
    let plus: Vec<usize> = kkt.active.iter().copied().filter(|i| !zero.contains(i)).collect();
    let modulus = regularity::sosc_modulus_with(&rec, &kkt.lambda, &plus, zero);
    if modulus > tol.class_tol {
        return Ok(Classification {
            kind: ClassKind::StrictLocalMin,
            evidence: modulus,
        });
    }
    if modulus < -tol.class_tol {
        return Ok(Classification {
            kind: ClassKind::NotLocalMin,
            evidence: modulus,
        });
    }
    match probe_descent(problem, kkt, &plus, tol) {
        Some(drop) if drop < -tol.class_tol => Ok(Classification {
            kind: ClassKind::NotLocalMin,
            evidence: drop,
        }),
        _ => Ok(Classification {
            kind: ClassKind::Undetermined,
            evidence: modulus,
        }),
    }
}
