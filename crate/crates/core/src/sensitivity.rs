//! Derivatives of a KKT point with respect to `x`: the reduced active-set
//! system and the full complementarity system, with conditioning profiles
//! along a branch and a finite-difference cross-check.

use crate::continuation::Branch;
use crate::error::{DiagError, Result};
use crate::kkt::{kkt_matrix, reduced_newton, KktPoint};
use crate::linalg;
use crate::problem::{EvalRecord, ParametricProblem};
use crate::ser;
use crate::tol::Tolerances;
use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Method {
    Reduced,
    Complementarity,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SensitivityResult {
    /// `m x n`.
    #[serde(serialize_with = "ser::matrix")]
    pub dy_dx: DMatrix<f64>,
    /// `k x n`; rows outside the solved set are zero for the reduced system.
    #[serde(serialize_with = "ser::matrix")]
    pub dlambda_dx: DMatrix<f64>,
    pub method: Method,
    pub sigma_min: f64,
    pub det: f64,
    /// Constraint rows in the reduced system; every constraint for the complementarity system.
    #[serde(serialize_with = "ser::one_based")]
    pub set: Vec<usize>,
}

/// `M = [[H_L, A_J^T], [A_J, 0]]` and `N = [grad_xy L^T; grad_x h_J]`.
pub fn reduced_system(rec: &EvalRecord, lambda: &[f64], set: &[usize]) -> (DMatrix<f64>, DMatrix<f64>) {
    let m = rec.grad_y_g.len();
    let n = rec.jac_x_h.ncols();
    let mm = kkt_matrix(rec, lambda, set);
    let hxy = rec.hess_xy_lagrangian(lambda).transpose();
    let mut nn = DMatrix::zeros(m + set.len(), n);
    nn.view_mut((0, 0), (m, n)).copy_from(&hxy);
    for (r, &i) in set.iter().enumerate() {
        for a in 0..n {
            nn[(m + r, a)] = rec.jac_x_h[(i, a)];
        }
    }
    (mm, nn)
}

/// `grad_v G = [[H_L, A^T], [diag(lambda) A, diag(h)]]` and
/// `grad_x G = [grad_xy L^T; diag(lambda) grad_x h]` over all `k` constraints.
pub fn complementarity_system(rec: &EvalRecord, lambda: &[f64]) -> (DMatrix<f64>, DMatrix<f64>) {
    let m = rec.grad_y_g.len();
    let n = rec.jac_x_h.ncols();
    let k = rec.h.len();
    let mut gv = DMatrix::zeros(m + k, m + k);
    gv.view_mut((0, 0), (m, m)).copy_from(&rec.hess_lagrangian(lambda));
    for i in 0..k {
        for c in 0..m {
            gv[(c, m + i)] = rec.jac_y_h[(i, c)];
            gv[(m + i, c)] = lambda[i] * rec.jac_y_h[(i, c)];
        }
        gv[(m + i, m + i)] = rec.h[i];
    }
    let mut gx = DMatrix::zeros(m + k, n);
    gx.view_mut((0, 0), (m, n)).copy_from(&rec.hess_xy_lagrangian(lambda).transpose());
    for i in 0..k {
        for a in 0..n {
            gx[(m + i, a)] = lambda[i] * rec.jac_x_h[(i, a)];
        }
    }
    (gv, gx)
}

fn solve_system(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    sing_tol: f64,
) -> Result<(DMatrix<f64>, f64, f64)> {
    let sigma = linalg::sigma_min(a);
    if !(sigma > sing_tol) {
        return Err(DiagError::SingularSystem { sigma_min: sigma });
    }
    let sol = linalg::solve(a, &(-b)).ok_or(DiagError::SingularSystem { sigma_min: sigma })?;
    Ok((sol, sigma, linalg::det(a)))
}

/// Reduced derivative with `set` held at equality.
pub fn reduced_from_record(
    rec: &EvalRecord,
    lambda: &[f64],
    set: &[usize],
    sing_tol: f64,
) -> Result<SensitivityResult> {
    let m = rec.grad_y_g.len();
    let n = rec.jac_x_h.ncols();
    let k = rec.h.len();
    let (mm, nn) = reduced_system(rec, lambda, set);
    let (sol, sigma_min, det) = solve_system(&mm, &nn, sing_tol)?;
    let mut dl = DMatrix::zeros(k, n);
    for (r, &i) in set.iter().enumerate() {
        dl.row_mut(i).copy_from(&sol.row(m + r));
    }
    Ok(SensitivityResult {
        dy_dx: sol.rows(0, m).into_owned(),
        dlambda_dx: dl,
        method: Method::Reduced,
        sigma_min,
        det,
        set: set.to_vec(),
    })
}

/// Reduced formula with `J` the active set of the point.
pub fn hypergradient_reduced(problem: &ParametricProblem, kkt: &KktPoint, tol: &Tolerances) -> Result<SensitivityResult> {
    hypergradient_reduced_with(problem, kkt, &kkt.active, tol)
}

pub fn hypergradient_reduced_with(
    problem: &ParametricProblem,
    kkt: &KktPoint,
    set: &[usize],
    tol: &Tolerances,
) -> Result<SensitivityResult> {
    let rec = problem.evaluate(&kkt.x, &kkt.y)?;
    reduced_from_record(&rec, &kkt.lambda, set, tol.sing_tol)
}

/// Both candidate reduced solves when some active multiplier is at most
/// `reg_tol`: with the whole active set and with the strongly active part only.
pub fn reduced_candidates(
    problem: &ParametricProblem,
    kkt: &KktPoint,
    tol: &Tolerances,
) -> Result<Vec<(Vec<usize>, Result<SensitivityResult>)>> {
    let rec = problem.evaluate(&kkt.x, &kkt.y)?;
    let strong = kkt.strong_active(tol.reg_tol);
    let mut sets = vec![kkt.active.clone()];
    if strong != kkt.active {
        sets.push(strong);
    }
    Ok(sets
        .into_iter()
        .map(|s| {
            let r = reduced_from_record(&rec, &kkt.lambda, &s, tol.sing_tol);
            (s, r)
        })
        .collect())
}

pub fn hypergradient_complementarity(
    problem: &ParametricProblem,
    kkt: &KktPoint,
    tol: &Tolerances,
) -> Result<SensitivityResult> {
    let rec = problem.evaluate(&kkt.x, &kkt.y)?;
    complementarity_from_record(&rec, &kkt.lambda, tol.sing_tol)
}

pub fn complementarity_from_record(rec: &EvalRecord, lambda: &[f64], sing_tol: f64) -> Result<SensitivityResult> {
    let m = rec.grad_y_g.len();
    let k = rec.h.len();
    let (gv, gx) = complementarity_system(rec, lambda);
    let (sol, sigma_min, det) = solve_system(&gv, &gx, sing_tol)?;
    Ok(SensitivityResult {
        dy_dx: sol.rows(0, m).into_owned(),
        dlambda_dx: sol.rows(m, k).into_owned(),
        method: Method::Complementarity,
        sigma_min,
        det,
        set: (0..k).collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConditioningRow {
    pub x: f64,
    /// `0` when flagged singular.
    pub sigma_min_reduced: f64,
    pub sigma_min_comp: f64,
    pub det_comp: f64,
    pub reduced_singular: bool,
    pub comp_singular: bool,
}

/// Conditioning of both systems at every branch sample (`x` is the first coordinate).
pub fn conditioning_profile(problem: &ParametricProblem, branch: &Branch, tol: &Tolerances) -> Result<Vec<ConditioningRow>> {
    branch
        .samples
        .par_iter()
        .map(|s| {
            let rec = problem.evaluate(&s.kkt.x, &s.kkt.y)?;
            let (mm, _) = reduced_system(&rec, &s.kkt.lambda, &s.kkt.active);
            let (gv, _) = complementarity_system(&rec, &s.kkt.lambda);
            let sr = linalg::sigma_min(&mm);
            let sc = linalg::sigma_min(&gv);
            let reduced_singular = !(sr > tol.sing_tol);
            let comp_singular = !(sc > tol.sing_tol);
            Ok(ConditioningRow {
                x: s.kkt.x[0],
                sigma_min_reduced: if reduced_singular { 0.0 } else { sr },
                sigma_min_comp: if comp_singular { 0.0 } else { sc },
                det_comp: linalg::det(&gv),
                reduced_singular,
                comp_singular,
            })
        })
        .collect()
}

/// Largest `|dy/ds - (y(s + h) - y(s - h)) / 2h|` over branch samples at least
/// `max(10 h, clearance)` from every event and from both path ends, with
/// `y(s +- h)` re-solved by Newton on the sample's reduced system. `s` is the
/// path parameter. Near a fold the third derivative blows up, so the
/// clearance is what makes a segment count as smooth.
pub fn validate_against_fd(
    problem: &ParametricProblem,
    branch: &Branch,
    fd_step: f64,
    clearance: f64,
    tol: &Tolerances,
) -> Result<f64> {
    if !(fd_step > 0.0) || !(clearance >= 0.0) {
        return Err(DiagError::Precondition("fd_step must be positive and clearance non-negative".into()));
    }
    let margin = (10.0 * fd_step).max(clearance);
    let end = branch.samples.last().map_or(0.0, |s| s.s);
    let errs: Vec<Option<f64>> = branch
        .samples
        .par_iter()
        .map(|s| -> Result<Option<f64>> {
            if s.s < margin || s.s > end - margin {
                return Ok(None);
            }
            if branch.events.iter().any(|e| (e.s_star - s.s).abs() < margin) {
                return Ok(None);
            }
            let rec = problem.evaluate(&s.kkt.x, &s.kkt.y)?;
            let Ok(sens) = reduced_from_record(&rec, &s.kkt.lambda, &s.kkt.basis, tol.sing_tol) else {
                return Ok(None);
            };
            let dir = branch.direction();
            let tangent = &sens.dy_dx * nalgebra::DVector::from_vec(dir.clone());
            let lam0: Vec<f64> = s.kkt.basis.iter().map(|&i| s.kkt.lambda[i]).collect();
            let mut ys = Vec::with_capacity(2);
            for sign in [1.0, -1.0] {
                let x: Vec<f64> = s.kkt.x.iter().zip(&dir).map(|(a, d)| a + sign * fd_step * d).collect();
                let y0: Vec<f64> = s.kkt.y.iter().zip(tangent.iter()).map(|(y, t)| y + sign * fd_step * t).collect();
                let (y, _, _) = reduced_newton(problem, &x, &s.kkt.basis, &y0, &lam0, tol)?;
                ys.push(y);
            }
            let err = (0..problem.m)
                .map(|b| (tangent[b] - (ys[0][b] - ys[1][b]) / (2.0 * fd_step)).abs())
                .fold(0.0, f64::max);
            Ok(Some(err))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(errs.into_iter().flatten().fold(0.0, f64::max))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kkt::solve_reduced_kkt;
    use crate::problem::load_corpus;

    fn corpus(id: &str) -> ParametricProblem {
        load_corpus(id).unwrap().unwrap()
    }

    #[test]
    fn kink_slopes_on_each_side() {
        let p = corpus("ex_scsc_kink");
        let t = Tolerances::default();
        let k = solve_reduced_kkt(&p, &[-0.5], &[0], &[-0.5], &[1.0], &t).unwrap();
        assert!((hypergradient_reduced(&p, &k, &t).unwrap().dy_dx[(0, 0)] - 1.0).abs() < 1e-12);
        let k = solve_reduced_kkt(&p, &[0.5], &[], &[0.1], &[], &t).unwrap();
        assert_eq!(hypergradient_reduced(&p, &k, &t).unwrap().dy_dx[(0, 0)], 0.0);
    }

    #[test]
    fn doubly_active_point_is_singular_for_both() {
        let p = corpus("ex_mult_disc");
        let t = Tolerances::default();
        let k = solve_reduced_kkt(&p, &[1.0], &[0], &[1.0], &[1.0], &t).unwrap();
        assert!(matches!(hypergradient_reduced(&p, &k, &t), Err(DiagError::SingularSystem { .. })));
        assert!(matches!(
            hypergradient_complementarity(&p, &k, &t),
            Err(DiagError::SingularSystem { .. })
        ));
    }

    #[test]
    fn complementarity_determinants() {
        let p = corpus("ex_mult_disc");
        let t = Tolerances::default();
        let k = solve_reduced_kkt(&p, &[1.5], &[0], &[1.0], &[1.0], &t).unwrap();
        assert!((hypergradient_complementarity(&p, &k, &t).unwrap().det.abs() - 0.5).abs() < 1e-12);

        let p = corpus("ex_scsc_kink");
        let k = solve_reduced_kkt(&p, &[-0.25], &[0], &[-0.25], &[0.5], &t).unwrap();
        assert!((hypergradient_complementarity(&p, &k, &t).unwrap().det + 0.5).abs() < 1e-12);
        let k = solve_reduced_kkt(&p, &[0.0], &[], &[0.0], &[], &t).unwrap();
        assert!(matches!(
            hypergradient_complementarity(&p, &k, &t),
            Err(DiagError::SingularSystem { .. })
        ));
    }

    #[test]
    fn both_candidates_at_the_kink() {
        let p = corpus("ex_scsc_kink");
        let t = Tolerances::default();
        let k = solve_reduced_kkt(&p, &[0.0], &[], &[0.0], &[], &t).unwrap();
        let c = reduced_candidates(&p, &k, &t).unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(c[0].0, vec![0]);
        assert!((c[0].1.as_ref().unwrap().dy_dx[(0, 0)] - 1.0).abs() < 1e-12);
        assert!(c[1].0.is_empty());
        assert_eq!(c[1].1.as_ref().unwrap().dy_dx[(0, 0)], 0.0);
    }

    #[test]
    fn formulas_agree_at_a_regular_point() {
        let p = corpus("ce_scsc_disk");
        let t = Tolerances::default();
        let k = solve_reduced_kkt(&p, &[1.7], &[0], &[1.0, 0.0], &[0.7], &t).unwrap();
        let a = hypergradient_reduced(&p, &k, &t).unwrap();
        let b = hypergradient_complementarity(&p, &k, &t).unwrap();
        assert!((&a.dy_dx - &b.dy_dx).amax() < 1e-12);
        // lambda = x - 1 on the circle
        assert!((a.dlambda_dx[(0, 0)] - 1.0).abs() < 1e-12);
    }
}
