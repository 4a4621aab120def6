//! Central finite differences against the exact derivative record.

use super::{EvalRecord, ParametricProblem};
use crate::error::{DiagError, Result};

fn rel(a: f64, fd: f64) -> f64 {
    (a - fd).abs() / a.abs().max(1.0)
}

/// Worst relative discrepancy `|a - fd| / max(1, |a|)` over every first and
/// second derivative in the record at `(x, y)`.
///
/// First derivatives are differenced from values, second derivatives from the
/// exact first derivatives.
pub fn fd_check(problem: &ParametricProblem, x: &[f64], y: &[f64], step: f64) -> Result<f64> {
    if !(step > 0.0) {
        return Err(DiagError::Precondition("fd step must be positive".into()));
    }
    let base = problem.evaluate(x, y)?;
    let (n, m, k) = (problem.n, problem.m, problem.k);
    let mut z: Vec<f64> = x.iter().chain(y).copied().collect();
    let mut worst = 0.0f64;

    for v in 0..n + m {
        let z0 = z[v];
        z[v] = z0 + step;
        let plus = problem.evaluate_at(&z);
        z[v] = z0 - step;
        let minus = problem.evaluate_at(&z);
        z[v] = z0;
        let d = |f: fn(&EvalRecord) -> f64| (f(&plus) - f(&minus)) / (2.0 * step);
        let dh = |i: usize| (plus.h[i] - minus.h[i]) / (2.0 * step);
        let dg = d(|r| r.g);

        if v < n {
            let a = v;
            for b in 0..m {
                let fd = (plus.grad_y_g[b] - minus.grad_y_g[b]) / (2.0 * step);
                worst = worst.max(rel(base.hess_xy_g[(a, b)], fd));
            }
            for i in 0..k {
                worst = worst.max(rel(base.jac_x_h[(i, a)], dh(i)));
                for b in 0..m {
                    let fd = (plus.jac_y_h[(i, b)] - minus.jac_y_h[(i, b)]) / (2.0 * step);
                    worst = worst.max(rel(base.hess_xy_h[i][(a, b)], fd));
                }
            }
        } else {
            let a = v - n;
            worst = worst.max(rel(base.grad_y_g[a], dg));
            for b in 0..m {
                let fd = (plus.grad_y_g[b] - minus.grad_y_g[b]) / (2.0 * step);
                worst = worst.max(rel(base.hess_yy_g[(a, b)], fd));
            }
            for i in 0..k {
                worst = worst.max(rel(base.jac_y_h[(i, a)], dh(i)));
                for b in 0..m {
                    let fd = (plus.jac_y_h[(i, b)] - minus.jac_y_h[(i, b)]) / (2.0 * step);
                    worst = worst.max(rel(base.hess_yy_h[i][(a, b)], fd));
                }
            }
        }
    }
    if !worst.is_finite() {
        return Err(DiagError::NonFinite {
            what: "finite-difference check".into(),
        });
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::load_corpus;

    #[test]
    fn linear_problem_is_exact() {
        let p = load_corpus("ex_mult_disc").unwrap().unwrap();
        // power-of-two steps keep every difference exact in binary
        for step in [0.25, 2f64.powi(-10), 2f64.powi(-17)] {
            assert_eq!(fd_check(&p, &[1.5], &[0.5], step).unwrap(), 0.0);
        }
        let r = p.evaluate(&[1.5], &[0.5]).unwrap();
        assert!(r.hess_yy_g.iter().chain(r.hess_xy_g.iter()).all(|v| *v == 0.0));
        assert!(r.hess_yy_h.iter().chain(&r.hess_xy_h).all(|h| h.iter().all(|v| *v == 0.0)));
    }

    #[test]
    fn fold_problem_matches_hand_derivatives() {
        let p = load_corpus("ex_sosc_fold").unwrap().unwrap();
        assert!(fd_check(&p, &[0.3], &[0.0, 1.0], 1e-4).unwrap() < 1e-6);
        // g = y1 + y1^2/2 + y2^3/3 - x y2
        let r = p.evaluate(&[0.3], &[0.0, 1.0]).unwrap();
        assert_eq!(r.grad_y_g[0], 1.0);
        assert!((r.grad_y_g[1] - 0.7).abs() < 1e-15);
        assert_eq!(r.hess_yy_g[(1, 1)], 2.0);
        assert_eq!(r.hess_xy_g[(0, 1)], -1.0);
    }

    #[test]
    fn rejects_nonpositive_step() {
        let p = load_corpus("ex_scsc_kink").unwrap().unwrap();
        assert!(fd_check(&p, &[0.0], &[0.0], 0.0).is_err());
    }
}
