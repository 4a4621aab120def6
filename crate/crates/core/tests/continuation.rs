//! Branch-level behaviour: moduli along branches, growth estimates, kinks and folds.

use approx::assert_abs_diff_eq;
use regdiag::continuation::{
    active_set_history, global_min_start, quadratic_growth_estimate, trace_branch, uniform_sosc_profile, Branch,
    EventKind, Termination, TraceOptions,
};
use regdiag::kkt::{solve_reduced_kkt, KktPoint};
use regdiag::{load_problem, ParametricProblem, Tolerances};

fn corpus(id: &str) -> ParametricProblem {
    load_problem(id).unwrap()
}

fn tol() -> Tolerances {
    Tolerances::default()
}

/// Interior critical point of the cubic, on the face y1 = 0 (multiplier 1).
fn fold_point(p: &ParametricProblem, x: f64, sign: f64) -> KktPoint {
    solve_reduced_kkt(p, &[x], &[0], &[0.0, sign * x.sqrt()], &[1.0], &tol()).unwrap()
}

fn trace(p: &ParametricProblem, a: f64, b: f64, start: &KktPoint, allow_non_minimizer: bool) -> Branch {
    let opts = TraceOptions {
        allow_non_minimizer,
        ..TraceOptions::default()
    };
    trace_branch(p, &[a], &[b], start, &opts, &tol()).unwrap()
}

#[test]
fn fold_branch_modulus_is_two_sqrt_x() {
    let p = corpus("ex_sosc_fold");
    let b = trace(&p, 1.0, 0.01, &fold_point(&p, 1.0, 1.0), false);
    assert_eq!(b.termination, Termination::PathEnd);
    let prof = uniform_sosc_profile(&b, &tol());
    for (x, m) in &prof.points {
        assert_abs_diff_eq!(*m, 2.0 * x.sqrt(), epsilon = 1e-6);
    }
    assert_abs_diff_eq!(prof.infimum, 0.2, epsilon = 1e-6);
    assert!(prof.uniform);

    let b = trace(&p, 1.0, 1e-6, &fold_point(&p, 1.0, 1.0), false);
    let prof = uniform_sosc_profile(&b, &tol());
    assert!(prof.infimum < 0.003, "infimum {}", prof.infimum);
    // The verdict compares the infimum 2e-3 with reg_tol: uniform at the
    // default 1e-6, not uniform once reg_tol exceeds the infimum.
    assert!(prof.uniform);
    let strict = Tolerances { reg_tol: 0.003, ..tol() };
    assert!(!uniform_sosc_profile(&b, &strict).uniform);
}

#[test]
fn saddle_top_branch_has_constant_modulus() {
    let p = corpus("ex_scsc_saddle");
    let start = solve_reduced_kkt(&p, &[-1.0], &[3], &[0.0, 1.0], &[1.0], &tol()).unwrap();
    let b = trace(&p, -1.0, 1.0, &start, false);
    assert_eq!(b.termination, Termination::PathEnd);
    assert!(b.events.is_empty());
    let prof = uniform_sosc_profile(&b, &tol());
    assert_abs_diff_eq!(prof.infimum, 1.0, epsilon = 1e-9);
    // Growth stays bounded away from zero along the surviving branch.
    for s in b.samples.iter().step_by(5) {
        let g = quadratic_growth_estimate(&p, &s.kkt, 0.05, 400, 3, &tol()).unwrap();
        assert!(g.c_hat >= 0.1, "x = {}: c_hat {}", s.kkt.x[0], g.c_hat);
    }
    assert_eq!(active_set_history(&b).len(), 1);
}

// g = y^2 at x = 1 with the minimizer y = 0 off the constraint: ratio exactly 1.
#[test]
fn growth_of_a_pure_quadratic() {
    let p = corpus("ex_scsc_kink");
    let k = global_min_start(&p, &[1.0], &tol()).unwrap();
    let g = quadratic_growth_estimate(&p, &k, 0.1, 1000, 1, &tol()).unwrap();
    assert_abs_diff_eq!(g.c_hat, 1.0, epsilon = 0.05);
}

// Along y2 from sqrt(x): (l(y2 + t) - l(y2)) / t^2 = sqrt(x) + t/3. Leaving the
// face y1 = 0 costs the multiplier 1 at first order, so y2 is the slow direction.
#[test]
fn growth_near_the_fold() {
    let p = corpus("ex_sosc_fold");
    let k = fold_point(&p, 0.04, 1.0);
    let g = quadratic_growth_estimate(&p, &k, 0.05, 4000, 1, &tol()).unwrap();
    assert!(g.c_hat >= 0.1 && g.c_hat <= 0.25, "c_hat {}", g.c_hat);
    assert!(g.c_hat >= 0.2 - 0.05 / 3.0 - 1e-9);
}

// At x = 0.5 the corner (0, 0): curvature 1 along y1, multiplier 0.5 along +y2.
#[test]
fn growth_at_the_saddle_corner() {
    let p = corpus("ex_scsc_saddle");
    let k = solve_reduced_kkt(&p, &[0.5], &[2], &[0.0, 0.0], &[0.5], &tol()).unwrap();
    let g = quadratic_growth_estimate(&p, &k, 0.05, 4000, 1, &tol()).unwrap();
    assert!(g.c_hat >= 0.4, "c_hat {}", g.c_hat);
}

#[test]
fn kink_slopes_differ_by_one() {
    let p = corpus("ex_scsc_kink");
    let start = global_min_start(&p, &[-1.0], &tol()).unwrap();
    let b = trace(&p, -1.0, 1.0, &start, false);
    let ev = b.events.iter().find(|e| e.kind == EventKind::ScscLoss).unwrap();
    let h = 1e-3;
    let y_at = |x: f64| b.solve_at(&p, &[x], &tol()).unwrap().y[0];
    let left = (y_at(ev.x_star - h) - y_at(ev.x_star - 2.0 * h)) / h;
    let right = (y_at(ev.x_star + 2.0 * h) - y_at(ev.x_star + h)) / h;
    assert_abs_diff_eq!(left - right, 1.0, epsilon = 1e-4);
}

#[test]
fn branch_without_events_keeps_its_active_set() {
    let p = corpus("ce_scsc_disk");
    let start = global_min_start(&p, &[0.0], &tol()).unwrap();
    let b = trace(&p, 0.0, 0.9, &start, false);
    assert!(b.events.is_empty());
    let min_scsc = b.samples.iter().map(|s| s.report.scsc_margin).fold(f64::INFINITY, f64::min);
    assert!(min_scsc > tol().reg_tol);
    assert_eq!(active_set_history(&b).len(), 1);
}

#[test]
fn minimizer_and_maximizer_meet_at_the_fold() {
    let p = corpus("ex_sosc_fold");
    let min = trace(&p, 1.0, -1.0, &fold_point(&p, 1.0, 1.0), false);
    let max = trace(&p, 1.0, -1.0, &fold_point(&p, 1.0, -1.0), true);
    assert_eq!(min.termination, Termination::Fold);
    assert_eq!(max.termination, Termination::Fold);
    assert_abs_diff_eq!(min.termination_x, max.termination_x, epsilon = 1e-6);
    // Tracing from a saddle without opting in is refused.
    let opts = TraceOptions::default();
    assert!(trace_branch(&p, &[1.0], &[-1.0], &fold_point(&p, 1.0, -1.0), &opts, &tol()).is_err());
}
