//! Library output against closed-form solutions of corpus problems, worked
//! out by hand from the problem definitions.

use approx::assert_abs_diff_eq;
use regdiag::continuation::{global_min_start, trace_branch, EventKind, Termination, TraceOptions};
use regdiag::kkt::{classify_kkt, enumerate_kkt_points, ClassKind, KktPoint};
use regdiag::regularity::full_report;
use regdiag::sensitivity::{hypergradient_complementarity, hypergradient_reduced};
use regdiag::{load_problem, ParametricProblem, Tolerances};

fn corpus(id: &str) -> ParametricProblem {
    load_problem(id).unwrap()
}

fn points(p: &ParametricProblem, x: f64) -> Vec<KktPoint> {
    enumerate_kkt_points(p, &[x], 7, &Tolerances::default()).unwrap().points
}

fn point_near(pts: &[KktPoint], y: &[f64]) -> KktPoint {
    pts.iter()
        .find(|p| p.y.iter().zip(y).all(|(a, b)| (a - b).abs() < 1e-7))
        .unwrap_or_else(|| panic!("no KKT point near {y:?} among {:?}", pts.iter().map(|p| &p.y).collect::<Vec<_>>()))
        .clone()
}

fn minimizers(p: &ParametricProblem, pts: &[KktPoint]) -> Vec<KktPoint> {
    let tol = Tolerances::default();
    pts.iter()
        .filter(|k| classify_kkt(p, k, &tol).unwrap().kind == ClassKind::StrictLocalMin)
        .cloned()
        .collect()
}

// Distance to (x, 0) over the unit disk: y = (min(x, 1), 0), lambda = max(0, x - 1).
// Outside the disk the Lagrangian Hessian is 2(1 + lambda) I = 2x I and the
// critical cone is the tangent line, so the modulus is 2x.
#[test]
fn disk_projection() {
    let p = corpus("ce_scsc_disk");
    let tol = Tolerances::default();
    for x in [0.3, 0.8, 1.2, 1.7, 2.0] {
        let pts = points(&p, x);
        assert_eq!(pts.len(), 1, "x = {x}");
        let k = &pts[0];
        assert_abs_diff_eq!(k.y[0], x.min(1.0), epsilon = 1e-9);
        assert_abs_diff_eq!(k.y[1], 0.0, epsilon = 1e-9);
        assert_abs_diff_eq!(k.lambda[0], (x - 1.0).max(0.0), epsilon = 1e-9);
        let r = full_report(&p, k, &tol).unwrap();
        if x > 1.0 {
            assert_abs_diff_eq!(r.sosc_modulus, 2.0 * x, epsilon = 1e-9);
            assert_abs_diff_eq!(r.licq_margin, 2.0, epsilon = 1e-9);
            assert_abs_diff_eq!(r.scsc_margin, x - 1.0, epsilon = 1e-9);
            // dy/dx = 0 and dlambda/dx = 1 on the circle.
            let s = hypergradient_reduced(&p, k, &tol).unwrap();
            assert_abs_diff_eq!(s.dy_dx[(0, 0)], 0.0, epsilon = 1e-9);
            assert_abs_diff_eq!(s.dlambda_dx[(0, 0)], 1.0, epsilon = 1e-9);
        } else {
            assert_abs_diff_eq!(r.sosc_modulus, 2.0, epsilon = 1e-9);
            assert_abs_diff_eq!(r.scsc_margin, 1.0 - x * x, epsilon = 1e-9);
            let s = hypergradient_complementarity(&p, k, &tol).unwrap();
            assert_abs_diff_eq!(s.dy_dx[(0, 0)], 1.0, epsilon = 1e-9);
            assert_abs_diff_eq!(s.dy_dx[(1, 0)], 0.0, epsilon = 1e-9);
        }
    }
}

#[test]
fn disk_branch_follows_projection() {
    let p = corpus("ce_scsc_disk");
    let tol = Tolerances::default();
    let start = global_min_start(&p, &[0.0], &tol).unwrap();
    let b = trace_branch(&p, &[0.0], &[2.0], &start, &TraceOptions::default(), &tol).unwrap();
    assert_eq!(b.termination, Termination::PathEnd);
    for s in &b.samples {
        let x = s.kkt.x[0];
        assert_abs_diff_eq!(s.kkt.y[0], x.min(1.0), epsilon = 1e-8);
        assert_abs_diff_eq!(s.kkt.lambda[0], (x - 1.0).max(0.0), epsilon = 1e-8);
    }
    assert_eq!(b.events.len(), 1);
    assert_eq!(b.events[0].kind, EventKind::Activation);
    assert_abs_diff_eq!(b.events[0].x_star, 1.0, epsilon = 1e-6);
}

// max y under y <= 1, y <= x: y = min(x, 1) with the multiplier on whichever bound binds.
#[test]
fn multiplier_switch() {
    let p = corpus("ex_mult_disc");
    let tol = Tolerances::default();
    for x in [0.25, 0.75, 1.25, 1.75] {
        let pts = points(&p, x);
        assert_eq!(pts.len(), 1);
        let k = &pts[0];
        assert_abs_diff_eq!(k.y[0], x.min(1.0), epsilon = 1e-12);
        let expect = if x < 1.0 { [0.0, 1.0] } else { [1.0, 0.0] };
        assert_abs_diff_eq!(k.lambda[0], expect[0], epsilon = 1e-12);
        assert_abs_diff_eq!(k.lambda[1], expect[1], epsilon = 1e-12);
        // Complementarity Jacobian of (grad L, lambda_i h_i) has |det| = |x - 1|.
        let s = hypergradient_complementarity(&p, k, &tol).unwrap();
        assert_abs_diff_eq!(s.det.abs(), (x - 1.0).abs(), epsilon = 1e-12);
        assert_abs_diff_eq!(s.dy_dx[(0, 0)], if x < 1.0 { 1.0 } else { 0.0 }, epsilon = 1e-12);
    }
}

// min y^2 under y <= x: y = min(0, x), lambda = max(0, -2x).
#[test]
fn kink() {
    let p = corpus("ex_scsc_kink");
    for x in [-0.9, -0.4, 0.4, 0.9] {
        let pts = points(&p, x);
        assert_eq!(pts.len(), 1);
        assert_abs_diff_eq!(pts[0].y[0], x.min(0.0), epsilon = 1e-12);
        assert_abs_diff_eq!(pts[0].lambda[0], (-2.0 * x).max(0.0), epsilon = 1e-12);
    }
}

// On y1 = 0 (lambda_1 = 2), stationarity in y2 reads
// 0.4 x y2^3 + 2 (1 - 6x) y2 = 0, so y2 = 0 or y2^2 = 5 (6x - 1) / x.
// The y2 curvature is 1.2 x y2^2 + 2 (1 - 6x).
#[test]
fn quartic_census() {
    let p = corpus("ce_sosc_count");
    let tol = Tolerances::default();
    for x in [0.1, 0.5, 1.0] {
        let pts = points(&p, x);
        let mins = minimizers(&p, &pts);
        if x < 1.0 / 6.0 {
            assert_eq!(mins.len(), 1);
            let r = full_report(&p, &mins[0], &tol).unwrap();
            assert_abs_diff_eq!(r.sosc_modulus, 2.0 * (1.0 - 6.0 * x), epsilon = 1e-9);
        } else {
            let y2 = (5.0 * (6.0 * x - 1.0) / x).sqrt();
            assert_eq!(mins.len(), 2, "x = {x}");
            for s in [1.0, -1.0] {
                let k = point_near(&mins, &[0.0, s * y2]);
                assert_abs_diff_eq!(k.lambda[0], 2.0, epsilon = 1e-9);
                let curv = 1.2 * x * y2 * y2 + 2.0 * (1.0 - 6.0 * x);
                let r = full_report(&p, &k, &tol).unwrap();
                // y1 is held by a strongly active bound, so only y2 is in the cone.
                assert_abs_diff_eq!(r.sosc_modulus, curv, epsilon = 1e-7);
            }
            let origin = point_near(&pts, &[0.0, 0.0]);
            assert_eq!(classify_kkt(&p, &origin, &tol).unwrap().kind, ClassKind::NotLocalMin);
        }
    }
}

// Concave in y2 on [0, 1] with slope x: the bound y2 = 0 holds a minimizer
// with multiplier x when x > 0, the bound y2 = 1 always holds one with 4 - x.
#[test]
fn saddle_corners() {
    let p = corpus("ex_scsc_saddle");
    for x in [-0.5, 0.5] {
        let pts = points(&p, x);
        let mins = minimizers(&p, &pts);
        let top = point_near(&mins, &[0.0, 1.0]);
        assert_abs_diff_eq!(top.lambda[3], 4.0 - x, epsilon = 1e-9);
        if x > 0.0 {
            assert_eq!(mins.len(), 2);
            let bottom = point_near(&mins, &[0.0, 0.0]);
            assert_abs_diff_eq!(bottom.lambda[2], x, epsilon = 1e-9);
        } else {
            assert_eq!(mins.len(), 1);
        }
    }
}

// y1 + y1^2/2 + y2^3/3 - x y2: minimizer (0, sqrt x) with lambda_1 = 1,
// modulus 2 sqrt x and dy2/dx = 1 / (2 sqrt x).
#[test]
fn fold_branch() {
    let p = corpus("ex_sosc_fold");
    let tol = Tolerances::default();
    for x in [0.04, 0.25, 0.81] {
        let pts = points(&p, x);
        let k = point_near(&pts, &[0.0, x.sqrt()]);
        assert_abs_diff_eq!(k.lambda[0], 1.0, epsilon = 1e-9);
        let r = full_report(&p, &k, &tol).unwrap();
        assert_abs_diff_eq!(r.sosc_modulus, 2.0 * x.sqrt(), epsilon = 1e-9);
        let s = hypergradient_reduced(&p, &k, &tol).unwrap();
        assert_abs_diff_eq!(s.dy_dx[(1, 0)], 0.5 / x.sqrt(), epsilon = 1e-9);
        let saddle = point_near(&pts, &[0.0, -x.sqrt()]);
        assert_eq!(classify_kkt(&p, &saddle, &tol).unwrap().kind, ClassKind::NotLocalMin);
    }
    // The bound y2 = -1.5 also holds a strict minimizer (multiplier 2.25 - x),
    // with g = x * 1.5 - 1.125 against -2/3 x^1.5 in the interior.
    let bound = point_near(&points(&p, 0.81), &[0.0, -1.5]);
    assert_abs_diff_eq!(bound.lambda[2], 2.25 - 0.81, epsilon = 1e-9);
    let start = global_min_start(&p, &[0.81], &tol).unwrap();
    assert_abs_diff_eq!(start.y[1], 0.9, epsilon = 1e-9);
    let start = global_min_start(&p, &[0.25], &tol).unwrap();
    assert_abs_diff_eq!(start.y[1], -1.5, epsilon = 1e-9);
}
