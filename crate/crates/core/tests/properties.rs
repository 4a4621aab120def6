use nalgebra::DMatrix;
use proptest::prelude::*;
use regdiag::continuation::{active_set_history, global_min_start, trace_branch, TraceOptions};
use regdiag::kkt::{dedup_points, enumerate_kkt_points, KktPoint};
use regdiag::perturb::{apply_perturbation, draw_for_trial, draw_perturbation, failure_set_estimate, Condition, PerturbationDraw};
use regdiag::problem::{fd_check, list_corpus, ProblemFile};
use regdiag::regularity::cone_modulus;
use regdiag::sensitivity::hypergradient_reduced;
use regdiag::{load_problem, ParametricProblem, Tolerances};
use serde_json::Value;

const CORPUS: [&str; 11] = [
    "ce_licq_corner",
    "ce_licq_tangent",
    "ce_scsc_disk",
    "ce_sosc_count",
    "ex_licq_prev",
    "ex_scsc_prev",
    "ex_sosc_prev",
    "ex_mult_disc",
    "ex_scsc_kink",
    "ex_scsc_saddle",
    "ex_sosc_fold",
];

fn corpus(id: &str) -> ParametricProblem {
    load_problem(id).unwrap()
}

/// Point of the domain box times the `y` box at fractions `t`, `u`.
fn box_point(p: &ParametricProblem, t: f64, u: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let (lo, hi) = p.x_domain[0];
    let x = vec![lo + t * (hi - lo)];
    let y = p.y_box.iter().zip(u).map(|(&(a, b), s)| a + s * (b - a)).collect();
    (x, y)
}

#[test]
fn corpus_list_matches() {
    let ids: Vec<&str> = list_corpus().iter().map(|e| e.id).collect();
    assert_eq!(ids, CORPUS);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn derivatives_match_finite_differences(
        which in 0..CORPUS.len(),
        t in 0.01f64..0.99,
        u in prop::collection::vec(0.05f64..0.95, 2),
    ) {
        let p = corpus(CORPUS[which]);
        let (x, y) = box_point(&p, t, &u[..p.m]);
        let err = fd_check(&p, &x, &y, 1e-5).unwrap();
        prop_assert!(err < 1e-5, "{} at x={x:?} y={y:?}: {err:e}", CORPUS[which]);
    }

    #[test]
    fn perturbed_derivatives_match_finite_differences(
        which in 0..CORPUS.len(),
        seed in any::<u64>(),
        t in 0.01f64..0.99,
        u in prop::collection::vec(0.05f64..0.95, 2),
    ) {
        let p = corpus(CORPUS[which]);
        let draw = draw_perturbation(p.k, p.m, 0.05, seed).unwrap();
        let q = apply_perturbation(&p, &draw).unwrap();
        let (x, y) = box_point(&q, t, &u[..p.m]);
        let err = fd_check(&q, &x, &y, 1e-5).unwrap();
        prop_assert!(err < 1e-5, "{}: {err:e}", CORPUS[which]);
        // g + <b, y> and h + a, checked pointwise.
        let (a, b) = (p.evaluate(&x, &y).unwrap(), q.evaluate(&x, &y).unwrap());
        let lin: f64 = draw.b.iter().zip(&y).map(|(c, v)| c * v).sum();
        prop_assert!((b.g - a.g - lin).abs() < 1e-12);
        for i in 0..p.k {
            prop_assert!((b.h[i] - a.h[i] - draw.a[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_draw_is_identity(which in 0..CORPUS.len(), t in 0.0f64..1.0, u in prop::collection::vec(0.0f64..1.0, 2)) {
        let p = corpus(CORPUS[which]);
        let q = apply_perturbation(&p, &PerturbationDraw::zero(p.k, p.m)).unwrap();
        let (x, y) = box_point(&p, t, &u[..p.m]);
        let (a, b) = (p.evaluate(&x, &y).unwrap(), q.evaluate(&x, &y).unwrap());
        prop_assert_eq!(a.g.to_bits(), b.g.to_bits());
        prop_assert_eq!(a.h, b.h);
    }

    #[test]
    fn draws_are_seeded_and_boxed(k in 1usize..8, m in 1usize..4, nu in 1e-4f64..1.0, seed in any::<u64>(), stream in 0u64..1000) {
        let d1 = draw_for_trial(k, m, nu, seed, stream).unwrap();
        let d2 = draw_for_trial(k, m, nu, seed, stream).unwrap();
        prop_assert_eq!(&d1, &d2);
        prop_assert_eq!(d1.a.len(), k);
        prop_assert_eq!(d1.b.len(), m);
        prop_assert!(d1.a.iter().chain(&d1.b).all(|v| (0.0..=nu).contains(v)));
        let other = draw_for_trial(k, m, nu, seed, stream + 1).unwrap();
        prop_assert_ne!(d1.a, other.a);
    }
}

/// Min of `d^T H d` over unit directions in the 2-D cone `A d <= 0`: a fine
/// angle grid plus the exact boundary rays, where a constrained minimum can sit.
fn brute_cone_min(h: &DMatrix<f64>, a: &DMatrix<f64>, grid: usize) -> f64 {
    let feasible = |d: [f64; 2]| (0..a.nrows()).all(|r| a[(r, 0)] * d[0] + a[(r, 1)] * d[1] <= 1e-12);
    let q = |d: [f64; 2]| h[(0, 0)] * d[0] * d[0] + 2.0 * h[(0, 1)] * d[0] * d[1] + h[(1, 1)] * d[1] * d[1];
    let mut dirs: Vec<[f64; 2]> = (0..grid)
        .map(|i| {
            let th = std::f64::consts::TAU * i as f64 / grid as f64;
            [th.cos(), th.sin()]
        })
        .collect();
    for r in 0..a.nrows() {
        let (u, v) = (a[(r, 0)], a[(r, 1)]);
        let n = u.hypot(v);
        dirs.push([-v / n, u / n]);
        dirs.push([v / n, -u / n]);
    }
    dirs.into_iter().filter(|d| feasible(*d)).map(q).fold(f64::INFINITY, f64::min)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn cone_modulus_matches_angle_scan(
        hv in prop::collection::vec(-2.0f64..2.0, 3),
        rows in prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 2), 0..4),
    ) {
        let rows: Vec<Vec<f64>> = rows.into_iter().filter(|r| r[0].hypot(r[1]) > 0.1).collect();
        let h = DMatrix::from_row_slice(2, 2, &[hv[0], hv[1], hv[1], hv[2]]);
        let a = DMatrix::from_fn(rows.len(), 2, |i, j| rows[i][j]);
        let lib = cone_modulus(&h, &DMatrix::zeros(0, 2), &a);
        let oracle = brute_cone_min(&h, &a, 20_000);
        if oracle.is_infinite() {
            prop_assert!(lib.is_infinite() || lib >= oracle - 1e-9, "lib {lib}, cone empty");
        } else {
            // Grid spacing 3e-4 rad bounds the scan's excess by 2 |H| 3e-4.
            prop_assert!((lib - oracle).abs() < 5e-3, "lib {lib} oracle {oracle}");
            prop_assert!(lib <= oracle + 1e-9);
        }
    }

    #[test]
    fn cone_modulus_with_equality_is_restricted_eigenvalue(
        hv in prop::collection::vec(-2.0f64..2.0, 3),
        e in prop::collection::vec(-1.0f64..1.0, 2),
    ) {
        prop_assume!(e[0].hypot(e[1]) > 0.1);
        let h = DMatrix::from_row_slice(2, 2, &[hv[0], hv[1], hv[1], hv[2]]);
        let n = e[0].hypot(e[1]);
        let d = [-e[1] / n, e[0] / n];
        let expect = h[(0, 0)] * d[0] * d[0] + 2.0 * h[(0, 1)] * d[0] * d[1] + h[(1, 1)] * d[1] * d[1];
        let lib = cone_modulus(&h, &DMatrix::from_row_slice(1, 2, &e), &DMatrix::zeros(0, 2));
        prop_assert!((lib - expect).abs() < 1e-10, "lib {lib} expect {expect}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn enumerated_points_are_kkt_and_dedup_is_idempotent(which in 0..CORPUS.len(), t in 0.02f64..0.98) {
        let p = corpus(CORPUS[which]);
        let tol = Tolerances::default();
        let (lo, hi) = p.x_domain[0];
        let x = lo + t * (hi - lo);
        let pts = enumerate_kkt_points(&p, &[x], 7, &tol).unwrap().points;
        for k in &pts {
            prop_assert!(k.residual <= tol.newton_tol);
            prop_assert!(k.h.iter().all(|v| *v <= tol.act_tol));
            prop_assert!(k.lambda.iter().all(|l| *l >= -tol.act_tol));
            for i in 0..p.k {
                if !k.active.contains(&i) {
                    prop_assert_eq!(k.lambda[i], 0.0);
                }
            }
        }
        let again = dedup_points(pts.clone(), &tol);
        prop_assert_eq!(&again, &pts);
        // Copies nudged well inside dedup_tol merge back into the originals.
        let nudged: Vec<KktPoint> = pts
            .iter()
            .map(|k| {
                let mut c = k.clone();
                c.y.iter_mut().for_each(|v| *v += tol.dedup_tol / 10.0);
                c.residual += 1.0;
                c
            })
            .collect();
        let merged = dedup_points(pts.iter().cloned().chain(nudged).collect(), &tol);
        prop_assert_eq!(merged, pts);
    }

    #[test]
    fn active_set_is_constant_between_events(x0 in 0.0f64..0.95, x1 in 1.05f64..2.0) {
        let p = corpus("ce_scsc_disk");
        let tol = Tolerances::default();
        let start = global_min_start(&p, &[x0], &tol).unwrap();
        let b = trace_branch(&p, &[x0], &[x1], &start, &TraceOptions::default(), &tol).unwrap();
        prop_assert_eq!(b.events.len(), 1);
        let s_ev = b.events[0].s_star;
        let width = b.events[0].bracket_width;
        // Samples inside the event bracket sit on the circle to within act_tol.
        for s in b.samples.iter().filter(|s| (s.s - s_ev).abs() > width) {
            let expect: Vec<usize> = if s.s < s_ev { vec![] } else { vec![0] };
            prop_assert_eq!(&s.kkt.active, &expect, "s = {}", s.s);
        }
        let hist = active_set_history(&b);
        prop_assert_eq!(hist.len(), 2);
        prop_assert!((hist[0].x_to - 1.0).abs() < 1e-6);
    }

    #[test]
    fn gradient_scaling_leaves_sensitivities(c in 0.1f64..10.0, x in 0.05f64..1.0) {
        let tol = Tolerances::default();
        for id in ["ce_scsc_disk", "ex_sosc_fold"] {
            let p = corpus(id);
            let q = scale_objective(&p, c);
            let a = global_min_start(&p, &[x], &tol).unwrap();
            let b = global_min_start(&q, &[x], &tol).unwrap();
            for (u, v) in a.y.iter().zip(&b.y) {
                prop_assert!((u - v).abs() < 1e-9);
            }
            for (u, v) in a.lambda.iter().zip(&b.lambda) {
                prop_assert!((c * u - v).abs() < 1e-8 * c.max(1.0));
            }
            let sa = hypergradient_reduced(&p, &a, &tol).unwrap();
            let sb = hypergradient_reduced(&q, &b, &tol).unwrap();
            prop_assert!((sa.dy_dx - sb.dy_dx).amax() < 1e-8);
        }
    }
}

/// The same problem with `g` multiplied by `c`, built through the file format.
fn scale_objective(p: &ParametricProblem, c: f64) -> ParametricProblem {
    fn scale(v: &mut Value, c: f64) {
        match v {
            Value::Object(m) => {
                for (k, inner) in m.iter_mut() {
                    if k == "coeff" {
                        *inner = Value::from(inner.as_f64().unwrap() * c);
                    } else {
                        scale(inner, c);
                    }
                }
            }
            Value::Array(a) => a.iter_mut().for_each(|i| scale(i, c)),
            _ => {}
        }
    }
    let mut v = serde_json::to_value(ProblemFile::from_problem(p)).unwrap();
    scale(&mut v["g"], c);
    v["name"] = Value::from(format!("{}_scaled", p.name));
    serde_json::from_value::<ProblemFile>(v).unwrap().into_problem().unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn failure_intervals_partition_cells_and_refine(seed in any::<u64>(), which in 0usize..2) {
        let tol = Tolerances::default();
        let (id, cond) = [("ex_licq_prev", Condition::Licq), ("ex_scsc_prev", Condition::Scsc)][which];
        let p = corpus(id);
        let draw = draw_perturbation(p.k, p.m, 0.05, seed).unwrap();
        let q = apply_perturbation(&p, &draw).unwrap();
        let coarse = failure_set_estimate(&q, cond, 201, &tol).unwrap();
        let fine = failure_set_estimate(&q, cond, 401, &tol).unwrap();
        for est in [&coarse, &fine] {
            let covered: Vec<usize> = est.intervals.iter().flat_map(|iv| iv.first..=iv.last).collect();
            prop_assert_eq!(&covered, &est.failing_cells);
            for w in est.intervals.windows(2) {
                prop_assert!(w[1].first > w[0].last + 1, "intervals must be separated");
            }
            prop_assert!((est.fraction - est.failing_cells.len() as f64 / est.grid_res as f64).abs() < 1e-15);
        }
        prop_assert!((coarse.fraction - fine.fraction).abs() <= 2.0 / 200.0,
            "coarse {} fine {}", coarse.fraction, fine.fraction);
    }
}

#[test]
fn unperturbed_failure_sets_refine() {
    let tol = Tolerances::default();
    let p = corpus("ex_scsc_prev");
    let a = failure_set_estimate(&p, Condition::Scsc, 201, &tol).unwrap();
    let b = failure_set_estimate(&p, Condition::Scsc, 401, &tol).unwrap();
    // [0, 1] is half of [-0.5, 1.5]; both grids hit its ends.
    assert_eq!(a.failing_cells.len(), 101);
    assert_eq!(b.failing_cells.len(), 201);
    assert_eq!((a.intervals[0].x_lo, a.intervals[0].x_hi), (0.0, 1.0));
}
