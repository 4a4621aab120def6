//! The fourteen reproduction criteria, each a pinned numerical check on the
//! built-in corpus. Shared by the `acceptance` test target and `regdiag repro`.

use crate::continuation::{
    active_set_history, count_minimizers_per_stratum, global_min_start, migration_screen, minimizer_count_screen,
    quadratic_growth_estimate, trace_branch, Branch, EventKind, Termination, TraceOptions,
};
use crate::error::{DiagError, Result};
use crate::kkt::{enumerate_kkt_points, solve_reduced_kkt, KktPoint};
use crate::perturb::{apply_perturbation, draw_for_trial, failure_set_estimate, prevalence_experiment, Condition, PerturbationDraw};
use crate::problem::{list_corpus, load_corpus, ParametricProblem};
use crate::regularity::{gradient_margin_scan, sosc_modulus};
use crate::sensitivity::{complementarity_from_record, hypergradient_complementarity, hypergradient_reduced, reduced_from_record, validate_against_fd};
use crate::strata::{bracket_vertex_change, rigidity_screen, strat_signature};
use crate::tol::Tolerances;
use rayon::prelude::*;
use serde::Serialize;

/// Multipliers, traced values and determinants.
pub const VALUE_TOL: f64 = 1e-8;
/// Event locations.
pub const EVENT_TOL: f64 = 1e-6;
/// Reference points of the quartic census.
pub const CENSUS_POINT_TOL: f64 = 1e-6;
/// Second-order modulus along the fold branch.
pub const FOLD_MODULUS_TOL: f64 = 1e-6;
/// Bracket on the tangency of the disk and the ellipse.
pub const TANGENCY_TOL: f64 = 1e-4;
pub const CORNER_SIGMA_MAX: f64 = 1e-4;
pub const CORNER_WITNESS_TOL: f64 = 1e-3;
pub const CORNER_SCAN_RHO: f64 = 0.05;
pub const CORNER_SCAN_GRID: usize = 401;
pub const GROWTH_DELTA: f64 = 0.05;
pub const GROWTH_SAMPLES: usize = 4000;
pub const GROWTH_SEED: u64 = 1;
pub const GROWTH_LIMIT: f64 = 0.02;
pub const LICQ_FRACTION_TOL: f64 = 0.01;
pub const PREVALENCE_NU: f64 = 0.05;
pub const PREVALENCE_TRIALS: usize = 100;
pub const PREVALENCE_MIN_PASS: usize = 99;
pub const PREVALENCE_SEED: u64 = 7;
/// Grid for the LICQ and SCSC experiments.
pub const FINE_GRID: usize = 2001;
/// Grid for the SOSC experiment. A vanishing curvature of `2 phi^2` is only
/// resolved to about `4e-3` in `x` (see `perturb::DEGENERATE_CURVATURE`),
/// which is one cell here and four on the fine grid.
pub const SOSC_GRID: usize = 401;
/// Largest failing set, in grid cells, that still counts as a point.
pub const POINT_CELLS: usize = 2;
pub const AGREEMENT_SIGMA_MIN: f64 = 1e-3;
pub const AGREEMENT_TOL: f64 = 1e-8;
pub const FD_STEP: f64 = 1e-5;
/// Distance in `x` from events and branch ends for a sample to count as smooth.
pub const FD_CLEARANCE: f64 = 1e-2;
pub const FD_TOL: f64 = 1e-5;
pub const PERSISTENCE_NU: f64 = 0.01;
pub const PERSISTENCE_TRIALS: usize = 100;
pub const PERSISTENCE_SEED: u64 = 11;
pub const PERSISTENCE_GRID: usize = 201;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CriterionOutcome {
    pub id: usize,
    pub title: &'static str,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

pub const CRITERIA: [(usize, &str); 14] = [
    (1, "ex_mult_disc multipliers on each side of x = 1"),
    (2, "ex_mult_disc determinant |x - 1| and singular solves at x = 1"),
    (3, "ex_scsc_kink branch min(0, x), SCSC loss at 0, determinant 2|x|"),
    (4, "ce_licq_corner signatures, rigidity obstruction, corner margin"),
    (5, "ce_licq_tangent signatures and tangency at sqrt(2)"),
    (6, "ce_scsc_disk activation at x = 1 and active-set history"),
    (7, "ce_sosc_count minimizer census and multiplier bound"),
    (8, "ex_scsc_saddle census, saddle degeneration, constant modulus"),
    (9, "ex_sosc_fold fold at 0, modulus 2 sqrt(x), vanishing growth"),
    (10, "ex_licq_prev failure set: half the domain, then a point"),
    (11, "ex_scsc_prev failure set: [0, 1], then the predicted point"),
    (12, "ex_sosc_prev failure set: [0, 1], then empty"),
    (13, "sensitivity formulas agree on regular samples; finite differences match"),
    (14, "obstructions persist under small perturbations"),
];

pub fn run_criterion(id: usize, tol: &Tolerances) -> Result<CriterionOutcome> {
    let title = CRITERIA
        .iter()
        .find(|c| c.0 == id)
        .map(|c| c.1)
        .ok_or_else(|| DiagError::Precondition(format!("no criterion {id}; valid ids are 1..=14")))?;
    let started = std::time::Instant::now();
    let run = match id {
        1 => c1(tol),
        2 => c2(tol),
        3 => c3(tol),
        4 => c4(tol),
        5 => c5(tol),
        6 => c6(tol),
        7 => c7(tol),
        8 => c8(tol),
        9 => c9(tol),
        10 => c10(tol),
        11 => c11(tol),
        12 => c12(tol),
        13 => c13(tol),
        _ => c14(tol),
    };
    let (passed, detail) = match run {
        Ok(v) => v,
        Err(e) => (false, format!("error: {e}")),
    };
    Ok(CriterionOutcome {
        id,
        title,
        passed,
        detail,
        seconds: started.elapsed().as_secs_f64(),
    })
}

pub fn run_all(tol: &Tolerances) -> Vec<CriterionOutcome> {
    CRITERIA
        .iter()
        .map(|(id, _)| run_criterion(*id, tol).expect("listed criterion"))
        .collect()
}

type Verdict = Result<(bool, String)>;

fn corpus(id: &str) -> Result<ParametricProblem> {
    load_corpus(id).ok_or_else(|| DiagError::UnknownCorpus(id.to_string()))?
}

/// Accumulates named sub-checks; the criterion passes when all do.
#[derive(Default)]
struct Checks {
    failed: Vec<String>,
    notes: Vec<String>,
}

impl Checks {
    fn check(&mut self, ok: bool, what: impl Into<String>) {
        let what = what.into();
        if !ok {
            self.failed.push(what);
        } else {
            self.notes.push(what);
        }
    }

    fn verdict(self) -> Verdict {
        if self.failed.is_empty() {
            Ok((true, self.notes.join("; ")))
        } else {
            Ok((false, format!("failed: {}", self.failed.join("; "))))
        }
    }
}

fn only_kkt(problem: &ParametricProblem, x: f64, tol: &Tolerances) -> Result<KktPoint> {
    let mut e = enumerate_kkt_points(problem, &[x], 7, tol)?;
    if e.points.len() != 1 {
        return Err(DiagError::Precondition(format!(
            "expected one KKT point at x = {x}, found {}",
            e.points.len()
        )));
    }
    Ok(e.points.remove(0))
}

fn c1(tol: &Tolerances) -> Verdict {
    let p = corpus("ex_mult_disc")?;
    let mut c = Checks::default();
    for (x, want) in [(1.5, [1.0, 0.0]), (0.5, [0.0, 1.0])] {
        let k = only_kkt(&p, x, tol)?;
        let err = (k.lambda[0] - want[0]).abs().max((k.lambda[1] - want[1]).abs());
        c.check(err <= VALUE_TOL, format!("x={x}: lambda={:?} err={err:.1e}", k.lambda));
    }
    c.verdict()
}

fn c2(tol: &Tolerances) -> Verdict {
    let p = corpus("ex_mult_disc")?;
    let mut c = Checks::default();
    for x in [0.5, 0.9, 1.1, 1.5] {
        let k = only_kkt(&p, x, tol)?;
        let det = hypergradient_complementarity(&p, &k, tol)?.det;
        let err = (det.abs() - (x - 1.0f64).abs()).abs();
        c.check(err <= VALUE_TOL, format!("x={x}: det={det:.10} err={err:.1e}"));
    }
    let k = solve_reduced_kkt(&p, &[1.0], &[0], &[1.0], &[1.0], tol)?;
    let red = hypergradient_reduced(&p, &k, tol);
    let comp = hypergradient_complementarity(&p, &k, tol);
    c.check(
        matches!(red, Err(DiagError::SingularSystem { .. })),
        format!("x=1 reduced singular: {}", red.is_err()),
    );
    c.check(
        matches!(comp, Err(DiagError::SingularSystem { .. })),
        format!("x=1 complementarity singular: {}", comp.is_err()),
    );
    c.verdict()
}

fn trace_from_global_min(problem: &ParametricProblem, from: f64, to: f64, tol: &Tolerances) -> Result<Branch> {
    let start = global_min_start(problem, &[from], tol)?;
    trace_branch(problem, &[from], &[to], &start, &TraceOptions::default(), tol)
}

fn c3(tol: &Tolerances) -> Verdict {
    let p = corpus("ex_scsc_kink")?;
    let mut c = Checks::default();
    let b = trace_from_global_min(&p, -1.0, 1.0, tol)?;
    let mut worst = 0.0f64;
    for i in 0..=100 {
        let x = -1.0 + 2.0 * i as f64 / 100.0;
        let k = b.solve_at(&p, &[x], tol)?;
        worst = worst.max((k.y[0] - x.min(0.0)).abs());
    }
    c.check(worst <= VALUE_TOL, format!("max |y - min(0,x)| = {worst:.1e} on 101 points"));
    let loss: Vec<f64> = b.events.iter().filter(|e| e.kind == EventKind::ScscLoss).map(|e| e.x_star).collect();
    c.check(
        loss.len() == 1 && loss[0].abs() <= EVENT_TOL,
        format!("SCSC_LOSS at {loss:?}"),
    );
    for x in [-0.5, -0.25, 0.25, 0.5] {
        let k = only_kkt(&p, x, tol)?;
        let det = hypergradient_complementarity(&p, &k, tol)?.det;
        let err = (det.abs() - 2.0 * f64::abs(x)).abs();
        c.check(err <= VALUE_TOL, format!("x={x}: det={det:.10}"));
    }
    c.verdict()
}

fn c4(tol: &Tolerances) -> Verdict {
    let p = corpus("ce_licq_corner")?;
    let mut c = Checks::default();
    let xs = vec![vec![-1.0], vec![1.0]];
    let (screen, sigs) = rigidity_screen(&p, &xs, crate::strata::DEFAULT_GRID_RES, tol)?;
    c.check(sigs[0].counts() == (4, 4, 1), format!("x=-1 signature {:?}", sigs[0].counts()));
    c.check(sigs[1].counts() == (5, 5, 1), format!("x=1 signature {:?}", sigs[1].counts()));
    c.check(screen.is_obstructed(), "rigidity screen obstructed");
    let scan = gradient_margin_scan(&p, &[0.0], CORNER_SCAN_RHO, CORNER_SCAN_GRID)?;
    let wdist = scan.witness_y.iter().map(|v| v.abs()).fold(0.0, f64::max);
    c.check(scan.sigma_star < CORNER_SIGMA_MAX, format!("sigma_star={:.1e}", scan.sigma_star));
    c.check(wdist <= CORNER_WITNESS_TOL, format!("witness {:?}", scan.witness_y));
    c.verdict()
}

fn c5(tol: &Tolerances) -> Verdict {
    let p = corpus("ce_licq_tangent")?;
    let mut c = Checks::default();
    let s1 = strat_signature(&p, &[1.0], crate::strata::DEFAULT_GRID_RES, tol)?;
    let s2 = strat_signature(&p, &[2.0], crate::strata::DEFAULT_GRID_RES, tol)?;
    c.check(s1.counts() == (0, 1, 1), format!("x=1 signature {:?}", s1.counts()));
    c.check(s2.counts() == (4, 4, 1), format!("x=2 signature {:?}", s2.counts()));
    let (lo, hi) = bracket_vertex_change(&p, 1.0, 2.0, TANGENCY_TOL, tol)?;
    let mid = 0.5 * (lo + hi);
    c.check(
        (mid - 2f64.sqrt()).abs() <= TANGENCY_TOL,
        format!("vertex change bracketed in [{lo:.7}, {hi:.7}]"),
    );
    c.verdict()
}

fn c6(tol: &Tolerances) -> Verdict {
    let p = corpus("ce_scsc_disk")?;
    let mut c = Checks::default();
    let b = trace_from_global_min(&p, 0.0, 2.0, tol)?;
    let acts: Vec<f64> = b.events.iter().filter(|e| e.kind == EventKind::Activation).map(|e| e.x_star).collect();
    c.check(
        acts.len() == 1 && (acts[0] - 1.0).abs() <= EVENT_TOL,
        format!("ACTIVATION at {acts:?}"),
    );
    c.check(b.events.len() == acts.len(), format!("{} events in total", b.events.len()));
    let hist: Vec<Vec<usize>> = active_set_history(&b).into_iter().map(|h| h.set).collect();
    c.check(hist == vec![vec![], vec![0]], format!("history {:?}", one_based(&hist)));
    c.check(b.termination == Termination::PathEnd, format!("termination {:?}", b.termination));
    c.verdict()
}

fn one_based(sets: &[Vec<usize>]) -> Vec<String> {
    sets.iter().map(|s| crate::ser::index_set(s)).collect()
}

fn c7(tol: &Tolerances) -> Verdict {
    let p = corpus("ce_sosc_count")?;
    let mut c = Checks::default();
    let c0 = count_minimizers_per_stratum(&p, &[0.0], tol)?;
    let c1 = count_minimizers_per_stratum(&p, &[1.0], tol)?;
    c.check(
        c0.per_stratum.len() == 1 && c0.per_stratum.get(&vec![0]) == Some(&1),
        format!("x=0 census {:?}", c0.per_stratum),
    );
    c.check(
        c1.per_stratum.len() == 1 && c1.per_stratum.get(&vec![0]) == Some(&2),
        format!("x=1 census {:?}", c1.per_stratum),
    );
    for target in [5.0, -5.0] {
        let hit = c1
            .minimizers
            .iter()
            .any(|k| k.y[0].abs() <= CENSUS_POINT_TOL && (k.y[1] - target).abs() <= CENSUS_POINT_TOL);
        c.check(hit, format!("minimizer (0,{target}) at x=1"));
    }
    let mut min_lambda = f64::INFINITY;
    let mut count = 0;
    for x in [0.0, 0.5, 1.0] {
        for k in enumerate_kkt_points(&p, &[x], 7, tol)?.points {
            min_lambda = min_lambda.min(k.lambda[0]);
            count += 1;
        }
    }
    c.check(
        count > 0 && min_lambda >= 2.0 - VALUE_TOL,
        format!("min lambda_1 = {min_lambda:.10} over {count} KKT points"),
    );
    c.verdict()
}

fn c8(tol: &Tolerances) -> Verdict {
    let p = corpus("ex_scsc_saddle")?;
    let mut c = Checks::default();
    let total = |x: f64| -> Result<usize> { Ok(count_minimizers_per_stratum(&p, &[x], tol)?.minimizers.len()) };
    let (n_pos, n_neg) = (total(0.5)?, total(-0.5)?);
    c.check(n_pos == 2, format!("{n_pos} minimizers at x=0.5"));
    c.check(n_neg == 1, format!("{n_neg} minimizers at x=-0.5"));
    let opts = TraceOptions::default();
    let low = solve_reduced_kkt(&p, &[1.0], &[2], &[0.0, 0.0], &[1.0], tol)?;
    let b = trace_branch(&p, &[1.0], &[-1.0], &low, &opts, tol)?;
    c.check(
        b.termination == Termination::SaddleDegeneration && b.termination_x.abs() <= EVENT_TOL,
        format!("y2=0 branch ends {:?} at {:.2e}", b.termination, b.termination_x),
    );
    let high = solve_reduced_kkt(&p, &[1.0], &[3], &[0.0, 1.0], &[3.0], tol)?;
    let b = trace_branch(&p, &[1.0], &[-1.0], &high, &opts, tol)?;
    let worst = b
        .samples
        .iter()
        .map(|s| (s.report.sosc_modulus - 1.0).abs())
        .fold(0.0, f64::max);
    c.check(
        b.termination == Termination::PathEnd && worst <= VALUE_TOL,
        format!("y2=1 branch {:?}, max |modulus - 1| = {worst:.1e} over {} samples", b.termination, b.samples.len()),
    );
    c.verdict()
}

fn c9(tol: &Tolerances) -> Verdict {
    let p = corpus("ex_sosc_fold")?;
    let mut c = Checks::default();
    // the interior minimizer (0, sqrt(x)); the bound y2 = -1.5 is the global one for small x
    let interior = |x: f64| solve_reduced_kkt(&p, &[x], &[0], &[0.0, x.sqrt()], &[1.0], tol);
    let b = trace_branch(&p, &[1.0], &[-1.0], &interior(1.0)?, &TraceOptions::default(), tol)?;
    let fold: Vec<f64> = b.events.iter().filter(|e| e.kind == EventKind::Fold).map(|e| e.x_star).collect();
    c.check(
        b.termination == Termination::Fold && fold.len() == 1 && fold[0].abs() <= EVENT_TOL,
        format!("{:?} with FOLD at {fold:?}", b.termination),
    );
    for x in [0.01, 0.25, 1.0] {
        let k = interior(x)?;
        let m = sosc_modulus(&p, &k, tol)?;
        let err = (m - 2.0 * f64::sqrt(x)).abs();
        c.check(err <= FOLD_MODULUS_TOL, format!("x={x}: modulus {m:.8}"));
    }
    let xs: Vec<f64> = (0..=6).map(|i| 10f64.powf(-0.5 * i as f64)).collect();
    let mut ests = Vec::new();
    for &x in &xs {
        let k = interior(x)?;
        ests.push(quadratic_growth_estimate(&p, &k, GROWTH_DELTA, GROWTH_SAMPLES, GROWTH_SEED, tol)?.c_hat);
    }
    let monotone = ests.windows(2).all(|w| w[1] < w[0]);
    let last = *ests.last().unwrap_or(&f64::INFINITY);
    c.check(monotone, format!("growth {:?}", ests.iter().map(|v| format!("{v:.4}")).collect::<Vec<_>>()));
    c.check(last < GROWTH_LIMIT, format!("growth at x=1e-3 is {last:.4}"));
    c.verdict()
}

fn c10(tol: &Tolerances) -> Verdict {
    let p = corpus("ex_licq_prev")?;
    let mut c = Checks::default();
    let e = failure_set_estimate(&p, Condition::Licq, FINE_GRID, tol)?;
    c.check(
        (e.fraction - 0.5).abs() <= LICQ_FRACTION_TOL,
        format!("unperturbed fraction {:.5}", e.fraction),
    );
    let r = prevalence_experiment(&p, Condition::Licq, PREVALENCE_NU, PREVALENCE_TRIALS, PREVALENCE_SEED, FINE_GRID, tol)?;
    let ok = r
        .per_trial
        .iter()
        .filter(|t| t.intervals.len() <= 1 && t.intervals.iter().all(|iv| iv.cells() <= POINT_CELLS))
        .count();
    c.check(ok >= PREVALENCE_MIN_PASS, format!("{ok}/{} trials point-like", r.trials));
    c.verdict()
}

/// `b/2 - a_1` picks the side: the failing point is its cube root below 0,
/// or one plus its cube root above 1.
pub fn scsc_prev_prediction(a1: f64, b: f64) -> f64 {
    let c = 0.5 * b - a1;
    if c < 0.0 {
        c.cbrt()
    } else {
        1.0 + c.cbrt()
    }
}

fn unit_interval_within_cell(e: &crate::perturb::FailureSetEstimate) -> bool {
    let h = e.spacing() * (1.0 + 1e-9);
    e.intervals.len() == 1 && e.intervals[0].x_lo.abs() <= h && (e.intervals[0].x_hi - 1.0).abs() <= h
}

fn c11(tol: &Tolerances) -> Verdict {
    let p = corpus("ex_scsc_prev")?;
    let mut c = Checks::default();
    let e = failure_set_estimate(&p, Condition::Scsc, FINE_GRID, tol)?;
    c.check(unit_interval_within_cell(&e), format!("unperturbed intervals {:?}", spans(&e.intervals)));
    let r = prevalence_experiment(&p, Condition::Scsc, PREVALENCE_NU, PREVALENCE_TRIALS, PREVALENCE_SEED, FINE_GRID, tol)?;
    let h = e.spacing() * (1.0 + 1e-9);
    let ok = r
        .per_trial
        .iter()
        .filter(|t| {
            let want = scsc_prev_prediction(t.a[0], t.b[0]);
            t.intervals.len() == 1
                && t.intervals[0].cells() <= POINT_CELLS
                && (t.intervals[0].x_lo - want).abs() <= h
                && (t.intervals[0].x_hi - want).abs() <= h
        })
        .count();
    c.check(ok >= PREVALENCE_MIN_PASS, format!("{ok}/{} trials at the predicted point", r.trials));
    c.verdict()
}

fn spans(iv: &[crate::perturb::FailInterval]) -> Vec<(f64, f64)> {
    iv.iter().map(|i| (i.x_lo, i.x_hi)).collect()
}

fn c12(tol: &Tolerances) -> Verdict {
    let p = corpus("ex_sosc_prev")?;
    let mut c = Checks::default();
    let e = failure_set_estimate(&p, Condition::Sosc, SOSC_GRID, tol)?;
    c.check(unit_interval_within_cell(&e), format!("unperturbed intervals {:?}", spans(&e.intervals)));
    let r = prevalence_experiment(&p, Condition::Sosc, PREVALENCE_NU, PREVALENCE_TRIALS, PREVALENCE_SEED, SOSC_GRID, tol)?;
    c.check(
        r.summary.empty_trials >= PREVALENCE_MIN_PASS,
        format!("{}/{} trials empty", r.summary.empty_trials, r.trials),
    );
    c.verdict()
}

/// Every branch the agreement check runs over: the global minimizer traced
/// across the domain in both directions where it is strict at the start,
/// plus the second minimizer branches of the saddle and quartic problems.
pub fn corpus_branches(tol: &Tolerances) -> Result<Vec<(String, ParametricProblem, Branch)>> {
    let mut jobs: Vec<(String, f64, f64, Option<(Vec<usize>, Vec<f64>, Vec<f64>)>)> = Vec::new();
    for entry in list_corpus() {
        let p = corpus(entry.id)?;
        let (lo, hi) = p.x_domain[0];
        jobs.push((entry.id.to_string(), lo, hi, None));
        jobs.push((entry.id.to_string(), hi, lo, None));
    }
    jobs.push(("ex_scsc_saddle".into(), 1.0, -1.0, Some((vec![3], vec![0.0, 1.0], vec![3.0]))));
    jobs.push(("ce_sosc_count".into(), 1.0, 0.0, Some((vec![0], vec![0.0, 5.0], vec![2.0]))));
    let traced: Vec<Option<(String, ParametricProblem, Branch)>> = jobs
        .into_par_iter()
        .map(|(id, from, to, start)| -> Result<Option<(String, ParametricProblem, Branch)>> {
            let p = corpus(&id)?;
            let start = match start {
                Some((basis, y, lam)) => solve_reduced_kkt(&p, &[from], &basis, &y, &lam, tol)?,
                None => match global_min_start(&p, &[from], tol) {
                    Ok(k) => k,
                    Err(DiagError::NoStart { .. }) => return Ok(None),
                    Err(e) => return Err(e),
                },
            };
            let b = trace_branch(&p, &[from], &[to], &start, &TraceOptions::default(), tol)?;
            Ok(Some((format!("{id} {from}->{to}"), p, b)))
        })
        .collect::<Result<_>>()?;
    Ok(traced.into_iter().flatten().collect())
}

fn c13(tol: &Tolerances) -> Verdict {
    let mut c = Checks::default();
    let branches = corpus_branches(tol)?;
    let mut compared = 0usize;
    let mut worst_agree = 0.0f64;
    let mut worst_fd = 0.0f64;
    let mut worst_at = String::new();
    for (name, p, b) in &branches {
        for s in &b.samples {
            let r = &s.report;
            if !(r.licq && r.scsc) {
                continue;
            }
            let rec = p.evaluate(&s.kkt.x, &s.kkt.y)?;
            let (Ok(red), Ok(comp)) = (
                reduced_from_record(&rec, &s.kkt.lambda, &s.kkt.active, tol.sing_tol),
                complementarity_from_record(&rec, &s.kkt.lambda, tol.sing_tol),
            ) else {
                continue;
            };
            if red.sigma_min <= AGREEMENT_SIGMA_MIN || comp.sigma_min <= AGREEMENT_SIGMA_MIN {
                continue;
            }
            compared += 1;
            let d = (&red.dy_dx - &comp.dy_dx).amax();
            if d > worst_agree {
                worst_agree = d;
                worst_at = format!("{name} x={:.4}", s.kkt.x[0]);
            }
        }
        let fd = validate_against_fd(p, b, FD_STEP, FD_CLEARANCE, tol)?;
        worst_fd = worst_fd.max(fd);
    }
    c.check(
        compared > 0 && worst_agree <= AGREEMENT_TOL,
        format!("{compared} samples on {} branches, max gap {worst_agree:.1e} {worst_at}", branches.len()),
    );
    c.check(worst_fd < FD_TOL, format!("max FD error {worst_fd:.1e}"));
    c.verdict()
}

fn persistence_draws(problem: &ParametricProblem) -> Result<Vec<PerturbationDraw>> {
    (0..PERSISTENCE_TRIALS)
        .map(|t| draw_for_trial(problem.k, problem.m, PERSISTENCE_NU, PERSISTENCE_SEED, t as u64))
        .collect()
}

/// Obstructed-trial counts for the three screens over perturbed copies.
pub fn persistence_counts(tol: &Tolerances) -> Result<[(String, usize); 3]> {
    let run = |id: &str, screen: &(dyn Fn(&ParametricProblem) -> Result<bool> + Sync)| -> Result<(String, usize)> {
        let p = corpus(id)?;
        let hits = persistence_draws(&p)?
            .par_iter()
            .map(|d| screen(&apply_perturbation(&p, d)?))
            .collect::<Result<Vec<bool>>>()?;
        Ok((id.to_string(), hits.into_iter().filter(|h| *h).count()))
    };
    let rigid = run("ce_licq_corner", &|q| {
        Ok(rigidity_screen(q, &[vec![-1.0], vec![1.0]], PERSISTENCE_GRID, tol)?.0.is_obstructed())
    })?;
    let migrate = run("ce_scsc_disk", &|q| Ok(migration_screen(q, &[0.0], &[2.0], tol)?.0.is_obstructed()))?;
    let count = run("ce_sosc_count", &|q| {
        Ok(minimizer_count_screen(q, &[vec![0.0], vec![1.0]], tol)?.0.is_obstructed())
    })?;
    Ok([rigid, migrate, count])
}

fn c14(tol: &Tolerances) -> Verdict {
    let mut c = Checks::default();
    for (id, hits) in persistence_counts(tol)? {
        c.check(hits == PERSISTENCE_TRIALS, format!("{id}: {hits}/{PERSISTENCE_TRIALS} obstructed"));
    }
    c.verdict()
}
