//! Predictor-corrector tracing of KKT branches along a segment in `x`, with
//! event localization and active-set switching, plus the per-stratum
//! minimizer census and the quadratic growth estimator.

use crate::error::{DiagError, Result};
use crate::kkt::{
    classify_kkt, classify_with_zero_set, enumerate_kkt_points, full_lambda, reduced_newton_counted, residual_from,
    ClassKind, KktPoint,
};
use crate::linalg;
use crate::problem::{EvalRecord, ParametricProblem};
use crate::regularity::{cone_modulus, full_report, RegularityReport};
use crate::sensitivity::reduced_from_record;
use crate::ser;
use crate::strata::Screen;
use crate::tol::Tolerances;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Serialize, Serializer};
use std::collections::BTreeMap;

pub const DEFAULT_SEEDS_PER_AXIS: usize = 7;
/// A step from `a` to `b` is accepted when each end's tangent predicts the
/// other end to within `RATIO * |b - a| + SLOPE * ds`.
const CORRECTION_RATIO: f64 = 0.5;
const CORRECTION_SLOPE: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TraceOptions {
    /// Largest accepted change in `y` per step.
    pub step_cap: f64,
    /// Events are bracketed to this width in the path parameter.
    pub event_tol: f64,
    /// The first step is the path length over this.
    pub initial_divisions: usize,
    /// Steps never grow beyond this many initial steps.
    pub max_growth: f64,
    /// A lost corrector is a fold only if the last `sigma_min` of the bordered matrix is below this.
    pub fold_sigma: f64,
    /// An accepted sample with bordered `sigma_min` below this ends the branch as a fold.
    pub sigma_alarm: f64,
    /// A swapped point must lie this close to the point before the swap.
    pub swap_continuity: f64,
    /// Trace saddle or maximizer branches instead of requiring a strict minimizer.
    pub allow_non_minimizer: bool,
    pub max_steps: usize,
}

impl Default for TraceOptions {
    fn default() -> Self {
        Self {
            step_cap: 0.5,
            event_tol: 1e-6,
            initial_divisions: 200,
            max_growth: 4.0,
            fold_sigma: 1e-2,
            sigma_alarm: 1e-7,
            swap_continuity: 1e-3,
            allow_non_minimizer: false,
            max_steps: 200_000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum EventKind {
    Activation,
    ScscLoss,
    Fold,
    LicqDegeneracy,
    DomainBoundary,
}

fn opt_index<S: Serializer>(v: &Option<usize>, s: S) -> std::result::Result<S::Ok, S::Error> {
    match v {
        Some(i) => s.serialize_some(&(i + 1)),
        None => s.serialize_none(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Event {
    pub kind: EventKind,
    /// Constraint involved, if any (0-based; serialized 1-based).
    #[serde(serialize_with = "opt_index")]
    pub index: Option<usize>,
    /// First coordinate of `x` at the event (interpolated inside the bracket).
    pub x_star: f64,
    pub s_star: f64,
    pub bracket_width: f64,
    /// Margins at the bracket end on the branch's side of the event.
    pub diagnostics: Option<RegularityReport>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Termination {
    PathEnd,
    Fold,
    SaddleDegeneration,
    LicqDegeneracy,
    NoConverge,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Sample {
    /// Path parameter (arc length from the start).
    pub s: f64,
    pub kkt: KktPoint,
    pub report: RegularityReport,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Branch {
    pub x_start: Vec<f64>,
    /// End of the segment after clamping to the domain.
    pub x_end: Vec<f64>,
    pub samples: Vec<Sample>,
    pub events: Vec<Event>,
    pub termination: Termination,
    /// First coordinate of `x` where the branch stopped.
    pub termination_x: f64,
}

impl Branch {
    pub fn length(&self) -> f64 {
        dist(&self.x_start, &self.x_end)
    }

    /// Unit direction of the segment.
    pub fn direction(&self) -> Vec<f64> {
        direction(&self.x_start, &self.x_end)
    }

    pub fn x_at(&self, s: f64) -> Vec<f64> {
        let d = self.direction();
        self.x_start.iter().zip(&d).map(|(a, b)| a + s * b).collect()
    }

    /// Re-solves the branch at `x` on the segment from the nearest samples.
    pub fn solve_at(&self, problem: &ParametricProblem, x: &[f64], tol: &Tolerances) -> Result<KktPoint> {
        let d = self.direction();
        let s: f64 = x.iter().zip(&self.x_start).zip(&d).map(|((a, b), c)| (a - b) * c).sum();
        let mut order: Vec<&Sample> = self.samples.iter().collect();
        order.sort_by(|a, b| (a.s - s).abs().total_cmp(&(b.s - s).abs()));
        let mut last = Err(DiagError::NoStart { x: x[0] });
        for smp in order.into_iter().take(4) {
            let rec = problem.evaluate(&smp.kkt.x, &smp.kkt.y)?;
            let lam0: Vec<f64> = smp.kkt.basis.iter().map(|&i| smp.kkt.lambda[i]).collect();
            let ds = s - smp.s;
            let (mut y0, mut l0) = (smp.kkt.y.clone(), lam0.clone());
            if let Ok(sens) = reduced_from_record(&rec, &smp.kkt.lambda, &smp.kkt.basis, 1e-14) {
                let dv = DVector::from_vec(d.clone());
                let dy = &sens.dy_dx * &dv;
                let dl = &sens.dlambda_dx * &dv;
                y0.iter_mut().zip(dy.iter()).for_each(|(a, b)| *a += ds * b);
                l0.iter_mut()
                    .zip(&smp.kkt.basis)
                    .for_each(|(a, &i)| *a += ds * dl[i]);
            }
            last = crate::kkt::solve_reduced_kkt(problem, x, &smp.kkt.basis, &y0, &l0, tol);
            if last.is_ok() {
                return last;
            }
        }
        last
    }

    pub fn has_event(&self, kind: EventKind) -> bool {
        self.events.iter().any(|e| e.kind == kind)
    }
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt()
}

fn direction(a: &[f64], b: &[f64]) -> Vec<f64> {
    let l = dist(a, b);
    if l == 0.0 {
        return vec![0.0; a.len()];
    }
    a.iter().zip(b).map(|(p, q)| (q - p) / l).collect()
}

/// Clamps the segment end into the domain box along the segment.
fn clamp_segment(problem: &ParametricProblem, a: &[f64], b: &[f64]) -> (Vec<f64>, bool) {
    let mut t_max = 1.0f64;
    for (c, (lo, hi)) in problem.x_domain.iter().enumerate() {
        let d = b[c] - a[c];
        if d > 0.0 && b[c] > *hi {
            t_max = t_max.min((hi - a[c]) / d);
        } else if d < 0.0 && b[c] < *lo {
            t_max = t_max.min((lo - a[c]) / d);
        }
    }
    if t_max >= 1.0 {
        return (b.to_vec(), false);
    }
    (a.iter().zip(b).map(|(p, q)| p + t_max * (q - p)).collect(), true)
}

#[derive(Clone)]
struct State {
    s: f64,
    x: Vec<f64>,
    y: Vec<f64>,
    lam: Vec<f64>,
    basis: Vec<usize>,
    rec: EvalRecord,
    modulus: f64,
    dy: Option<DVector<f64>>,
    dl: Option<DVector<f64>>,
    iters: usize,
}

impl State {
    fn lambda_full(&self) -> Vec<f64> {
        full_lambda(self.rec.h.len(), &self.basis, &self.lam)
    }

    fn point(&self, tol: &Tolerances) -> KktPoint {
        let lambda = self.lambda_full();
        let k = lambda.len();
        KktPoint {
            x: self.x.clone(),
            y: self.y.clone(),
            residual: residual_from(&self.rec, &lambda),
            active: (0..k).filter(|&i| self.rec.h[i].abs() <= tol.act_tol).collect(),
            basis: self.basis.clone(),
            h: self.rec.h.iter().copied().collect(),
            lambda,
        }
    }

    fn kkt_sigma(&self) -> f64 {
        linalg::sigma_min(&crate::kkt::kkt_matrix(&self.rec, &self.lambda_full(), &self.basis))
    }

    /// Monitor values: multipliers in the basis, then constraint values outside it.
    fn monitor(&self, i: usize) -> f64 {
        match self.basis.iter().position(|&b| b == i) {
            Some(j) => self.lam[j],
            None => self.rec.h[i],
        }
    }
}

struct Tracer<'a> {
    problem: &'a ParametricProblem,
    tol: &'a Tolerances,
    opts: &'a TraceOptions,
    x0: Vec<f64>,
    dir: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Flip {
    Loss(usize),
    Activation(usize),
}

impl<'a> Tracer<'a> {
    fn x_at(&self, s: f64) -> Vec<f64> {
        self.x0.iter().zip(&self.dir).map(|(a, d)| a + s * d).collect()
    }

    fn build(&self, s: f64, y: Vec<f64>, lam: Vec<f64>, basis: Vec<usize>, rec: EvalRecord, iters: usize) -> State {
        let lf = full_lambda(self.problem.k, &basis, &lam);
        let h = rec.hess_lagrangian(&lf);
        let a = rec.active_jacobian(&basis);
        let modulus = cone_modulus(&h, &a, &DMatrix::zeros(0, self.problem.m));
        let (dy, dl) = match reduced_from_record(&rec, &lf, &basis, 1e-14) {
            Ok(sens) => {
                let d = DVector::from_vec(self.dir.clone());
                let dy = &sens.dy_dx * &d;
                let dlf = &sens.dlambda_dx * &d;
                let dl = DVector::from_iterator(basis.len(), basis.iter().map(|&i| dlf[i]));
                (Some(dy), Some(dl))
            }
            Err(_) => (None, None),
        };
        State {
            s,
            x: self.x_at(s),
            y,
            lam,
            basis,
            rec,
            modulus,
            dy,
            dl,
            iters,
        }
    }

    /// Predictor from `from` along its tangent, then Newton with `basis` at `s`.
    fn correct(&self, from: &State, s: f64, basis: &[usize]) -> Result<State> {
        let ds = s - from.s;
        let mut y0 = from.y.clone();
        if let Some(dy) = &from.dy {
            y0.iter_mut().zip(dy.iter()).for_each(|(a, b)| *a += ds * b);
        }
        let lam0: Vec<f64> = if basis == from.basis.as_slice() {
            let mut l = from.lam.clone();
            if let Some(dl) = &from.dl {
                l.iter_mut().zip(dl.iter()).for_each(|(a, b)| *a += ds * b);
            }
            l
        } else {
            let rec = self.problem.evaluate_at(&self.x_at(s).iter().chain(&y0).copied().collect::<Vec<_>>());
            crate::kkt::multiplier_seed(&rec, basis)
        };
        let x = self.x_at(s);
        let (y, lam, rec, iters) = reduced_newton_counted(self.problem, &x, basis, &y0, &lam0, self.tol)?;
        Ok(self.build(s, y, lam, basis.to_vec(), rec, iters))
    }

    /// Besides the step cap and the curvature sign, both tangents must
    /// predict the other end of the step: a corrector that jumped to another
    /// branch (through a pitchfork, say) fails the backward prediction, and
    /// the step is halved like a failed one.
    fn acceptable(&self, from: &State, to: &State, sign: f64) -> bool {
        let dy = dist(&from.y, &to.y);
        let ds = to.s - from.s;
        let miss = |a: &State, b: &State, h: f64| -> f64 {
            (0..a.y.len())
                .map(|j| {
                    let t = a.dy.as_ref().map_or(0.0, |d| d[j]);
                    (b.y[j] - a.y[j] - h * t).powi(2)
                })
                .sum::<f64>()
                .sqrt()
        };
        let mismatch = miss(from, to, ds).max(miss(to, from, -ds));
        dy <= self.opts.step_cap
            && mismatch <= CORRECTION_RATIO * dy + CORRECTION_SLOPE * ds.abs()
            && to.modulus * sign > 0.0
            && to.y.iter().all(|v| v.is_finite())
    }

    fn flips(&self, a: &State, b: &State) -> Vec<(Flip, f64)> {
        let mut out = Vec::new();
        for i in 0..self.problem.k {
            let (va, vb) = (a.monitor(i), b.monitor(i));
            if a.basis.contains(&i) {
                if va > 0.0 && vb <= 0.0 {
                    out.push((Flip::Loss(i), va / (va - vb)));
                }
            } else if va < 0.0 && vb >= 0.0 {
                out.push((Flip::Activation(i), va / (va - vb)));
            }
        }
        out.sort_by(|p, q| p.1.total_cmp(&q.1));
        out
    }

    /// A candidate point after a swap: converged, a KKT point at the sign
    /// tolerances, close to `near`, and a minimizer unless saddles are allowed.
    fn try_swap(&self, near: &State, s: f64, basis: Vec<usize>) -> Option<State> {
        if basis.len() > self.problem.m {
            return None;
        }
        let st = self.correct(near, s, &basis).ok()?;
        if st.lam.iter().any(|l| *l < -self.tol.act_tol) {
            return None;
        }
        if (0..self.problem.k).any(|i| !basis.contains(&i) && st.rec.h[i] > self.tol.act_tol) {
            return None;
        }
        if dist(&st.y, &near.y) > self.opts.swap_continuity {
            return None;
        }
        if !self.opts.allow_non_minimizer {
            let p = st.point(self.tol);
            if classify_kkt(self.problem, &p, self.tol).ok()?.kind == ClassKind::NotLocalMin {
                return None;
            }
        }
        Some(st)
    }
}

struct Builder<'a> {
    problem: &'a ParametricProblem,
    tol: &'a Tolerances,
    samples: Vec<Sample>,
    events: Vec<Event>,
}

impl Builder<'_> {
    fn push(&mut self, st: &State) -> Result<()> {
        let kkt = st.point(self.tol);
        let report = full_report(self.problem, &kkt, self.tol)?;
        self.samples.push(Sample { s: st.s, kkt, report });
        Ok(())
    }

    fn event(&mut self, kind: EventKind, index: Option<usize>, x_star: f64, s_star: f64, width: f64, at: Option<&State>) {
        let diagnostics = at.and_then(|st| full_report(self.problem, &st.point(self.tol), self.tol).ok());
        self.events.push(Event {
            kind,
            index,
            x_star,
            s_star,
            bracket_width: width,
            diagnostics,
        });
    }
}

/// Traces the branch through `start` from `x_start` towards `x_end`.
pub fn trace_branch(
    problem: &ParametricProblem,
    x_start: &[f64],
    x_end: &[f64],
    start: &KktPoint,
    opts: &TraceOptions,
    tol: &Tolerances,
) -> Result<Branch> {
    let x_start = problem.clamp_x(x_start)?;
    if x_end.len() != problem.n || x_end.iter().any(|v| !v.is_finite()) {
        return Err(DiagError::Precondition("x_end must be a finite point of dimension n".into()));
    }
    let (x_end, clamped) = clamp_segment(problem, &x_start, x_end);
    if dist(&start.x, &x_start) > 1e-9 {
        return Err(DiagError::Precondition("start point is not at x_start".into()));
    }
    if start.residual > tol.newton_tol {
        return Err(DiagError::Precondition(format!(
            "start residual {:.3e} exceeds newton_tol",
            start.residual
        )));
    }
    let start_class = classify_kkt(problem, start, tol)?;
    if !opts.allow_non_minimizer && start_class.kind != ClassKind::StrictLocalMin {
        return Err(DiagError::Precondition("start point is not a strict local minimizer".into()));
    }
    let len = dist(&x_start, &x_end);
    let tracer = Tracer {
        problem,
        tol,
        opts,
        x0: x_start.clone(),
        dir: direction(&x_start, &x_end),
    };
    let mut out = Builder {
        problem,
        tol,
        samples: Vec::new(),
        events: Vec::new(),
    };
    let lam0: Vec<f64> = start.basis.iter().map(|&i| start.lambda[i]).collect();
    let rec = problem.evaluate(&start.x, &start.y)?;
    let mut cur = tracer.build(0.0, start.y.clone(), lam0, start.basis.clone(), rec, 0);
    let sign = if cur.modulus > 0.0 { 1.0 } else { -1.0 };
    out.push(&cur)?;

    let first = coord0(&x_start);
    let finish = |out: Builder, term: Termination, x: f64| -> Result<Branch> {
        Ok(Branch {
            x_start: x_start.clone(),
            x_end: x_end.clone(),
            samples: out.samples,
            events: out.events,
            termination: term,
            termination_x: x,
        })
    };
    if len == 0.0 {
        return finish(out, Termination::PathEnd, first);
    }
    let h0 = len / opts.initial_divisions.max(1) as f64;
    let h_max = h0 * opts.max_growth;
    let mut h = h0;
    let mut clean = 0usize;
    let xs = |s: f64| tracer.x_at(s)[0];

    for _ in 0..opts.max_steps {
        if cur.s >= len {
            if clamped {
                out.event(EventKind::DomainBoundary, None, xs(len), len, 0.0, Some(&cur));
            }
            return finish(out, Termination::PathEnd, xs(len));
        }
        if h < 1e-12 {
            return Err(DiagError::StepUnderflow { x: xs(cur.s) });
        }
        let s_new = (cur.s + h).min(len);
        let step = s_new - cur.s;
        let attempt = tracer.correct(&cur, s_new, &cur.basis);
        let next = match attempt {
            Ok(st) if tracer.acceptable(&cur, &st, sign) => st,
            _ => {
                if step > opts.event_tol {
                    h = step * 0.5;
                    clean = 0;
                    continue;
                }
                // corrector lost the branch inside an event_tol bracket
                let s_fail = s_new;
                let s_star = cur.s + 0.5 * step;
                if let Some((st, flip)) = find_swap(&tracer, &cur, s_fail) {
                    let (kind, idx) = match flip {
                        Flip::Loss(j) => (EventKind::ScscLoss, j),
                        Flip::Activation(i) => (EventKind::Activation, i),
                    };
                    out.event(kind, Some(idx), xs(s_star), s_star, step, Some(&cur));
                    cur = st;
                    out.push(&cur)?;
                    h = h0;
                    continue;
                }
                if cur.kkt_sigma() <= opts.fold_sigma {
                    out.event(EventKind::Fold, None, xs(s_star), s_star, step, Some(&cur));
                    return finish(out, Termination::Fold, xs(s_star));
                }
                return finish(out, Termination::NoConverge, xs(cur.s));
            }
        };

        let flips = tracer.flips(&cur, &next);
        if flips.is_empty() {
            clean = if next.iters <= 4 { clean + 1 } else { 0 };
            cur = next;
            out.push(&cur)?;
            if cur.kkt_sigma() < opts.sigma_alarm && cur.s < len {
                out.event(EventKind::Fold, None, xs(cur.s), cur.s, 0.0, Some(&cur));
                return finish(out, Termination::Fold, xs(cur.s));
            }
            if clean >= 3 {
                h = (h * 2.0).min(h_max);
                clean = 0;
            }
            continue;
        }

        // bisect to the first monitor change
        let (mut a, mut b) = (cur.clone(), next);
        while b.s - a.s > opts.event_tol {
            let mid = 0.5 * (a.s + b.s);
            match tracer.correct(&a, mid, &a.basis) {
                Ok(st) if tracer.acceptable(&a, &st, sign) => {
                    if tracer.flips(&cur, &st).is_empty() {
                        a = st;
                    } else {
                        b = st;
                    }
                }
                _ => break,
            }
        }
        let fl = tracer.flips(&a, &b);
        let (flip, frac) = fl.first().copied().unwrap_or_else(|| flips[0]);
        let s_star = a.s + frac * (b.s - a.s);
        let width = b.s - a.s;
        if a.s > cur.s {
            out.push(&a)?;
        }
        match flip {
            Flip::Loss(j) => {
                let pa = a.point(tol);
                let class = classify_with_zero_set(problem, &pa, &[j], tol)?;
                out.event(EventKind::ScscLoss, Some(j), xs(s_star), s_star, width, Some(&a));
                if class.kind == ClassKind::NotLocalMin && !opts.allow_non_minimizer {
                    return finish(out, Termination::SaddleDegeneration, xs(s_star));
                }
                let basis: Vec<usize> = a.basis.iter().copied().filter(|&i| i != j).collect();
                match tracer.try_swap(&a, b.s, basis) {
                    Some(st) => {
                        cur = st;
                        out.push(&cur)?;
                        h = h0;
                    }
                    None => {
                        let term = if a.kkt_sigma() <= opts.fold_sigma {
                            Termination::Fold
                        } else {
                            Termination::NoConverge
                        };
                        return finish(out, term, xs(s_star));
                    }
                }
            }
            Flip::Activation(i) => {
                out.event(EventKind::Activation, Some(i), xs(s_star), s_star, width, Some(&a));
                let mut added = a.basis.clone();
                added.push(i);
                added.sort_unstable();
                if let Some(st) = tracer.try_swap(&a, b.s, added.clone()) {
                    cur = st;
                    out.push(&cur)?;
                    h = h0;
                    continue;
                }
                let mut exchanged = None;
                for &j in &a.basis {
                    let ex: Vec<usize> = added.iter().copied().filter(|&q| q != j).collect();
                    if let Some(st) = tracer.try_swap(&a, b.s, ex) {
                        exchanged = Some(st);
                        break;
                    }
                }
                match exchanged {
                    Some(st) => {
                        out.event(EventKind::LicqDegeneracy, Some(i), xs(s_star), s_star, width, Some(&a));
                        cur = st;
                        out.push(&cur)?;
                        h = h0;
                    }
                    None => {
                        let term = if a.basis.len() >= problem.m {
                            Termination::LicqDegeneracy
                        } else {
                            Termination::NoConverge
                        };
                        return finish(out, term, xs(s_star));
                    }
                }
            }
        }
    }
    let last = xs(cur.s);
    finish(out, Termination::NoConverge, last)
}

/// Active-set changes that recover the branch after the corrector failed at `s`.
fn find_swap(tracer: &Tracer, cur: &State, s: f64) -> Option<(State, Flip)> {
    let k = tracer.problem.k;
    for &j in &cur.basis {
        let basis: Vec<usize> = cur.basis.iter().copied().filter(|&q| q != j).collect();
        if let Some(st) = tracer.try_swap(cur, s, basis) {
            return Some((st, Flip::Loss(j)));
        }
    }
    for i in (0..k).filter(|i| !cur.basis.contains(i)) {
        let mut basis = cur.basis.clone();
        basis.push(i);
        basis.sort_unstable();
        if let Some(st) = tracer.try_swap(cur, s, basis) {
            return Some((st, Flip::Activation(i)));
        }
    }
    None
}

fn coord0(x: &[f64]) -> f64 {
    x[0]
}

/// The strict local minimizer with the smallest objective at `x`.
pub fn global_min_start(problem: &ParametricProblem, x: &[f64], tol: &Tolerances) -> Result<KktPoint> {
    let e = enumerate_kkt_points(problem, x, DEFAULT_SEEDS_PER_AXIS, tol)?;
    let mut best: Option<(f64, KktPoint)> = None;
    for p in e.points {
        if classify_kkt(problem, &p, tol)?.kind != ClassKind::StrictLocalMin {
            continue;
        }
        let g = problem.g_value(&p.x, &p.y)?;
        if best.as_ref().map_or(true, |(b, _)| g < *b) {
            best = Some((g, p));
        }
    }
    best.map(|(_, p)| p).ok_or(DiagError::NoStart { x: x[0] })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HistoryEntry {
    pub x_from: f64,
    pub x_to: f64,
    #[serde(serialize_with = "ser::one_based")]
    pub set: Vec<usize>,
}

/// Consecutive samples with the same solved set, compressed.
pub fn active_set_history(branch: &Branch) -> Vec<HistoryEntry> {
    let mut out: Vec<HistoryEntry> = Vec::new();
    for s in &branch.samples {
        let x = s.kkt.x[0];
        match out.last_mut() {
            Some(e) if e.set == s.kkt.basis => e.x_to = x,
            _ => out.push(HistoryEntry {
                x_from: x,
                x_to: x,
                set: s.kkt.basis.clone(),
            }),
        }
    }
    out
}

/// Traces the strict global minimizer from `x_from` to `x_to`; obstructed
/// when its active set changes on the way.
pub fn migration_screen(
    problem: &ParametricProblem,
    x_from: &[f64],
    x_to: &[f64],
    tol: &Tolerances,
) -> Result<(Screen, Branch)> {
    let start = global_min_start(problem, x_from, tol)?;
    let branch = trace_branch(problem, x_from, x_to, &start, &TraceOptions::default(), tol)?;
    let hist = active_set_history(&branch);
    let screen = match hist.windows(2).next() {
        Some(w) => Screen::Obstructed {
            x1: vec![w[0].x_to],
            x2: vec![w[1].x_from],
            detail: format!("active set {} -> {}", ser::index_set(&w[0].set), ser::index_set(&w[1].set)),
        },
        None => Screen::Consistent,
    };
    Ok((screen, branch))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SoscProfile {
    /// `(x, modulus)` per sample.
    pub points: Vec<(f64, f64)>,
    pub infimum: f64,
    pub uniform: bool,
}

pub fn uniform_sosc_profile(branch: &Branch, tol: &Tolerances) -> SoscProfile {
    let points: Vec<(f64, f64)> = branch
        .samples
        .iter()
        .map(|s| (s.kkt.x[0], s.report.sosc_modulus))
        .collect();
    let infimum = points.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
    SoscProfile {
        points,
        infimum,
        uniform: infimum > tol.reg_tol,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MinimizerCensus {
    /// Strict local minimizers per active set (0-based).
    pub per_stratum: BTreeMap<Vec<usize>, usize>,
    pub minimizers: Vec<KktPoint>,
    /// Every enumerated KKT point.
    pub kkt_points: Vec<KktPoint>,
}

impl Serialize for MinimizerCensus {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        use serde::ser::SerializeMap;
        let per: BTreeMap<String, usize> = self
            .per_stratum
            .iter()
            .map(|(k, v)| (ser::index_set(k), *v))
            .collect();
        let mut map = s.serialize_map(Some(2))?;
        map.serialize_entry("per_stratum", &per)?;
        map.serialize_entry("minimizers", &self.minimizers)?;
        map.end()
    }
}

/// Strict local minimizers among the enumerated KKT points, grouped by active set.
pub fn count_minimizers_per_stratum(problem: &ParametricProblem, x: &[f64], tol: &Tolerances) -> Result<MinimizerCensus> {
    let e = enumerate_kkt_points(problem, x, DEFAULT_SEEDS_PER_AXIS, tol)?;
    let mut per_stratum = BTreeMap::new();
    let mut minimizers = Vec::new();
    for p in &e.points {
        if classify_kkt(problem, p, tol)?.kind == ClassKind::StrictLocalMin {
            *per_stratum.entry(p.active.clone()).or_insert(0) += 1;
            minimizers.push(p.clone());
        }
    }
    Ok(MinimizerCensus {
        per_stratum,
        minimizers,
        kkt_points: e.points,
    })
}

/// First consecutive pair of samples whose per-stratum counts differ.
pub fn minimizer_count_screen(
    problem: &ParametricProblem,
    x_samples: &[Vec<f64>],
    tol: &Tolerances,
) -> Result<(Screen, Vec<MinimizerCensus>)> {
    if x_samples.len() < 2 {
        return Err(DiagError::Precondition("minimizer screen needs at least two samples".into()));
    }
    let census = x_samples
        .iter()
        .map(|x| count_minimizers_per_stratum(problem, x, tol))
        .collect::<Result<Vec<_>>>()?;
    for w in 0..census.len() - 1 {
        if census[w].per_stratum != census[w + 1].per_stratum {
            let fmt = |c: &MinimizerCensus| {
                c.per_stratum
                    .iter()
                    .map(|(k, v)| format!("{}:{v}", ser::index_set(k)))
                    .collect::<Vec<_>>()
                    .join(" ")
            };
            return Ok((
                Screen::Obstructed {
                    x1: x_samples[w].clone(),
                    x2: x_samples[w + 1].clone(),
                    detail: format!("[{}] vs [{}]", fmt(&census[w]), fmt(&census[w + 1])),
                },
                census,
            ));
        }
    }
    Ok((Screen::Consistent, census))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GrowthEstimate {
    pub c_hat: f64,
    pub witness_y: Vec<f64>,
    pub feasible_samples: usize,
}

pub const MIN_GROWTH_SAMPLES: usize = 10;

/// `min (g(y) - g(y*)) / |y - y*|^2` over feasible samples in the `delta` ball
/// around the minimizer. Half the draws are uniform in the ball; the other
/// half are projected onto a randomly chosen face of the active constraints,
/// since a minimizer held by a constraint grows slowest along that constraint
/// and the ball alone almost never lands on it.
pub fn quadratic_growth_estimate(
    problem: &ParametricProblem,
    kkt: &KktPoint,
    delta: f64,
    n_samples: usize,
    seed: u64,
    tol: &Tolerances,
) -> Result<GrowthEstimate> {
    if !(delta > 0.0) {
        return Err(DiagError::Precondition("delta must be positive".into()));
    }
    let (n, m) = (problem.n, problem.m);
    let z0 = kkt.z();
    let g0 = problem.g.value(&z0);
    let faces: Vec<Vec<usize>> = crate::kkt::subsets_up_to(kkt.active.len(), m.saturating_sub(1))
        .into_iter()
        .filter(|s| !s.is_empty())
        .map(|s| s.into_iter().map(|j| kkt.active[j]).collect())
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best = f64::INFINITY;
    let mut witness = kkt.y.clone();
    let mut feasible = 0usize;
    for t in 0..n_samples {
        let mut d: Vec<f64> = (0..m).map(|_| rng.sample(StandardNormal)).collect();
        let norm = d.iter().map(|v| v * v).sum::<f64>().sqrt();
        let r = delta * rng.gen::<f64>().powf(1.0 / m as f64);
        d.iter_mut().for_each(|v| *v *= r / norm.max(f64::MIN_POSITIVE));
        let mut z = z0.clone();
        for b in 0..m {
            z[n + b] += d[b];
        }
        let face = if t % 2 == 1 && !faces.is_empty() {
            let f = &faces[rng.gen_range(0..faces.len())];
            project(problem, &mut z, f);
            Some(f)
        } else {
            None
        };
        let ok = problem.h.iter().enumerate().all(|(i, f)| {
            let v = f.value(&z);
            v <= 0.0 || face.is_some_and(|fc| fc.contains(&i) && v <= 1e-14)
        });
        let dy2: f64 = (0..m).map(|b| (z[n + b] - z0[n + b]).powi(2)).sum();
        if !ok || dy2 > delta * delta || dy2 < 1e-24 {
            continue;
        }
        feasible += 1;
        let ratio = (problem.g.value(&z) - g0) / dy2;
        if ratio < best {
            best = ratio;
            witness = z[n..].to_vec();
        }
    }
    if feasible < MIN_GROWTH_SAMPLES {
        return Err(DiagError::Sampling {
            found: feasible,
            needed: MIN_GROWTH_SAMPLES,
        });
    }
    let _ = tol;
    Ok(GrowthEstimate {
        c_hat: best,
        witness_y: witness,
        feasible_samples: feasible,
    })
}

/// Minimum-norm Newton projection of `z` onto `h_face = 0` in `y`.
fn project(problem: &ParametricProblem, z: &mut [f64], face: &[usize]) {
    let (n, m) = (problem.n, problem.m);
    for _ in 0..20 {
        let rec = problem.evaluate_at(z);
        let r = DVector::from_fn(face.len(), |i, _| rec.h[face[i]]);
        if r.amax() <= 1e-15 {
            return;
        }
        let a = rec.active_jacobian(face);
        let Ok(step) = a.svd(true, true).solve(&(-r), 1e-12) else {
            return;
        };
        for b in 0..m {
            z[n + b] += step[b];
        }
    }
}
