//! Random constant shifts on the constraints and a random linear term on the
//! objective, the grid estimate of the `x` set where a regularity condition
//! fails, and the seeded Monte Carlo experiment built from the two.

use crate::error::{DiagError, Result};
use crate::kkt::{enumerate_kkt_points, full_lambda, reduced_newton, ClassKind, KktPoint};
use crate::problem::Term;
use crate::problem::{EvalRecord, ParametricProblem};
use crate::regularity::{cone_modulus, sosc_modulus_with};
use crate::strata::enumerate_vertices;
use crate::tol::Tolerances;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use std::collections::BTreeSet;

pub const DEFAULT_NU: f64 = 0.05;

/// Values this close to zero count as exactly degenerate. The verdict
/// threshold `reg_tol` is far too coarse here: near the ends of a failure
/// interval the margins of the spline corpus vanish like `|x|^3`, so a
/// `1e-6` band would widen every failing point by several cells.
pub const DEGENERATE: f64 = 1e-10;
/// Curvature at or below this counts as degenerate. At a minimizer whose
/// curvature vanishes the location itself is only fixed to about `1e-8`
/// (the stationarity residual is cubic there), which leaves a floor near
/// `1e-14` in the computed modulus; the threshold sits above that floor.
pub const DEGENERATE_CURVATURE: f64 = 1e-13;
/// Full KKT enumeration every this many grid points; points in between are continued.
pub const ENUMERATION_STRIDE: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum Condition {
    #[serde(rename = "LICQ")]
    Licq,
    #[serde(rename = "SCSC")]
    Scsc,
    #[serde(rename = "SOSC")]
    Sosc,
}

impl std::str::FromStr for Condition {
    type Err = DiagError;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "LICQ" => Ok(Self::Licq),
            "SCSC" => Ok(Self::Scsc),
            "SOSC" => Ok(Self::Sosc),
            _ => Err(DiagError::Precondition(format!("unknown condition {s:?}; expected LICQ, SCSC or SOSC"))),
        }
    }
}

impl std::fmt::Display for Condition {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Licq => "LICQ",
            Self::Scsc => "SCSC",
            Self::Sosc => "SOSC",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PerturbationDraw {
    /// Constraint shifts, one per constraint, in `[0, nu]`.
    pub a: Vec<f64>,
    /// Linear objective coefficients, one per `y` coordinate, in `[0, nu]`.
    pub b: Vec<f64>,
    pub nu: f64,
    pub seed: u64,
}

impl PerturbationDraw {
    pub fn zero(k: usize, m: usize) -> Self {
        Self {
            a: vec![0.0; k],
            b: vec![0.0; m],
            nu: 0.0,
            seed: 0,
        }
    }
}

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Draws `a` then `b` uniformly from the box, from a ChaCha8 stream
/// seeded with `seed` on stream 0.
pub fn draw_perturbation(k: usize, m: usize, nu: f64, seed: u64) -> Result<PerturbationDraw> {
    draw_for_trial(k, m, nu, seed, 0)
}

/// The draw of trial `stream` in an experiment seeded with `seed`.
pub fn draw_for_trial(k: usize, m: usize, nu: f64, seed: u64, stream: u64) -> Result<PerturbationDraw> {
    if !(nu > 0.0) || !nu.is_finite() {
        return Err(DiagError::Precondition("nu must be positive".into()));
    }
    let mut rng = rng_for(seed, stream);
    let a = (0..k).map(|_| rng.gen_range(0.0..=nu)).collect();
    let b = (0..m).map(|_| rng.gen_range(0.0..=nu)).collect();
    Ok(PerturbationDraw { a, b, nu, seed })
}

/// `g + <y, b>` and `h_i + a_i`. A zero draw leaves every evaluation bitwise unchanged.
pub fn apply_perturbation(problem: &ParametricProblem, draw: &PerturbationDraw) -> Result<ParametricProblem> {
    let (n, m, k) = (problem.n, problem.m, problem.k);
    if draw.a.len() != k || draw.b.len() != m {
        return Err(DiagError::Precondition(format!(
            "draw has {} shifts and {} linear terms; problem needs {k} and {m}",
            draw.a.len(),
            draw.b.len()
        )));
    }
    if draw.a.iter().chain(&draw.b).any(|v| !(0.0..=draw.nu).contains(v)) {
        return Err(DiagError::Precondition("draw leaves the [0, nu] box".into()));
    }
    if let Some(rho) = problem.slater_margin {
        if draw.nu >= rho && draw.nu > 0.0 {
            return Err(DiagError::Precondition(format!(
                "nu = {} must stay below the Slater margin {rho}",
                draw.nu
            )));
        }
    }
    let mut out = problem.clone();
    let linear: Vec<Term> = (0..m)
        .map(|j| {
            let mut powers = vec![0; n + m];
            powers[n + j] = 1;
            Term {
                powers,
                coeff: draw.b[j],
            }
        })
        .collect();
    out.g.add_terms(&linear);
    for (h, a) in out.h.iter_mut().zip(&draw.a) {
        h.add_terms(&[Term {
            powers: vec![0; n + m],
            coeff: *a,
        }]);
    }
    if let Some(rho) = problem.slater_margin {
        let shift = draw.a.iter().copied().fold(0.0, f64::max);
        out.slater_margin = Some(rho - shift);
    }
    Ok(out)
}

/// Every grid `x` keeps a strictly feasible point after the shifts: the
/// best Slater point of the unperturbed problem on a `grid^m` lattice stays
/// below `-(rho - nu)`.
pub fn feasibility_preserved(problem: &ParametricProblem, draw: &PerturbationDraw, xs: &[f64], grid: usize) -> Result<bool> {
    let perturbed = apply_perturbation(problem, draw)?;
    let m = problem.m;
    let grid = grid.max(2);
    for &x in xs {
        let mut best = f64::NEG_INFINITY;
        let mut y = vec![0.0; m];
        for idx in 0..grid.pow(m as u32) {
            let mut r = idx;
            for (j, (lo, hi)) in problem.y_box.iter().enumerate() {
                y[j] = lo + (hi - lo) * (r % grid) as f64 / (grid - 1) as f64;
                r /= grid;
            }
            let depth = perturbed.h_values(&[x], &y)?.iter().fold(f64::INFINITY, |a, v| a.min(-v));
            best = best.max(depth);
        }
        if best <= 0.0 {
            return Ok(false);
        }
    }
    Ok(true)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FailInterval {
    pub first: usize,
    pub last: usize,
    pub x_lo: f64,
    pub x_hi: f64,
}

impl FailInterval {
    pub fn cells(&self) -> usize {
        self.last - self.first + 1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FailureSetEstimate {
    pub condition: Condition,
    pub x_lo: f64,
    pub x_hi: f64,
    pub grid_res: usize,
    /// Grid indices, 0-based.
    pub failing_cells: Vec<usize>,
    pub fraction: f64,
    pub intervals: Vec<FailInterval>,
}

impl FailureSetEstimate {
    pub fn spacing(&self) -> f64 {
        (self.x_hi - self.x_lo) / (self.grid_res - 1) as f64
    }

    pub fn x_of(&self, i: usize) -> f64 {
        grid_x(self.x_lo, self.x_hi, self.grid_res, i)
    }

    /// At most one merged interval of at most `cells` grid points.
    pub fn point_like(&self, cells: usize) -> bool {
        self.intervals.len() <= 1 && self.intervals.iter().all(|iv| iv.cells() <= cells)
    }
}

fn grid_x(lo: f64, hi: f64, res: usize, i: usize) -> f64 {
    if i + 1 == res {
        hi
    } else {
        lo + (hi - lo) * i as f64 / (res - 1) as f64
    }
}

/// Grid estimate of `{x : condition fails}` over the domain.
///
/// Each grid point is tested directly (a margin within [`DEGENERATE`] of
/// zero), and each cell between neighbours is tested for a strict sign
/// change of a margin along a continued solution, which catches isolated
/// failures between grid points. A cell flag lands on the grid index
/// nearest the interpolated root.
///
/// LICQ tracks the vertices `h_J = 0, |J| = m`; a failure is a feasible
/// vertex on which another constraint vanishes, or a singular vertex.
/// SCSC and SOSC track the KKT points: SCSC fails where a multiplier or a
/// slack vanishes, SOSC where the critical-cone modulus of a point that is
/// not a saddle vanishes.
pub fn failure_set_estimate(
    problem: &ParametricProblem,
    condition: Condition,
    grid_res: usize,
    tol: &Tolerances,
) -> Result<FailureSetEstimate> {
    if problem.n != 1 {
        return Err(DiagError::Precondition("failure-set estimates need a scalar x".into()));
    }
    if grid_res < 2 {
        return Err(DiagError::Precondition("grid_res must be at least 2".into()));
    }
    let (lo, hi) = problem.x_domain[0];
    let xs: Vec<f64> = (0..grid_res).map(|i| grid_x(lo, hi, grid_res, i)).collect();
    let failing = match condition {
        Condition::Licq => licq_sweep(problem, &xs, tol)?,
        Condition::Scsc | Condition::Sosc => kkt_sweep(problem, condition, &xs, tol)?,
    };
    let failing_cells: Vec<usize> = failing.into_iter().collect();
    let mut intervals: Vec<FailInterval> = Vec::new();
    for &i in &failing_cells {
        match intervals.last_mut() {
            Some(iv) if iv.last + 1 == i => {
                iv.last = i;
                iv.x_hi = xs[i];
            }
            _ => intervals.push(FailInterval {
                first: i,
                last: i,
                x_lo: xs[i],
                x_hi: xs[i],
            }),
        }
    }
    Ok(FailureSetEstimate {
        condition,
        x_lo: lo,
        x_hi: hi,
        grid_res,
        fraction: failing_cells.len() as f64 / grid_res as f64,
        failing_cells,
        intervals,
    })
}

/// Index nearest the root of the line through `(i, va)` and `(i + 1, vb)`.
fn root_cell(i: usize, va: f64, vb: f64) -> usize {
    let t = va / (va - vb);
    if t < 0.5 {
        i
    } else {
        i + 1
    }
}

fn strict_change(va: f64, vb: f64) -> bool {
    (va < 0.0 && vb > 0.0) || (va > 0.0 && vb < 0.0)
}

fn licq_sweep(problem: &ParametricProblem, xs: &[f64], tol: &Tolerances) -> Result<BTreeSet<usize>> {
    struct V {
        active: Vec<usize>,
        y: Vec<f64>,
        h: Vec<f64>,
        sigma: f64,
    }
    let per_x: Vec<Vec<V>> = xs
        .par_iter()
        .map(|&x| -> Result<Vec<V>> {
            enumerate_vertices(problem, &[x], tol)?
                .into_iter()
                .map(|v| {
                    Ok(V {
                        h: problem.h_values(&[x], &v.y)?,
                        active: v.active,
                        y: v.y,
                        sigma: v.sigma_min,
                    })
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    let k = problem.k;
    let feasible_except = |v: &V, skip: usize| {
        (0..k).all(|i| i == skip || v.active.contains(&i) || v.h[i] <= tol.act_tol)
    };
    let mut out = BTreeSet::new();
    for (i, vs) in per_x.iter().enumerate() {
        for v in vs {
            if !feasible_except(v, usize::MAX) {
                continue;
            }
            let touching = (0..k).any(|l| !v.active.contains(&l) && v.h[l].abs() <= DEGENERATE);
            if touching || v.sigma <= DEGENERATE {
                out.insert(i);
            }
        }
        if i + 1 == xs.len() {
            continue;
        }
        for v in vs {
            let Some(w) = per_x[i + 1]
                .iter()
                .filter(|w| w.active == v.active)
                .min_by(|a, b| dist(&a.y, &v.y).total_cmp(&dist(&b.y, &v.y)))
            else {
                continue;
            };
            for l in (0..k).filter(|l| !v.active.contains(l)) {
                if strict_change(v.h[l], w.h[l]) && feasible_except(v, l) && feasible_except(w, l) {
                    out.insert(root_cell(i, v.h[l], w.h[l]));
                }
            }
        }
    }
    Ok(out)
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt()
}

#[derive(Clone)]
struct Tracked {
    basis: Vec<usize>,
    y: Vec<f64>,
    lam: Vec<f64>,
    rec: EvalRecord,
}

impl Tracked {
    fn from_point(problem: &ParametricProblem, p: &KktPoint) -> Result<Self> {
        Ok(Self {
            basis: p.basis.clone(),
            y: p.y.clone(),
            lam: p.basis.iter().map(|&i| p.lambda[i]).collect(),
            rec: problem.evaluate(&p.x, &p.y)?,
        })
    }

    fn lambda_full(&self) -> Vec<f64> {
        full_lambda(self.rec.h.len(), &self.basis, &self.lam)
    }

    /// Sign conditions at [`DEGENERATE`], not `act_tol`: a continued point
    /// that is infeasible by `1e-9` is past its event and must be dropped.
    fn is_kkt(&self) -> bool {
        self.lam.iter().all(|l| *l >= -DEGENERATE)
            && (0..self.rec.h.len()).all(|i| self.basis.contains(&i) || self.rec.h[i] <= DEGENERATE)
    }

    /// Modulus of the Lagrangian Hessian on the null space of the basis rows.
    fn subspace_modulus(&self, m: usize) -> f64 {
        cone_modulus(
            &self.rec.hess_lagrangian(&self.lambda_full()),
            &self.rec.active_jacobian(&self.basis),
            &DMatrix::zeros(0, m),
        )
    }

    fn same(&self, other: &Tracked, tol: &Tolerances) -> bool {
        self.basis == other.basis && crate::linalg::max_abs(&diff(&self.y, &other.y)) <= tol.dedup_tol
    }

    fn point(&self, x: f64, tol: &Tolerances) -> KktPoint {
        let lambda = self.lambda_full();
        KktPoint {
            x: vec![x],
            y: self.y.clone(),
            residual: crate::kkt::residual_from(&self.rec, &lambda),
            active: (0..lambda.len()).filter(|&i| self.rec.h[i].abs() <= tol.act_tol).collect(),
            basis: self.basis.clone(),
            h: self.rec.h.iter().copied().collect(),
            lambda,
        }
    }
}

fn diff(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(p, q)| p - q).collect()
}

struct KktSweep<'a> {
    problem: &'a ParametricProblem,
    condition: Condition,
    tol: &'a Tolerances,
    xs: &'a [f64],
}

impl KktSweep<'_> {
    fn enumerate(&self, i: usize) -> Result<Vec<Tracked>> {
        let e = enumerate_kkt_points(self.problem, &[self.xs[i]], crate::continuation::DEFAULT_SEEDS_PER_AXIS, self.tol)?;
        e.points.iter().map(|p| Tracked::from_point(self.problem, p)).collect()
    }

    fn not_saddle(&self, t: &Tracked, x: f64) -> Result<bool> {
        let p = t.point(x, self.tol);
        Ok(crate::kkt::classify_kkt(self.problem, &p, self.tol)?.kind != ClassKind::NotLocalMin)
    }

    fn point_fails(&self, t: &Tracked, x: f64) -> Result<bool> {
        let lambda = t.lambda_full();
        match self.condition {
            Condition::Scsc => {
                let gap = (0..lambda.len())
                    .map(|l| lambda[l].max(-t.rec.h[l]))
                    .fold(f64::INFINITY, f64::min);
                Ok(gap <= DEGENERATE)
            }
            Condition::Sosc => {
                let strong: Vec<usize> = (0..lambda.len())
                    .filter(|&l| t.rec.h[l].abs() <= self.tol.act_tol && lambda[l] > DEGENERATE)
                    .collect();
                let weak: Vec<usize> = (0..lambda.len())
                    .filter(|&l| t.rec.h[l].abs() <= self.tol.act_tol && lambda[l] <= DEGENERATE)
                    .collect();
                let modulus = sosc_modulus_with(&t.rec, &lambda, &strong, &weak);
                Ok(modulus <= DEGENERATE_CURVATURE && self.not_saddle(t, x)?)
            }
            Condition::Licq => unreachable!("LICQ uses the vertex sweep"),
        }
    }

    /// Cell flags between `a` at grid index `ia` and its continuation `b` at `ib`.
    fn cell_flags(&self, a: &Tracked, ia: usize, b: &Tracked, ib: usize, out: &mut BTreeSet<usize>) -> Result<()> {
        let lo = ia.min(ib);
        let orient = |va: f64, vb: f64| if ia < ib { (va, vb) } else { (vb, va) };
        match self.condition {
            Condition::Scsc => {
                for l in 0..self.problem.k {
                    let (va, vb) = match a.basis.iter().position(|&j| j == l) {
                        Some(p) => (a.lam[p], b.lam[p]),
                        None => (a.rec.h[l], b.rec.h[l]),
                    };
                    if strict_change(va, vb) {
                        let (p, q) = orient(va, vb);
                        out.insert(root_cell(lo, p, q));
                    }
                }
            }
            Condition::Sosc => {
                let m = self.problem.m;
                let (va, vb) = (a.subspace_modulus(m), b.subspace_modulus(m));
                if strict_change(va, vb) && (va > 0.0 || self.not_saddle(a, self.xs[ia])?) {
                    let (p, q) = orient(va, vb);
                    out.insert(root_cell(lo, p, q));
                }
            }
            Condition::Licq => {}
        }
        Ok(())
    }

    fn pass(&self, order: &[usize], out: &mut BTreeSet<usize>) -> Result<()> {
        let mut pts = self.enumerate(order[0])?;
        for t in &pts {
            if self.point_fails(t, self.xs[order[0]])? {
                out.insert(order[0]);
            }
        }
        for w in order.windows(2) {
            let (ia, ib) = (w[0], w[1]);
            let mut next: Vec<Tracked> = Vec::new();
            for t in &pts {
                let Ok((y, lam, rec)) = reduced_newton(self.problem, &[self.xs[ib]], &t.basis, &t.y, &t.lam, self.tol) else {
                    continue;
                };
                let c = Tracked {
                    basis: t.basis.clone(),
                    y,
                    lam,
                    rec,
                };
                self.cell_flags(t, ia, &c, ib, out)?;
                if c.is_kkt() && !next.iter().any(|q| q.same(&c, self.tol)) {
                    next.push(c);
                }
            }
            let fresh = ib % ENUMERATION_STRIDE == 0 || ib == order[order.len() - 1];
            if fresh {
                for c in self.enumerate(ib)? {
                    if !next.iter().any(|q| q.same(&c, self.tol)) {
                        next.push(c);
                    }
                }
            }
            for t in &next {
                if self.point_fails(t, self.xs[ib])? {
                    out.insert(ib);
                }
            }
            pts = next;
        }
        Ok(())
    }
}

fn kkt_sweep(problem: &ParametricProblem, condition: Condition, xs: &[f64], tol: &Tolerances) -> Result<BTreeSet<usize>> {
    let sweep = KktSweep {
        problem,
        condition,
        tol,
        xs,
    };
    let forward: Vec<usize> = (0..xs.len()).collect();
    let backward: Vec<usize> = (0..xs.len()).rev().collect();
    let mut out = BTreeSet::new();
    sweep.pass(&forward, &mut out)?;
    sweep.pass(&backward, &mut out)?;
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialResult {
    pub trial: usize,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub fraction: f64,
    pub intervals: Vec<FailInterval>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PrevalenceSummary {
    pub median_fraction: f64,
    pub max_fraction: f64,
    /// Trials whose failing set has an interval wider than two grid cells, or more than one interval.
    pub wide_trials: usize,
    pub empty_trials: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PrevalenceReport {
    pub condition: Condition,
    pub nu: f64,
    pub trials: usize,
    pub seed: u64,
    pub grid_res: usize,
    pub per_trial: Vec<TrialResult>,
    pub summary: PrevalenceSummary,
}

/// Trial `t` draws from stream `t` of the generator seeded with `seed`;
/// results are reported in trial order whatever the thread count.
pub fn prevalence_experiment(
    problem: &ParametricProblem,
    condition: Condition,
    nu: f64,
    trials: usize,
    seed: u64,
    grid_res: usize,
    tol: &Tolerances,
) -> Result<PrevalenceReport> {
    if trials == 0 {
        return Err(DiagError::Precondition("trials must be at least 1".into()));
    }
    let per_trial: Vec<TrialResult> = (0..trials)
        .into_par_iter()
        .map(|t| -> Result<TrialResult> {
            let draw = draw_for_trial(problem.k, problem.m, nu, seed, t as u64)?;
            let p = apply_perturbation(problem, &draw)?;
            let est = failure_set_estimate(&p, condition, grid_res, tol)?;
            Ok(TrialResult {
                trial: t,
                a: draw.a,
                b: draw.b,
                fraction: est.fraction,
                intervals: est.intervals,
            })
        })
        .collect::<Result<_>>()?;
    let mut fr: Vec<f64> = per_trial.iter().map(|r| r.fraction).collect();
    fr.sort_by(f64::total_cmp);
    let median_fraction = if fr.len() % 2 == 1 {
        fr[fr.len() / 2]
    } else {
        0.5 * (fr[fr.len() / 2 - 1] + fr[fr.len() / 2])
    };
    let summary = PrevalenceSummary {
        median_fraction,
        max_fraction: *fr.last().unwrap_or(&0.0),
        wide_trials: per_trial
            .iter()
            .filter(|r| r.intervals.len() > 1 || r.intervals.iter().any(|iv| iv.cells() > 2))
            .count(),
        empty_trials: per_trial.iter().filter(|r| r.intervals.is_empty()).count(),
    };
    Ok(PrevalenceReport {
        condition,
        nu,
        trials,
        seed,
        grid_res,
        per_trial,
        summary,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::load_corpus;

    fn corpus(id: &str) -> ParametricProblem {
        load_corpus(id).unwrap().unwrap()
    }

    #[test]
    fn draws_are_deterministic_and_seed_dependent() {
        let a = draw_perturbation(3, 2, 0.1, 42).unwrap();
        assert_eq!(a, draw_perturbation(3, 2, 0.1, 42).unwrap());
        assert_ne!(a, draw_perturbation(3, 2, 0.1, 43).unwrap());
        assert!(draw_perturbation(3, 2, 0.0, 1).is_err());
    }

    #[test]
    fn draw_means_are_half_nu() {
        // uniform on [0, 0.1]: sd of the mean over 1e4 draws is about 2.9e-4
        let mut sum = [0.0; 2];
        for s in 0..10_000u64 {
            let d = draw_perturbation(1, 1, 0.1, s).unwrap();
            sum[0] += d.a[0];
            sum[1] += d.b[0];
        }
        for v in sum {
            let mean = v / 10_000.0;
            assert!((0.045..=0.055).contains(&mean), "{mean}");
        }
    }

    #[test]
    fn zero_draw_is_bitwise_identity() {
        let p = corpus("ex_scsc_prev");
        let q = apply_perturbation(&p, &PerturbationDraw::zero(p.k, p.m)).unwrap();
        for (x, y) in [(0.3, -0.2), (1.4, 0.1), (-0.4, -0.9)] {
            let r0 = p.evaluate(&[x], &[y]).unwrap();
            let r1 = q.evaluate(&[x], &[y]).unwrap();
            assert_eq!(r0.g.to_bits(), r1.g.to_bits());
            assert_eq!(r0.grad_y_g, r1.grad_y_g);
            assert_eq!(r0.h, r1.h);
        }
    }

    #[test]
    fn linear_term_shifts_unconstrained_minimizer() {
        let p = corpus("ex_scsc_prev");
        let draw = PerturbationDraw {
            a: vec![0.0, 0.0],
            b: vec![0.04],
            nu: 0.05,
            seed: 0,
        };
        let q = apply_perturbation(&p, &draw).unwrap();
        // phi(-0.5) = -0.125; minimizer phi - b/2
        let y = -0.125 - 0.02;
        let r = q.evaluate(&[-0.5], &[y]).unwrap();
        assert!(r.grad_y_g[0].abs() < 1e-15);
        let r0 = p.evaluate(&[-0.5], &[y]).unwrap();
        assert_eq!(r.hess_yy_g, r0.hess_yy_g);
        assert_eq!(r.jac_y_h, r0.jac_y_h);
    }

    #[test]
    fn shifted_bound_moves_to_minus_a() {
        let p = corpus("ex_licq_prev");
        let draw = PerturbationDraw {
            a: vec![0.03, 0.0, 0.0],
            b: vec![0.0],
            nu: 0.05,
            seed: 0,
        };
        let q = apply_perturbation(&p, &draw).unwrap();
        assert!(q.h_values(&[0.5], &[-0.03]).unwrap()[0].abs() < 1e-16);
    }

    #[test]
    fn nu_must_stay_below_slater_margin() {
        let p = corpus("ex_licq_prev");
        let draw = PerturbationDraw {
            a: vec![0.0; 3],
            b: vec![0.0],
            nu: 0.3,
            seed: 0,
        };
        assert!(apply_perturbation(&p, &draw).is_err());
    }

    #[test]
    fn scsc_interval_unperturbed() {
        let p = corpus("ex_scsc_prev");
        let e = failure_set_estimate(&p, Condition::Scsc, 401, &Tolerances::default()).unwrap();
        assert_eq!(e.intervals.len(), 1, "{:?}", e.intervals);
        let h = e.spacing();
        assert!(e.intervals[0].x_lo.abs() <= h + 1e-12);
        assert!((e.intervals[0].x_hi - 1.0).abs() <= h + 1e-12);
    }

    #[test]
    fn scsc_point_after_perturbation() {
        let p = corpus("ex_scsc_prev");
        let draw = PerturbationDraw {
            a: vec![0.01, 0.02],
            b: vec![0.04],
            nu: 0.05,
            seed: 0,
        };
        let q = apply_perturbation(&p, &draw).unwrap();
        let e = failure_set_estimate(&q, Condition::Scsc, 401, &Tolerances::default()).unwrap();
        assert!(e.point_like(2), "{:?}", e.intervals);
        let c: f64 = 0.02 - 0.01;
        let expect = 1.0 + c.cbrt();
        let got = e.x_of(e.failing_cells[0]);
        assert!((got - expect).abs() <= e.spacing(), "{got} vs {expect}");
    }

    #[test]
    fn licq_half_domain_unperturbed() {
        let p = corpus("ex_licq_prev");
        let e = failure_set_estimate(&p, Condition::Licq, 401, &Tolerances::default()).unwrap();
        assert_eq!(e.intervals.len(), 1);
        assert!((e.fraction - 0.5).abs() < 0.01, "{}", e.fraction);
    }

    #[test]
    fn sosc_interval_then_empty() {
        let p = corpus("ex_sosc_prev");
        let t = Tolerances::default();
        let e = failure_set_estimate(&p, Condition::Sosc, 201, &t).unwrap();
        assert_eq!(e.intervals.len(), 1, "{:?}", e.intervals);
        let draw = PerturbationDraw {
            a: vec![0.01, 0.02, 0.03, 0.04],
            b: vec![0.02, 0.01],
            nu: 0.05,
            seed: 0,
        };
        let q = apply_perturbation(&p, &draw).unwrap();
        let e = failure_set_estimate(&q, Condition::Sosc, 201, &t).unwrap();
        assert!(e.failing_cells.is_empty(), "{:?}", e.intervals);
    }

    #[test]
    fn feasibility_survives_small_shifts() {
        let p = corpus("ex_sosc_prev");
        let d = draw_perturbation(p.k, p.m, 0.2, 3).unwrap();
        assert!(feasibility_preserved(&p, &d, &[-0.5, 0.5, 1.5], 21).unwrap());
    }
}
