//! Numeric stratification of the feasible set `Y(x)`: vertices by exact
//! intersection solves, boundary arcs and interior faces by flood fill of a
//! grid labelled with near-active patterns.

use crate::error::{DiagError, Result};
use crate::kkt::subsets_up_to;
use crate::linalg;
use crate::problem::{Jet, ParametricProblem};
use crate::ser;
use crate::tol::Tolerances;
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::ser::SerializeMap;
use serde::{Serialize, Serializer};
use std::collections::{BTreeMap, VecDeque};

/// Intersections whose gradient rows have `sigma_min` at or below this are
/// reported as degenerate and left out of the vertex count.
pub const VERTEX_DEGENERATE: f64 = 1e-8;
/// Residual accepted for `h_J(y) = 0`.
pub const VERTEX_TOL: f64 = 1e-12;
pub const DEFAULT_GRID_RES: usize = 401;
const VERTEX_SEEDS: usize = 7;
const BBOX_SCAN: usize = 101;
const BBOX_INFLATE: f64 = 0.05;
const BAND_FACTOR: f64 = 1.5;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VertexRecord {
    pub y: Vec<f64>,
    #[serde(serialize_with = "ser::one_based")]
    pub active: Vec<usize>,
    pub feasible: bool,
    pub degenerate: bool,
    pub sigma_min: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct StratSignature {
    pub vertices: usize,
    pub arcs: usize,
    pub faces: usize,
    /// Component count per active pattern (0-based indices).
    pub per_pattern: BTreeMap<Vec<usize>, usize>,
    /// Feasible intersections left out of `vertices` as degenerate.
    pub degenerate_vertices: usize,
}

impl Serialize for StratSignature {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        struct Patterns<'a>(&'a BTreeMap<Vec<usize>, usize>);
        impl Serialize for Patterns<'_> {
            fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
                let mut map = s.serialize_map(Some(self.0.len()))?;
                for (k, v) in self.0 {
                    let key: Vec<String> = k.iter().map(|i| (i + 1).to_string()).collect();
                    map.serialize_entry(&format!("[{}]", key.join(",")), v)?;
                }
                map.end()
            }
        }
        let mut map = s.serialize_map(Some(5))?;
        map.serialize_entry("vertices", &self.vertices)?;
        map.serialize_entry("arcs", &self.arcs)?;
        map.serialize_entry("faces", &self.faces)?;
        map.serialize_entry("degenerate_vertices", &self.degenerate_vertices)?;
        map.serialize_entry("per_pattern", &Patterns(&self.per_pattern))?;
        map.end()
    }
}

impl StratSignature {
    pub fn counts(&self) -> (usize, usize, usize) {
        (self.vertices, self.arcs, self.faces)
    }
}

/// Linear `h_J` in `y`: solve directly.
fn affine_vertex(problem: &ParametricProblem, x: &[f64], set: &[usize]) -> Option<(Vec<f64>, f64)> {
    let m = problem.m;
    let zero: Vec<f64> = x.iter().copied().chain(std::iter::repeat(0.0).take(m)).collect();
    let rec = problem.evaluate_at(&zero);
    let a = rec.active_jacobian(set);
    let c = DVector::from_fn(set.len(), |i, _| -rec.h[set[i]]);
    let sigma = linalg::sigma_min(&a);
    if sigma <= VERTEX_DEGENERATE {
        // parallel rows: coincident lines form no isolated vertex
        return None;
    }
    let y = linalg::solve_vec(&a, &c)?;
    Some((y.iter().copied().collect(), sigma))
}

/// Damped Newton on the square system `h_J(y) = 0`.
fn newton_vertex(problem: &ParametricProblem, x: &[f64], set: &[usize], y0: &[f64]) -> Option<Vec<f64>> {
    let n = problem.n;
    let mut z: Vec<f64> = x.iter().chain(y0).copied().collect();
    let resid = |z: &[f64]| -> (DVector<f64>, DMatrix<f64>) {
        let rec = problem.evaluate_at(z);
        (
            DVector::from_fn(set.len(), |i, _| rec.h[set[i]]),
            rec.active_jacobian(set),
        )
    };
    let (mut r, mut a) = resid(&z);
    for _ in 0..60 {
        let norm = r.norm();
        if norm <= VERTEX_TOL {
            return Some(z[n..].to_vec());
        }
        let step = linalg::solve_vec(&a, &(-&r))?;
        let mut t = 1.0;
        let mut moved = false;
        for _ in 0..30 {
            let mut zt = z.clone();
            for (b, s) in step.iter().enumerate() {
                zt[n + b] += t * s;
            }
            let (rt, at) = resid(&zt);
            if rt.norm() < norm {
                z = zt;
                r = rt;
                a = at;
                moved = true;
                break;
            }
            t *= 0.5;
        }
        if !moved {
            break;
        }
    }
    (r.norm() <= VERTEX_TOL).then(|| z[n..].to_vec())
}

fn seeds(problem: &ParametricProblem) -> Vec<Vec<f64>> {
    crate::kkt::seed_grid(problem, VERTEX_SEEDS)
}

/// Solves `h_J(x, y) = 0` for every `|J| = m`. Affine sets are solved
/// directly, others by Newton from a seed grid over the `y` box.
pub fn enumerate_vertices(problem: &ParametricProblem, x: &[f64], tol: &Tolerances) -> Result<Vec<VertexRecord>> {
    let m = problem.m;
    if m > 3 {
        return Err(DiagError::Precondition("vertex enumeration supports m <= 3".into()));
    }
    let x = problem.clamp_x(x)?;
    let sets: Vec<Vec<usize>> = subsets_up_to(problem.k, m)
        .into_iter()
        .filter(|s| s.len() == m)
        .collect();
    let seed_pts = seeds(problem);
    let mut out = Vec::new();
    for set in sets {
        let affine = set.iter().all(|&i| problem.h[i].y_degree() <= 1);
        let mut sols: Vec<Vec<f64>> = Vec::new();
        if affine {
            if let Some((y, _)) = affine_vertex(problem, &x, &set) {
                sols.push(y);
            }
        } else {
            for s in &seed_pts {
                if let Some(y) = newton_vertex(problem, &x, &set, s) {
                    if !sols.iter().any(|q| linalg::max_abs(&diff(q, &y)) <= tol.dedup_tol) {
                        sols.push(y);
                    }
                }
            }
        }
        for y in sols {
            let z: Vec<f64> = x.iter().chain(&y).copied().collect();
            let rec = problem.evaluate_at(&z);
            let sigma = linalg::sigma_min(&rec.active_jacobian(&set));
            let feasible = (0..problem.k).all(|i| set.contains(&i) || rec.h[i] <= tol.act_tol);
            out.push(VertexRecord {
                y,
                active: set.clone(),
                feasible,
                degenerate: sigma <= VERTEX_DEGENERATE,
                sigma_min: sigma,
            });
        }
    }
    out.sort_by(|a, b| {
        a.active.cmp(&b.active).then_with(|| {
            a.y.iter()
                .zip(&b.y)
                .map(|(p, q)| p.total_cmp(q))
                .find(|o| o.is_ne())
                .unwrap_or(std::cmp::Ordering::Equal)
        })
    });
    Ok(out)
}

fn diff(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(p, q)| p - q).collect()
}

/// Counts feasible vertices, nondegenerate and degenerate.
pub fn feasible_vertex_count(problem: &ParametricProblem, x: &[f64], tol: &Tolerances) -> Result<(usize, usize)> {
    let v = enumerate_vertices(problem, x, tol)?;
    let good = v.iter().filter(|r| r.feasible && !r.degenerate).count();
    let bad = v.iter().filter(|r| r.feasible && r.degenerate).count();
    Ok((good, bad))
}

fn max_h(problem: &ParametricProblem, z: &[f64]) -> f64 {
    problem.h.iter().map(|f| f.value(z)).fold(f64::NEG_INFINITY, f64::max)
}

/// Bounding box of feasible points on a coarse scan of the `y` box, inflated.
fn feasible_bbox(problem: &ParametricProblem, x: &[f64]) -> Option<[(f64, f64); 2]> {
    let n = problem.n;
    let (b0, b1) = (problem.y_box[0], problem.y_box[1]);
    let mut z: Vec<f64> = x.to_vec();
    z.extend([0.0, 0.0]);
    let mut lo = [f64::INFINITY; 2];
    let mut hi = [f64::NEG_INFINITY; 2];
    for i in 0..BBOX_SCAN {
        for j in 0..BBOX_SCAN {
            z[n] = b0.0 + (b0.1 - b0.0) * i as f64 / (BBOX_SCAN - 1) as f64;
            z[n + 1] = b1.0 + (b1.1 - b1.0) * j as f64 / (BBOX_SCAN - 1) as f64;
            if max_h(problem, &z) <= 0.0 {
                for a in 0..2 {
                    lo[a] = lo[a].min(z[n + a]);
                    hi[a] = hi[a].max(z[n + a]);
                }
            }
        }
    }
    if !lo[0].is_finite() {
        return None;
    }
    // one coarse cell of slack before inflating, so the scan resolution cannot clip the set
    let cell = [
        (b0.1 - b0.0) / (BBOX_SCAN - 1) as f64,
        (b1.1 - b1.0) / (BBOX_SCAN - 1) as f64,
    ];
    let mut out = [(0.0, 0.0); 2];
    for a in 0..2 {
        let (l, h) = (lo[a] - cell[a], hi[a] + cell[a]);
        let pad = BBOX_INFLATE * (h - l).max(cell[a]);
        out[a] = (l - pad, h + pad);
    }
    Some(out)
}

/// Signature of `Y(x)`. For `m = 2` the grid has `grid_res^2` points over the
/// inflated feasible bounding box; a point carries the pattern
/// `{i : |h_i| <= band_i}` with `band_i = 1.5 * cell diagonal * |grad_y h_i|`
/// and is outside when some `h_i > band_i`. For `m = 1` the feasible set is a
/// union of intervals whose endpoints are the feasible roots.
pub fn strat_signature(problem: &ParametricProblem, x: &[f64], grid_res: usize, tol: &Tolerances) -> Result<StratSignature> {
    let x = problem.clamp_x(x)?;
    match problem.m {
        1 => Ok(signature_1d(problem, &x, grid_res, tol)?),
        2 => signature_2d(problem, &x, grid_res, tol),
        _ => Err(DiagError::Precondition("stratification needs m = 1 or m = 2".into())),
    }
}

fn add_vertices(sig: &mut StratSignature, verts: &[VertexRecord]) {
    for v in verts.iter().filter(|v| v.feasible) {
        if v.degenerate {
            sig.degenerate_vertices += 1;
        } else {
            sig.vertices += 1;
            *sig.per_pattern.entry(v.active.clone()).or_insert(0) += 1;
        }
    }
}

fn signature_1d(problem: &ParametricProblem, x: &[f64], grid_res: usize, tol: &Tolerances) -> Result<StratSignature> {
    let mut sig = StratSignature::default();
    let verts = enumerate_vertices(problem, x, tol)?;
    add_vertices(&mut sig, &verts);
    let (lo, hi) = problem.y_box[0];
    let res = grid_res.max(3);
    let mut z: Vec<f64> = x.to_vec();
    z.push(0.0);
    let mut runs = 0usize;
    let mut run_len = 0usize;
    let mut inside = false;
    for i in 0..res {
        z[problem.n] = lo + (hi - lo) * i as f64 / (res - 1) as f64;
        let feas = max_h(problem, &z) < 0.0;
        if feas {
            run_len += 1;
        }
        if feas && !inside {
            runs += 1;
        }
        if !feas && inside && run_len == 1 {
            return Err(DiagError::Resolution { pattern: "[]".into() });
        }
        if !feas {
            run_len = 0;
        }
        inside = feas;
    }
    sig.faces = runs;
    if runs > 0 {
        sig.per_pattern.insert(Vec::new(), runs);
    }
    Ok(sig)
}

fn signature_2d(problem: &ParametricProblem, x: &[f64], grid_res: usize, tol: &Tolerances) -> Result<StratSignature> {
    let mut sig = StratSignature::default();
    let verts = enumerate_vertices(problem, x, tol)?;
    add_vertices(&mut sig, &verts);
    let Some(bbox) = feasible_bbox(problem, x) else {
        return Ok(sig);
    };
    let res = grid_res.max(3);
    let (n, k) = (problem.n, problem.k);
    let dy = [
        (bbox[0].1 - bbox[0].0) / (res - 1) as f64,
        (bbox[1].1 - bbox[1].0) / (res - 1) as f64,
    ];
    let diag = (dy[0] * dy[0] + dy[1] * dy[1]).sqrt();
    // label per grid point: None outside, Some(pattern bitmask) inside
    let labels: Vec<Option<u64>> = (0..res)
        .into_par_iter()
        .flat_map_iter(|i| {
            let mut z: Vec<f64> = x.to_vec();
            z.extend([0.0, 0.0]);
            let mut jet = Jet::zeros(n + 2);
            let mut row = Vec::with_capacity(res);
            for j in 0..res {
                z[n] = bbox[0].0 + dy[0] * i as f64;
                z[n + 1] = bbox[1].0 + dy[1] * j as f64;
                let mut mask = 0u64;
                let mut out = false;
                for (c, f) in problem.h.iter().enumerate() {
                    f.eval_into(&z, 1, &mut jet);
                    let g = (jet.grad[n].powi(2) + jet.grad[n + 1].powi(2)).sqrt();
                    let band = BAND_FACTOR * diag * g;
                    if jet.value > band {
                        out = true;
                        break;
                    }
                    if jet.value.abs() <= band {
                        mask |= 1 << c;
                    }
                }
                row.push(if out { None } else { Some(mask) });
            }
            row
        })
        .collect();
    let mut comp = vec![false; res * res];
    let mut queue = VecDeque::new();
    for start in 0..res * res {
        let Some(mask) = labels[start] else { continue };
        if comp[start] {
            continue;
        }
        let size = mask.count_ones() as usize;
        comp[start] = true;
        queue.push_back(start);
        let mut cells = 0usize;
        while let Some(c) = queue.pop_front() {
            cells += 1;
            let (i, j) = ((c / res) as isize, (c % res) as isize);
            for di in -1..=1isize {
                for dj in -1..=1isize {
                    let (a, b) = (i + di, j + dj);
                    if a < 0 || b < 0 || a >= res as isize || b >= res as isize {
                        continue;
                    }
                    let nb = a as usize * res + b as usize;
                    if !comp[nb] && labels[nb] == Some(mask) {
                        comp[nb] = true;
                        queue.push_back(nb);
                    }
                }
            }
        }
        if size >= 2 {
            // vertex neighbourhoods; vertices come from the exact solves
            continue;
        }
        let pattern: Vec<usize> = (0..k).filter(|c| mask & (1 << c) != 0).collect();
        if cells == 1 {
            return Err(DiagError::Resolution {
                pattern: ser::index_set(&pattern),
            });
        }
        if size == 0 {
            sig.faces += 1;
        } else {
            sig.arcs += 1;
        }
        *sig.per_pattern.entry(pattern).or_insert(0) += 1;
    }
    Ok(sig)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SignatureComparison {
    pub equal: bool,
    /// First count that differs, e.g. `vertices 4 vs 5`.
    pub first_difference: Option<String>,
    /// First active pattern whose component counts differ, if any.
    pub first_pattern_difference: Option<String>,
}

/// Equality of the vertex, arc and face counts; per-pattern differences are reported only.
pub fn signature_equal(a: &StratSignature, b: &StratSignature) -> SignatureComparison {
    let dims = [
        ("vertices", a.vertices, b.vertices),
        ("arcs", a.arcs, b.arcs),
        ("faces", a.faces, b.faces),
    ];
    let first_difference = dims
        .iter()
        .find(|(_, p, q)| p != q)
        .map(|(name, p, q)| format!("{name} {p} vs {q}"));
    let mut keys: Vec<&Vec<usize>> = a.per_pattern.keys().chain(b.per_pattern.keys()).collect();
    keys.sort();
    keys.dedup();
    let first_pattern_difference = keys.into_iter().find_map(|k| {
        let (p, q) = (
            a.per_pattern.get(k).copied().unwrap_or(0),
            b.per_pattern.get(k).copied().unwrap_or(0),
        );
        (p != q).then(|| format!("{} {p} vs {q}", ser::index_set(k)))
    });
    SignatureComparison {
        equal: first_difference.is_none(),
        first_difference,
        first_pattern_difference,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "verdict", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Screen {
    Consistent,
    Obstructed { x1: Vec<f64>, x2: Vec<f64>, detail: String },
}

impl Screen {
    pub fn is_obstructed(&self) -> bool {
        matches!(self, Screen::Obstructed { .. })
    }
}

/// Signatures at every sample; the first consecutive pair that differs is the witness.
pub fn rigidity_screen(
    problem: &ParametricProblem,
    x_samples: &[Vec<f64>],
    grid_res: usize,
    tol: &Tolerances,
) -> Result<(Screen, Vec<StratSignature>)> {
    if x_samples.len() < 2 {
        return Err(DiagError::Precondition("rigidity screen needs at least two samples".into()));
    }
    let sigs = x_samples
        .par_iter()
        .map(|x| strat_signature(problem, x, grid_res, tol))
        .collect::<Result<Vec<_>>>()?;
    for w in 0..sigs.len() - 1 {
        let cmp = signature_equal(&sigs[w], &sigs[w + 1]);
        if !cmp.equal {
            return Ok((
                Screen::Obstructed {
                    x1: x_samples[w].clone(),
                    x2: x_samples[w + 1].clone(),
                    detail: cmp.first_difference.unwrap_or_default(),
                },
                sigs,
            ));
        }
    }
    Ok((Screen::Consistent, sigs))
}

/// Bisects the change in feasible vertex count between `lo` and `hi` (n = 1)
/// down to `width`; returns the final bracket.
pub fn bracket_vertex_change(
    problem: &ParametricProblem,
    lo: f64,
    hi: f64,
    width: f64,
    tol: &Tolerances,
) -> Result<(f64, f64)> {
    let count = |x: f64| feasible_vertex_count(problem, &[x], tol).map(|c| c.0);
    let (mut a, mut b) = (lo, hi);
    let ca = count(a)?;
    if ca == count(b)? {
        return Err(DiagError::Precondition("vertex count is equal at both ends".into()));
    }
    while b - a > width {
        let mid = 0.5 * (a + b);
        if count(mid)? == ca {
            a = mid;
        } else {
            b = mid;
        }
    }
    Ok((a, b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::load_corpus;

    fn corpus(id: &str) -> ParametricProblem {
        load_corpus(id).unwrap().unwrap()
    }

    #[test]
    fn square_and_pentagon_vertices() {
        let p = corpus("ce_licq_corner");
        let t = Tolerances::default();
        assert_eq!(feasible_vertex_count(&p, &[-1.0], &t).unwrap(), (4, 0));
        assert_eq!(feasible_vertex_count(&p, &[1.0], &t).unwrap(), (5, 0));
        for v in enumerate_vertices(&p, &[1.0], &t).unwrap() {
            let h = p.h_values(&[1.0], &v.y).unwrap();
            assert!(v.active.iter().all(|&i| h[i].abs() <= 1e-9));
        }
    }

    #[test]
    fn circle_ellipse_crossings() {
        let p = corpus("ce_licq_tangent");
        let t = Tolerances::default();
        assert_eq!(feasible_vertex_count(&p, &[2.0], &t).unwrap(), (4, 0));
        assert_eq!(feasible_vertex_count(&p, &[1.0], &t).unwrap(), (0, 0));
    }

    #[test]
    fn signatures_of_the_corner_problem() {
        let p = corpus("ce_licq_corner");
        let t = Tolerances::default();
        assert_eq!(strat_signature(&p, &[-1.0], 201, &t).unwrap().counts(), (4, 4, 1));
        let s = strat_signature(&p, &[1.0], 201, &t).unwrap();
        assert_eq!(s.counts(), (5, 5, 1));
        assert_eq!(s.per_pattern[&vec![4]], 1);
    }

    #[test]
    fn signatures_of_the_tangent_problem() {
        let p = corpus("ce_licq_tangent");
        let t = Tolerances::default();
        assert_eq!(strat_signature(&p, &[1.0], 201, &t).unwrap().counts(), (0, 1, 1));
        assert_eq!(strat_signature(&p, &[2.0], 201, &t).unwrap().counts(), (4, 4, 1));
    }

    #[test]
    fn comparison_reports_first_difference() {
        let p = corpus("ce_licq_corner");
        let t = Tolerances::default();
        let a = strat_signature(&p, &[-1.0], 201, &t).unwrap();
        let b = strat_signature(&p, &[1.0], 201, &t).unwrap();
        let c = signature_equal(&a, &b);
        assert!(!c.equal);
        assert_eq!(c.first_difference.as_deref(), Some("vertices 4 vs 5"));
        assert!(signature_equal(&a, &a).equal);
    }

    #[test]
    fn interval_census_is_blind_to_the_switch() {
        let p = corpus("ex_mult_disc");
        let t = Tolerances::default();
        let (screen, sigs) = rigidity_screen(&p, &[vec![0.5], vec![1.5]], 401, &t).unwrap();
        assert_eq!(screen, Screen::Consistent);
        assert_eq!(sigs[0].counts(), (1, 0, 1));
        assert_ne!(sigs[0].per_pattern, sigs[1].per_pattern);
    }

    #[test]
    fn constant_disk_is_consistent() {
        let p = corpus("ce_scsc_disk");
        let t = Tolerances::default();
        let (screen, _) = rigidity_screen(&p, &[vec![0.0], vec![2.0]], 201, &t).unwrap();
        assert_eq!(screen, Screen::Consistent);
    }

    #[test]
    fn serialized_keys_are_one_based() {
        let p = corpus("ce_licq_corner");
        let s = strat_signature(&p, &[-1.0], 101, &Tolerances::default()).unwrap();
        let v = serde_json::to_value(&s).unwrap();
        assert_eq!(v["vertices"], 4);
        assert_eq!(v["per_pattern"]["[1,3]"], 1);
        assert_eq!(v["per_pattern"]["[]"], 1);
    }
}
