//! Built-in problems, each isolating one way regularity can fail.

use super::field::{Piece, PiecewisePolyField, Smoothness};
use super::poly::Poly;
use super::ParametricProblem;
use crate::error::Result;
use serde::Serialize;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorpusEntry {
    pub id: &'static str,
    pub description: &'static str,
    pub expects: Vec<&'static str>,
}

/// Number of `x` samples and `y` grid points per axis for the Slater check run at load.
const SLATER_SAMPLES: usize = 33;
const SLATER_GRID: usize = 41;

struct Vars {
    n: usize,
    m: usize,
}

impl Vars {
    fn x(&self) -> Poly {
        Poly::var(self.n + self.m, 0)
    }
    fn y(&self, j: usize) -> Poly {
        Poly::var(self.n + self.m, self.n + j)
    }
    fn c(&self, v: f64) -> Poly {
        Poly::constant(self.n + self.m, v)
    }
    fn smooth(&self, p: Poly) -> PiecewisePolyField {
        PiecewisePolyField::smooth(self.n, self.m, p)
    }
    /// `x^3` below 0, zero on `[0, 1]`, `(x - 1)^3` above 1.
    fn phi_pieces(&self) -> Vec<(f64, f64, Poly)> {
        let x = self.x();
        vec![
            (f64::NEG_INFINITY, 0.0, x.powi(3)),
            (0.0, 1.0, self.c(0.0)),
            (1.0, f64::INFINITY, (x - 1.0).powi(3)),
        ]
    }
    /// A C2 field built piece by piece from the cubic spline above.
    fn with_phi(&self, f: impl Fn(&Poly) -> Poly) -> PiecewisePolyField {
        let pieces = self
            .phi_pieces()
            .into_iter()
            .map(|(lo, hi, phi)| Piece::new(vec![lo], vec![hi], f(&phi)))
            .collect();
        PiecewisePolyField::piecewise(self.n, self.m, pieces, Smoothness::C2)
    }
}

pub fn list_corpus() -> Vec<CorpusEntry> {
    vec![
        CorpusEntry {
            id: "ce_licq_corner",
            description: "Square [-2,0]^2 cut by the moving half-plane y1 + y2 + x <= 0; \
                          the half-plane passes through a corner at x = 0",
            expects: vec![
                "expects=SIGNATURE(4,4,1)@x=-1",
                "expects=SIGNATURE(5,5,1)@x=1",
                "expects=RIGIDITY_OBSTRUCTED",
            ],
        },
        CorpusEntry {
            id: "ce_licq_tangent",
            description: "Unit disk intersected with an ellipse whose y2 semi-axis grows with x; \
                          tangency at x = sqrt(2)",
            expects: vec![
                "expects=SIGNATURE(0,1,1)@x=1",
                "expects=SIGNATURE(4,4,1)@x=2",
                "expects=TANGENCY@x=1.41421356",
            ],
        },
        CorpusEntry {
            id: "ce_scsc_disk",
            description: "Distance to (x, 0) over the unit disk; the minimizer reaches the circle at x = 1",
            expects: vec!["expects=ACTIVATION(1)@x=1", "expects=MIGRATION_OBSTRUCTED"],
        },
        CorpusEntry {
            id: "ce_sosc_count",
            description: "Quartic in y2 on the face y1 = 0 whose origin turns from minimizer to \
                          maximizer at x = 1/6",
            expects: vec![
                "expects=MINIMIZERS{1}:1@x=0",
                "expects=MINIMIZERS{1}:2@x=1",
                "expects=COUNT_OBSTRUCTED",
            ],
        },
        CorpusEntry {
            id: "ex_licq_prev",
            description: "Two upper bounds y <= 0 and y <= phi(x) that coincide where the C2 spline \
                          phi vanishes",
            expects: vec!["expects=LICQ_FAIL[0,1]", "expects=LICQ_POINT_UNDER_PERTURBATION"],
        },
        CorpusEntry {
            id: "ex_scsc_prev",
            description: "Projection of phi(x) onto [-1, 0]; the unconstrained minimizer sits on the \
                          bound wherever phi vanishes",
            expects: vec!["expects=SCSC_FAIL[0,1]", "expects=SCSC_POINT_UNDER_PERTURBATION"],
        },
        CorpusEntry {
            id: "ex_sosc_prev",
            description: "Box-constrained quartic whose curvature in y2 at the minimizer is 2 phi(x)^2",
            expects: vec!["expects=SOSC_FAIL[0,1]", "expects=SOSC_EMPTY_UNDER_PERTURBATION"],
        },
        CorpusEntry {
            id: "ex_mult_disc",
            description: "Maximize y under y <= 1 and y <= x; both bounds bind at x = 1",
            expects: vec!["expects=LICQ_DEGENERACY@x=1", "expects=MULTIPLIER_SWITCH@x=1"],
        },
        CorpusEntry {
            id: "ex_scsc_kink",
            description: "Minimize y^2 under y <= x; the minimizer min(0, x) has a kink at x = 0",
            expects: vec!["expects=SCSC_LOSS(1)@x=0"],
        },
        CorpusEntry {
            id: "ex_scsc_saddle",
            description: "Concave in y2 on [0, 1]; the corner minimizer at y2 = 0 becomes a saddle at x = 0",
            expects: vec!["expects=SADDLE_DEGENERATION@x=0"],
        },
        CorpusEntry {
            id: "ex_sosc_fold",
            description: "Cubic in y2 whose minimizer sqrt(x) and maximizer -sqrt(x) annihilate at x = 0",
            expects: vec!["expects=FOLD@x=0"],
        },
    ]
}

/// `None` if `id` is not a corpus id; otherwise the validated problem.
pub fn load_corpus(id: &str) -> Option<Result<ParametricProblem>> {
    let p = build(id)?;
    Some(register(p))
}

fn register(p: ParametricProblem) -> Result<ParametricProblem> {
    p.validate()?;
    if let Some(rho) = p.slater_margin {
        p.slater_check(rho, SLATER_SAMPLES, SLATER_GRID)?;
    }
    Ok(p)
}

fn problem(
    name: &str,
    v: &Vars,
    x_domain: (f64, f64),
    y_box: Vec<(f64, f64)>,
    g: PiecewisePolyField,
    h: Vec<PiecewisePolyField>,
    slater_margin: f64,
) -> ParametricProblem {
    ParametricProblem {
        name: name.to_string(),
        n: v.n,
        m: v.m,
        k: h.len(),
        x_domain: vec![x_domain],
        y_box,
        g,
        h,
        slater_margin: Some(slater_margin),
    }
}

fn build(id: &str) -> Option<ParametricProblem> {
    let v2 = Vars { n: 1, m: 2 };
    let v1 = Vars { n: 1, m: 1 };
    let p = match id {
        "ce_licq_corner" => {
            let v = &v2;
            let (x, y1, y2) = (v.x(), v.y(0), v.y(1));
            problem(
                id,
                v,
                (-1.0, 1.0),
                vec![(-3.0, 1.0), (-3.0, 1.0)],
                v.smooth(-(&y1 + &y2)),
                vec![
                    v.smooth(y1.clone()),
                    v.smooth(-y1.clone() - 2.0),
                    v.smooth(y2.clone()),
                    v.smooth(-y2.clone() - 2.0),
                    v.smooth(&(&y1 + &y2) + &x),
                ],
                0.5,
            )
        }
        "ce_licq_tangent" => {
            let v = &v2;
            let (y1, y2) = (v.y(0), v.y(1));
            let inv_x2 = Poly::monomial(3, 0, -2, 1.0);
            problem(
                id,
                v,
                (1.0, 2.0),
                vec![(-1.5, 1.5), (-1.5, 1.5)],
                v.smooth(&y1 * &y1 + &y2 * &y2),
                vec![
                    v.smooth(&y1 * &y1 + &y2 * &y2 - 1.0),
                    v.smooth(&y1 * &y1 + &(&y2 * &y2) * &inv_x2 - 0.5),
                ],
                0.25,
            )
        }
        "ce_scsc_disk" => {
            let v = &v2;
            let (x, y1, y2) = (v.x(), v.y(0), v.y(1));
            problem(
                id,
                v,
                (0.0, 2.0),
                vec![(-1.5, 1.5), (-1.5, 1.5)],
                v.smooth((&y1 - &x).powi(2) + &y2 * &y2),
                vec![v.smooth(&y1 * &y1 + &y2 * &y2 - 1.0)],
                0.5,
            )
        }
        "ce_sosc_count" => {
            let v = &v2;
            let (x, y1, y2) = (v.x(), v.y(0), v.y(1));
            let g = (y1.clone() + 1.0).powi(2)
                + (&x * &y2.powi(4)).scale(0.1)
                + (x.scale(-6.0) + 1.0) * y2.powi(2);
            problem(
                id,
                v,
                (0.0, 1.0),
                vec![(-1.0, 3.0), (-7.0, 7.0)],
                v.smooth(g),
                vec![
                    v.smooth(-y1.clone()),
                    v.smooth(y1.clone() - 2.0),
                    v.smooth(y2.clone() - 6.0),
                    v.smooth(-y2.clone() - 6.0),
                ],
                0.5,
            )
        }
        "ex_licq_prev" => {
            let v = &v1;
            let y = v.y(0);
            problem(
                id,
                v,
                (-0.5, 1.5),
                vec![(-2.0, 2.0)],
                v.smooth((y.clone() + 0.5).powi(2)),
                vec![
                    v.smooth(y.clone()),
                    v.with_phi(|phi| &y - phi),
                    v.smooth(-y.clone() - 1.0),
                ],
                0.25,
            )
        }
        "ex_scsc_prev" => {
            let v = &v1;
            let y = v.y(0);
            problem(
                id,
                v,
                (-0.5, 1.5),
                vec![(-2.0, 2.0)],
                v.with_phi(|phi| (&y - phi).powi(2)),
                vec![v.smooth(y.clone()), v.smooth(-y.clone() - 1.0)],
                0.25,
            )
        }
        "ex_sosc_prev" => {
            let v = &v2;
            let (y1, y2) = (v.y(0), v.y(1));
            problem(
                id,
                v,
                (-0.5, 1.5),
                vec![(-2.0, 2.0), (-2.0, 2.0)],
                v.with_phi(|phi| {
                    &y1 * &y1 + y1.scale(2.0) + y2.powi(4) + &(phi * phi) * &(&y2 * &y2)
                }),
                vec![
                    v.smooth(-y1.clone()),
                    v.smooth(y1.clone() - 1.0),
                    v.smooth(-y2.clone() - 1.0),
                    v.smooth(y2.clone() - 1.0),
                ],
                0.25,
            )
        }
        "ex_mult_disc" => {
            let v = &v1;
            let (x, y) = (v.x(), v.y(0));
            problem(
                id,
                v,
                (0.0, 2.0),
                vec![(-3.0, 3.0)],
                v.smooth(-y.clone()),
                vec![v.smooth(y.clone() - 1.0), v.smooth(&y - &x)],
                0.5,
            )
        }
        "ex_scsc_kink" => {
            let v = &v1;
            let (x, y) = (v.x(), v.y(0));
            problem(
                id,
                v,
                (-1.0, 1.0),
                vec![(-3.0, 3.0)],
                v.smooth(&y * &y),
                vec![v.smooth(&y - &x)],
                0.5,
            )
        }
        "ex_scsc_saddle" => {
            let v = &v2;
            let (x, y1, y2) = (v.x(), v.y(0), v.y(1));
            let g = (&y1 * &y1).scale(0.5) - (&y2 * &y2).scale(2.0) + &x * &y2;
            problem(
                id,
                v,
                (-1.0, 1.0),
                vec![(-2.0, 2.0), (-1.0, 2.0)],
                v.smooth(g),
                vec![
                    v.smooth(-y1.clone() - 1.0),
                    v.smooth(y1.clone() - 1.0),
                    v.smooth(-y2.clone()),
                    v.smooth(y2.clone() - 1.0),
                ],
                0.25,
            )
        }
        "ex_sosc_fold" => {
            let v = &v2;
            let (x, y1, y2) = (v.x(), v.y(0), v.y(1));
            let g = y1.clone() + (&y1 * &y1).scale(0.5) + y2.powi(3).scale(1.0 / 3.0) - &x * &y2;
            problem(
                id,
                v,
                (-1.0, 1.0),
                vec![(-1.0, 3.0), (-2.0, 2.0)],
                v.smooth(g),
                vec![
                    v.smooth(-y1.clone()),
                    v.smooth(y1.clone() - 2.0),
                    v.smooth(-y2.clone() - 1.5),
                    v.smooth(y2.clone() - 1.5),
                ],
                0.5,
            )
        }
        _ => return None,
    };
    Some(p)
}
