//! JSON problem files.
//!
//! ```json
//! {"name": "...", "n": 1, "m": 1, "k": 1, "x_domain": [[-1, 1]],
//!  "y_box": [[-3, 3]],
//!  "g": {"pieces": [{"terms": [{"powers": [0, 2], "coeff": 1.0}]}], "smoothness": "C2"},
//!  "h": [...], "slater_margin": 0.5}
//! ```
//!
//! `powers` index `(x_1..x_n, y_1..y_m)`. A piece may bound its `x` box with
//! `x_lo` / `x_hi`, either a scalar (first coordinate) or an array with `null`
//! for an open side; missing bounds are unbounded. `y_box` defaults to
//! `[-10, 10]` per coordinate.

use super::corpus;
use super::field::{Piece, PiecewisePolyField, Smoothness};
use super::poly::{Poly, Term};
use super::ParametricProblem;
use crate::error::{DiagError, Result};
use serde::{Deserialize, Serialize};
use std::path::Path;

pub const DEFAULT_Y_BOX: (f64, f64) = (-10.0, 10.0);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Bound {
    Scalar(f64),
    Vector(Vec<Option<f64>>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PieceSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x_lo: Option<Bound>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x_hi: Option<Bound>,
    pub terms: Vec<Term>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldSpec {
    pub pieces: Vec<PieceSpec>,
    pub smoothness: Smoothness,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemFile {
    pub name: String,
    pub n: usize,
    pub m: usize,
    pub k: usize,
    pub x_domain: Vec<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub y_box: Option<Vec<[f64; 2]>>,
    pub g: FieldSpec,
    pub h: Vec<FieldSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slater_margin: Option<f64>,
}

fn parse_err(location: impl Into<String>, message: impl Into<String>) -> DiagError {
    DiagError::Parse {
        location: location.into(),
        message: message.into(),
    }
}

fn bound(b: &Option<Bound>, n: usize, open: f64, loc: &str) -> Result<Vec<f64>> {
    match b {
        None => Ok(vec![open; n]),
        Some(Bound::Scalar(v)) => {
            let mut out = vec![open; n];
            out[0] = *v;
            Ok(out)
        }
        Some(Bound::Vector(vs)) => {
            if vs.len() != n {
                return Err(parse_err(loc, format!("expected {n} bounds, found {}", vs.len())));
            }
            Ok(vs.iter().map(|v| v.unwrap_or(open)).collect())
        }
    }
}

fn field_from_spec(spec: &FieldSpec, n: usize, m: usize, loc: &str) -> Result<PiecewisePolyField> {
    if spec.pieces.is_empty() {
        return Err(parse_err(format!("{loc}.pieces"), "at least one piece is required"));
    }
    let mut pieces = Vec::with_capacity(spec.pieces.len());
    for (pi, p) in spec.pieces.iter().enumerate() {
        let ploc = format!("{loc}.pieces[{pi}]");
        for (ti, t) in p.terms.iter().enumerate() {
            if t.powers.len() != n + m {
                return Err(parse_err(
                    format!("{ploc}.terms[{ti}].powers"),
                    format!("expected {} exponents, found {}", n + m, t.powers.len()),
                ));
            }
            if !t.coeff.is_finite() {
                return Err(parse_err(format!("{ploc}.terms[{ti}].coeff"), "coefficient must be finite"));
            }
        }
        let lo = bound(&p.x_lo, n, f64::NEG_INFINITY, &format!("{ploc}.x_lo"))?;
        let hi = bound(&p.x_hi, n, f64::INFINITY, &format!("{ploc}.x_hi"))?;
        if lo.iter().zip(&hi).any(|(a, b)| a > b) {
            return Err(parse_err(ploc, "x_lo exceeds x_hi"));
        }
        pieces.push(Piece::new(lo, hi, Poly::from_terms(n + m, &p.terms)));
    }
    Ok(PiecewisePolyField::piecewise(n, m, pieces, spec.smoothness))
}

fn spec_from_field(f: &PiecewisePolyField) -> FieldSpec {
    let encode = |v: &[f64]| -> Option<Bound> {
        if v.iter().all(|b| b.is_infinite()) {
            None
        } else {
            Some(Bound::Vector(
                v.iter().map(|b| if b.is_finite() { Some(*b) } else { None }).collect(),
            ))
        }
    };
    FieldSpec {
        pieces: f
            .pieces()
            .iter()
            .map(|p| PieceSpec {
                x_lo: encode(&p.lo),
                x_hi: encode(&p.hi),
                terms: p.poly().to_terms(),
            })
            .collect(),
        smoothness: f.smoothness(),
    }
}

impl ProblemFile {
    pub fn from_problem(p: &ParametricProblem) -> Self {
        Self {
            name: p.name.clone(),
            n: p.n,
            m: p.m,
            k: p.k,
            x_domain: p.x_domain.iter().map(|(a, b)| [*a, *b]).collect(),
            y_box: Some(p.y_box.iter().map(|(a, b)| [*a, *b]).collect()),
            g: spec_from_field(&p.g),
            h: p.h.iter().map(spec_from_field).collect(),
            slater_margin: p.slater_margin,
        }
    }

    pub fn into_problem(self) -> Result<ParametricProblem> {
        let (n, m) = (self.n, self.m);
        if n == 0 || m == 0 {
            return Err(parse_err("n/m", "dimensions must be at least 1"));
        }
        if self.h.len() != self.k {
            return Err(parse_err("h", format!("k = {} but {} constraints listed", self.k, self.h.len())));
        }
        if self.x_domain.len() != n {
            return Err(parse_err("x_domain", format!("expected {n} intervals")));
        }
        let y_box = match &self.y_box {
            Some(b) if b.len() != m => return Err(parse_err("y_box", format!("expected {m} intervals"))),
            Some(b) => b.iter().map(|v| (v[0], v[1])).collect(),
            None => vec![DEFAULT_Y_BOX; m],
        };
        let g = field_from_spec(&self.g, n, m, "g")?;
        let h = self
            .h
            .iter()
            .enumerate()
            .map(|(i, f)| field_from_spec(f, n, m, &format!("h[{i}]")))
            .collect::<Result<Vec<_>>>()?;
        let problem = ParametricProblem {
            name: self.name,
            n,
            m,
            k: self.k,
            x_domain: self.x_domain.iter().map(|v| (v[0], v[1])).collect(),
            y_box,
            g,
            h,
            slater_margin: self.slater_margin,
        };
        problem.validate()?;
        Ok(problem)
    }
}

/// Parses and validates a problem file's contents.
pub fn parse_problem(text: &str) -> Result<ParametricProblem> {
    let file: ProblemFile = serde_json::from_str(text).map_err(|e| {
        parse_err(format!("line {}, column {}", e.line(), e.column()), e.to_string())
    })?;
    file.into_problem()
}

/// Loads a corpus problem by id, or a problem file by path.
pub fn load_problem(source: &str) -> Result<ParametricProblem> {
    if let Some(p) = corpus::load_corpus(source) {
        return p;
    }
    let path = Path::new(source);
    if !path.exists() {
        return Err(DiagError::UnknownCorpus(source.to_string()));
    }
    let text = std::fs::read_to_string(path)
        .map_err(|e| parse_err(source, format!("cannot read file: {e}")))?;
    parse_problem(&text)
}
