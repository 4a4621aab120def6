//! Regularity diagnostics for parametric lower-level problems
//! `min_y g(x, y) s.t. h_i(x, y) <= 0`.

pub mod error;
pub mod kkt;
pub mod linalg;
pub mod perturb;
pub mod problem;
pub mod regularity;
pub mod repro;
pub mod ser;
pub mod sensitivity;
pub mod continuation;
pub mod strata;
pub mod tol;

pub use error::{DiagError, Result};
pub use problem::{load_problem, ParametricProblem};
pub use tol::Tolerances;
