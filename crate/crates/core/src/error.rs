use thiserror::Error;

/// Errors raised by the diagnostics library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum DiagError {
    #[error("x = {x:?} lies outside the domain box beyond tolerance")]
    Domain { x: Vec<f64> },

    #[error("non-finite value in {what}")]
    NonFinite { what: String },

    #[error("parse error at {location}: {message}")]
    Parse { location: String, message: String },

    #[error("seam error in field `{field}` at x = {breakpoint}: {order}-order jump {jump:.3e}")]
    Seam {
        field: String,
        breakpoint: f64,
        order: usize,
        jump: f64,
    },

    #[error("invalid problem: {0}")]
    InvalidProblem(String),

    #[error("unknown corpus id `{0}`")]
    UnknownCorpus(String),

    #[error("Newton iteration did not converge after {iterations} iterations (residual {residual:.3e})")]
    NoConverge { iterations: usize, residual: f64 },

    #[error("singular Jacobian (sigma_min = {sigma_min:.3e})")]
    SingularJacobian { sigma_min: f64 },

    #[error("point rejected: constraint {index} violates {reason}")]
    Rejected { index: usize, reason: RejectReason },

    #[error("infeasible point: max h = {max_h:.3e}")]
    Infeasible { max_h: f64 },

    #[error("no grid point lies in the activity band")]
    EmptyBand,

    #[error("under-resolved stratification: component of pattern {pattern} is a single grid cell")]
    Resolution { pattern: String },

    #[error("continuation step underflow at x = {x}")]
    StepUnderflow { x: f64 },

    #[error("singular system (sigma_min = {sigma_min:.3e})")]
    SingularSystem { sigma_min: f64 },

    #[error("only {found} feasible samples found (need at least {needed})")]
    Sampling { found: usize, needed: usize },

    #[error("no local minimizer found to start from at x = {x}")]
    NoStart { x: f64 },

    #[error("precondition violated: {0}")]
    Precondition(String),
}

/// Which side of the KKT sign conditions a rejected reduced solve violated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RejectReason {
    NegativeMultiplier,
    Infeasible,
}

impl std::fmt::Display for RejectReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RejectReason::NegativeMultiplier => write!(f, "multiplier sign"),
            RejectReason::Infeasible => write!(f, "feasibility"),
        }
    }
}

pub type Result<T> = std::result::Result<T, DiagError>;
