use thiserror::Error;

/// Failure modes shared by every module.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("input error: {0}")]
    Input(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("no dichotomy detected: {0}")]
    NoDichotomy(String),
    #[error("irregular splitting at n = {n}: smallest singular value {sigma:.3e}")]
    IrregularSplitting { n: i64, sigma: f64 },
    #[error("invariance violated at n = {n}: residual {residual:.3e}")]
    InvarianceViolation { n: i64, residual: f64 },
    #[error("not an exponential dichotomy: {0}")]
    NotAnEd(String),
    #[error("indeterminate: {0}")]
    Indeterminate(String),
    #[error("window too short: tail bound {tail_bound:.3e} exceeds tolerance, extend by about {extend_by} steps")]
    WindowTooShort { tail_bound: f64, extend_by: usize },
    #[error("not a bundle at this sampling: {0}")]
    NotABundle(String),
    #[error("certification failed: {0}")]
    Certification(String),
}

impl Error {
    /// Errors caused by numerical ambiguity rather than bad input or a negative verdict.
    pub fn is_indeterminate(&self) -> bool {
        matches!(self, Error::Indeterminate(_) | Error::Numeric(_) | Error::WindowTooShort { .. })
    }
}

pub type Result<T> = std::result::Result<T, Error>;
