use thiserror::Error;

/// Errors produced by the numerical routines in this crate.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("{what} is outside its domain: {detail}")]
    Domain { what: &'static str, detail: String },

    #[error("symmetric eigensolver did not converge within {iterations} iterations")]
    EigenNoConvergence { iterations: usize },

    #[error("matrix is singular: {0}")]
    Singular(String),

    #[error("sample eigenvalue {l_hat} is not above the detection threshold {threshold}")]
    BelowThreshold { l_hat: f64, threshold: f64 },

    #[error("no root of the interval equation in [{lo}, {hi}]")]
    NoRoot { lo: f64, hi: f64 },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain(what: &'static str, detail: impl Into<String>) -> Error {
    Error::Domain {
        what,
        detail: detail.into(),
    }
}
