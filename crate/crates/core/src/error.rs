use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("parse error: {0}")]
    Parse(String),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("negative entry {value} at ({row}, {col})")]
    NegativeEntry { row: usize, col: usize, value: f64 },
    #[error("{what}: size {n} exceeds limit {limit}")]
    Size {
        what: &'static str,
        n: usize,
        limit: usize,
    },
    #[error("support error: {0}")]
    Support(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("boundary error: {0}")]
    Boundary(String),
    #[error("numerical error: {0}")]
    Numerical(String),
    #[error("no finite-cost perfect matching exists")]
    Infeasible,
    #[error("positivity error: {0}")]
    Positivity(String),
    #[error("inadmissible fractional coefficients: {0}")]
    Inadmissible(String),
}

impl Error {
    /// True for errors caused by a size or feasibility cap rather than bad input.
    pub fn is_size_error(&self) -> bool {
        matches!(self, Error::Size { .. } | Error::Infeasible)
    }
}

pub type Result<T> = std::result::Result<T, Error>;
