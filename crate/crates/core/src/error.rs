use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DesignError {
    #[error("matrix is not symmetric (max asymmetry {asymmetry:e})")]
    NotSymmetric { asymmetry: f64 },

    #[error("matrix is not positive semidefinite (min eigenvalue {min_eigenvalue:e})")]
    NotPsd { min_eigenvalue: f64 },

    #[error("matrix is singular; the regularized Gram matrix has no inverse")]
    SingularMatrix,

    #[error("degenerate spectrum: E_{l}(M + lambda I) = {value:e} is not positive")]
    DegenerateSpectrum { l: usize, value: f64 },

    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("invalid instance: {0}")]
    InvalidInstance(String),

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("fractional solution is degenerate: ||V(x)V(x)^T||_2 = 0 with lambda > 0")]
    DegenerateFractional,

    #[error("anchor sets overlap or exceed the budget: {0}")]
    InvalidAnchors(String),

    #[error("conditioning event has zero probability")]
    ZeroProbabilityCondition,

    #[error("measure has no support with positive weight")]
    DegenerateMeasure,

    #[error("numerical instability: {0}")]
    NumericalInstability(String),

    #[error("enumeration of {count} subsets exceeds the budget of {budget}")]
    TooLarge { count: u128, budget: u128 },

    #[error("Pr(S contains R) = 0 for an admissible R = {0:?}")]
    ZeroSupport(Vec<usize>),

    #[error("parse error at row {row}, column {col}: {msg}")]
    Parse { row: usize, col: usize, msg: String },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("io error: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, DesignError>;

impl From<std::io::Error> for DesignError {
    fn from(e: std::io::Error) -> Self {
        DesignError::Io(e.to_string())
    }
}
