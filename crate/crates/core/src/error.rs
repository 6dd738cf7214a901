//! Error type shared by the estimation library.

use thiserror::Error;

/// Library-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

/// Errors raised by dataset validation, assembly, and the solvers.
#[derive(Debug, Clone, Error)]
pub enum Error {
    /// Graphs disagree on shape or a graph is empty.
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// A column's values are incompatible with its declared family.
    #[error("family violation: {0}")]
    FamilyViolation(String),

    /// A configuration field is out of its valid range.
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    /// Augmented sample size too small for unique GLM solutions.
    #[error("infeasible augmentation: total rows {rows} must exceed {cols} (q*p)")]
    Infeasible { rows: usize, cols: usize },

    /// A column of zero variance was found where scaling is required.
    #[error("zero-variance column {column} in graph {graph}")]
    ZeroVariance { graph: usize, column: usize },

    /// The design matrix is numerically rank deficient.
    #[error("singular design: column {column} is linearly dependent")]
    SingularDesign { column: usize },

    /// A Gram matrix required for a solve or trace is not positive definite.
    #[error("singular gram matrix")]
    SingularGram,

    /// A solver failed to converge.
    #[error("solver did not converge: {0}")]
    NoConvergence(String),

    /// A sampling chain left its admissible region.
    #[error("divergent sampler: {0}")]
    Divergent(String),
}
