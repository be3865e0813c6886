//! Error type shared by all modules.

use thiserror::Error;

/// Failure modes of the numerical pipeline.
#[derive(Debug, Error)]
pub enum Error {
    /// Matrix/vector dimensions do not line up.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// The matrix violates the sub-generator sign pattern.
    #[error("not a sub-generator: {0}")]
    NotSubGenerator(String),

    /// A vector meant to be a probability distribution is not one.
    #[error("invalid probability vector: {0}")]
    InvalidDistribution(String),

    /// An irreducibility requirement fails.
    #[error("reducible representation: {0}")]
    Reducible(String),

    /// A matrix is singular or too ill-conditioned to invert reliably.
    #[error("singular or ill-conditioned matrix: {0}")]
    Singular(String),

    /// The first-passage eigenproblem could not be resolved: wrong stable
    /// root count, roots on the imaginary axis, or an invariant subspace
    /// the assembly cannot use.
    #[error("defective spectrum: {0}")]
    DefectiveSpectrum(String),

    /// The fluid model has no phase that can move upward.
    #[error("fluid model has no up-moving phases")]
    NoUpPhases,

    /// The two closed forms of the coupling constants r_k disagree,
    /// signalling a numerical failure upstream.
    #[error("inconsistent r_k at phase {phase}: {detail}")]
    InconsistentR { phase: usize, detail: String },

    /// A phase or grid index is out of range.
    #[error("index out of range: {0}")]
    IndexOutOfRange(String),

    /// An argument lies outside the operation's domain.
    #[error("domain error: {0}")]
    Domain(String),
}

pub type Result<T> = std::result::Result<T, Error>;
