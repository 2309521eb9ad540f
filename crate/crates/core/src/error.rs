//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by graph construction, operator assembly, spectral
/// routines, training, and file I/O.
#[derive(Debug, Error)]
pub enum Error {
    /// Self-loop in an edge list; the coboundary of a self-loop is not defined.
    #[error("self-loop at node {node}: edges must join distinct nodes")]
    SelfLoop { node: usize },

    /// Edge endpoint outside `0..num_nodes`.
    #[error("node index {node} out of range for graph with {num_nodes} nodes")]
    NodeOutOfRange { node: usize, num_nodes: usize },

    /// Operand shapes do not line up (stalk dim, channels, node count, ...).
    #[error("shape mismatch: {context} (expected {expected}, found {found})")]
    ShapeMismatch {
        context: &'static str,
        expected: String,
        found: String,
    },

    /// Wrong number of parameters for a restriction-map family.
    #[error("map family {kind} with stalk dim {d} takes {expected} parameters, got {found}")]
    ParamCount {
        kind: &'static str,
        d: usize,
        expected: usize,
        found: usize,
    },

    /// A diagonal block of a Laplacian has an eigenvalue below -1e-10.
    #[error("PSD violation: diagonal block of node {node} has eigenvalue {eigenvalue:.3e}")]
    PsdViolation { node: usize, eigenvalue: f64 },

    /// Dense spectral oracle refuses matrices above its capacity.
    #[error("dense oracle supports operators up to dimension {max}, got {dim}")]
    OracleCapacity { dim: usize, max: usize },

    /// Spectral rescaling needs a strictly positive lambda_max.
    #[error("rescale requires lambda_max > 0, got {lambda_max}")]
    RescaleDomain { lambda_max: f64 },

    /// A first-order diffusion target is outside the open parameter region
    /// the layer can realize.
    #[error("target not representable: {reason}")]
    Representability { reason: String },

    /// Cayley transform hit a singular (I + S); impossible for real
    /// skew-symmetric S but kept as a guard.
    #[error("Cayley transform: (I + S) is numerically singular")]
    CayleySingular,

    /// A tensor picked up NaN or infinity; `context` names it.
    #[error("non-finite value in {context}")]
    NonFinite { context: &'static str },

    /// Experiment/model configuration is invalid. CLI exit code 2.
    #[error("config error: {0}")]
    Config(String),

    /// Dataset files are missing or malformed. CLI exit code 3.
    #[error("dataset error: {0}")]
    Dataset(String),

    /// Estimated operator memory exceeds the configured budget.
    #[error("operator memory {needed_bytes} bytes exceeds budget {budget_bytes} bytes")]
    OutOfMemoryBudget { needed_bytes: u64, budget_bytes: u64 },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
