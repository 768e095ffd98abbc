//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Error, Debug, Clone, PartialEq)]
pub enum Error {
    #[error("malformed form: {0}")]
    MalformedForm(String),
    #[error("unbound constant `{0}`")]
    UnboundConstant(String),
    #[error("unsupported integrand: {0}")]
    UnsupportedIntegrand(String),
    #[error("unsupported degree {degree} (supported range 1..=4)")]
    UnsupportedDegree { degree: usize },
    #[error("rank count {ranks} exceeds the {slabs} grid slabs available")]
    RankCountExceedsSlabs { ranks: usize, slabs: usize },
    #[error("unknown facet marker {0}")]
    UnknownMarker(u8),
    #[error("degenerate cell: |det J| = {det_j:.3e} below tolerance")]
    DegenerateCell { det_j: f64 },
    #[error("ghost entries are stale; run a halo exchange first")]
    StaleGhosts,
    #[error("vector layout mismatch: {0}")]
    LayoutMismatch(String),
    #[error("singular matrix: zero pivot at elimination step {step}")]
    SingularMatrix { step: usize },
    #[error("singular patch matrix around vertex {vertex}")]
    SingularPatch { vertex: usize },
    #[error(
        "coarse problem has {dofs} dofs, above the dense-LU cap of {cap}; \
         add multigrid levels to coarsen further or raise `pc_lu_max_dofs`"
    )]
    CoarseProblemTooLarge { dofs: usize, cap: usize },
    #[error("unknown option `{key}`; supported keys:\n{supported}")]
    UnknownOption { key: String, supported: String },
    #[error("invalid value `{value}` for option `{key}`: {hint}")]
    InvalidValue {
        key: String,
        value: String,
        hint: String,
    },
    #[error("solver requested a mesh hierarchy but none was supplied")]
    MissingHierarchy,
    #[error("telescope reduction factor {factor} does not divide the team size {team}")]
    BadTelescopeFactor { factor: usize, team: usize },
    #[error("solve diverged: residual {residual:.3e} above tolerance after {iterations} iterations")]
    DivergedMaxIts { iterations: usize, residual: f64 },
    #[error("operator is not symmetric positive definite: {0}")]
    IndefiniteOperator(String),
    #[error("rank {rank} aborted the team: {message}")]
    TeamAborted { rank: usize, message: String },
    #[error("collective order violation: {0}")]
    CollectiveOrderViolation(String),
    #[error("Amdahl fit needs at least 2 distinct processor counts")]
    DegenerateFit,
    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
