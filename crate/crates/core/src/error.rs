use alloc::boxed::Box;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

/// Pipeline stage that produced an error inside [`crate::estimator::estimate`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Counts,
    Scale,
    Svd,
    Score,
    VertexHunting,
    Weights,
    AssembleV,
    RecoverU,
    Anchors,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Counts => "counts",
            Stage::Scale => "scale_counts",
            Stage::Svd => "top_r_svd",
            Stage::Score => "score_normalize",
            Stage::VertexHunting => "hunt_vertices",
            Stage::Weights => "solve_weights",
            Stage::AssembleV => "assemble_v",
            Stage::RecoverU => "recover_u",
            Stage::Anchors => "detect_anchors",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("state {state} out of range for p = {p}")]
    StateOutOfRange { state: usize, p: usize },

    #[error("stationary distribution did not converge after {iterations} iterations (residual {residual:e})")]
    NonConvergent { iterations: usize, residual: f64 },

    #[error("chain not mixed within {0} steps")]
    NotMixedBy(usize),

    #[error("state {0} has no outgoing transitions; use smoothing or drop it")]
    EmptyRow(usize),

    #[error("states never entered (zero column mass): {0:?}; pass --drop-unvisited or --smoothing")]
    ZeroColumn(Vec<usize>),

    #[error("{invalid} of {total} rows have a vanishing leading singular-vector entry")]
    TooManyInvalid { invalid: usize, total: usize },

    #[error("degenerate data: residuals collapsed after {picked} of {wanted} vertex picks")]
    DegenerateData { picked: usize, wanted: usize },

    #[error("vertex system is numerically singular")]
    SingularSystem,

    #[error("column {0} of the disaggregation estimate is identically zero")]
    EmptyVColumn(usize),

    #[error("Gram matrix of the disaggregation estimate is singular")]
    SingularGram,

    #[error("sweep aborted: cell (p = {p}, n = {n}) failed {failed} of {reps} replications")]
    SweepAborted { p: usize, n: u64, failed: usize, reps: usize },

    #[error("{stage}: {source}")]
    Stage { stage: Stage, source: Box<Error> },
}

impl Error {
    pub(crate) fn at(self, stage: Stage) -> Error {
        Error::Stage { stage, source: Box::new(self) }
    }

    /// Innermost error, with stage labels peeled off.
    pub fn root(&self) -> &Error {
        match self {
            Error::Stage { source, .. } => source.root(),
            e => e,
        }
    }

    /// Whether the failure is numerical (as opposed to bad input data).
    pub fn is_numerical(&self) -> bool {
        matches!(
            self.root(),
            Error::NonConvergent { .. }
                | Error::NotMixedBy(_)
                | Error::TooManyInvalid { .. }
                | Error::DegenerateData { .. }
                | Error::SingularSystem
                | Error::EmptyVColumn(_)
                | Error::SingularGram
                | Error::SweepAborted { .. }
        )
    }
}

pub type Result<T> = core::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
