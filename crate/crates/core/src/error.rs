use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A flow would move amplitude past the simulated truncation.
    #[error("truncation overflow: basis index {index} couples to {partner} outside dimension {dim}")]
    TruncationOverflow {
        index: usize,
        partner: usize,
        dim: usize,
    },

    #[error("internal consistency failure: {0}")]
    Consistency(String),

    /// No admissible lifted time up to the search cap.
    #[error("decoupling search exhausted at s_max = {s_max}: best s = {best_s} with bound {best_bound:.3e} (eps {eps:.3e}){}", segment.map(|k| format!(", plan segment {k}")).unwrap_or_default())]
    SearchExhausted {
        s_max: u64,
        best_s: u64,
        best_bound: f64,
        eps: f64,
        segment: Option<usize>,
    },

    #[error("search cancelled at s = {0}")]
    Cancelled(u64),

    #[error("theorem contract violated: {0}")]
    Contract(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidInput(msg.into())
}
