use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Target coincides with a node or the BS, or sits on a node's array axis.
    #[error("singular geometry at node {node}: {reason}")]
    SingularGeometry { node: usize, reason: &'static str },

    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(&'static str),

    #[error("exhaustive search over C({n}, {k}) = {count} subsets exceeds the cap of {cap}; shrink N or N_max")]
    SearchCapExceeded { n: usize, k: usize, count: u128, cap: u128 },

    #[error("bisection failed: {0}")]
    Bisection(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
