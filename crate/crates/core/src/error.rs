use thiserror::Error;

/// Errors produced anywhere in the prediction pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid scene: {0}")]
    InvalidScene(String),
    #[error("anchor agent {0} has no valid present state")]
    UnusableAnchor(usize),
    #[error("scene has no agent with a valid present state")]
    NoValidAgents,
    #[error("footprint width must be positive, got {0}")]
    NonPositiveWidth(f64),
    #[error("agent {0} has no future trajectory")]
    MissingFuture(usize),
    #[error("self-loop on node {0}")]
    SelfLoop(usize),
    #[error("graph contains a cycle")]
    CycleDetected,
    #[error("node {node} out of range for graph with {n_nodes} nodes")]
    UnknownNode { node: usize, n_nodes: usize },
    #[error("malformed probability vector for pair ({m}, {n}): {reason}")]
    MalformedProbabilities { m: usize, n: usize, reason: String },
    #[error("shape mismatch in {context}: expected {expected}, got {actual}")]
    ShapeMismatch {
        context: &'static str,
        expected: String,
        actual: String,
    },
    #[error("graph attention needs at least one parent message")]
    EmptyParents,
    #[error("agent {0} has no valid past velocity")]
    NoValidVelocity(usize),
    #[error("agent mismatch: {0}")]
    AgentMismatch(String),
    #[error("training diverged: {0}")]
    Divergence(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn shape_mismatch(context: &'static str, expected: impl ToString, actual: impl ToString) -> Error {
    Error::ShapeMismatch {
        context,
        expected: expected.to_string(),
        actual: actual.to_string(),
    }
}
