use thiserror::Error;

use crate::expr::ParseError;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("cannot parse {location}: {source}")]
    Expression { location: String, source: ParseError },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("{what} is singular at t = {t}")]
    Singular { what: String, t: f64 },

    #[error("{what} is not symmetric (asymmetry {asymmetry:e})")]
    NotSymmetric { what: String, asymmetry: f64 },

    #[error("{what} is not positive {kind} at t = {t}")]
    NotPositive { what: String, kind: &'static str, t: f64 },

    #[error("graph has a self-loop on node {0}")]
    SelfLoop(usize),

    #[error("graph has duplicate edge ({0}, {1})")]
    DuplicateEdge(usize, usize),

    #[error("unknown node id {node} (graph has {count} nodes)")]
    UnknownNode { node: usize, count: usize },

    #[error("graph is not connected")]
    Disconnected,

    #[error("node {node} is missing a message from neighbor {neighbor}")]
    MissingNeighborMessage { node: usize, neighbor: usize },

    #[error("node {node} received a message from non-neighbor {sender}")]
    UnexpectedMessage { node: usize, sender: usize },

    #[error("numerical failure at step {step} (t = {t}): {what}")]
    Numerical { what: String, step: usize, t: f64 },

    #[error("did not converge: {0}")]
    NonConvergence(String),

    #[error("realization {index} failed: {source}")]
    Realization { index: usize, source: Box<Error> },

    #[error("scenario: {0}")]
    Scenario(String),

    #[error("malformed message: {0}")]
    Message(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter { name, reason: reason.into() }
}
