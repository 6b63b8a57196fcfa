//! The three end-to-end services built on the access protocol: entanglement
//! based key distribution, blind delegated computation and distributed phase
//! sensing. Each has a pure core that is easy to test in isolation and an
//! async runner that drives it through sessions and classical messages.

pub mod qkd;
pub mod sensing;
pub mod ubqc;

use thiserror::Error;

use crate::netmodel::NodeId;
use crate::protocol::{Pctx, ProtoError};
use crate::qcore::QError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AppError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("inputs have different lengths ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("session could not supply resources: {0}")]
    Session(String),
    #[error(transparent)]
    Protocol(#[from] ProtoError),
    #[error(transparent)]
    Resource(#[from] QError),
}

/// Record the end of a service run. `parties` must all have been reachable
/// for the final classical step.
pub(crate) fn service_complete(ctx: &Pctx, app: &str, parties: &[&NodeId], outcome: &str) {
    let names: Vec<&str> = parties.iter().map(|p| p.as_str()).collect();
    ctx.trace(
        parties[0].as_str(),
        "service_complete",
        [("app", app.to_owned()), ("parties", names.join(",")), ("outcome", outcome.to_owned())],
    );
}
