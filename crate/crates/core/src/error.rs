use alloc::string::String;

use crate::model::NodeId;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("node {0} has no free slave slot")]
    SlotExhausted(NodeId),
    #[error("topology error: {0}")]
    Topology(String),
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("invalid scenario: {field}: {reason}")]
    ScenarioInvalid { field: String, reason: String },
    #[error(
        "scenario generation failed after {attempts} attempts; try a larger area or more nodes"
    )]
    GenerationFailed { attempts: u32 },
    #[error("no trial joined the network; nothing to aggregate")]
    NoJoinedTrials,
}

impl Error {
    pub(crate) fn scenario(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::ScenarioInvalid {
            field: field.into(),
            reason: reason.into(),
        }
    }
}
