use thiserror::Error;

use crate::composition::CompositionError;
use crate::engine::EngineError;
use crate::registry::RegistryError;
use crate::topology::{FlowTableError, TopologyError};

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Registry(#[from] RegistryError),
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error(transparent)]
    FlowTable(#[from] FlowTableError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Composition(#[from] CompositionError),
    #[error("unknown selection policy `{0}`")]
    UnknownPolicy(String),
    #[error("invalid scenario: {0}")]
    Scenario(String),
    #[error("internal invariant violated: {0}")]
    Invariant(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Broken simulation state, as opposed to bad input.
    pub fn is_invariant_violation(&self) -> bool {
        matches!(self, Error::Invariant(_) | Error::Engine(_))
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
