use std::io;

use thiserror::Error;

use crate::clock::Cycle;

/// Errors raised while reading, writing or synthesizing traces.
#[derive(Debug, Error)]
pub enum TraceError {
    #[error("trace io: {0}")]
    Io(#[from] io::Error),
    #[error("trace record {record}: {msg}")]
    Parse { record: u64, msg: String },
    #[error("trace record {record}: issue cycle {cycle} precedes previous record ({prev})")]
    NonMonotonic { record: u64, cycle: Cycle, prev: Cycle },
    #[error("trace spec: {0}")]
    Spec(String),
}

/// Errors from the whole simulator, tagged with the module that raised them.
#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error("config: {0}")]
    Config(String),
    #[error("ftl: page fault at vaddr {vaddr:#x} (app {app})")]
    PageFault { vaddr: u64, app: u8 },
    #[error("gc: capacity exhausted, no erased block left on plane {plane}")]
    CapacityExhausted { plane: u32 },
    #[error("{module}: consistency violation: {msg}")]
    Consistency { module: &'static str, msg: String },
}

impl SimError {
    pub fn consistency(module: &'static str, msg: impl Into<String>) -> Self {
        SimError::Consistency { module, msg: msg.into() }
    }

    /// Name of the module the error originated in.
    pub fn module(&self) -> &'static str {
        match self {
            SimError::Trace(_) => "trace",
            SimError::Config(_) => "config",
            SimError::PageFault { .. } => "ftl",
            SimError::CapacityExhausted { .. } => "gc",
            SimError::Consistency { module, .. } => module,
        }
    }
}

pub type Result<T, E = SimError> = std::result::Result<T, E>;
