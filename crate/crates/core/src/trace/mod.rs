//! L2-level memory request traces.
//!
//! A trace is the post-coalescing, post-L1 request stream of one or more GPU
//! applications: every record is a single 128 B read or write carrying the
//! issuing warp and the program counter of its load/store instruction.

mod gen;
mod io;

use serde::{Deserialize, Serialize};

use crate::clock::Cycle;

pub use gen::{generate_trace, GeneratorKind, TraceSpec, Workload, APP_REGION_BYTES};
pub use io::{load_trace, read_binary, read_text, write_binary, write_trace, TRACE_MAGIC, TRACE_VERSION};

/// Size of every request; GPU L2 lines are 128 B.
pub const REQUEST_BYTES: u64 = 128;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Op {
    Read,
    Write,
}

impl Op {
    pub fn code(self) -> u8 {
        match self {
            Op::Read => 0,
            Op::Write => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<Op> {
        match code {
            0 => Some(Op::Read),
            1 => Some(Op::Write),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MemoryRequest {
    pub issue_cycle: Cycle,
    pub warp_id: u16,
    pub pc: u64,
    pub op: Op,
    pub vaddr: u64,
    pub app_id: u8,
}

impl MemoryRequest {
    pub fn read(issue_cycle: Cycle, vaddr: u64) -> Self {
        Self { issue_cycle, warp_id: 0, pc: 0, op: Op::Read, vaddr, app_id: 0 }
    }

    pub fn write(issue_cycle: Cycle, vaddr: u64) -> Self {
        Self { op: Op::Write, ..Self::read(issue_cycle, vaddr) }
    }

    pub fn size(&self) -> u64 {
        REQUEST_BYTES
    }

    pub fn is_read(&self) -> bool {
        self.op == Op::Read
    }
}

/// Fraction of reads in a request stream (1.0 for an empty stream).
pub fn read_ratio(trace: &[MemoryRequest]) -> f64 {
    if trace.is_empty() {
        return 1.0;
    }
    trace.iter().filter(|r| r.is_read()).count() as f64 / trace.len() as f64
}

/// Checks the stream invariants: 128 B alignment and non-decreasing issue cycles.
pub fn validate(trace: &[MemoryRequest]) -> Result<(), crate::error::TraceError> {
    use crate::error::TraceError;
    let mut prev = 0;
    for (i, r) in trace.iter().enumerate() {
        if r.vaddr % REQUEST_BYTES != 0 {
            return Err(TraceError::Parse {
                record: i as u64,
                msg: format!("vaddr {:#x} is not 128-byte aligned", r.vaddr),
            });
        }
        if r.issue_cycle < prev {
            return Err(TraceError::NonMonotonic { record: i as u64, cycle: r.issue_cycle, prev });
        }
        prev = r.issue_cycle;
    }
    Ok(())
}
