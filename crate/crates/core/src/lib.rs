//! ZnG GPU-SSD memory hierarchy simulator.

pub mod cache;
pub mod clock;
pub mod config;
pub mod engine;
pub mod error;
pub mod ftl;
pub mod gc;
pub mod interconnect;
pub mod trace;
pub mod znand;
