//! Binary and plain-text trace files.
//!
//! Binary layout (little-endian): `"ZNGT"`, version `u16`, record count
//! `u64`, then 32-byte records of `issue_cycle u64, vaddr u64, pc u64,
//! warp_id u16, app_id u8, op u8` followed by 4 reserved zero bytes.
//!
//! Text layout: one `cycle op vaddr pc warp app` record per line, `#` starts
//! a comment. `op` is `R`/`W` (or `read`/`write`, `0`/`1`); numbers may be
//! decimal or `0x` hex.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{validate, MemoryRequest, Op};
use crate::error::TraceError;

pub const TRACE_MAGIC: [u8; 4] = *b"ZNGT";
pub const TRACE_VERSION: u16 = 1;
const HEADER_BYTES: usize = 14;
const RECORD_BYTES: usize = 32;

pub fn write_binary<W: Write>(mut out: W, trace: &[MemoryRequest]) -> Result<(), TraceError> {
    out.write_all(&TRACE_MAGIC)?;
    out.write_all(&TRACE_VERSION.to_le_bytes())?;
    out.write_all(&(trace.len() as u64).to_le_bytes())?;
    let mut rec = [0u8; RECORD_BYTES];
    for r in trace {
        rec[0..8].copy_from_slice(&r.issue_cycle.to_le_bytes());
        rec[8..16].copy_from_slice(&r.vaddr.to_le_bytes());
        rec[16..24].copy_from_slice(&r.pc.to_le_bytes());
        rec[24..26].copy_from_slice(&r.warp_id.to_le_bytes());
        rec[26] = r.app_id;
        rec[27] = r.op.code();
        out.write_all(&rec)?;
    }
    out.flush()?;
    Ok(())
}

/// Writes `trace` in the binary format.
pub fn write_trace(path: &Path, trace: &[MemoryRequest]) -> Result<(), TraceError> {
    write_binary(BufWriter::new(File::create(path)?), trace)
}

pub fn read_binary<R: Read>(mut input: R) -> Result<Vec<MemoryRequest>, TraceError> {
    let mut header = [0u8; HEADER_BYTES];
    input.read_exact(&mut header).map_err(|_| TraceError::Parse {
        record: 0,
        msg: "truncated header".into(),
    })?;
    if header[0..4] != TRACE_MAGIC {
        return Err(TraceError::Parse { record: 0, msg: "bad magic".into() });
    }
    let version = u16::from_le_bytes([header[4], header[5]]);
    if version != TRACE_VERSION {
        return Err(TraceError::Parse { record: 0, msg: format!("unsupported version {version}") });
    }
    let count = u64::from_le_bytes(header[6..14].try_into().unwrap());
    // Cap the pre-allocation; a corrupt count must not exhaust memory.
    let mut trace = Vec::with_capacity(count.min(1 << 20) as usize);
    let mut rec = [0u8; RECORD_BYTES];
    for i in 0..count {
        input.read_exact(&mut rec).map_err(|_| TraceError::Parse {
            record: i,
            msg: format!("truncated: header promises {count} records"),
        })?;
        let u64_at = |o: usize| u64::from_le_bytes(rec[o..o + 8].try_into().unwrap());
        let op = Op::from_code(rec[27]).ok_or_else(|| TraceError::Parse {
            record: i,
            msg: format!("op code {} is not 0 (read) or 1 (write)", rec[27]),
        })?;
        trace.push(MemoryRequest {
            issue_cycle: u64_at(0),
            vaddr: u64_at(8),
            pc: u64_at(16),
            warp_id: u16::from_le_bytes([rec[24], rec[25]]),
            app_id: rec[26],
            op,
        });
    }
    let mut extra = [0u8; 1];
    if input.read(&mut extra)? != 0 {
        return Err(TraceError::Parse {
            record: count,
            msg: format!("trailing data after {count} records"),
        });
    }
    validate(&trace)?;
    Ok(trace)
}

fn parse_num(tok: &str, record: u64, field: &str) -> Result<u64, TraceError> {
    let parsed = match tok.strip_prefix("0x").or_else(|| tok.strip_prefix("0X")) {
        Some(hex) => u64::from_str_radix(hex, 16),
        None => tok.parse(),
    };
    parsed.map_err(|_| TraceError::Parse { record, msg: format!("bad {field} `{tok}`") })
}

pub fn read_text<R: Read>(input: R) -> Result<Vec<MemoryRequest>, TraceError> {
    let mut text = String::new();
    BufReader::new(input).read_to_string(&mut text)?;
    let mut trace = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        // Errors report the 1-based line number.
        let record = lineno as u64 + 1;
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.len() != 6 {
            return Err(TraceError::Parse {
                record,
                msg: format!("expected 6 fields `cycle op vaddr pc warp app`, got {}", toks.len()),
            });
        }
        let op = match toks[1] {
            "R" | "r" | "read" | "0" => Op::Read,
            "W" | "w" | "write" | "1" => Op::Write,
            other => {
                return Err(TraceError::Parse { record, msg: format!("bad op `{other}`") });
            }
        };
        let warp = parse_num(toks[4], record, "warp")?;
        let app = parse_num(toks[5], record, "app")?;
        if warp > u16::MAX as u64 || app > u8::MAX as u64 {
            return Err(TraceError::Parse { record, msg: "warp or app id out of range".into() });
        }
        trace.push(MemoryRequest {
            issue_cycle: parse_num(toks[0], record, "cycle")?,
            op,
            vaddr: parse_num(toks[2], record, "vaddr")?,
            pc: parse_num(toks[3], record, "pc")?,
            warp_id: warp as u16,
            app_id: app as u8,
        });
    }
    validate(&trace)?;
    Ok(trace)
}

/// Loads a trace file, detecting the binary format by its magic.
pub fn load_trace(path: &Path) -> Result<Vec<MemoryRequest>, TraceError> {
    let mut file = File::open(path)?;
    let mut magic = [0u8; 4];
    let n = file.read(&mut magic)?;
    let file = File::open(path)?;
    if n == 4 && magic == TRACE_MAGIC {
        read_binary(BufReader::new(file))
    } else {
        read_text(file)
    }
}
