//! GPU-side flash controllers, the commands they sequence, and the mesh
//! flash network.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};

use crate::clock::Cycle;
use crate::config::Geometry;
use crate::ftl::{FlashAddress, PageKey};
use crate::znand::{FlashTimes, PAGE_BYTES};

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ControllerStats {
    pub requests: u64,
    pub stalls: u64,
    pub stall_cycles: u64,
    pub max_occupancy: usize,
}

/// A flash controller on the GPU interconnect with a bounded request queue.
#[derive(Debug, Clone)]
pub struct FlashController {
    pub id: u32,
    depth: usize,
    departures: BinaryHeap<Reverse<Cycle>>,
    pub stats: ControllerStats,
}

impl FlashController {
    pub fn new(id: u32, depth: usize) -> Self {
        Self { id, depth: depth.max(1), departures: BinaryHeap::new(), stats: ControllerStats::default() }
    }

    /// Admits a request arriving at `now`; when the queue is full it waits
    /// for the earliest departure. Pair every call with [`Self::depart`].
    pub fn admit(&mut self, now: Cycle) -> Cycle {
        while self.departures.peek().is_some_and(|d| d.0 <= now) {
            self.departures.pop();
        }
        self.stats.requests += 1;
        
        if self.departures.len() < self.depth {
            now
        } else {
            let Reverse(t) = self.departures.pop().expect("full queue");
            self.stats.stalls += 1;
            self.stats.stall_cycles += t - now;
            t
        }
    }

    pub fn depart(&mut self, at: Cycle) {
        self.departures.push(Reverse(at));
        self.stats.max_occupancy = self.stats.max_occupancy.max(self.departures.len());
    }

    pub fn occupancy(&self) -> usize {
        self.departures.len()
    }
}

/// Controller serving a flash channel.
pub fn dispatch(addr: &FlashAddress, controllers: u32) -> u32 {
    addr.channel % controllers.max(1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CommandKind {
    ReadArray,
    Program,
    Erase,
    RegRead,
    RegWrite,
    RegMove,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FlashCommand {
    pub kind: CommandKind,
    pub addr: FlashAddress,
    pub key: PageKey,
    pub bytes: u64,
}

/// What the controller must do for one request.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CommandRequest {
    Read { register_hit: bool, bytes: u64 },
    Write { bytes: u64 },
    Prefetch { bytes: u64 },
    /// A register eviction programming its page.
    Writeback,
}

pub fn sequence(req: CommandRequest, addr: FlashAddress, key: PageKey) -> Vec<FlashCommand> {
    let cmd = |kind, bytes| FlashCommand { kind, addr, key, bytes };
    match req {
        CommandRequest::Read { register_hit: true, bytes } => vec![cmd(CommandKind::RegRead, bytes)],
        CommandRequest::Read { register_hit: false, bytes } | CommandRequest::Prefetch { bytes } => {
            vec![cmd(CommandKind::ReadArray, PAGE_BYTES), cmd(CommandKind::RegRead, bytes)]
        }
        CommandRequest::Write { bytes } => vec![cmd(CommandKind::RegWrite, bytes)],
        CommandRequest::Writeback => vec![cmd(CommandKind::Program, PAGE_BYTES)],
    }
}

/// Unloaded service time of a command list executed back to back.
pub fn command_latency(cmds: &[FlashCommand], times: &FlashTimes) -> Cycle {
    cmds.iter()
        .map(|c| match c.kind {
            CommandKind::ReadArray => times.read,
            CommandKind::Program => times.program,
            CommandKind::Erase => times.erase,
            CommandKind::RegRead | CommandKind::RegWrite | CommandKind::RegMove => times.transfer(c.bytes),
        })
        .sum()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinkStats {
    pub bytes: u64,
    pub busy_cycles: u64,
}

/// A 2D mesh with dimension-ordered (X then Y) routing. Links are directed
/// and serialize `width` bytes per cycle; a message pays the hop latency
/// per link and its serialization once (cut-through).
#[derive(Debug, Clone)]
pub struct MeshNetwork {
    cols: u32,
    rows: u32,
    hop: Cycle,
    width: u64,
    busy: Vec<Cycle>,
    pub links: Vec<LinkStats>,
}

const DIRS: usize = 4;

impl MeshNetwork {
    pub fn new(cols: u32, rows: u32, hop: Cycle, width: u64) -> Self {
        let n = (cols * rows) as usize * DIRS;
        Self { cols, rows, hop, width: width.max(1), busy: vec![0; n], links: vec![LinkStats::default(); n] }
    }

    /// Smallest near-square mesh holding `nodes` nodes.
    pub fn for_nodes(nodes: u32, hop: Cycle, width: u64) -> Self {
        let cols = (nodes as f64).sqrt().ceil().max(1.0) as u32;
        let rows = nodes.div_ceil(cols).max(1);
        Self::new(cols, rows, hop, width)
    }

    pub fn nodes(&self) -> u32 {
        self.cols * self.rows
    }

    fn coords(&self, node: u32) -> (u32, u32) {
        (node % self.cols, node / self.cols)
    }

    /// Directed links along the XY path from `src` to `dst`.
    pub fn path(&self, src: u32, dst: u32) -> Vec<usize> {
        let (mut x, mut y) = self.coords(src);
        let (dx, dy) = self.coords(dst);
        let mut out = Vec::new();
        while x != dx {
            let dir = if dx > x { 0 } else { 1 };
            out.push((y * self.cols + x) as usize * DIRS + dir);
            x = if dx > x { x + 1 } else { x - 1 };
        }
        while y != dy {
            let dir = if dy > y { 2 } else { 3 };
            out.push((y * self.cols + x) as usize * DIRS + dir);
            y = if dy > y { y + 1 } else { y - 1 };
        }
        out
    }

    pub fn serialization(&self, bytes: u64) -> Cycle {
        bytes.div_ceil(self.width)
    }

    /// Sends `bytes` from `src` to `dst` at `now`; returns the arrival time.
    pub fn route(&mut self, now: Cycle, src: u32, dst: u32, bytes: u64) -> Cycle {
        let ser = self.serialization(bytes);
        let mut t = now;
        for link in self.path(src, dst) {
            let start = t.max(self.busy[link]);
            self.busy[link] = start + ser;
            self.links[link].bytes += bytes;
            self.links[link].busy_cycles += ser;
            t = start + self.hop;
        }
        t + ser
    }

    pub fn max_link_busy(&self) -> u64 {
        self.links.iter().map(|l| l.busy_cycles).max().unwrap_or(0)
    }
}

/// Peak array-side read bandwidth (all planes streaming pages) against one
/// channel's bandwidth, in bytes per second.
pub fn aggregate_bandwidth(geo: &Geometry, times: &FlashTimes, hz: f64) -> (f64, f64) {
    let array = geo.total_planes() as f64 * PAGE_BYTES as f64 / (times.read as f64 / hz);
    let channel = PAGE_BYTES as f64 / (times.xfer_page as f64 / hz);
    (array, channel)
}
