//! Shared L2: banked set-associative tags extended with prefetch/accessed
//! bits, and the pinned ways that absorb writes when flash registers thrash.
//!
//! Lines are indexed by a stable logical line id. Demand and prefetch fills
//! are clean; only writes into the pinned ways make a line dirty.

mod predictor;

use serde::{Deserialize, Serialize};

pub use predictor::{AccessMonitor, GranularityChange, Prediction, Predictor, MAX_GRANULARITY, MIN_GRANULARITY};

use crate::clock::Cycle;
use crate::config::L2Config;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct TagEntry {
    pub line: u64,
    pub valid: bool,
    pub lru: u64,
    pub prefetch: bool,
    pub accessed: bool,
    pub pinned: bool,
    pub dirty: bool,
    /// Sector version held by the line.
    pub version: u64,
    /// Data arrives at this cycle (in-flight fills merge like an MSHR).
    pub ready_at: Cycle,
    pub app: u8,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Lookup {
    Hit { ready: Cycle, version: u64, pending: bool },
    Miss { bank_free: Cycle },
}

/// A dirty pinned line pushed out of the cache.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DirtyLine {
    pub line: u64,
    pub version: u64,
    pub app: u8,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheStats {
    pub hits: u64,
    pub misses: u64,
    pub pending_hits: u64,
    pub fills: u64,
    pub evictions: u64,
    pub prefetch_fills: u64,
    pub prefetch_used: u64,
    pub prefetch_wasted: u64,
    pub pinned_writes: u64,
    pub pinned_evictions: u64,
}

const LINES_PER_PAGE: u64 = 32;

#[derive(Debug, Clone)]
pub struct L2Cache {
    cfg: L2Config,
    sets_per_bank: u64,
    tags: Vec<TagEntry>,
    bank_busy: Vec<Cycle>,
    pinned_ways: u32,
    pinned: bool,
    clock: u64,
    pub stats: CacheStats,
    pub monitor: Option<AccessMonitor>,
}

impl L2Cache {
    pub fn new(cfg: L2Config, pinned_ways: u32) -> Self {
        let sets = cfg.sets_per_bank().max(1);
        let n = (sets * cfg.banks as u64 * cfg.ways as u64) as usize;
        Self {
            cfg,
            sets_per_bank: sets,
            tags: vec![TagEntry::default(); n],
            bank_busy: vec![0; cfg.banks as usize],
            pinned_ways: pinned_ways.min(cfg.ways.saturating_sub(1)),
            pinned: false,
            clock: 0,
            stats: CacheStats::default(),
            monitor: None,
        }
    }

    pub fn with_monitor(mut self, monitor: AccessMonitor) -> Self {
        self.monitor = Some(monitor);
        self
    }

    pub fn config(&self) -> &L2Config {
        &self.cfg
    }

    pub fn bank_of(&self, line: u64) -> usize {
        (line % self.cfg.banks as u64) as usize
    }

    fn set_range(&self, line: u64) -> std::ops::Range<usize> {
        // A 4 KB page keeps its 32 lines in consecutive sets; the page number
        // is XOR-folded so pages a power-of-two stride apart do not alias.
        let frames = (self.sets_per_bank * self.cfg.banks as u64 / LINES_PER_PAGE).max(1);
        let page = line / LINES_PER_PAGE;
        let folded = (page ^ (page / frames) ^ (page / frames / frames)) * LINES_PER_PAGE + line % LINES_PER_PAGE;
        let bank = folded % self.cfg.banks as u64;
        let set = (folded / self.cfg.banks as u64) % self.sets_per_bank;
        let first = ((bank * self.sets_per_bank + set) * self.cfg.ways as u64) as usize;
        first..first + self.cfg.ways as usize
    }

    fn find(&self, line: u64) -> Option<usize> {
        self.set_range(line).find(|&i| self.tags[i].valid && self.tags[i].line == line)
    }

    pub fn contains(&self, line: u64) -> bool {
        self.find(line).is_some()
    }

    pub fn entry(&self, line: u64) -> Option<&TagEntry> {
        self.find(line).map(|i| &self.tags[i])
    }

    /// Occupies `line`'s bank for `occupancy` cycles from `now` and returns
    /// when the access starts.
    fn use_bank(&mut self, now: Cycle, line: u64, occupancy: Cycle) -> Cycle {
        let b = self.bank_of(line);
        let start = now.max(self.bank_busy[b]);
        self.bank_busy[b] = start + occupancy;
        start
    }

    pub fn is_pinned(&self) -> bool {
        self.pinned
    }

    /// Demand read of one line.
    pub fn read(&mut self, now: Cycle, line: u64) -> Lookup {
        let lat = self.cfg.read_cycles;
        let start = self.use_bank(now, line, lat);
        self.clock += 1;
        match self.find(line) {
            Some(i) => {
                let e = &mut self.tags[i];
                e.lru = self.clock;
                if e.prefetch && !e.accessed {
                    self.stats.prefetch_used += 1;
                }
                e.accessed = true;
                let pending = e.ready_at > start + lat;
                self.stats.hits += 1;
                if pending {
                    self.stats.pending_hits += 1;
                }
                Lookup::Hit { ready: (start + lat).max(e.ready_at), version: e.version, pending }
            }
            None => {
                self.stats.misses += 1;
                Lookup::Miss { bank_free: start + lat }
            }
        }
    }

    /// Way indices usable by ordinary fills in a set.
    fn fill_ways(&self, range: std::ops::Range<usize>) -> std::ops::Range<usize> {
        if self.pinned {
            range.start + self.pinned_ways as usize..range.end
        } else {
            range
        }
    }

    fn evict_slot(&mut self, i: usize) -> Option<DirtyLine> {
        let e = self.tags[i];
        if !e.valid {
            return None;
        }
        self.stats.evictions += 1;
        if e.prefetch && !e.accessed {
            self.stats.prefetch_wasted += 1;
        }
        if let Some(m) = &mut self.monitor {
            m.on_evict(e.prefetch, e.accessed);
        }
        self.tags[i].valid = false;
        e.dirty.then_some(DirtyLine { line: e.line, version: e.version, app: e.app })
    }

    /// Installs a clean line whose data arrives at `ready_at`. Returns when
    /// the array write finishes. Existing copies are refreshed in place.
    /// Fills land in the future, so they pay the write latency without
    /// reserving the bank ahead of earlier accesses.
    pub fn fill(&mut self, now: Cycle, line: u64, version: u64, ready_at: Cycle, prefetch: bool, app: u8) -> Cycle {
        let done = now.max(ready_at) + self.cfg.write_cycles;
        self.clock += 1;
        if let Some(i) = self.find(line) {
            let e = &mut self.tags[i];
            if !e.dirty {
                e.version = version;
                e.ready_at = e.ready_at.min(done);
            }
            return done;
        }
        let range = self.fill_ways(self.set_range(line));
        let way = range
            .clone()
            .find(|&i| !self.tags[i].valid)
            .unwrap_or_else(|| range.clone().min_by_key(|&i| self.tags[i].lru).expect("set has ways"));
        let dirty = self.evict_slot(way);
        debug_assert!(dirty.is_none(), "ordinary ways never hold dirty lines");
        self.tags[way] = TagEntry {
            line,
            valid: true,
            lru: self.clock,
            prefetch,
            accessed: false,
            pinned: false,
            dirty: false,
            version,
            ready_at: done,
            app,
        };
        self.stats.fills += 1;
        if prefetch {
            self.stats.prefetch_fills += 1;
        }
        done
    }

    /// Drops a clean copy of `line` after a write bypassed the cache.
    pub fn invalidate(&mut self, line: u64) {
        if let Some(i) = self.find(line) {
            debug_assert!(!self.tags[i].dirty);
            if self.tags[i].prefetch && !self.tags[i].accessed {
                self.stats.prefetch_wasted += 1;
            }
            self.tags[i].valid = false;
        }
    }

    /// Reserves the pinned ways. Clean lines living there are dropped.
    pub fn pin(&mut self) {
        if self.pinned {
            return;
        }
        self.pinned = true;
        let ways = self.cfg.ways as usize;
        for set in 0..self.tags.len() / ways {
            for w in 0..self.pinned_ways as usize {
                let i = set * ways + w;
                if self.tags[i].valid {
                    self.evict_slot(i);
                }
            }
        }
    }

    /// Releases the pinned ways, returning their dirty lines in set order.
    /// The lines stay cached as clean copies.
    pub fn unpin(&mut self) -> Vec<DirtyLine> {
        let out = self.take_dirty_where(|_| true);
        self.pinned = false;
        for e in &mut self.tags {
            e.pinned = false;
        }
        out
    }

    /// Writes `line` into the pinned region. Returns the bank completion time
    /// and a dirty line displaced to make room, if any.
    pub fn pinned_write(&mut self, now: Cycle, line: u64, version: u64, app: u8) -> (Cycle, Option<DirtyLine>) {
        debug_assert!(self.pinned);
        let done = self.use_bank(now, line, self.cfg.write_cycles) + self.cfg.write_cycles;
        self.clock += 1;
        self.stats.pinned_writes += 1;
        if let Some(i) = self.find(line) {
            if self.tags[i].pinned {
                let e = &mut self.tags[i];
                e.version = version;
                e.dirty = true;
                e.lru = self.clock;
                e.ready_at = done;
                return (done, None);
            }
            self.tags[i].valid = false;
        }
        let range = self.set_range(line);
        let pinned = range.start..range.start + self.pinned_ways as usize;
        let way = pinned
            .clone()
            .find(|&i| !self.tags[i].valid)
            .unwrap_or_else(|| pinned.clone().min_by_key(|&i| self.tags[i].lru).expect("at least one pinned way"));
        let displaced = self.evict_slot(way);
        if displaced.is_some() {
            self.stats.pinned_evictions += 1;
        }
        self.tags[way] = TagEntry {
            line,
            valid: true,
            lru: self.clock,
            prefetch: false,
            accessed: true,
            pinned: true,
            dirty: true,
            version,
            ready_at: done,
            app,
        };
        (done, displaced)
    }

    /// Cleans and returns every dirty line matching `pred`.
    pub fn take_dirty_where(&mut self, mut pred: impl FnMut(&TagEntry) -> bool) -> Vec<DirtyLine> {
        let mut out = Vec::new();
        for e in &mut self.tags {
            if e.valid && e.dirty && pred(e) {
                e.dirty = false;
                out.push(DirtyLine { line: e.line, version: e.version, app: e.app });
            }
        }
        out
    }

    pub fn dirty_lines(&self) -> usize {
        self.tags.iter().filter(|e| e.valid && e.dirty).count()
    }

    /// Prefetched lines still resident and never read.
    pub fn unused_prefetched(&self) -> u64 {
        self.tags.iter().filter(|e| e.valid && e.prefetch && !e.accessed).count() as u64
    }
}
