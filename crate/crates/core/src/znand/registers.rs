//! Flash registers used as a write buffer, the topologies connecting them,
//! and the thrashing checker driving L2 write redirection.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use super::PageImage;
use crate::clock::Cycle;
use crate::config::Topology;
use crate::ftl::{LogicalPage, PlaneId};

/// A page held in a register, dirty sectors tracked by `mask`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BufferedPage {
    pub page: LogicalPage,
    /// Plane owning the page's data block.
    pub plane: PlaneId,
    pub image: PageImage,
    pub mask: u32,
}

#[derive(Debug, Clone, Copy)]
struct Slot {
    /// Plane whose die hosts this register.
    home: PlaneId,
    content: Option<BufferedPage>,
    last_use: u64,
    /// Slot cannot take new data before this cycle (hand-off in progress).
    busy_until: Cycle,
}

/// How an evicted page reaches its target plane.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum WritebackPath {
    /// The register sits on the target plane's die.
    Local,
    /// Fully connected: any register drives any plane directly.
    Direct,
    /// Ring forward into the target plane's data register.
    NifForward { hops: u32 },
    /// Up through the channel, the switch, and back down.
    SwnetCopy,
}

/// What the caller must do to complete a register write.
#[allow(clippy::large_enum_variant)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RegisterOutcome {
    /// The page already had a slot.
    Hit { slot: usize },
    /// A free slot was taken; the write waits until `ready`.
    Allocated { slot: usize, ready: Cycle },
    /// An occupied slot was reclaimed and `victim` must be written back.
    Evict(EvictPlan),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EvictPlan {
    pub slot: usize,
    pub victim: BufferedPage,
    pub path: WritebackPath,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegisterStats {
    pub write_hits: u64,
    pub allocations: u64,
    pub evictions: u64,
    pub read_hits: u64,
    pub local_writebacks: u64,
    pub remote_writebacks: u64,
}

/// The registers of one package.
#[derive(Debug, Clone)]
pub struct RegisterGroup {
    topology: Topology,
    planes_per_package: u32,
    first_plane: u32,
    slots: Vec<Slot>,
    /// Per-plane data register transit: inbound remote write-backs pass
    /// through it one at a time.
    transit_busy: Vec<Cycle>,
    tick: u64,
    pub stats: RegisterStats,
}

impl RegisterGroup {
    /// `regs_per_plane` physical registers per plane.
    pub fn new(topology: Topology, package: u32, planes_per_package: u32, regs_per_plane: u32) -> Self {
        let first_plane = package * planes_per_package;
        let mut slots = Vec::new();
        for _ in 0..regs_per_plane.max(1) {
            for p in 0..planes_per_package {
                slots.push(Slot { home: PlaneId(first_plane + p), content: None, last_use: 0, busy_until: 0 });
            }
        }
        Self {
            topology,
            planes_per_package,
            first_plane,
            slots,
            transit_busy: vec![0; planes_per_package as usize],
            tick: 0,
            stats: RegisterStats::default(),
        }
    }

    pub fn topology(&self) -> Topology {
        self.topology
    }

    pub fn capacity(&self) -> usize {
        self.slots.len()
    }

    pub fn occupied(&self) -> usize {
        self.slots.iter().filter(|s| s.content.is_some()).count()
    }

    pub fn find(&self, page: LogicalPage) -> Option<usize> {
        self.slots.iter().position(|s| s.content.is_some_and(|c| c.page == page))
    }

    pub fn buffered(&self, slot: usize) -> Option<&BufferedPage> {
        self.slots[slot].content.as_ref()
    }

    pub fn slot_home(&self, slot: usize) -> PlaneId {
        self.slots[slot].home
    }

    pub fn slot_busy_until(&self, slot: usize) -> Cycle {
        self.slots[slot].busy_until
    }

    pub fn set_busy(&mut self, slot: usize, until: Cycle) {
        let s = &mut self.slots[slot];
        s.busy_until = s.busy_until.max(until);
    }

    /// When `plane`'s data register can take the next inbound page.
    pub fn transit_busy(&self, plane: PlaneId) -> Cycle {
        self.transit_busy[(plane.0 - self.first_plane) as usize]
    }

    pub fn set_transit_busy(&mut self, plane: PlaneId, until: Cycle) {
        let b = &mut self.transit_busy[(plane.0 - self.first_plane) as usize];
        *b = (*b).max(until);
    }

    /// Version of `sector` if a register holds it dirty.
    pub fn dirty_sector(&mut self, page: LogicalPage, sector: usize) -> Option<u64> {
        let slot = self.find(page)?;
        let c = self.slots[slot].content.expect("found slot is occupied");
        if c.mask & (1 << sector) != 0 {
            self.stats.read_hits += 1;
            Some(c.image.0[sector])
        } else {
            None
        }
    }

    pub fn path(&self, slot: usize, target: PlaneId) -> WritebackPath {
        let home = self.slots[slot].home;
        match self.topology {
            Topology::Baseline => WritebackPath::Local,
            Topology::Fcnet => WritebackPath::Direct,
            _ if home == target => WritebackPath::Local,
            Topology::Nif => {
                let n = self.planes_per_package;
                let (a, b) = (home.0 - self.first_plane, target.0 - self.first_plane);
                let fwd = (b + n - a) % n;
                WritebackPath::NifForward { hops: fwd.min(n - fwd) }
            }
            Topology::Swnet => WritebackPath::SwnetCopy,
        }
    }

    fn eligible(&self, slot: usize, target: PlaneId) -> bool {
        !matches!(self.topology, Topology::Baseline) || self.slots[slot].home == target
    }

    /// Finds or makes room for `page`. Preference order: existing slot, an
    /// idle empty slot (local plane first), the least recently used occupied
    /// slot, and finally the empty slot that frees up soonest.
    pub fn reserve(&mut self, now: Cycle, page: LogicalPage, target: PlaneId) -> RegisterOutcome {
        self.tick += 1;
        if let Some(slot) = self.find(page) {
            self.slots[slot].last_use = self.tick;
            self.stats.write_hits += 1;
            return RegisterOutcome::Hit { slot };
        }
        let candidates: Vec<usize> = (0..self.slots.len()).filter(|&i| self.eligible(i, target)).collect();
        let idle_empty = candidates
            .iter()
            .copied()
            .filter(|&i| self.slots[i].content.is_none() && self.slots[i].busy_until <= now)
            .min_by_key(|&i| (self.slots[i].home != target, i));
        let slot = match idle_empty {
            Some(i) => i,
            None => {
                let lru = candidates
                    .iter()
                    .copied()
                    .filter(|&i| self.slots[i].content.is_some())
                    .min_by_key(|&i| (self.slots[i].last_use, i));
                match lru {
                    Some(i) => {
                        let victim = self.slots[i].content.take().expect("occupied");
                        self.slots[i].last_use = self.tick;
                        self.stats.evictions += 1;
                        let path = self.path(i, victim.plane);
                        if path == WritebackPath::Local || path == WritebackPath::Direct {
                            self.stats.local_writebacks += 1;
                        } else {
                            self.stats.remote_writebacks += 1;
                        }
                        return RegisterOutcome::Evict(EvictPlan { slot: i, victim, path });
                    }
                    None => *candidates
                        .iter()
                        .min_by_key(|&&i| (self.slots[i].busy_until, i))
                        .expect("every plane owns at least one register"),
                }
            }
        };
        self.slots[slot].last_use = self.tick;
        self.stats.allocations += 1;
        RegisterOutcome::Allocated { slot, ready: now.max(self.slots[slot].busy_until) }
    }

    /// Writes one sector into `slot`, claiming the slot for `page`.
    pub fn write_sector(&mut self, slot: usize, page: LogicalPage, plane: PlaneId, sector: usize, version: u64) {
        let s = &mut self.slots[slot];
        let c = s.content.get_or_insert(BufferedPage { page, plane, image: PageImage::default(), mask: 0 });
        debug_assert_eq!(c.page, page);
        c.image.0[sector] = version;
        c.mask |= 1 << sector;
    }

    /// Installs a whole dirty page (used when flushing pinned L2 lines).
    pub fn merge_page(&mut self, slot: usize, incoming: BufferedPage) {
        let s = &mut self.slots[slot];
        match &mut s.content {
            Some(c) => {
                c.image.overlay(&incoming.image, incoming.mask);
                c.mask |= incoming.mask;
            }
            None => s.content = Some(incoming),
        }
    }

    /// Removes and returns every buffered page matching `pred`, marking the
    /// freed slots busy until `until`.
    pub fn take_where(&mut self, until: Cycle, mut pred: impl FnMut(&BufferedPage) -> bool) -> Vec<BufferedPage> {
        let mut out = Vec::new();
        for s in &mut self.slots {
            if s.content.as_ref().is_some_and(&mut pred) {
                out.push(s.content.take().expect("matched"));
                s.busy_until = s.busy_until.max(until);
            }
        }
        out
    }

    /// Removes every buffered page in slot order.
    pub fn drain(&mut self) -> Vec<(usize, BufferedPage)> {
        self.slots.iter_mut().enumerate().filter_map(|(i, s)| s.content.take().map(|c| (i, c))).collect()
    }
}

/// Eviction window statistics of the thrashing checker.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct WindowStats {
    pub evictions: usize,
    pub rewritten: usize,
    pub capacity: usize,
}

/// Thrashing when the window is full and more than `threshold` of its
/// evicted pages were written again while still in the window.
pub fn thrash_check(stats: WindowStats, threshold: f64) -> bool {
    stats.evictions > 0
        && stats.evictions >= stats.capacity
        && stats.rewritten as f64 > threshold * stats.evictions as f64
}

#[derive(Debug, Clone)]
pub struct ThrashChecker {
    window: VecDeque<(LogicalPage, bool)>,
    capacity: usize,
    threshold: f64,
}

impl ThrashChecker {
    pub fn new(capacity: usize, threshold: f64) -> Self {
        Self { window: VecDeque::with_capacity(capacity), capacity: capacity.max(1), threshold }
    }

    pub fn on_dirty_eviction(&mut self, page: LogicalPage) {
        if self.window.len() == self.capacity {
            self.window.pop_front();
        }
        self.window.push_back((page, false));
    }

    /// A register write miss: marks the page if it was recently evicted.
    pub fn on_write_miss(&mut self, page: LogicalPage) {
        if let Some(e) = self.window.iter_mut().rev().find(|e| e.0 == page) {
            e.1 = true;
        }
    }

    pub fn stats(&self) -> WindowStats {
        WindowStats {
            evictions: self.window.len(),
            rewritten: self.window.iter().filter(|e| e.1).count(),
            capacity: self.capacity,
        }
    }

    pub fn is_thrashing(&self) -> bool {
        thrash_check(self.stats(), self.threshold)
    }

    pub fn reset(&mut self) {
        self.window.clear();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lp(lbn: u32, page: u16) -> LogicalPage {
        LogicalPage { lbn, page }
    }

    #[test]
    fn baseline_slots_are_per_plane() {
        let mut g = RegisterGroup::new(Topology::Baseline, 0, 8, 2);
        assert_eq!(g.capacity(), 16);
        // A third page on plane 3 evicts even though other planes' slots are empty.
        for page in 0..2u16 {
            let RegisterOutcome::Allocated { slot, .. } = g.reserve(0, lp(0, page), PlaneId(3)) else { panic!() };
            assert_eq!(g.slot_home(slot), PlaneId(3));
            g.write_sector(slot, lp(0, page), PlaneId(3), 0, page as u64 + 1);
        }
        let RegisterOutcome::Evict(plan) = g.reserve(0, lp(0, 9), PlaneId(3)) else { panic!() };
        assert_eq!(plan.victim.page, lp(0, 0));
        assert_eq!(plan.path, WritebackPath::Local);
    }

    #[test]
    fn nif_pools_registers_across_planes() {
        let mut g = RegisterGroup::new(Topology::Nif, 1, 8, 8);
        assert_eq!(g.capacity(), 64);
        for page in 0..64u16 {
            let RegisterOutcome::Allocated { slot, .. } = g.reserve(0, lp(0, page), PlaneId(8)) else { panic!() };
            g.write_sector(slot, lp(0, page), PlaneId(8), 1, 1);
        }
        assert_eq!(g.occupied(), 64);
        let RegisterOutcome::Evict(plan) = g.reserve(0, lp(0, 99), PlaneId(8)) else { panic!() };
        assert_eq!(plan.victim.page, lp(0, 0));
        assert_eq!(g.path(plan.slot, PlaneId(8)), WritebackPath::Local);
    }

    #[test]
    fn nif_hops_take_the_short_way_round() {
        let g = RegisterGroup::new(Topology::Nif, 0, 8, 8);
        // Slot 1 lives on plane 1.
        assert_eq!(g.path(1, PlaneId(7)), WritebackPath::NifForward { hops: 2 });
        assert_eq!(g.path(1, PlaneId(4)), WritebackPath::NifForward { hops: 3 });
        let f = RegisterGroup::new(Topology::Fcnet, 0, 8, 8);
        assert_eq!(f.capacity(), 64);
        assert_eq!(f.path(1, PlaneId(7)), WritebackPath::Direct);
    }

    #[test]
    fn dirty_sector_lookup_and_hit() {
        let mut g = RegisterGroup::new(Topology::Swnet, 0, 4, 8);
        let RegisterOutcome::Allocated { slot, .. } = g.reserve(0, lp(5, 2), PlaneId(1)) else { panic!() };
        g.write_sector(slot, lp(5, 2), PlaneId(1), 7, 42);
        assert_eq!(g.dirty_sector(lp(5, 2), 7), Some(42));
        assert_eq!(g.dirty_sector(lp(5, 2), 6), None);
        assert!(matches!(g.reserve(0, lp(5, 2), PlaneId(1)), RegisterOutcome::Hit { slot: s } if s == slot));
    }

    #[test]
    fn busy_empty_slot_delays_allocation() {
        let mut g = RegisterGroup::new(Topology::Baseline, 0, 1, 1);
        let RegisterOutcome::Allocated { slot, .. } = g.reserve(0, lp(0, 0), PlaneId(0)) else { panic!() };
        g.write_sector(slot, lp(0, 0), PlaneId(0), 0, 1);
        let taken = g.take_where(500, |_| true);
        assert_eq!(taken.len(), 1);
        assert_eq!(g.reserve(100, lp(0, 1), PlaneId(0)), RegisterOutcome::Allocated { slot, ready: 500 });
    }

    #[test]
    fn thrash_threshold_is_strict() {
        let full = |rewritten| WindowStats { evictions: 64, rewritten, capacity: 64 };
        assert!(!thrash_check(full(32), 0.5));
        assert!(thrash_check(full(33), 0.5));
        assert!(!thrash_check(full(64), 1.0));
        assert!(!thrash_check(WindowStats { evictions: 10, rewritten: 10, capacity: 64 }, 0.5));
    }

    #[test]
    fn checker_detects_rewrites_in_window() {
        let mut c = ThrashChecker::new(4, 0.5);
        for p in 0..4 {
            c.on_dirty_eviction(lp(0, p));
        }
        c.on_write_miss(lp(0, 1));
        c.on_write_miss(lp(0, 2));
        assert!(!c.is_thrashing());
        c.on_write_miss(lp(0, 3));
        assert!(c.is_thrashing());
        c.on_dirty_eviction(lp(0, 8));
        assert_eq!(c.stats().rewritten, 3);
        c.reset();
        assert_eq!(c.stats().evictions, 0);
    }
}
