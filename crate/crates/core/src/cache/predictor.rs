//! PC-based read predictor and the access monitor that tunes prefetch
//! granularity from wasted prefetches.

use serde::{Deserialize, Serialize};

use crate::config::PrefetchConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
struct WarpSlot {
    warp: Option<u16>,
    page: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct PredictorEntry {
    slots: Vec<WarpSlot>,
    next_victim: usize,
    counter: u8,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Prediction {
    pub counter: u8,
    pub prefetch: bool,
}

/// 512 entries indexed by a fold of the PC; each tracks the last page of a
/// few representative warps and one saturating counter.
#[derive(Debug, Clone)]
pub struct Predictor {
    entries: Vec<PredictorEntry>,
    counter_max: u8,
    threshold: u8,
}

impl Predictor {
    pub fn new(cfg: &PrefetchConfig) -> Self {
        let entry = PredictorEntry {
            slots: vec![WarpSlot::default(); cfg.warp_slots.max(1)],
            next_victim: 0,
            counter: 0,
        };
        Self { entries: vec![entry; cfg.predictor_entries.max(1)], counter_max: cfg.counter_max, threshold: cfg.threshold }
    }

    pub fn index(&self, pc: u64) -> usize {
        let mut x = pc >> 3;
        let mut folded = 0u64;
        while x != 0 {
            folded ^= x & 0x1ff;
            x >>= 9;
        }
        folded as usize % self.entries.len()
    }

    /// Updates the entry for `pc` with `warp` touching `page` and reports
    /// whether a miss now should prefetch.
    pub fn observe(&mut self, pc: u64, warp: u16, page: u64) -> Prediction {
        let (max, threshold) = (self.counter_max, self.threshold);
        let idx = self.index(pc);
        let e = &mut self.entries[idx];
        match e.slots.iter_mut().find(|s| s.warp == Some(warp)) {
            Some(slot) if slot.page == page => e.counter = (e.counter + 1).min(max),
            Some(slot) => {
                slot.page = page;
                e.counter = e.counter.saturating_sub(1);
            }
            None => {
                let n = e.slots.len();
                e.slots[e.next_victim] = WarpSlot { warp: Some(warp), page };
                e.next_victim = (e.next_victim + 1) % n;
                e.counter = e.counter.saturating_sub(1);
            }
        }
        Prediction { counter: e.counter, prefetch: e.counter > threshold }
    }

    pub fn counter(&self, pc: u64) -> u8 {
        self.entries[self.index(pc)].counter
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GranularityChange {
    pub epoch: u64,
    pub waste_ratio: f64,
    pub granularity: u32,
}

/// Counts evictions of prefetched lines that were never read and adapts the
/// prefetch window once per epoch of L2 misses.
#[derive(Debug, Clone)]
pub struct AccessMonitor {
    pub evict_counter: u64,
    pub unused_counter: u64,
    granularity: u32,
    high: f64,
    low: f64,
    epoch_misses: u64,
    misses: u64,
    epoch: u64,
    pub history: Vec<GranularityChange>,
}

pub const MIN_GRANULARITY: u32 = 128;
pub const MAX_GRANULARITY: u32 = 4096;

impl AccessMonitor {
    pub fn new(cfg: &PrefetchConfig) -> Self {
        Self {
            evict_counter: 0,
            unused_counter: 0,
            granularity: cfg.initial_granularity.clamp(MIN_GRANULARITY, MAX_GRANULARITY),
            high: cfg.high_threshold,
            low: cfg.low_threshold,
            epoch_misses: cfg.epoch_misses.max(1),
            misses: 0,
            epoch: 0,
            history: Vec::new(),
        }
    }

    pub fn granularity(&self) -> u32 {
        self.granularity
    }

    pub fn on_evict(&mut self, prefetched: bool, accessed: bool) {
        self.evict_counter += 1;
        if prefetched && !accessed {
            self.unused_counter += 1;
        }
    }

    pub fn waste_ratio(&self) -> f64 {
        if self.evict_counter == 0 {
            0.0
        } else {
            self.unused_counter as f64 / self.evict_counter as f64
        }
    }

    /// Counts an L2 read miss; closes the epoch when it is full.
    pub fn on_miss(&mut self) {
        self.misses += 1;
        if self.misses >= self.epoch_misses {
            self.adjust_granularity();
        }
    }

    pub fn adjust_granularity(&mut self) -> u32 {
        let ratio = self.waste_ratio();
        if ratio > self.high {
            self.granularity = (self.granularity / 2).max(MIN_GRANULARITY);
        } else if ratio < self.low {
            self.granularity = (self.granularity + 1024).min(MAX_GRANULARITY);
        }
        self.epoch += 1;
        self.history.push(GranularityChange { epoch: self.epoch, waste_ratio: ratio, granularity: self.granularity });
        self.evict_counter = 0;
        self.unused_counter = 0;
        self.misses = 0;
        self.granularity
    }

    pub fn set_granularity(&mut self, g: u32) {
        self.granularity = g.clamp(MIN_GRANULARITY, MAX_GRANULARITY);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn predictor() -> Predictor {
        Predictor::new(&PrefetchConfig::default())
    }

    #[test]
    fn first_access_takes_mismatch_path() {
        let mut p = predictor();
        assert_eq!(p.observe(0x40, 0, 7), Prediction { counter: 0, prefetch: false });
    }

    #[test]
    fn thirteen_same_page_accesses_cross_threshold() {
        let mut p = predictor();
        p.observe(0x40, 0, 7);
        for i in 1..=13u8 {
            let r = p.observe(0x40, 0, 7);
            assert_eq!(r.counter, i);
            assert_eq!(r.prefetch, i > 12);
        }
    }

    #[test]
    fn counter_saturates() {
        let mut p = predictor();
        for _ in 0..40 {
            p.observe(0x40, 1, 3);
        }
        assert_eq!(p.counter(0x40), 15);
    }

    #[test]
    fn alternating_pages_never_prefetch() {
        let mut p = predictor();
        for i in 0..100 {
            let r = p.observe(0x80, 2, if i % 2 == 0 { 10 } else { 11 });
            assert_eq!(r.counter, 0);
            assert!(!r.prefetch);
        }
    }

    #[test]
    fn sixth_warp_replaces_round_robin() {
        let mut p = predictor();
        for w in 0..5 {
            p.observe(0, w, 1);
        }
        for _ in 0..3 {
            p.observe(0, 4, 1);
        }
        assert_eq!(p.counter(0), 3);
        p.observe(0, 9, 1);
        assert_eq!(p.counter(0), 2);
        // Warp 0 lost its slot, so its next access mismatches.
        p.observe(0, 0, 1);
        assert_eq!(p.counter(0), 1);
        p.observe(0, 4, 1);
        assert_eq!(p.counter(0), 2);
    }

    #[test]
    fn pc_fold_stays_in_range() {
        let p = predictor();
        for pc in [0u64, 8, 0xdead_beef, u64::MAX] {
            assert!(p.index(pc) < 512);
        }
        assert_ne!(p.index(0x1000), p.index(0x1008));
    }

    #[test]
    fn monitor_counts_and_ratio() {
        let mut m = AccessMonitor::new(&PrefetchConfig::default());
        m.on_evict(false, true);
        assert_eq!((m.evict_counter, m.unused_counter), (1, 0));
        m.on_evict(true, false);
        assert_eq!((m.evict_counter, m.unused_counter), (2, 1));
        let mut m = AccessMonitor::new(&PrefetchConfig::default());
        for i in 0..10 {
            m.on_evict(true, i >= 4);
        }
        assert!((m.waste_ratio() - 0.4).abs() < 1e-12);
    }

    #[test]
    fn granularity_rules() {
        let cfg = PrefetchConfig::default();
        let mut m = AccessMonitor::new(&cfg);
        for i in 0..10 {
            m.on_evict(true, i >= 4);
        }
        assert_eq!(m.adjust_granularity(), 2048);
        m.set_granularity(1024);
        for i in 0..100 {
            m.on_evict(true, i != 0);
        }
        assert_eq!(m.adjust_granularity(), 2048);
        m.set_granularity(128);
        for _ in 0..10 {
            m.on_evict(true, false);
        }
        assert_eq!(m.adjust_granularity(), 128);
        for _ in 0..10 {
            m.on_evict(true, true);
        }
        m.set_granularity(4096);
        assert_eq!(m.adjust_granularity(), 4096);
        m.on_evict(true, true);
        m.on_evict(true, false);
        m.on_evict(true, true);
        m.on_evict(true, true);
        m.on_evict(true, true);
        m.on_evict(true, true);
        m.on_evict(true, true);
        m.on_evict(true, true);
        m.on_evict(true, true);
        m.on_evict(true, true);
        // 0.1 sits between the thresholds.
        assert_eq!(m.adjust_granularity(), 4096);
    }

    #[test]
    fn epoch_closes_after_configured_misses() {
        let cfg = PrefetchConfig { epoch_misses: 3, ..Default::default() };
        let mut m = AccessMonitor::new(&cfg);
        m.on_evict(true, false);
        m.on_miss();
        m.on_miss();
        assert_eq!(m.granularity(), 4096);
        m.on_miss();
        assert_eq!(m.granularity(), 2048);
        assert_eq!(m.history.len(), 1);
    }
}
