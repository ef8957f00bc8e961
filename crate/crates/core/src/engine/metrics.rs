//! Run report and the accumulators behind it.

use std::collections::{BTreeMap, HashMap};
use std::hash::Hash;

use serde::{Deserialize, Serialize};

use crate::cache::{CacheStats, GranularityChange};
use crate::clock::Cycle;
use crate::gc::GcRecord;
use crate::interconnect::ControllerStats;
use crate::znand::RegisterStats;

/// Count -> number of pages with that count.
pub type Histogram = BTreeMap<u64, u64>;

/// Per-key counter that turns into a [`Histogram`].
#[derive(Debug, Clone)]
pub struct PageCounter<K> {
    counts: HashMap<K, u64>,
}

impl<K> Default for PageCounter<K> {
    fn default() -> Self {
        Self { counts: HashMap::new() }
    }
}

impl<K: Hash + Eq> PageCounter<K> {
    pub fn bump(&mut self, key: K) {
        *self.counts.entry(key).or_insert(0) += 1;
    }

    pub fn pages(&self) -> u64 {
        self.counts.len() as u64
    }

    pub fn total(&self) -> u64 {
        self.counts.values().sum()
    }

    pub fn histogram(&self) -> Histogram {
        let mut h = Histogram::new();
        for &c in self.counts.values() {
            *h.entry(c).or_insert(0) += 1;
        }
        h
    }
}

pub fn histogram_total(h: &Histogram) -> u64 {
    h.iter().map(|(k, v)| k * v).sum()
}

/// Unloaded cost components of one request; queueing is whatever remains.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Breakdown {
    pub translation: Cycle,
    pub cache: Cycle,
    pub network: Cycle,
    pub array: Cycle,
    pub transfer: Cycle,
}

impl Breakdown {
    pub fn sum(&self) -> Cycle {
        self.translation + self.cache + self.network + self.array + self.transfer
    }
}

/// Mean latency components in cycles.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LatencyBreakdown {
    pub translation: f64,
    pub cache: f64,
    pub network: f64,
    pub queueing: f64,
    pub array: f64,
    pub transfer: f64,
}

#[derive(Debug, Clone, Default)]
pub struct LatencyAccumulator {
    pub count: u64,
    total: u128,
    parts: [u128; 5],
}

impl LatencyAccumulator {
    pub fn add(&mut self, latency: Cycle, b: &Breakdown) {
        self.count += 1;
        self.total += latency as u128;
        for (acc, v) in self.parts.iter_mut().zip([b.translation, b.cache, b.network, b.array, b.transfer]) {
            *acc += v as u128;
        }
    }

    pub fn mean(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            self.total as f64 / self.count as f64
        }
    }

    pub fn breakdown(&self) -> LatencyBreakdown {
        if self.count == 0 {
            return LatencyBreakdown::default();
        }
        let n = self.count as f64;
        let m = self.parts.map(|p| p as f64 / n);
        LatencyBreakdown {
            translation: m[0],
            cache: m[1],
            network: m[2],
            queueing: self.mean() - m.iter().sum::<f64>(),
            array: m[3],
            transfer: m[4],
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ArraySummary {
    pub reads: u64,
    pub programs: u64,
    pub erases: u64,
    pub gc_reads: u64,
    pub gc_programs: u64,
    pub uninitialized_reads: u64,
    /// Bytes moved out of the arrays (or memory devices) to serve requests.
    pub bytes_out: u64,
    pub bandwidth_gbps: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AppSummary {
    pub app: u8,
    pub requests: u64,
    pub reads: u64,
    pub writes: u64,
    pub l2_hits: u64,
    pub l2_misses: u64,
    pub completion_cycles: Cycle,
    pub mean_latency_cycles: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PrefetchSummary {
    pub enabled: bool,
    pub issued: u64,
    pub used: u64,
    pub wasted: u64,
    pub accuracy: f64,
    pub final_granularity: u32,
    pub granularity_history: Vec<GranularityChange>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TlbSummary {
    pub hits: u64,
    pub misses: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RedirectionEvent {
    pub cycle: Cycle,
    pub pinned: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimeSeries {
    pub epoch_cycles: Cycle,
    pub apps: Vec<u8>,
    /// Requests completed per epoch, one column per app.
    pub completed: Vec<Vec<u64>>,
}

impl TimeSeries {
    pub fn new(epoch_cycles: Cycle, apps: Vec<u8>) -> Self {
        Self { epoch_cycles, apps, completed: Vec::new() }
    }

    pub fn record(&mut self, column: usize, at: Cycle) {
        let row = (at / self.epoch_cycles) as usize;
        if self.completed.len() <= row {
            self.completed.resize(row + 1, vec![0; self.apps.len()]);
        }
        self.completed[row][column] += 1;
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,start_cycle");
        for a in &self.apps {
            out.push_str(&format!(",app{a}"));
        }
        out.push('\n');
        for (i, row) in self.completed.iter().enumerate() {
            out.push_str(&format!("{i},{}", i as u64 * self.epoch_cycles));
            for v in row {
                out.push_str(&format!(",{v}"));
            }
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub platform: String,
    pub performance_proxy: String,
    pub requests: u64,
    pub reads: u64,
    pub writes: u64,
    pub completion_cycles: Cycle,
    pub completion_ns: f64,
    pub mean_latency_cycles: f64,
    pub latency_breakdown: LatencyBreakdown,
    pub apps: Vec<AppSummary>,
    pub array: ArraySummary,
    /// Array reads per logical page.
    pub read_reaccess: Histogram,
    pub read_requests_per_page: Histogram,
    pub write_requests_per_page: Histogram,
    /// Host-data programs per written logical page.
    pub programs_per_page: Histogram,
    pub write_redundancy: f64,
    pub l2: CacheStats,
    pub prefetch: PrefetchSummary,
    pub tlb: TlbSummary,
    pub registers: RegisterStats,
    pub controllers: Vec<ControllerStats>,
    pub gc: Vec<GcRecord>,
    pub redirection: Vec<RedirectionEvent>,
    pub page_faults: u64,
    pub time_series: TimeSeries,
}

impl MetricsReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn histogram_totals_match_counts() {
        let mut c = PageCounter::default();
        for k in [1, 1, 2, 3, 3, 3] {
            c.bump(k);
        }
        let h = c.histogram();
        assert_eq!(h, Histogram::from([(1, 1), (2, 1), (3, 1)]));
        assert_eq!(histogram_total(&h), 6);
        assert_eq!(c.pages(), 3);
    }

    #[test]
    fn breakdown_sums_to_mean() {
        let mut acc = LatencyAccumulator::default();
        acc.add(100, &Breakdown { translation: 1, cache: 1, network: 40, array: 0, transfer: 24 });
        acc.add(51, &Breakdown { translation: 20, cache: 1, network: 0, array: 0, transfer: 0 });
        let b = acc.breakdown();
        let sum = b.translation + b.cache + b.network + b.queueing + b.array + b.transfer;
        assert!((sum - acc.mean()).abs() < 1e-9);
        assert!((b.queueing - 32.0).abs() < 1e-9);
    }

    #[test]
    fn time_series_csv() {
        let mut ts = TimeSeries::new(10, vec![0, 3]);
        ts.record(0, 5);
        ts.record(1, 25);
        assert_eq!(ts.to_csv(), "epoch,start_cycle,app0,app3\n0,0,1,0\n1,10,0,0\n2,20,0,1\n");
    }
}
