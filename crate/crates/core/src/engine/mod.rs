//! Discrete-event core composing the modules into the seven platforms.
//!
//! Functional state changes when a request issues; timing comes from
//! reservations on the resources it crosses. Each application issues its
//! requests in order, at most one per cycle, and each warp keeps at most
//! `warp_mlp` requests outstanding, so latency shows up in completion time.

mod flash;
mod memory;
mod metrics;
mod queue;

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

pub use metrics::{
    histogram_total, AppSummary, ArraySummary, Breakdown, Histogram, LatencyBreakdown, MetricsReport, PageCounter,
    PrefetchSummary, RedirectionEvent, TimeSeries, TlbSummary,
};
pub use queue::{EventKind, EventQueue, SimEvent};

use crate::clock::{Clock, Cycle};
use crate::config::PlatformConfig;
use crate::error::Result;
use crate::gc::GcRecord;
use crate::trace::{self, MemoryRequest, Op};

/// Outcome of servicing one request at issue time.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Service {
    pub completion: Cycle,
    pub version: Option<u64>,
    pub breakdown: Breakdown,
    pub l2_hit: bool,
}

pub(crate) trait Backend {
    fn service(&mut self, now: Cycle, index: usize, req: &MemoryRequest) -> Result<Service>;

    /// Latest completion assigned to `app`; garbage collection for the app
    /// starts after it.
    fn set_horizon(&mut self, _app: u8, _until: Cycle) {}

    /// Collections started since the last call.
    fn take_gcs(&mut self) -> Vec<GcRecord> {
        Vec::new()
    }

    fn on_epoch(&mut self, _now: Cycle) -> Result<()> {
        Ok(())
    }

    fn finish(&mut self, _now: Cycle) -> Result<()> {
        Ok(())
    }

    /// FTL table state, for platforms that have one.
    fn tables(&self) -> Option<serde_json::Value> {
        None
    }

    fn report(&self, report: &mut MetricsReport, clock: Clock);
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RunOptions {
    /// Keep the version returned by every read.
    pub record_reads: bool,
    /// Keep issue and completion time of every request.
    pub record_completions: bool,
    /// Dump DBMT/LBMT state after the run.
    pub dump_tables: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReadRecord {
    pub index: usize,
    pub version: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompletionRecord {
    pub index: usize,
    pub app: u8,
    pub issued: Cycle,
    pub completed: Cycle,
}

#[derive(Debug, Clone, Default)]
pub struct RunOutput {
    pub report: MetricsReport,
    pub reads: Vec<ReadRecord>,
    pub completions: Vec<CompletionRecord>,
    pub tables: Option<serde_json::Value>,
}

#[derive(Debug, Default)]
struct AppState {
    requests: Vec<usize>,
    pos: usize,
    outstanding: HashMap<u16, u32>,
    in_flight: u32,
    blocked_on: Option<u16>,
    /// Garbage-collection windows of this app's groups, sorted and disjoint.
    gc_windows: Vec<(Cycle, Cycle)>,
    horizon: Cycle,
    summary: AppSummary,
    latency: metrics::LatencyAccumulator,
}

impl AppState {
    fn done(&self) -> bool {
        self.pos == self.requests.len() && self.in_flight == 0
    }

    /// Holds back completions that would land inside one of the app's GC
    /// windows: requests issued during a window are serviced after it, ones
    /// that would finish inside it finish when it ends.
    fn defer(&mut self, issued: Cycle, completion: Cycle) -> Cycle {
        self.gc_windows.retain(|&(_, e)| e > issued);
        let mut c = completion;
        for &(s, e) in &self.gc_windows {
            if issued >= s && issued < e {
                c = c.max(e + (completion - issued));
            } else if c >= s && c < e {
                c = e;
            }
        }
        c
    }

    fn add_gc_window(&mut self, start: Cycle, end: Cycle) {
        let w = &mut self.gc_windows;
        w.push((start, end));
        w.sort_unstable();
        let mut merged: Vec<(Cycle, Cycle)> = Vec::with_capacity(w.len());
        for &(s, e) in w.iter() {
            match merged.last_mut() {
                Some(last) if s <= last.1 => last.1 = last.1.max(e),
                _ => merged.push((s, e)),
            }
        }
        *w = merged;
    }
}

pub const PERFORMANCE_PROXY: &str =
    "trace completion time with per-warp outstanding-request cap (stands in for IPC)";

pub fn run(cfg: &PlatformConfig, trace: &[MemoryRequest]) -> Result<MetricsReport> {
    Ok(run_with(cfg, trace, RunOptions::default())?.report)
}

pub fn run_with(cfg: &PlatformConfig, trace: &[MemoryRequest], opts: RunOptions) -> Result<RunOutput> {
    cfg.validate()?;
    trace::validate(trace)?;
    let mut backend: Box<dyn Backend> = if cfg.platform.is_flash() {
        Box::new(flash::FlashBackend::new(cfg, trace)?)
    } else {
        Box::new(memory::MemoryBackend::new(cfg))
    };
    Simulation::new(cfg, trace, opts).run(backend.as_mut())
}

struct Simulation<'a> {
    cfg: &'a PlatformConfig,
    trace: &'a [MemoryRequest],
    opts: RunOptions,
    apps: BTreeMap<u8, AppState>,
    columns: HashMap<u8, usize>,
    queue: EventQueue,
    series: TimeSeries,
    out: RunOutput,
    total: metrics::LatencyAccumulator,
    last_completion: Cycle,
}

impl<'a> Simulation<'a> {
    fn new(cfg: &'a PlatformConfig, trace: &'a [MemoryRequest], opts: RunOptions) -> Self {
        let mut apps: BTreeMap<u8, AppState> = BTreeMap::new();
        for (i, r) in trace.iter().enumerate() {
            apps.entry(r.app_id).or_default().requests.push(i);
        }
        let ids: Vec<u8> = apps.keys().copied().collect();
        let columns = ids.iter().enumerate().map(|(i, &a)| (a, i)).collect();
        Self {
            cfg,
            trace,
            opts,
            apps,
            columns,
            queue: EventQueue::new(),
            series: TimeSeries::new(cfg.sim.engine.epoch_cycles, ids),
            out: RunOutput::default(),
            total: metrics::LatencyAccumulator::default(),
            last_completion: 0,
        }
    }

    fn run(mut self, backend: &mut dyn Backend) -> Result<RunOutput> {
        for (&app, st) in &mut self.apps {
            st.summary.app = app;
            let first = self.trace[st.requests[0]].issue_cycle;
            self.queue.push(first, EventKind::Issue { app });
        }
        let epoch = self.cfg.sim.engine.epoch_cycles;
        if !self.trace.is_empty() {
            self.queue.push(epoch, EventKind::Epoch);
        }
        while let Some(ev) = self.queue.pop() {
            match ev.kind {
                EventKind::Issue { app } => self.issue(backend, ev.time, app)?,
                EventKind::Complete { app, warp } => self.complete(ev.time, app, warp),
                EventKind::Epoch => {
                    backend.on_epoch(ev.time)?;
                    if !self.apps.values().all(AppState::done) {
                        self.queue.push(ev.time + epoch, EventKind::Epoch);
                    }
                }
            }
        }
        backend.finish(self.last_completion)?;
        Ok(self.finish(backend))
    }

    fn issue(&mut self, backend: &mut dyn Backend, now: Cycle, app: u8) -> Result<()> {
        let mlp = self.cfg.sim.engine.warp_mlp;
        let st = self.apps.get_mut(&app).expect("known app");
        let Some(&index) = st.requests.get(st.pos) else { return Ok(()) };
        let req = &self.trace[index];
        if req.issue_cycle > now {
            self.queue.push(req.issue_cycle, EventKind::Issue { app });
            return Ok(());
        }
        if st.outstanding.get(&req.warp_id).copied().unwrap_or(0) >= mlp {
            st.blocked_on = Some(req.warp_id);
            return Ok(());
        }
        let svc = backend.service(now, index, req)?;
        for gc in backend.take_gcs() {
            let owner = self.apps.get_mut(&gc.app).expect("gc owner is a trace app");
            owner.add_gc_window(gc.start, gc.end);
        }
        let st = self.apps.get_mut(&app).expect("known app");
        let completion = st.defer(now, svc.completion.max(now));
        st.horizon = st.horizon.max(completion);
        backend.set_horizon(app, st.horizon);
        *st.outstanding.entry(req.warp_id).or_insert(0) += 1;
        st.in_flight += 1;
        st.pos += 1;
        let s = &mut st.summary;
        s.requests += 1;
        match req.op {
            Op::Read => {
                s.reads += 1;
                if svc.l2_hit {
                    s.l2_hits += 1;
                } else {
                    s.l2_misses += 1;
                }
            }
            Op::Write => s.writes += 1,
        }
        st.latency.add(completion - now, &svc.breakdown);
        self.total.add(completion - now, &svc.breakdown);
        if st.pos < st.requests.len() {
            self.queue.push(now + 1, EventKind::Issue { app });
        }
        self.queue.push(completion, EventKind::Complete { app, warp: req.warp_id });
        if self.opts.record_reads {
            if let Some(v) = svc.version {
                self.out.reads.push(ReadRecord { index, version: v });
            }
        }
        if self.opts.record_completions {
            self.out.completions.push(CompletionRecord { index, app, issued: now, completed: completion });
        }
        Ok(())
    }

    fn complete(&mut self, now: Cycle, app: u8, warp: u16) {
        let st = self.apps.get_mut(&app).expect("known app");
        *st.outstanding.get_mut(&warp).expect("warp has requests in flight") -= 1;
        st.in_flight -= 1;
        st.summary.completion_cycles = now;
        self.last_completion = self.last_completion.max(now);
        self.series.record(self.columns[&app], now);
        if st.blocked_on == Some(warp) {
            st.blocked_on = None;
            self.queue.push(now, EventKind::Issue { app });
        }
    }

    fn finish(mut self, backend: &dyn Backend) -> RunOutput {
        let clock = self.cfg.sim.clock;
        let mut r = MetricsReport {
            platform: self.cfg.platform.name().to_string(),
            performance_proxy: PERFORMANCE_PROXY.to_string(),
            completion_cycles: self.last_completion,
            completion_ns: clock.to_ns(self.last_completion),
            mean_latency_cycles: self.total.mean(),
            latency_breakdown: self.total.breakdown(),
            ..Default::default()
        };
        let mut reads = PageCounter::default();
        let mut writes = PageCounter::default();
        for req in self.trace {
            let page = (req.app_id, req.vaddr / crate::znand::PAGE_BYTES);
            match req.op {
                Op::Read => reads.bump(page),
                Op::Write => writes.bump(page),
            }
        }
        r.read_requests_per_page = reads.histogram();
        r.write_requests_per_page = writes.histogram();
        for st in self.apps.values_mut() {
            st.summary.mean_latency_cycles = st.latency.mean();
            r.requests += st.summary.requests;
            r.reads += st.summary.reads;
            r.writes += st.summary.writes;
            r.apps.push(st.summary.clone());
        }
        r.time_series = std::mem::take(&mut self.series);
        backend.report(&mut r, clock);
        if self.opts.dump_tables {
            self.out.tables = backend.tables();
        }
        self.out.report = r;
        self.out
    }
}

/// Completion time of each platform normalized to `zng` (or to the first
/// platform when `zng` is absent).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub platform: String,
    pub completion_cycles: Cycle,
    /// Reference completion time divided by this platform's: > 1 is faster.
    pub normalized_performance: f64,
    pub array_bandwidth_gbps: f64,
}

pub fn compare(configs: &[PlatformConfig], trace: &[MemoryRequest]) -> Result<Vec<ComparisonRow>> {
    let reports = configs.iter().map(|c| run(c, trace)).collect::<Result<Vec<_>>>()?;
    Ok(summarize(&reports))
}

pub fn summarize(reports: &[MetricsReport]) -> Vec<ComparisonRow> {
    let reference = reports
        .iter()
        .find(|r| r.platform == "zng")
        .or(reports.first())
        .map_or(0, |r| r.completion_cycles);
    reports
        .iter()
        .map(|r| ComparisonRow {
            platform: r.platform.clone(),
            completion_cycles: r.completion_cycles,
            normalized_performance: if r.completion_cycles == 0 {
                1.0
            } else {
                reference as f64 / r.completion_cycles as f64
            },
            array_bandwidth_gbps: r.array.bandwidth_gbps,
        })
        .collect()
}
