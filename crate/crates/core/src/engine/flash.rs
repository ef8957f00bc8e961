//! Flash-backed platforms: the ZnG ladder and the HybridGPU model.

use std::collections::BTreeMap;

use super::metrics::{ArraySummary, Breakdown, MetricsReport, PageCounter, PrefetchSummary, RedirectionEvent, TlbSummary};
use super::{Backend, Service};
use crate::cache::{AccessMonitor, DirtyLine, L2Cache, Lookup, Predictor};
use crate::clock::{Clock, Cycle};
use crate::config::{Geometry, PlatformConfig, PlatformKind};
use crate::error::{Result, SimError};
use crate::ftl::{Ftl, GroupId, LogicalPage, PageKey, PlaneId};
use crate::gc::{self, GcRecord};
use crate::interconnect::{dispatch, FlashController, MeshNetwork};
use crate::trace::{MemoryRequest, Op};
use crate::znand::{
    BufferedPage, FlashArray, FlashTimes, PageImage, RegisterGroup, RegisterOutcome, RegisterStats, ThrashChecker,
    WritebackPath, FULL_MASK, PAGE_BYTES,
};

/// Extra pieces of the HybridGPU data path: one dispatcher in front of an
/// SSD engine with a few embedded cores.
struct HybridPath {
    mesh: MeshNetwork,
    cores: Vec<Cycle>,
    ftl_cycles: Cycle,
    network: Cycle,
}

pub(crate) struct FlashBackend {
    geo: Geometry,
    spp: u64,
    times: FlashTimes,
    cfg: PlatformConfig,
    ftl: Ftl,
    flash: FlashArray,
    l2: L2Cache,
    predictor: Option<Predictor>,
    regs: Vec<RegisterGroup>,
    thrash: ThrashChecker,
    channels: Vec<Cycle>,
    controllers: Vec<FlashController>,
    hybrid: Option<HybridPath>,
    horizon: Vec<Cycle>,
    /// Requests served since the last pinned write.
    quiet_requests: u64,
    /// End-of-run flush in progress; redirection stays off.
    draining: bool,
    redirection: Vec<RedirectionEvent>,
    gc_log: Vec<GcRecord>,
    new_gcs: Vec<GcRecord>,
    reads_per_page: PageCounter<LogicalPage>,
    programs_per_page: PageCounter<LogicalPage>,
    bytes_out: u64,
    gc_reads: u64,
    gc_programs: u64,
}

impl FlashBackend {
    pub(crate) fn new(cfg: &PlatformConfig, trace: &[MemoryRequest]) -> Result<Self> {
        let sim = &cfg.sim;
        let geo = sim.geometry;
        let clock = sim.clock;
        let is_hybrid = cfg.platform == PlatformKind::HybridGpu;
        let times = if is_hybrid {
            FlashTimes::with_lanes(&sim.znand, clock, sim.hybrid.lane_bytes)
        } else {
            FlashTimes::new(&sim.znand, clock)
        };
        let mut flash = FlashArray::new(geo, &sim.ftl);
        let mut ftl = Ftl::new(geo, &sim.ftl, &sim.tlb);
        let mut touched: BTreeMap<u8, Vec<u64>> = BTreeMap::new();
        for r in trace {
            touched.entry(r.app_id).or_default().push(r.vaddr / geo.block_bytes());
        }
        for (app, mut vbns) in touched {
            vbns.sort_unstable();
            vbns.dedup();
            ftl.map_app_blocks(app, &vbns, &mut flash)?;
        }
        let f = cfg.features;
        let mut l2 = L2Cache::new(*cfg.l2(), sim.registers.pinned_ways);
        if f.prefetch {
            l2 = l2.with_monitor(AccessMonitor::new(&sim.prefetch));
        }
        let regs = (0..geo.packages())
            .map(|p| RegisterGroup::new(f.topology, p, geo.planes_per_package(), f.regs_per_plane))
            .collect();
        let n_ctrl = if is_hybrid { 1 } else { geo.channels };
        let hybrid = is_hybrid.then(|| HybridPath {
            mesh: MeshNetwork::for_nodes(geo.channels, sim.interconnect.mesh_hop_cycles, sim.interconnect.mesh_width_bytes),
            cores: vec![0; sim.hybrid.engine_cores as usize],
            ftl_cycles: clock.from_ns(sim.hybrid.ftl_ns),
            network: clock.from_ns(sim.hybrid.network_ns),
        });
        Ok(Self {
            geo,
            spp: geo.sectors_per_page() as u64,
            times,
            cfg: cfg.clone(),
            ftl,
            flash,
            l2,
            predictor: f.prefetch.then(|| Predictor::new(&sim.prefetch)),
            regs,
            thrash: ThrashChecker::new(sim.registers.thrash_window, sim.registers.thrash_threshold),
            channels: vec![0; geo.channels as usize],
            controllers: (0..n_ctrl).map(|i| FlashController::new(i, sim.interconnect.queue_depth)).collect(),
            hybrid,
            horizon: vec![0; 256],
            quiet_requests: 0,
            draining: false,
            redirection: Vec::new(),
            gc_log: Vec::new(),
            new_gcs: Vec::new(),
            reads_per_page: PageCounter::default(),
            programs_per_page: PageCounter::default(),
            bytes_out: 0,
            gc_reads: 0,
            gc_programs: 0,
        })
    }

    fn line_of(&self, lp: LogicalPage, sector: usize) -> u64 {
        (lp.lbn as u64 * self.geo.pages as u64 + lp.page as u64) * self.spp + sector as u64
    }

    fn split_line(&self, line: u64) -> (LogicalPage, usize) {
        let page = line / self.spp;
        let lp = LogicalPage { lbn: (page / self.geo.pages as u64) as u32, page: (page % self.geo.pages as u64) as u16 };
        (lp, (line % self.spp) as usize)
    }

    fn plane_of_lbn(&self, lbn: u32) -> Result<PlaneId> {
        let (pdbn, _) = self
            .ftl
            .locate(lbn)
            .ok_or_else(|| SimError::consistency("engine", format!("logical block {lbn} is not mapped")))?;
        Ok(self.flash.map().plane_of(pdbn))
    }

    fn icnt(&self) -> Cycle {
        self.cfg.sim.interconnect.icnt_cycles
    }

    /// L2 to controller leg. Returns arrival time and the network cycles.
    fn controller_leg(&mut self, now: Cycle, channel: u32) -> (Cycle, Cycle) {
        match &mut self.hybrid {
            Some(h) => {
                let at = h.mesh.route(now + h.network, 0, channel, 16);
                (at, at - now)
            }
            None => (now + self.icnt(), self.icnt()),
        }
    }

    fn l2_leg(&mut self, now: Cycle, channel: u32, bytes: u64) -> (Cycle, Cycle) {
        match &mut self.hybrid {
            Some(h) => {
                let at = h.mesh.route(now, channel, 0, bytes) + h.network;
                (at, at - now)
            }
            None => (now + self.icnt(), self.icnt()),
        }
    }

    /// Controller admission, command sequencing and, on HybridGPU, the SSD
    /// engine's FTL work. Returns (controller, ready time, unloaded cost).
    fn controller_stage(&mut self, arrive: Cycle, channel: u32) -> (usize, Cycle, Cycle) {
        let ctrl = dispatch_index(channel, self.controllers.len());
        let admitted = self.controllers[ctrl].admit(arrive);
        let mut t = admitted + self.cfg.sim.interconnect.controller_cycles;
        let mut cost = self.cfg.sim.interconnect.controller_cycles;
        if let Some(h) = &mut self.hybrid {
            let core = (0..h.cores.len()).min_by_key(|&i| (h.cores[i], i)).expect("cores > 0");
            let start = t.max(h.cores[core]);
            h.cores[core] = start + h.ftl_cycles;
            t = start + h.ftl_cycles;
            cost += h.ftl_cycles;
        }
        (ctrl, t, cost)
    }

    fn channel_xfer(&mut self, earliest: Cycle, channel: u32, bytes: u64) -> Cycle {
        let ch = &mut self.channels[channel as usize];
        let start = earliest.max(*ch);
        *ch = start + self.times.transfer(bytes);
        *ch
    }

    /// Latest version of a sector buffered in a register, without counting a hit.
    fn register_version(&self, pkg: u32, lp: LogicalPage, sector: usize) -> Option<u64> {
        let g = &self.regs[pkg as usize];
        let slot = g.find(lp)?;
        g.buffered(slot).filter(|b| b.mask & (1 << sector) != 0).map(|b| b.image.0[sector])
    }

    fn read(&mut self, now: Cycle, req: &MemoryRequest) -> Result<Service> {
        let tr = self.ftl.translate(req.vaddr, Op::Read, req.app_id)?;
        let tlb = &self.cfg.sim.tlb;
        let t_tlb = if tr.tlb_hit { tlb.hit_cycles } else { tlb.miss_cycles };
        let t1 = now + t_tlb;
        let line = self.line_of(tr.logical, tr.sector);
        let page_no = line / self.spp;
        let prediction = self.predictor.as_mut().map(|p| p.observe(req.pc, req.warp_id, page_no));
        let l2_read = self.l2.config().read_cycles;
        let mut b = Breakdown { translation: t_tlb, cache: l2_read, ..Default::default() };
        let bank_free = match self.l2.read(t1, line) {
            Lookup::Hit { ready, version, .. } => {
                return Ok(Service { completion: ready, version: Some(version), breakdown: b, l2_hit: true });
            }
            Lookup::Miss { bank_free } => bank_free,
        };
        if let Some(m) = &mut self.l2.monitor {
            m.on_miss();
        }
        let (arrive, net_in) = self.controller_leg(bank_free, tr.channel);
        let (ctrl, t2, ctrl_cost) = self.controller_stage(arrive, tr.channel);
        b.network += net_in + ctrl_cost;
        let version;
        let data_at;
        let mut prefetched = Vec::new();
        if let Some(v) = self.regs[tr.package as usize].dirty_sector(tr.logical, tr.sector) {
            version = v;
            data_at = self.channel_xfer(t2, tr.channel, crate::trace::REQUEST_BYTES);
            b.transfer = self.times.xfer_line;
        } else {
            let (source, image) = self.flash.peek(tr.key, Some(tr.plbn));
            let image = image.copied();
            version = image.map_or(0, |i| i.0[tr.sector]);
            let mut window = vec![tr.sector];
            if prediction.is_some_and(|p| p.prefetch) {
                let g = self.l2.monitor.as_ref().map_or(PAGE_BYTES as u32, |m| m.granularity());
                let lines = (g as u64 / crate::trace::REQUEST_BYTES) as usize;
                let first = tr.sector / lines * lines;
                window.extend(
                    (first..first + lines)
                        .filter(|&s| s != tr.sector && !self.l2.contains(self.line_of(tr.logical, s))),
                );
            }
            let bytes = window.len() as u64 * crate::trace::REQUEST_BYTES;
            let (_, read_done) = self.flash.reserve_plane(tr.plane, t2, self.times.read);
            self.flash.note_read(tr.plane, source);
            self.reads_per_page.bump(tr.logical);
            self.bytes_out += bytes;
            data_at = self.channel_xfer(read_done, tr.channel, bytes);
            b.array = self.times.read;
            b.transfer = self.times.transfer(bytes);
            for &s in &window[1..] {
                let v = self
                    .register_version(tr.package, tr.logical, s)
                    .unwrap_or_else(|| image.map_or(0, |i| i.0[s]));
                prefetched.push((self.line_of(tr.logical, s), v));
            }
        }
        self.controllers[ctrl].depart(data_at);
        let (back, net_out) = self.l2_leg(data_at, tr.channel, crate::trace::REQUEST_BYTES);
        b.network += net_out;
        for (l, v) in prefetched {
            self.l2.fill(now, l, v, back, true, req.app_id);
        }
        self.l2.fill(now, line, version, back, false, req.app_id);
        Ok(Service { completion: back, version: Some(version), breakdown: b, l2_hit: false })
    }

    fn write(&mut self, now: Cycle, index: usize, req: &MemoryRequest) -> Result<Service> {
        let tr = self.ftl.translate(req.vaddr, Op::Write, req.app_id)?;
        let tlb = &self.cfg.sim.tlb;
        let t_tlb = if tr.tlb_hit { tlb.hit_cycles } else { tlb.miss_cycles };
        let t1 = now + t_tlb;
        let version = index as u64 + 1;
        let line = self.line_of(tr.logical, tr.sector);
        let mut b = Breakdown { translation: t_tlb, ..Default::default() };
        if self.l2.is_pinned() {
            let (done, displaced) = self.l2.pinned_write(t1, line, version, req.app_id);
            self.quiet_requests = 0;
            b.cache = self.l2.config().write_cycles;
            if let Some(d) = displaced {
                self.flush_line(done, d)?;
            }
            return Ok(Service { completion: done, version: None, breakdown: b, l2_hit: true });
        }
        self.l2.invalidate(line);
        let (arrive, net_in) = self.controller_leg(t1, tr.channel);
        let (ctrl, t2, ctrl_cost) = self.controller_stage(arrive, tr.channel);
        let ready = self.register_write(t2, tr.logical, tr.plane, tr.package, tr.sector, version)?;
        let done = self.channel_xfer(ready, tr.channel, crate::trace::REQUEST_BYTES);
        self.controllers[ctrl].depart(done);
        let (back, net_out) = self.l2_leg(done, tr.channel, 16);
        b.network = net_in + ctrl_cost + net_out;
        b.transfer = self.times.xfer_line;
        Ok(Service { completion: back, version: None, breakdown: b, l2_hit: false })
    }

    /// Buffers one sector in the package's registers. Returns when the
    /// chosen register can accept the data.
    fn register_write(
        &mut self,
        now: Cycle,
        lp: LogicalPage,
        plane: PlaneId,
        pkg: u32,
        sector: usize,
        version: u64,
    ) -> Result<Cycle> {
        let g = &mut self.regs[pkg as usize];
        if g.find(lp).is_none() {
            self.thrash.on_write_miss(lp);
        }
        match g.reserve(now, lp, plane) {
            RegisterOutcome::Hit { slot } => {
                g.write_sector(slot, lp, plane, sector, version);
                Ok(now)
            }
            RegisterOutcome::Allocated { slot, ready } => {
                g.write_sector(slot, lp, plane, sector, version);
                Ok(ready)
            }
            RegisterOutcome::Evict(plan) => {
                g.write_sector(plan.slot, lp, plane, sector, version);
                self.thrash.on_dirty_eviction(plan.victim.page);
                let free_at = self.writeback(now, pkg, plan.victim, plan.path)?;
                self.regs[pkg as usize].set_busy(plan.slot, free_at);
                self.maybe_pin(now);
                Ok(free_at)
            }
        }
    }

    /// Programs an evicted page into its group's log block. Returns when the
    /// register that held it is free again.
    fn writeback(&mut self, now: Cycle, pkg: u32, victim: BufferedPage, path: WritebackPath) -> Result<Cycle> {
        let plane = victim.plane;
        let (pdbn, plbn) = self
            .ftl
            .locate(victim.page.lbn)
            .ok_or_else(|| SimError::consistency("engine", format!("buffered lbn {} unmapped", victim.page.lbn)))?;
        let key = PageKey { pdbn, page: victim.page.page };
        let (source, base) = self.flash.peek(key, Some(plbn));
        let base = base.copied();
        let merge_read = victim.mask != FULL_MASK && base.is_some();
        let mut image = base.unwrap_or_default();
        image.overlay(&victim.image, victim.mask);
        let regs = self.cfg.sim.registers;
        let ch = self.flash.map().channel_of_package(pkg);
        // A register is free once its page is handed to the plane. Remote
        // pages first cross into the target plane's data register; the page
        // that register buffered swaps into the freed slot, so only the
        // transit is charged.
        let plane_free = self.flash.plane(plane).busy_until;
        let (free_at, staged) = match path {
            WritebackPath::Local | WritebackPath::Direct => (now.max(plane_free), false),
            WritebackPath::NifForward { hops } => {
                let start = now.max(self.regs[pkg as usize].transit_busy(plane));
                let arrive = start + hops as Cycle * regs.nif_hop_cycles + PAGE_BYTES.div_ceil(regs.nif_width_bytes);
                (arrive.max(plane_free), true)
            }
            WritebackPath::SwnetCopy => {
                let start = now.max(self.regs[pkg as usize].transit_busy(plane));
                let up = self.channel_xfer(start, ch, PAGE_BYTES);
                let down = self.channel_xfer(up + self.cfg.sim.interconnect.router_cycles, ch, PAGE_BYTES);
                (down.max(plane_free), true)
            }
        };
        if staged {
            self.regs[pkg as usize].set_transit_busy(plane, free_at);
        }
        self.programs_per_page.bump(victim.page);
        match self.flash.append_log(plbn, key, &image)? {
            Ok(_) => {
                let mut dur = self.times.program;
                if merge_read {
                    dur += self.times.read;
                    self.flash.note_read(plane, source);
                }
                self.flash.reserve_plane(plane, free_at, dur);
            }
            Err(full) => {
                let group = self.ftl.group_of(victim.page.lbn);
                debug_assert_eq!(self.ftl.lbmt().get(group).map(|g| g.plbn), Some(full.plbn));
                self.collect(now, group, pkg, Some(victim))?;
            }
        }
        Ok(free_at)
    }

    /// Runs garbage collection for `group`, folding in every dirty buffer of
    /// the group held in registers or pinned L2 ways.
    fn collect(&mut self, now: Cycle, group: GroupId, pkg: u32, victim: Option<BufferedPage>) -> Result<()> {
        let owner = self
            .ftl
            .lbmt()
            .get(group)
            .ok_or_else(|| SimError::consistency("gc", format!("group {} unknown", group.0)))?
            .app;
        let start = now.max(self.horizon[owner as usize]);
        let mut pending: Vec<BufferedPage> = victim.into_iter().collect();
        let ftl = &self.ftl;
        pending.extend(self.regs[pkg as usize].take_where(start, |b| ftl.group_of(b.page.lbn) == group));
        let per_block = self.geo.pages as u64 * self.spp;
        let dirty = self.l2.take_dirty_where(|e| ftl.group_of((e.line / per_block) as u32) == group);
        let mut pinned: BTreeMap<LogicalPage, BufferedPage> = BTreeMap::new();
        for d in dirty {
            let (lp, s) = self.split_line(d.line);
            let plane = self.plane_of_lbn(lp.lbn)?;
            let e = pinned.entry(lp).or_insert(BufferedPage { page: lp, plane, image: PageImage::default(), mask: 0 });
            e.image.0[s] = d.version;
            e.mask |= 1 << s;
        }
        pending.extend(pinned.into_values());
        let merge = gc::run_gc(start, group, &mut self.ftl, &mut self.flash, &pending, &self.times)?;
        self.gc_reads += merge.pages_read;
        self.gc_programs += merge.pages_programmed;
        let rec = GcRecord::from(&merge);
        self.gc_log.push(rec);
        self.new_gcs.push(rec);
        Ok(())
    }

    /// Pushes a dirty pinned line back into the flash registers.
    fn flush_line(&mut self, now: Cycle, d: DirtyLine) -> Result<()> {
        let (lp, sector) = self.split_line(d.line);
        let plane = self.plane_of_lbn(lp.lbn)?;
        let pkg = self.flash.map().package_of(plane);
        self.register_write(now, lp, plane, pkg, sector, d.version)?;
        Ok(())
    }

    fn maybe_pin(&mut self, now: Cycle) {
        if self.cfg.features.redirection && !self.draining && !self.l2.is_pinned() && self.thrash.is_thrashing() {
            self.l2.pin();
            self.thrash.reset();
            self.quiet_requests = 0;
            self.redirection.push(RedirectionEvent { cycle: now, pinned: true });
        }
    }

    fn unpin(&mut self, now: Cycle) -> Result<()> {
        let mut lines = self.l2.unpin();
        self.redirection.push(RedirectionEvent { cycle: now, pinned: false });
        // Page order, so each page takes one register instead of one per bank.
        lines.sort_by_key(|d| d.line);
        for d in lines {
            self.flush_line(now, d)?;
        }
        self.thrash.reset();
        Ok(())
    }
}

fn dispatch_index(channel: u32, controllers: usize) -> usize {
    let addr = crate::ftl::FlashAddress {
        channel,
        package: 0,
        die: 0,
        plane: 0,
        block: 0,
        page: 0,
        role: crate::ftl::BlockRole::Data,
        page_index: 0,
    };
    dispatch(&addr, controllers as u32) as usize
}

impl Backend for FlashBackend {
    fn service(&mut self, now: Cycle, index: usize, req: &MemoryRequest) -> Result<Service> {
        let svc = match req.op {
            Op::Read => self.read(now, req)?,
            Op::Write => self.write(now, index, req)?,
        };
        // Writes have stopped arriving: hand the pinned way back to reads.
        if self.l2.is_pinned() {
            self.quiet_requests += 1;
            if self.quiet_requests > self.cfg.sim.registers.unpin_quiet_requests {
                self.unpin(now)?;
            }
        }
        Ok(svc)
    }

    fn set_horizon(&mut self, app: u8, until: Cycle) {
        let h = &mut self.horizon[app as usize];
        *h = (*h).max(until);
    }

    fn take_gcs(&mut self) -> Vec<GcRecord> {
        std::mem::take(&mut self.new_gcs)
    }

    /// Writes everything still buffered back to flash so redundancy counts
    /// include the final programs.
    fn finish(&mut self, now: Cycle) -> Result<()> {
        self.draining = true;
        if self.l2.is_pinned() {
            self.unpin(now)?;
        }
        for pkg in 0..self.regs.len() {
            for (slot, victim) in self.regs[pkg].drain() {
                let path = self.regs[pkg].path(slot, victim.plane);
                self.writeback(now, pkg as u32, victim, path)?;
            }
        }
        self.new_gcs.clear();
        Ok(())
    }

    fn tables(&self) -> Option<serde_json::Value> {
        Some(self.ftl.dump_tables())
    }

    fn report(&self, r: &mut MetricsReport, clock: Clock) {
        let s = &self.flash.stats;
        r.array = ArraySummary {
            reads: s.reads,
            programs: s.programs,
            erases: s.erases,
            gc_reads: self.gc_reads,
            gc_programs: self.gc_programs,
            uninitialized_reads: s.uninitialized_reads,
            bytes_out: self.bytes_out,
            bandwidth_gbps: bandwidth(self.bytes_out, r.completion_cycles, clock),
        };
        r.read_reaccess = self.reads_per_page.histogram();
        r.programs_per_page = self.programs_per_page.histogram();
        r.write_redundancy = if self.programs_per_page.pages() == 0 {
            0.0
        } else {
            self.programs_per_page.total() as f64 / self.programs_per_page.pages() as f64
        };
        r.l2 = self.l2.stats.clone();
        let st = &self.l2.stats;
        r.prefetch = PrefetchSummary {
            enabled: self.predictor.is_some(),
            issued: st.prefetch_fills,
            used: st.prefetch_used,
            wasted: st.prefetch_wasted + self.l2.unused_prefetched(),
            accuracy: if st.prefetch_fills == 0 { 0.0 } else { st.prefetch_used as f64 / st.prefetch_fills as f64 },
            final_granularity: self.l2.monitor.as_ref().map_or(0, |m| m.granularity()),
            granularity_history: self.l2.monitor.as_ref().map_or_else(Vec::new, |m| m.history.clone()),
        };
        r.tlb = TlbSummary { hits: self.ftl.tlb.hits, misses: self.ftl.tlb.misses };
        let mut regs = RegisterStats::default();
        for g in &self.regs {
            regs.write_hits += g.stats.write_hits;
            regs.allocations += g.stats.allocations;
            regs.evictions += g.stats.evictions;
            regs.read_hits += g.stats.read_hits;
            regs.local_writebacks += g.stats.local_writebacks;
            regs.remote_writebacks += g.stats.remote_writebacks;
        }
        r.registers = regs;
        r.controllers = self.controllers.iter().map(|c| c.stats.clone()).collect();
        r.gc = self.gc_log.clone();
        r.redirection = self.redirection.clone();
        r.page_faults = self.ftl.page_faults;
    }
}

pub(crate) fn bandwidth(bytes: u64, cycles: Cycle, clock: Clock) -> f64 {
    if cycles == 0 {
        0.0
    } else {
        bytes as f64 / clock.to_secs(cycles) / 1e9
    }
}
