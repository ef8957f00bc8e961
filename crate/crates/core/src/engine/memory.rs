//! Byte-addressable baselines: Optane DC PMM behind six controllers, and the
//! discrete GPU + SSD system where pages fault in through the host.

use std::collections::HashMap;

use super::flash::bandwidth;
use super::metrics::{ArraySummary, Breakdown, MetricsReport, TlbSummary};
use super::{Backend, Service};
use crate::cache::{L2Cache, Lookup};
use crate::clock::{Clock, Cycle};
use crate::config::{PlatformConfig, PlatformKind};
use crate::error::Result;
use crate::ftl::Tlb;
use crate::interconnect::FlashController;
use crate::trace::{MemoryRequest, Op, REQUEST_BYTES};
use crate::znand::PAGE_BYTES;

#[derive(Debug, Clone, Copy, Default)]
struct Bank {
    open_row: Option<u64>,
    busy_until: Cycle,
}

struct Optane {
    banks: Vec<Bank>,
    buses: Vec<Cycle>,
    controllers: Vec<FlashController>,
    t_rcd: Cycle,
    t_cl: Cycle,
    t_rp: Cycle,
    xfer: Cycle,
    row_bytes: u64,
    banks_per_ctrl: u64,
}

struct Hetero {
    resident: HashMap<(u8, u64), Cycle>,
    host_busy: Cycle,
    fault_cycles: Cycle,
    gddr_latency: Cycle,
    gddr_xfer: Cycle,
    gddr_bus: Cycle,
    faults: u64,
}

enum Device {
    Optane(Optane),
    Hetero(Hetero),
}

pub(crate) struct MemoryBackend {
    cfg: PlatformConfig,
    l2: L2Cache,
    tlb: Tlb,
    versions: HashMap<u64, u64>,
    device: Device,
    bytes_out: u64,
}

impl MemoryBackend {
    pub(crate) fn new(cfg: &PlatformConfig) -> Self {
        let sim = &cfg.sim;
        let clock = sim.clock;
        let device = match cfg.platform {
            PlatformKind::Optane => {
                let o = &sim.optane;
                Device::Optane(Optane {
                    banks: vec![Bank::default(); (o.controllers * o.banks) as usize],
                    buses: vec![0; o.controllers as usize],
                    controllers: (0..o.controllers).map(|i| FlashController::new(i, sim.interconnect.queue_depth)).collect(),
                    t_rcd: clock.from_ns(o.t_rcd_ns),
                    t_cl: clock.from_ns(o.t_cl_ns),
                    t_rp: clock.from_ns(o.t_rp_ns),
                    xfer: clock.transfer(REQUEST_BYTES, o.bus_bytes_per_sec),
                    row_bytes: o.row_bytes,
                    banks_per_ctrl: o.banks as u64,
                })
            }
            _ => {
                let h = &sim.hetero;
                let pcie = clock.from_ns(h.pcie_latency_ns) + clock.transfer(PAGE_BYTES, h.pcie_bytes_per_sec);
                Device::Hetero(Hetero {
                    resident: HashMap::new(),
                    host_busy: 0,
                    fault_cycles: clock.from_ns(h.ssd_read_ns) + 2 * pcie + clock.from_ns(h.host_staging_ns),
                    gddr_latency: clock.from_ns(h.gddr_latency_ns),
                    gddr_xfer: clock.transfer(REQUEST_BYTES, h.gddr_bytes_per_sec),
                    gddr_bus: 0,
                    faults: 0,
                })
            }
        };
        Self {
            cfg: cfg.clone(),
            l2: L2Cache::new(*cfg.l2(), sim.registers.pinned_ways),
            tlb: Tlb::new(&sim.tlb),
            versions: HashMap::new(),
            device,
            bytes_out: 0,
        }
    }

    /// Memory-side service of one 128 B access arriving at `t`. Returns the
    /// time data (or the write ack) leaves the device and its cost split.
    fn device_access(&mut self, t: Cycle, req: &MemoryRequest, b: &mut Breakdown) -> Cycle {
        let ctrl_cycles = self.cfg.sim.interconnect.controller_cycles;
        match &mut self.device {
            Device::Optane(o) => {
                let row = req.vaddr / o.row_bytes;
                let n_ctrl = o.controllers.len() as u64;
                let ctrl = (row % n_ctrl) as usize;
                let bank_idx = ctrl * o.banks_per_ctrl as usize + ((row / n_ctrl) % o.banks_per_ctrl) as usize;
                let admitted = o.controllers[ctrl].admit(t) + ctrl_cycles;
                b.network += ctrl_cycles;
                let bank = &mut o.banks[bank_idx];
                let lat = match bank.open_row {
                    Some(r) if r == row => o.t_cl,
                    Some(_) => o.t_rp + o.t_rcd + o.t_cl,
                    None => o.t_rcd + o.t_cl,
                };
                bank.open_row = Some(row);
                let start = admitted.max(bank.busy_until);
                bank.busy_until = start + lat;
                let bus_start = (start + lat).max(o.buses[ctrl]);
                o.buses[ctrl] = bus_start + o.xfer;
                o.controllers[ctrl].depart(o.buses[ctrl]);
                b.array += lat;
                b.transfer += o.xfer;
                o.buses[ctrl]
            }
            Device::Hetero(h) => {
                let key = (req.app_id, req.vaddr / PAGE_BYTES);
                let ready = match h.resident.get(&key) {
                    Some(&at) => at,
                    None => {
                        let start = t.max(h.host_busy);
                        h.host_busy = start + h.fault_cycles;
                        h.faults += 1;
                        h.resident.insert(key, h.host_busy);
                        b.array += h.fault_cycles;
                        h.host_busy
                    }
                };
                let start = (t.max(ready) + h.gddr_latency).max(h.gddr_bus);
                h.gddr_bus = start + h.gddr_xfer;
                b.array += h.gddr_latency;
                b.transfer += h.gddr_xfer;
                h.gddr_bus
            }
        }
    }
}

impl Backend for MemoryBackend {
    fn service(&mut self, now: Cycle, index: usize, req: &MemoryRequest) -> Result<Service> {
        let tlb_cfg = &self.cfg.sim.tlb;
        let hit = self.tlb.access(req.vaddr / PAGE_BYTES);
        let t_tlb = if hit { tlb_cfg.hit_cycles } else { tlb_cfg.miss_cycles };
        let icnt = self.cfg.sim.interconnect.icnt_cycles;
        let t1 = now + t_tlb;
        let line = req.vaddr / REQUEST_BYTES;
        let mut b = Breakdown { translation: t_tlb, cache: self.l2.config().read_cycles, ..Default::default() };
        match req.op {
            Op::Read => {
                let bank_free = match self.l2.read(t1, line) {
                    Lookup::Hit { ready, version, .. } => {
                        return Ok(Service { completion: ready, version: Some(version), breakdown: b, l2_hit: true })
                    }
                    Lookup::Miss { bank_free } => bank_free,
                };
                let version = self.versions.get(&line).copied().unwrap_or(0);
                let done = self.device_access(bank_free + icnt, req, &mut b);
                self.bytes_out += REQUEST_BYTES;
                b.network += 2 * icnt;
                let back = done + icnt;
                self.l2.fill(now, line, version, back, false, req.app_id);
                Ok(Service { completion: back, version: Some(version), breakdown: b, l2_hit: false })
            }
            Op::Write => {
                self.l2.invalidate(line);
                self.versions.insert(line, index as u64 + 1);
                b.cache = 0;
                let done = self.device_access(t1 + icnt, req, &mut b);
                b.network += 2 * icnt;
                Ok(Service { completion: done + icnt, version: None, breakdown: b, l2_hit: false })
            }
        }
    }

    fn report(&self, r: &mut MetricsReport, clock: Clock) {
        r.array = ArraySummary {
            bytes_out: self.bytes_out,
            bandwidth_gbps: bandwidth(self.bytes_out, r.completion_cycles, clock),
            ..Default::default()
        };
        r.l2 = self.l2.stats.clone();
        r.tlb = TlbSummary { hits: self.tlb.hits, misses: self.tlb.misses };
        match &self.device {
            Device::Optane(o) => r.controllers = o.controllers.iter().map(|c| c.stats.clone()).collect(),
            Device::Hetero(h) => r.page_faults = h.faults,
        }
    }
}
