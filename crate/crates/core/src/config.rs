//! Simulator configuration.
//!
//! Every default mirrors the reference GPU/Z-NAND system configuration
//! (16 channels x 1 package, 8 dies x 8 planes, 1024 blocks x 384 pages,
//! 800 MT/s interface, 24 MB STT-MRAM L2). A JSON config file only needs to
//! name the knobs it changes.

use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

use crate::clock::{Clock, Cycle};
use crate::error::{Result, SimError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Geometry {
    pub channels: u32,
    pub packages_per_channel: u32,
    pub dies: u32,
    pub planes: u32,
    pub blocks: u32,
    pub pages: u32,
    pub page_size: u32,
}

impl Default for Geometry {
    fn default() -> Self {
        Self {
            channels: 16,
            packages_per_channel: 1,
            dies: 8,
            planes: 8,
            blocks: 1024,
            pages: 384,
            page_size: 4096,
        }
    }
}

impl Geometry {
    pub fn packages(&self) -> u32 {
        self.channels * self.packages_per_channel
    }

    pub fn planes_per_package(&self) -> u32 {
        self.dies * self.planes
    }

    pub fn total_planes(&self) -> u32 {
        self.packages() * self.planes_per_package()
    }

    pub fn total_blocks(&self) -> u64 {
        self.total_planes() as u64 * self.blocks as u64
    }

    pub fn total_pages(&self) -> u64 {
        self.total_blocks() * self.pages as u64
    }

    pub fn block_bytes(&self) -> u64 {
        self.pages as u64 * self.page_size as u64
    }

    pub fn capacity_bytes(&self) -> u64 {
        self.total_pages() * self.page_size as u64
    }

    pub fn sectors_per_page(&self) -> u32 {
        self.page_size / crate::trace::REQUEST_BYTES as u32
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("channels", self.channels),
            ("packages_per_channel", self.packages_per_channel),
            ("dies", self.dies),
            ("planes", self.planes),
            ("blocks", self.blocks),
            ("pages", self.pages),
        ];
        for (name, v) in dims {
            if v == 0 {
                return Err(SimError::Config(format!("geometry.{name} must be > 0")));
            }
        }
        if self.page_size != crate::znand::PAGE_BYTES as u32 {
            return Err(SimError::Config("geometry.page_size must be 4096".into()));
        }
        if self.pages > u16::MAX as u32 {
            return Err(SimError::Config("geometry.pages exceeds 65535".into()));
        }
        Ok(())
    }
}

/// Z-NAND array and interface timing.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ZTimingConfig {
    pub t_read_ns: f64,
    pub t_program_ns: f64,
    pub t_erase_ns: f64,
    /// Channel interface rate in mega-transfers per second.
    pub interface_mts: u64,
    pub lane_bytes: u64,
    /// Program/erase cycle budget per block.
    pub pe_cycles: u64,
}

impl Default for ZTimingConfig {
    fn default() -> Self {
        Self {
            t_read_ns: 3_000.0,
            t_program_ns: 100_000.0,
            t_erase_ns: 1_000_000.0,
            interface_mts: 800,
            lane_bytes: 8,
            pe_cycles: 100_000,
        }
    }
}

impl ZTimingConfig {
    pub fn channel_bytes_per_sec(&self) -> u64 {
        self.interface_mts * 1_000_000 * self.lane_bytes
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.t_read_ns > 0.0 && self.t_program_ns > 0.0 && self.t_erase_ns > 0.0) {
            return Err(SimError::Config("znand durations must be > 0".into()));
        }
        if self.interface_mts == 0 || self.lane_bytes == 0 {
            return Err(SimError::Config("znand interface rate must be > 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct L2Config {
    pub capacity_bytes: u64,
    pub banks: u32,
    pub ways: u32,
    pub line_bytes: u32,
    pub read_cycles: Cycle,
    pub write_cycles: Cycle,
}

impl L2Config {
    /// 24 MB STT-MRAM: 1-cycle reads, 5-cycle writes.
    pub fn stt_mram() -> Self {
        Self {
            capacity_bytes: 24 << 20,
            banks: 6,
            ways: 8,
            line_bytes: 128,
            read_cycles: 1,
            write_cycles: 5,
        }
    }

    /// 6 MB SRAM, 1024 sets x 8 ways per bank.
    pub fn sram() -> Self {
        Self {
            capacity_bytes: 6 << 20,
            banks: 6,
            ways: 8,
            line_bytes: 128,
            read_cycles: 1,
            write_cycles: 1,
        }
    }

    pub fn sets_per_bank(&self) -> u64 {
        self.capacity_bytes / (self.banks as u64 * self.ways as u64 * self.line_bytes as u64)
    }

    pub fn lines(&self) -> u64 {
        self.capacity_bytes / self.line_bytes as u64
    }

    pub fn validate(&self) -> Result<()> {
        if self.banks == 0 || self.ways == 0 || self.line_bytes != 128 {
            return Err(SimError::Config("l2: banks/ways must be > 0 and line_bytes 128".into()));
        }
        let sets = self.sets_per_bank();
        if sets == 0
            || sets * self.banks as u64 * self.ways as u64 * self.line_bytes as u64
                != self.capacity_bytes
        {
            return Err(SimError::Config(format!(
                "l2: capacity {} is not banks x sets x ways x line",
                self.capacity_bytes
            )));
        }
        if self.read_cycles == 0 || self.write_cycles == 0 {
            return Err(SimError::Config("l2: latencies must be > 0".into()));
        }
        Ok(())
    }
}

impl Default for L2Config {
    fn default() -> Self {
        Self::stt_mram()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TlbConfig {
    pub enabled: bool,
    pub entries: usize,
    pub hit_cycles: Cycle,
    /// Page-table walk cost on a miss.
    pub miss_cycles: Cycle,
}

impl Default for TlbConfig {
    fn default() -> Self {
        Self { enabled: true, entries: 128, hit_cycles: 1, miss_cycles: 20 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FtlConfig {
    /// Data blocks sharing one log block.
    pub group_size: u32,
    /// Fraction of every plane's blocks reserved as the erased pool.
    pub over_provision: f64,
}

impl Default for FtlConfig {
    fn default() -> Self {
        Self { group_size: 8, over_provision: 0.07 }
    }
}

/// Register grouping topology inside a flash package.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Topology {
    Baseline,
    Swnet,
    Fcnet,
    Nif,
}

impl Topology {
    pub const ALL: [Topology; 4] =
        [Topology::Baseline, Topology::Swnet, Topology::Fcnet, Topology::Nif];

    pub fn name(self) -> &'static str {
        match self {
            Topology::Baseline => "baseline",
            Topology::Swnet => "swnet",
            Topology::Fcnet => "fcnet",
            Topology::Nif => "nif",
        }
    }

    /// Whether any register may hold any plane's page within the package.
    pub fn is_grouped(self) -> bool {
        !matches!(self, Topology::Baseline)
    }
}

impl fmt::Display for Topology {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Topology {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self> {
        Topology::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| SimError::Config(format!("unknown topology `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegisterConfig {
    pub baseline_per_plane: u32,
    pub optimized_per_plane: u32,
    pub io_ports: u32,
    /// Dirty evictions tracked by the thrashing checker.
    pub thrash_window: usize,
    pub thrash_threshold: f64,
    /// L2 ways per set reserved while write redirection is active.
    pub pinned_ways: u32,
    /// Redirection ends after this many requests without a pinned write.
    pub unpin_quiet_requests: u64,
    /// Local network hop cost between data registers (NiF).
    pub nif_hop_cycles: Cycle,
    pub nif_width_bytes: u64,
}

impl Default for RegisterConfig {
    fn default() -> Self {
        Self {
            baseline_per_plane: 2,
            optimized_per_plane: 8,
            io_ports: 2,
            thrash_window: 512,
            thrash_threshold: 0.5,
            pinned_ways: 1,
            unpin_quiet_requests: 16_384,
            nif_hop_cycles: 1,
            nif_width_bytes: 8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PrefetchConfig {
    pub predictor_entries: usize,
    pub warp_slots: usize,
    pub counter_max: u8,
    /// Prefetch when the counter is strictly above this value.
    pub threshold: u8,
    pub high_threshold: f64,
    pub low_threshold: f64,
    /// L2 misses per access-monitor epoch.
    pub epoch_misses: u64,
    pub initial_granularity: u32,
}

impl Default for PrefetchConfig {
    fn default() -> Self {
        Self {
            predictor_entries: 512,
            warp_slots: 5,
            counter_max: 15,
            threshold: 12,
            high_threshold: 0.3,
            low_threshold: 0.05,
            epoch_misses: 4096,
            initial_granularity: 4096,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InterconnectConfig {
    /// One-way GPU interconnect latency between L2 and a flash controller.
    pub icnt_cycles: Cycle,
    /// Command sequencing cost inside a flash controller.
    pub controller_cycles: Cycle,
    pub queue_depth: usize,
    pub mesh_hop_cycles: Cycle,
    pub mesh_width_bytes: u64,
    /// Router buffering cost for register copies through the flash network.
    pub router_cycles: Cycle,
}

impl Default for InterconnectConfig {
    fn default() -> Self {
        Self {
            icnt_cycles: 20,
            controller_cycles: 2,
            queue_depth: 64,
            mesh_hop_cycles: 1,
            mesh_width_bytes: 8,
            router_cycles: 10,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EngineConfig {
    /// Outstanding requests allowed per warp.
    pub warp_mlp: u32,
    /// Time-series bucket length.
    pub epoch_cycles: Cycle,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self { warp_mlp: 8, epoch_cycles: 12_000 }
    }
}

/// SSD-controller bottlenecks of the HybridGPU platform.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HybridConfig {
    pub engine_cores: u32,
    /// FTL processing per request on one embedded core.
    pub ftl_ns: f64,
    /// Bus channel width.
    pub lane_bytes: u64,
    /// Dispatcher to SSD engine network latency.
    pub network_ns: f64,
}

impl Default for HybridConfig {
    fn default() -> Self {
        Self { engine_cores: 4, ftl_ns: 1_000.0, lane_bytes: 1, network_ns: 500.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptaneConfig {
    pub controllers: u32,
    pub banks: u32,
    pub row_bytes: u64,
    pub t_rcd_ns: f64,
    pub t_cl_ns: f64,
    pub t_rp_ns: f64,
    pub bus_bytes_per_sec: u64,
}

impl Default for OptaneConfig {
    fn default() -> Self {
        Self {
            controllers: 6,
            banks: 16,
            row_bytes: 4096,
            t_rcd_ns: 190.0,
            t_cl_ns: 8.9,
            t_rp_ns: 763.0,
            bus_bytes_per_sec: 21_300_000_000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HeteroConfig {
    /// SSD-side service time of one 4 KB read including firmware.
    pub ssd_read_ns: f64,
    pub pcie_bytes_per_sec: u64,
    pub pcie_latency_ns: f64,
    /// Host-side staging and fault handling per fault.
    pub host_staging_ns: f64,
    pub gddr_latency_ns: f64,
    pub gddr_bytes_per_sec: u64,
}

impl Default for HeteroConfig {
    fn default() -> Self {
        Self {
            ssd_read_ns: 10_000.0,
            pcie_bytes_per_sec: 15_750_000_000,
            pcie_latency_ns: 1_000.0,
            host_staging_ns: 10_000.0,
            gddr_latency_ns: 250.0,
            gddr_bytes_per_sec: 192_000_000_000,
        }
    }
}

/// Platform-independent knobs, as read from a JSON config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub clock: Clock,
    pub geometry: Geometry,
    pub znand: ZTimingConfig,
    pub l2_sram: L2Config,
    pub l2_sttmram: L2Config,
    pub tlb: TlbConfig,
    pub ftl: FtlConfig,
    pub registers: RegisterConfig,
    pub prefetch: PrefetchConfig,
    pub interconnect: InterconnectConfig,
    pub engine: EngineConfig,
    pub hybrid: HybridConfig,
    pub optane: OptaneConfig,
    pub hetero: HeteroConfig,
}

impl SimConfig {
    pub fn table_defaults() -> Self {
        Self { l2_sram: L2Config::sram(), l2_sttmram: L2Config::stt_mram(), ..Default::default() }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        // Start from the defaults so that partial files work; the l2_sram
        // default differs from L2Config::default.
        let mut value = serde_json::to_value(Self::table_defaults())
            .map_err(|e| SimError::Config(e.to_string()))?;
        let patch: serde_json::Value =
            serde_json::from_str(text).map_err(|e| SimError::Config(e.to_string()))?;
        merge_json(&mut value, patch);
        let cfg: SimConfig =
            serde_json::from_value(value).map_err(|e| SimError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.clock.hz == 0 {
            return Err(SimError::Config("clock.hz must be > 0".into()));
        }
        self.geometry.validate()?;
        self.znand.validate()?;
        self.l2_sram.validate()?;
        self.l2_sttmram.validate()?;
        if self.ftl.group_size == 0 {
            return Err(SimError::Config("ftl.group_size must be > 0".into()));
        }
        if !(0.0..1.0).contains(&self.ftl.over_provision) {
            return Err(SimError::Config("ftl.over_provision must be in [0,1)".into()));
        }
        let reserved = reserved_blocks(&self.geometry, &self.ftl);
        if reserved < self.ftl.group_size + 2 || reserved >= self.geometry.blocks {
            return Err(SimError::Config(format!(
                "ftl: {reserved} over-provisioned blocks per plane cannot host a merge of {} blocks",
                self.ftl.group_size
            )));
        }
        let r = &self.registers;
        if r.baseline_per_plane == 0 || r.optimized_per_plane < 2 || r.io_ports == 0 {
            return Err(SimError::Config(
                "registers: need >=1 baseline and >=2 optimized registers per plane".into(),
            ));
        }
        if r.thrash_window == 0 || !(0.0..=1.0).contains(&r.thrash_threshold) {
            return Err(SimError::Config("registers: bad thrash window/threshold".into()));
        }
        if r.nif_width_bytes == 0 {
            return Err(SimError::Config("registers.nif_width_bytes must be > 0".into()));
        }
        for l2 in [&self.l2_sram, &self.l2_sttmram] {
            if r.pinned_ways >= l2.ways {
                return Err(SimError::Config("registers.pinned_ways must be < l2 ways".into()));
            }
        }
        let p = &self.prefetch;
        if p.predictor_entries == 0 || p.warp_slots == 0 || p.counter_max == 0 || p.epoch_misses == 0
        {
            return Err(SimError::Config("prefetch: table sizes must be > 0".into()));
        }
        if !(0.0..=1.0).contains(&p.low_threshold)
            || !(0.0..=1.0).contains(&p.high_threshold)
            || p.low_threshold > p.high_threshold
        {
            return Err(SimError::Config("prefetch: need 0 <= low <= high <= 1".into()));
        }
        if !(128..=4096).contains(&p.initial_granularity)
            || !p.initial_granularity.is_power_of_two()
        {
            return Err(SimError::Config("prefetch.initial_granularity must be 128..4096".into()));
        }
        if self.interconnect.queue_depth == 0 || self.interconnect.mesh_width_bytes == 0 {
            return Err(SimError::Config("interconnect: queue depth and width must be > 0".into()));
        }
        if self.engine.warp_mlp == 0 || self.engine.epoch_cycles == 0 {
            return Err(SimError::Config("engine: warp_mlp and epoch_cycles must be > 0".into()));
        }
        if self.hybrid.engine_cores == 0 || self.hybrid.lane_bytes == 0 {
            return Err(SimError::Config("hybrid: cores and lane width must be > 0".into()));
        }
        if self.optane.controllers == 0 || self.optane.banks == 0 || self.optane.row_bytes == 0 {
            return Err(SimError::Config("optane: controllers/banks/row must be > 0".into()));
        }
        Ok(())
    }
}

/// Over-provisioned blocks per plane.
pub fn reserved_blocks(geometry: &Geometry, ftl: &FtlConfig) -> u32 {
    ((geometry.blocks as f64 * ftl.over_provision).ceil() as u32).min(geometry.blocks)
}

fn merge_json(base: &mut serde_json::Value, patch: serde_json::Value) {
    use serde_json::Value;
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(&k) {
                    Some(slot) => merge_json(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// The seven evaluated GPU-SSD platforms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum PlatformKind {
    #[serde(rename = "hetero")]
    Hetero,
    #[serde(rename = "hybridgpu")]
    HybridGpu,
    #[serde(rename = "optane")]
    Optane,
    #[serde(rename = "zng-base")]
    ZngBase,
    #[serde(rename = "zng-rdopt")]
    ZngRdopt,
    #[serde(rename = "zng-wropt")]
    ZngWropt,
    #[serde(rename = "zng")]
    Zng,
}

impl PlatformKind {
    pub const ALL: [PlatformKind; 7] = [
        PlatformKind::Hetero,
        PlatformKind::HybridGpu,
        PlatformKind::Optane,
        PlatformKind::ZngBase,
        PlatformKind::ZngRdopt,
        PlatformKind::ZngWropt,
        PlatformKind::Zng,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PlatformKind::Hetero => "hetero",
            PlatformKind::HybridGpu => "hybridgpu",
            PlatformKind::Optane => "optane",
            PlatformKind::ZngBase => "zng-base",
            PlatformKind::ZngRdopt => "zng-rdopt",
            PlatformKind::ZngWropt => "zng-wropt",
            PlatformKind::Zng => "zng",
        }
    }

    pub fn is_flash(self) -> bool {
        !matches!(self, PlatformKind::Hetero | PlatformKind::Optane)
    }

    fn has_read_opt(self) -> bool {
        matches!(self, PlatformKind::ZngRdopt | PlatformKind::Zng)
    }

    fn has_write_opt(self) -> bool {
        matches!(self, PlatformKind::ZngWropt | PlatformKind::Zng)
    }
}

impl fmt::Display for PlatformKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PlatformKind {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self> {
        PlatformKind::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| SimError::Config(format!("unknown platform `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum L2Kind {
    Sram,
    SttMram,
}

/// Per-platform feature switches layered over [`SimConfig`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Features {
    pub l2: L2Kind,
    pub prefetch: bool,
    pub topology: Topology,
    pub regs_per_plane: u32,
    pub redirection: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlatformConfig {
    pub platform: PlatformKind,
    pub sim: SimConfig,
    pub features: Features,
}

impl PlatformConfig {
    /// `zng-rdopt` adds the STT-MRAM L2 with adaptive prefetch to `zng-base`;
    /// `zng-wropt` adds grouped registers with redirection; `zng` has both.
    pub fn new(platform: PlatformKind, sim: SimConfig) -> Self {
        let rd = platform.has_read_opt();
        let wr = platform.has_write_opt();
        let features = Features {
            l2: if rd { L2Kind::SttMram } else { L2Kind::Sram },
            prefetch: rd,
            topology: if wr { Topology::Nif } else { Topology::Baseline },
            regs_per_plane: if wr {
                sim.registers.optimized_per_plane
            } else {
                sim.registers.baseline_per_plane
            },
            redirection: wr,
        };
        Self { platform, sim, features }
    }

    pub fn preset(platform: PlatformKind) -> Self {
        Self::new(platform, SimConfig::table_defaults())
    }

    pub fn l2(&self) -> &L2Config {
        match self.features.l2 {
            L2Kind::Sram => &self.sim.l2_sram,
            L2Kind::SttMram => &self.sim.l2_sttmram,
        }
    }

    pub fn clock(&self) -> Clock {
        self.sim.clock
    }

    pub fn validate(&self) -> Result<()> {
        self.sim.validate()?;
        let f = &self.features;
        if f.regs_per_plane == 0 {
            return Err(SimError::Config("features.regs_per_plane must be > 0".into()));
        }
        if matches!(f.topology, Topology::Nif | Topology::Swnet) && f.regs_per_plane < 2 {
            return Err(SimError::Config(format!(
                "{} routes remote write-backs through a data register and needs >= 2 registers per plane",
                f.topology
            )));
        }
        if f.redirection && self.sim.registers.pinned_ways >= self.l2().ways {
            return Err(SimError::Config("pinned ways exceed L2 associativity".into()));
        }
        Ok(())
    }
}
