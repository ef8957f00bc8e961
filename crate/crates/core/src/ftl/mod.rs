//! The split FTL: a read-only block mapping table (DBMT) cached by the TLB,
//! the log block mapping table (LBMT) that groups data blocks around a shared
//! log block, and translation of GPU virtual addresses to flash addresses.

mod address;

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

pub use address::{AddressMap, BlockRole, FlashAddress, GroupId, LogicalPage, PageKey, Pbn, PlaneId};

use crate::config::{FtlConfig, Geometry, TlbConfig};
use crate::error::{Result, SimError};
use crate::gc::GcMerge;
use crate::trace::{Op, REQUEST_BYTES};
use crate::znand::{FlashArray, PAGE_BYTES};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DbmtEntry {
    pub vbn: u64,
    pub lbn: u32,
    pub pdbn: Pbn,
    pub plbn: Pbn,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupEntry {
    pub plbn: Pbn,
    pub plane: PlaneId,
    pub app: u8,
}

/// Group id → log block. Groups hold `group_size` consecutive in-plane data
/// blocks of one plane.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Lbmt {
    pub group_size: u32,
    groups: BTreeMap<GroupId, GroupEntry>,
}

impl Lbmt {
    pub fn get(&self, group: GroupId) -> Option<&GroupEntry> {
        self.groups.get(&group)
    }

    pub fn len(&self) -> usize {
        self.groups.len()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&GroupId, &GroupEntry)> {
        self.groups.iter()
    }
}

/// Fully associative LRU cache of DBMT entries, keyed by virtual block.
#[derive(Debug, Clone)]
pub struct Tlb {
    enabled: bool,
    capacity: usize,
    stamps: HashMap<u64, u64>,
    lru: BTreeMap<u64, u64>,
    clock: u64,
    pub hits: u64,
    pub misses: u64,
}

impl Tlb {
    pub fn new(cfg: &TlbConfig) -> Self {
        Self {
            enabled: cfg.enabled,
            capacity: cfg.entries.max(1),
            stamps: HashMap::new(),
            lru: BTreeMap::new(),
            clock: 0,
            hits: 0,
            misses: 0,
        }
    }

    /// Looks `vbn` up, filling it on a miss. A disabled TLB always misses.
    pub fn access(&mut self, vbn: u64) -> bool {
        if !self.enabled {
            self.misses += 1;
            return false;
        }
        self.clock += 1;
        let hit = match self.stamps.insert(vbn, self.clock) {
            Some(old) => {
                self.lru.remove(&old);
                true
            }
            None => false,
        };
        self.lru.insert(self.clock, vbn);
        if self.stamps.len() > self.capacity {
            let (_, victim) = self.lru.pop_first().expect("non-empty");
            self.stamps.remove(&victim);
        }
        if hit {
            self.hits += 1;
        } else {
            self.misses += 1;
        }
        hit
    }

    pub fn contains(&self, vbn: u64) -> bool {
        self.stamps.contains_key(&vbn)
    }

    pub fn invalidate(&mut self, vbn: u64) {
        if let Some(stamp) = self.stamps.remove(&vbn) {
            self.lru.remove(&stamp);
        }
    }

    pub fn len(&self) -> usize {
        self.stamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stamps.is_empty()
    }
}

/// Result of translating one request.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Translation {
    pub addr: FlashAddress,
    pub key: PageKey,
    pub logical: LogicalPage,
    /// 128 B sector within the page.
    pub sector: usize,
    pub plbn: Pbn,
    pub plane: PlaneId,
    pub package: u32,
    pub channel: u32,
    pub group: GroupId,
    pub tlb_hit: bool,
}

impl Translation {
    /// Stable id of the 128 B line, independent of block relocation.
    pub fn line_id(&self, geo: &Geometry) -> u64 {
        let spp = geo.sectors_per_page() as u64;
        (self.logical.lbn as u64 * geo.pages as u64 + self.logical.page as u64) * spp + self.sector as u64
    }
}

#[derive(Debug, Clone)]
pub struct Ftl {
    map: AddressMap,
    group_size: u32,
    data_blocks_per_plane: u32,
    dbmt: BTreeMap<u64, DbmtEntry>,
    vbn_of_lbn: HashMap<u32, u64>,
    lbmt: Lbmt,
    pub tlb: Tlb,
    next_lbn: u32,
    pub page_faults: u64,
}

impl Ftl {
    pub fn new(geo: Geometry, ftl: &FtlConfig, tlb: &TlbConfig) -> Self {
        let reserved = crate::config::reserved_blocks(&geo, ftl);
        Self {
            map: AddressMap::new(geo),
            group_size: ftl.group_size,
            data_blocks_per_plane: geo.blocks - reserved,
            dbmt: BTreeMap::new(),
            vbn_of_lbn: HashMap::new(),
            lbmt: Lbmt { group_size: ftl.group_size, groups: BTreeMap::new() },
            tlb: Tlb::new(tlb),
            next_lbn: 0,
            page_faults: 0,
        }
    }

    pub fn map(&self) -> &AddressMap {
        &self.map
    }

    pub fn geometry(&self) -> &Geometry {
        self.map.geometry()
    }

    pub fn lbmt(&self) -> &Lbmt {
        &self.lbmt
    }

    pub fn dbmt(&self) -> impl Iterator<Item = &DbmtEntry> {
        self.dbmt.values()
    }

    pub fn entry(&self, vbn: u64) -> Option<&DbmtEntry> {
        self.dbmt.get(&vbn)
    }

    pub fn block_bytes(&self) -> u64 {
        self.geometry().block_bytes()
    }

    /// Logical blocks an app's range is aligned to, so groups never mix apps.
    fn alignment(&self) -> u32 {
        self.geometry().total_planes() * self.group_size
    }

    /// Group of a logical block: same plane slot, `group_size` consecutive
    /// in-plane indices.
    pub fn group_of(&self, lbn: u32) -> GroupId {
        let planes = self.geometry().total_planes();
        let slot = lbn % planes;
        let in_plane = lbn / planes;
        GroupId((in_plane / self.group_size) * planes + slot)
    }

    /// Logical blocks belonging to `group`.
    pub fn group_lbns(&self, group: GroupId) -> Vec<u32> {
        let planes = self.geometry().total_planes();
        let slot = group.0 % planes;
        let first = (group.0 / planes) * self.group_size;
        (0..self.group_size).map(|k| (first + k) * planes + slot).collect()
    }

    /// Pre-maps the virtual blocks an application touches. The app gets a
    /// fresh aligned logical range, vbns keep their relative offsets, and
    /// every newly touched group receives a log block from its plane's pool.
    pub fn map_app_blocks(&mut self, app: u8, vbns: &[u64], flash: &mut FlashArray) -> Result<()> {
        let Some(&lo) = vbns.iter().min() else { return Ok(()) };
        let hi = *vbns.iter().max().expect("non-empty");
        let align = self.alignment();
        let base = self.next_lbn.div_ceil(align) * align;
        let span = (hi - lo + 1) as u32;
        let planes = self.geometry().total_planes();
        let limit = planes * self.data_blocks_per_plane;
        if base as u64 + span as u64 > limit as u64 {
            return Err(SimError::Config(format!(
                "application {app} needs {span} blocks but only {} remain",
                limit.saturating_sub(base)
            )));
        }
        self.next_lbn = base + span;
        let mut sorted = vbns.to_vec();
        sorted.sort_unstable();
        sorted.dedup();
        for vbn in sorted {
            if self.dbmt.contains_key(&vbn) {
                return Err(SimError::Config(format!("virtual block {vbn} mapped twice")));
            }
            let lbn = base + (vbn - lo) as u32;
            let plane = self.map.plane_for_slot(lbn % planes);
            let pdbn = self.map.pbn(plane, lbn / planes);
            let group = self.group_of(lbn);
            let plbn = match self.lbmt.groups.get(&group) {
                Some(g) => g.plbn,
                None => {
                    let plbn = flash.take_free_block(plane)?;
                    flash.open_log_block(plbn);
                    self.lbmt.groups.insert(group, GroupEntry { plbn, plane, app });
                    plbn
                }
            };
            self.dbmt.insert(vbn, DbmtEntry { vbn, lbn, pdbn, plbn });
            self.vbn_of_lbn.insert(lbn, vbn);
        }
        Ok(())
    }

    /// Current data and log block of a logical block.
    pub fn locate(&self, lbn: u32) -> Option<(Pbn, Pbn)> {
        let vbn = self.vbn_of_lbn.get(&lbn)?;
        let e = &self.dbmt[vbn];
        Some((e.pdbn, e.plbn))
    }

    /// Translates a request without touching TLB counters.
    pub fn resolve(&self, vaddr: u64, op: Op) -> Option<Translation> {
        let geo = self.geometry();
        let block_bytes = geo.block_bytes();
        let e = self.dbmt.get(&(vaddr / block_bytes))?;
        let offset = vaddr % block_bytes;
        let page = (offset / PAGE_BYTES) as u16;
        let sector = ((offset % PAGE_BYTES) / REQUEST_BYTES) as usize;
        let plane = self.map.plane_of(e.pdbn);
        let package = self.map.package_of(plane);
        let addr = match op {
            Op::Read => self.map.flash_address(e.pdbn, page as u32, BlockRole::Data, page as u32),
            Op::Write => self.map.flash_address(e.plbn, page as u32, BlockRole::Log, page as u32),
        };
        Some(Translation {
            addr,
            key: PageKey { pdbn: e.pdbn, page },
            logical: LogicalPage { lbn: e.lbn, page },
            sector,
            plbn: e.plbn,
            plane,
            package,
            channel: self.map.channel_of_package(package),
            group: self.group_of(e.lbn),
            tlb_hit: false,
        })
    }

    pub fn translate(&mut self, vaddr: u64, op: Op, app: u8) -> Result<Translation> {
        let vbn = vaddr / self.block_bytes();
        let Some(mut t) = self.resolve(vaddr, op) else {
            self.page_faults += 1;
            return Err(SimError::PageFault { vaddr, app });
        };
        t.tlb_hit = self.tlb.access(vbn);
        Ok(t)
    }

    /// Installs a finished merge: data blocks move to their destinations and
    /// the group gets its fresh log block.
    pub fn apply_gc_result(&mut self, merge: &GcMerge) -> Result<()> {
        let group = self
            .lbmt
            .groups
            .get_mut(&merge.group)
            .ok_or_else(|| SimError::consistency("ftl", format!("unknown group {}", merge.group.0)))?;
        if group.plbn != merge.old_plbn {
            return Err(SimError::consistency(
                "ftl",
                format!("group {} log block is {}, merge names {}", merge.group.0, group.plbn.0, merge.old_plbn.0),
            ));
        }
        group.plbn = merge.new_plbn;
        for r in &merge.relocations {
            let vbn = *self
                .vbn_of_lbn
                .get(&r.lbn)
                .ok_or_else(|| SimError::consistency("ftl", format!("merge names unmapped lbn {}", r.lbn)))?;
            let e = self.dbmt.get_mut(&vbn).expect("reverse index is consistent");
            if e.pdbn != r.from {
                return Err(SimError::consistency(
                    "ftl",
                    format!("lbn {} lives in block {}, merge names {}", r.lbn, e.pdbn.0, r.from.0),
                ));
            }
            e.pdbn = r.to;
            self.tlb.invalidate(vbn);
        }
        for lbn in self.group_lbns(merge.group) {
            if let Some(&vbn) = self.vbn_of_lbn.get(&lbn) {
                self.dbmt.get_mut(&vbn).expect("mapped").plbn = merge.new_plbn;
                self.tlb.invalidate(vbn);
            }
        }
        Ok(())
    }

    /// Mapped data blocks of a group as (lbn, pdbn).
    pub fn group_members(&self, group: GroupId) -> Vec<(u32, Pbn)> {
        self.group_lbns(group).into_iter().filter_map(|lbn| self.locate(lbn).map(|(p, _)| (lbn, p))).collect()
    }

    pub fn dump_tables(&self) -> serde_json::Value {
        let lbmt: Vec<_> = self
            .lbmt
            .groups
            .iter()
            .map(|(g, e)| {
                serde_json::json!({
                    "group": g.0,
                    "plbn": e.plbn.0,
                    "plane": e.plane.0,
                    "app": e.app,
                    "members": self.group_members(*g).iter().map(|m| m.0).collect::<Vec<_>>(),
                })
            })
            .collect();
        serde_json::json!({
            "group_size": self.group_size,
            "dbmt": self.dbmt.values().collect::<Vec<_>>(),
            "lbmt": lbmt,
        })
    }
}

/// Block- vs page-granularity mapping table sizes for one geometry.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FootprintReport {
    pub blocks: u64,
    pub entry_bytes: u64,
    pub dbmt_bytes: u64,
    pub page_entry_bytes: u64,
    pub page_table_bytes: u64,
    pub ratio: f64,
}

fn ceil_log2(n: u64) -> u64 {
    if n <= 1 {
        0
    } else {
        64 - (n - 1).leading_zeros() as u64
    }
}

/// A DBMT entry packs vbn, lbn, pdbn and plbn at block-address width; a page
/// table entry holds one physical page number.
pub fn dbmt_footprint(geo: &Geometry) -> FootprintReport {
    let blocks = geo.total_blocks();
    let pages = geo.total_pages();
    let entry_bytes = (4 * ceil_log2(blocks).max(1)).div_ceil(8);
    let page_entry_bytes = ceil_log2(pages).max(1).div_ceil(8);
    let dbmt_bytes = blocks * entry_bytes;
    let page_table_bytes = pages * page_entry_bytes;
    FootprintReport {
        blocks,
        entry_bytes,
        dbmt_bytes,
        page_entry_bytes,
        page_table_bytes,
        ratio: page_table_bytes as f64 / dbmt_bytes as f64,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gc::Relocation;

    fn setup(geo: Geometry, group_size: u32) -> (Ftl, FlashArray) {
        let fc = FtlConfig { group_size, over_provision: 0.25 };
        (Ftl::new(geo, &fc, &TlbConfig::default()), FlashArray::new(geo, &fc))
    }

    #[test]
    fn read_translation_and_tlb() {
        let (mut ftl, mut flash) = setup(Geometry::default(), 8);
        ftl.map_app_blocks(0, &[0, 1], &mut flash).unwrap();
        let t = ftl.translate(0, Op::Read, 0).unwrap();
        assert_eq!((t.addr.block, t.addr.page_index, t.addr.role), (0, 0, BlockRole::Data));
        assert!(!t.tlb_hit);
        assert!(ftl.translate(0, Op::Read, 0).unwrap().tlb_hit);
        assert_eq!((ftl.tlb.hits, ftl.tlb.misses), (1, 1));
    }

    #[test]
    fn next_block_lands_on_next_channel() {
        let (mut ftl, mut flash) = setup(Geometry::default(), 8);
        ftl.map_app_blocks(0, &[0, 1], &mut flash).unwrap();
        let bb = ftl.block_bytes();
        let a = ftl.translate(0, Op::Read, 0).unwrap().addr;
        let b = ftl.translate(bb, Op::Read, 0).unwrap().addr;
        assert_eq!(b.channel, a.channel + 1);
    }

    #[test]
    fn writes_target_the_group_log_block() {
        let (mut ftl, mut flash) = setup(Geometry::default(), 8);
        ftl.map_app_blocks(0, &[0], &mut flash).unwrap();
        let t = ftl.translate(128 * 33, Op::Write, 0).unwrap();
        assert_eq!(t.addr.role, BlockRole::Log);
        assert_eq!(ftl.map().pbn(ftl.map().plane_of(t.plbn), t.addr.block), t.plbn);
        assert_eq!((t.key.pdbn, t.key.page, t.sector), (ftl.entry(0).unwrap().pdbn, 1, 1));
        assert_eq!(ftl.lbmt().get(ftl.group_of(0)).unwrap().plbn, t.plbn);
    }

    #[test]
    fn unmapped_address_faults() {
        let (mut ftl, mut flash) = setup(Geometry::default(), 8);
        ftl.map_app_blocks(0, &[0], &mut flash).unwrap();
        let err = ftl.translate(ftl.block_bytes() * 9, Op::Read, 0).unwrap_err();
        assert!(matches!(err, SimError::PageFault { .. }));
        assert_eq!(ftl.page_faults, 1);
    }

    #[test]
    fn apps_never_share_groups() {
        let geo = Geometry { channels: 2, dies: 1, planes: 2, blocks: 64, ..Default::default() };
        let (mut ftl, mut flash) = setup(geo, 4);
        ftl.map_app_blocks(0, &[0, 1, 2], &mut flash).unwrap();
        ftl.map_app_blocks(1, &[1000, 1001], &mut flash).unwrap();
        let g0: Vec<_> = (0..3).map(|v| ftl.group_of(ftl.entry(v).unwrap().lbn)).collect();
        let g1: Vec<_> = (1000..1002).map(|v| ftl.group_of(ftl.entry(v).unwrap().lbn)).collect();
        assert!(g0.iter().all(|g| !g1.contains(g)));
        assert_eq!(ftl.entry(1000).unwrap().lbn, 16);
    }

    #[test]
    fn group_members_share_a_plane() {
        let geo = Geometry { channels: 2, dies: 1, planes: 2, blocks: 64, ..Default::default() };
        let (ftl, _) = setup(geo, 4);
        let lbns = ftl.group_lbns(GroupId(5));
        assert_eq!(lbns, vec![17, 21, 25, 29]);
        assert!(lbns.iter().all(|&l| ftl.group_of(l) == GroupId(5)));
    }

    #[test]
    fn tlb_transparency() {
        let geo = Geometry { channels: 2, dies: 1, planes: 2, blocks: 64, ..Default::default() };
        let fc = FtlConfig { group_size: 2, over_provision: 0.25 };
        let mut on = Ftl::new(geo, &fc, &TlbConfig { entries: 2, ..Default::default() });
        let mut off = Ftl::new(geo, &fc, &TlbConfig { enabled: false, ..Default::default() });
        on.map_app_blocks(0, &(0..10).collect::<Vec<_>>(), &mut FlashArray::new(geo, &fc)).unwrap();
        off.map_app_blocks(0, &(0..10).collect::<Vec<_>>(), &mut FlashArray::new(geo, &fc)).unwrap();
        for i in 0..500u64 {
            let va = (i * 7919 * 128) % (10 * on.block_bytes());
            let a = on.translate(va, Op::Read, 0).unwrap();
            let b = off.translate(va, Op::Read, 0).unwrap();
            assert_eq!((a.addr, a.key, a.logical), (b.addr, b.key, b.logical));
        }
        assert_eq!(off.tlb.hits, 0);
        assert!(on.tlb.len() <= 2);
    }

    #[test]
    fn gc_result_moves_blocks_and_rejects_stale_merges() {
        let geo = Geometry { channels: 1, dies: 1, planes: 1, blocks: 32, ..Default::default() };
        let (mut ftl, mut flash) = setup(geo, 2);
        ftl.map_app_blocks(0, &[0, 1], &mut flash).unwrap();
        let (pdbn, plbn) = ftl.locate(0).unwrap();
        let to = flash.take_free_block(PlaneId(0)).unwrap();
        let new_log = flash.take_free_block(PlaneId(0)).unwrap();
        let merge = GcMerge {
            group: ftl.group_of(0),
            old_plbn: plbn,
            new_plbn: new_log,
            relocations: vec![Relocation { lbn: 0, from: pdbn, to }],
            ..Default::default()
        };
        ftl.apply_gc_result(&merge).unwrap();
        assert_eq!(ftl.locate(0), Some((to, new_log)));
        assert_eq!(ftl.locate(1).unwrap().1, new_log);
        assert!(ftl.apply_gc_result(&merge).is_err());
    }

    #[test]
    fn footprint_at_table_one_geometry() {
        let r = dbmt_footprint(&Geometry::default());
        assert_eq!(r.entry_bytes, 10);
        assert_eq!(r.page_entry_bytes, 4);
        assert!(r.dbmt_bytes * 100 <= r.page_table_bytes);
        assert!((r.ratio - 153.6).abs() < 1e-9);
    }

    #[test]
    fn footprint_of_one_block_device() {
        let geo = Geometry { channels: 1, packages_per_channel: 1, dies: 1, planes: 1, blocks: 1, ..Default::default() };
        let r = dbmt_footprint(&geo);
        assert_eq!((r.blocks, r.entry_bytes, r.dbmt_bytes), (1, 1, 1));
    }
}
