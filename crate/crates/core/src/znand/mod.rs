//! Z-NAND packages: plane arrays, the programmable row decoder holding each
//! log block's LPMT, and the flash-register file.
//!
//! Page payloads are not stored byte for byte. Every 128 B sector of a page
//! carries the version id of the write that produced it (0 = never written),
//! which is enough to check read-after-write correctness end to end.

mod registers;
mod timing;

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::clock::Cycle;
use crate::config::{FtlConfig, Geometry};
use crate::error::{Result, SimError};
use crate::ftl::{AddressMap, PageKey, Pbn, PlaneId};

pub use registers::{
    thrash_check, BufferedPage, EvictPlan, RegisterGroup, RegisterOutcome, RegisterStats,
    ThrashChecker, WindowStats, WritebackPath,
};
pub use timing::{service_time, FlashTimes, ServiceKind};

pub const PAGE_BYTES: u64 = 4096;
pub const SECTORS: usize = (PAGE_BYTES / crate::trace::REQUEST_BYTES) as usize;
pub const FULL_MASK: u32 = u32::MAX;

/// Sector version ids of one flash page.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PageImage(pub [u64; SECTORS]);

impl Default for PageImage {
    fn default() -> Self {
        PageImage([0; SECTORS])
    }
}

impl PageImage {
    /// Copies the sectors of `newer` selected by `mask` over `self`.
    pub fn overlay(&mut self, newer: &PageImage, mask: u32) {
        for (s, v) in self.0.iter_mut().enumerate() {
            if mask & (1 << s) != 0 {
                *v = newer.0[s];
            }
        }
    }
}

/// The programmable row decoder of one log block, searched like a CAM.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Lpmt {
    rows: Vec<PageKey>,
    capacity: usize,
}

impl Lpmt {
    pub fn new(capacity: usize) -> Self {
        Self { rows: Vec::with_capacity(capacity.min(64)), capacity }
    }

    /// Newest row matching `key`; a rewritten page's latest row wins.
    pub fn search(&self, key: PageKey) -> Option<u16> {
        self.rows.iter().rposition(|r| *r == key).map(|i| i as u16)
    }

    /// Records `key` in the next free row. `None` when the block is full.
    pub fn append(&mut self, key: PageKey) -> Option<u16> {
        if self.rows.len() >= self.capacity {
            return None;
        }
        self.rows.push(key);
        Some((self.rows.len() - 1) as u16)
    }

    pub fn rows(&self) -> &[PageKey] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.rows.len() >= self.capacity
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PageState {
    Free,
    Valid,
    Stale,
}

#[derive(Debug, Clone)]
struct BlockState {
    pages: Vec<PageState>,
    /// In-order program cursor: the next page must be at or after it.
    next_free: u32,
}

impl BlockState {
    fn erased(pages: u32) -> Self {
        Self { pages: vec![PageState::Free; pages as usize], next_free: 0 }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq, Eq)]
pub struct PlaneCounters {
    pub reads: u64,
    pub programs: u64,
    pub erases: u64,
}

#[derive(Debug, Clone)]
pub struct PlaneState {
    /// Blocks that were programmed since their last erase. Absent blocks are
    /// either pristine data blocks or erased.
    blocks: HashMap<u32, BlockState>,
    erase_count: Vec<u32>,
    /// Lifetime programs per block, never reset.
    lifetime_programs: Vec<u64>,
    /// Erased blocks ordered by (erase count, block id).
    pool: BTreeSet<(u32, u32)>,
    pub busy_until: Cycle,
    pub counters: PlaneCounters,
}

/// Where an array read found the requested page.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReadSource {
    /// Logged copy at this page of the log block.
    Log(u16),
    Data,
    Uninitialized,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ArrayRead {
    pub source: ReadSource,
    pub image: Option<PageImage>,
    pub ready: Cycle,
}

/// Returned when a program hits a log block with no free page.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GcRequired {
    pub plbn: Pbn,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Programmed {
    pub page: u16,
    pub ready: Cycle,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq, Eq)]
pub struct ArrayStats {
    pub reads: u64,
    pub programs: u64,
    pub erases: u64,
    pub uninitialized_reads: u64,
}

/// All planes of the device plus the stored page images and LPMTs.
#[derive(Debug, Clone)]
pub struct FlashArray {
    map: AddressMap,
    planes: Vec<PlaneState>,
    images: HashMap<u64, PageImage>,
    lpmts: HashMap<Pbn, Lpmt>,
    data_blocks_per_plane: u32,
    pub stats: ArrayStats,
}

impl FlashArray {
    pub fn new(geo: Geometry, ftl: &FtlConfig) -> Self {
        let reserved = crate::config::reserved_blocks(&geo, ftl);
        let data_blocks = geo.blocks - reserved;
        let plane = PlaneState {
            blocks: HashMap::new(),
            erase_count: vec![0; geo.blocks as usize],
            lifetime_programs: vec![0; geo.blocks as usize],
            pool: (data_blocks..geo.blocks).map(|b| (0, b)).collect(),
            busy_until: 0,
            counters: PlaneCounters::default(),
        };
        Self {
            map: AddressMap::new(geo),
            planes: vec![plane; geo.total_planes() as usize],
            images: HashMap::new(),
            lpmts: HashMap::new(),
            data_blocks_per_plane: data_blocks,
            stats: ArrayStats::default(),
        }
    }

    pub fn map(&self) -> &AddressMap {
        &self.map
    }

    pub fn data_blocks_per_plane(&self) -> u32 {
        self.data_blocks_per_plane
    }

    pub fn plane(&self, plane: PlaneId) -> &PlaneState {
        &self.planes[plane.0 as usize]
    }

    pub fn planes(&self) -> &[PlaneState] {
        &self.planes
    }

    pub fn erase_count(&self, pbn: Pbn) -> u32 {
        let plane = self.map.plane_of(pbn);
        self.planes[plane.0 as usize].erase_count[self.map.block_in_plane(pbn) as usize]
    }

    pub fn lifetime_programs(&self, pbn: Pbn) -> u64 {
        let plane = self.map.plane_of(pbn);
        self.planes[plane.0 as usize].lifetime_programs[self.map.block_in_plane(pbn) as usize]
    }

    pub fn free_blocks(&self, plane: PlaneId) -> usize {
        self.planes[plane.0 as usize].pool.len()
    }

    pub fn lpmt(&self, plbn: Pbn) -> Option<&Lpmt> {
        self.lpmts.get(&plbn)
    }

    pub fn page_state(&self, pbn: Pbn, page: u16) -> Option<PageState> {
        let plane = &self.planes[self.map.plane_of(pbn).0 as usize];
        plane.blocks.get(&self.map.block_in_plane(pbn)).map(|b| b.pages[page as usize])
    }

    /// Reserves the plane for `duration` starting no earlier than `earliest`.
    pub fn reserve_plane(&mut self, plane: PlaneId, earliest: Cycle, duration: Cycle) -> (Cycle, Cycle) {
        let p = &mut self.planes[plane.0 as usize];
        let start = earliest.max(p.busy_until);
        p.busy_until = start + duration;
        (start, start + duration)
    }

    /// Takes the erased block with the lowest erase count (ties: lowest id).
    pub fn take_free_block(&mut self, plane: PlaneId) -> Result<Pbn> {
        let p = &mut self.planes[plane.0 as usize];
        let (_, block) = p.pool.pop_first().ok_or(SimError::CapacityExhausted { plane: plane.0 })?;
        Ok(self.map.pbn(plane, block))
    }

    /// Starts an empty LPMT for a freshly assigned log block.
    pub fn open_log_block(&mut self, plbn: Pbn) {
        let pages = self.map.geometry().pages as usize;
        self.lpmts.insert(plbn, Lpmt::new(pages));
    }

    /// Latest content of `key` without timing: the LPMT's newest row if the
    /// page was logged, else the data block page.
    pub fn peek(&self, key: PageKey, plbn: Option<Pbn>) -> (ReadSource, Option<&PageImage>) {
        if let Some(plbn) = plbn {
            if let Some(row) = self.lpmts.get(&plbn).and_then(|l| l.search(key)) {
                let img = self.images.get(&self.map.phys_page(plbn, row));
                return (ReadSource::Log(row), img);
            }
        }
        match self.images.get(&self.map.phys_page(key.pdbn, key.page)) {
            Some(img) => (ReadSource::Data, Some(img)),
            None => (ReadSource::Uninitialized, None),
        }
    }

    /// Timed array read: `ready = max(now, busy_until) + t_read`.
    pub fn array_read(&mut self, now: Cycle, key: PageKey, plbn: Option<Pbn>, t_read: Cycle) -> ArrayRead {
        let (source, image) = self.peek(key, plbn);
        let image = image.copied();
        let plane = self.map.plane_of(key.pdbn);
        let (_, ready) = self.reserve_plane(plane, now, t_read);
        self.note_read(plane, source);
        ArrayRead { source, image, ready }
    }

    /// Counts an array read whose timing the caller charged itself.
    pub fn note_read(&mut self, plane: PlaneId, source: ReadSource) {
        self.stats.reads += 1;
        self.planes[plane.0 as usize].counters.reads += 1;
        if source == ReadSource::Uninitialized {
            self.stats.uninitialized_reads += 1;
        }
    }

    /// Counts `n` array reads performed during a merge.
    pub fn note_reads(&mut self, plane: PlaneId, n: u64) {
        self.stats.reads += n;
        self.planes[plane.0 as usize].counters.reads += n;
    }

    /// Appends `image` for `key` at the log block's next free page and
    /// records the LPMT row. No timing.
    pub fn append_log(&mut self, plbn: Pbn, key: PageKey, image: &PageImage) -> Result<Result<u16, GcRequired>> {
        let lpmt = self
            .lpmts
            .get_mut(&plbn)
            .ok_or_else(|| SimError::consistency("znand", format!("block {} is not an open log block", plbn.0)))?;
        let prev = lpmt.search(key);
        if lpmt.is_full() {
            return Ok(Err(GcRequired { plbn }));
        }
        let row = lpmt.append(key).expect("checked not full");
        self.program_page(plbn, row, image)?;
        if let Some(old) = prev {
            self.mark_stale(plbn, old);
        } else {
            self.mark_stale(key.pdbn, key.page);
        }
        Ok(Ok(row))
    }

    /// Timed log program: `ready = max(now, busy_until) + t_program`.
    pub fn program_log_page(
        &mut self,
        now: Cycle,
        plbn: Pbn,
        key: PageKey,
        image: &PageImage,
        t_program: Cycle,
    ) -> Result<Result<Programmed, GcRequired>> {
        match self.append_log(plbn, key, image)? {
            Ok(page) => {
                let (_, ready) = self.reserve_plane(self.map.plane_of(plbn), now, t_program);
                Ok(Ok(Programmed { page, ready }))
            }
            Err(full) => Ok(Err(full)),
        }
    }

    /// Programs one page, enforcing erase-before-write and in-order programming.
    pub fn program_page(&mut self, pbn: Pbn, page: u16, image: &PageImage) -> Result<()> {
        let pages = self.map.geometry().pages;
        let plane = self.map.plane_of(pbn);
        let block = self.map.block_in_plane(pbn);
        let p = &mut self.planes[plane.0 as usize];
        let state = p.blocks.entry(block).or_insert_with(|| BlockState::erased(pages));
        if (page as u32) < state.next_free || state.pages[page as usize] != PageState::Free {
            return Err(SimError::consistency(
                "znand",
                format!("out-of-order or non-free program of block {} page {page}", pbn.0),
            ));
        }
        state.pages[page as usize] = PageState::Valid;
        state.next_free = page as u32 + 1;
        p.lifetime_programs[block as usize] += 1;
        let budget = pages as u64 * (p.erase_count[block as usize] as u64 + 1);
        if p.lifetime_programs[block as usize] > budget {
            return Err(SimError::consistency("znand", format!("block {} exceeded its program budget", pbn.0)));
        }
        p.counters.programs += 1;
        self.stats.programs += 1;
        self.images.insert(self.map.phys_page(pbn, page), *image);
        Ok(())
    }

    fn mark_stale(&mut self, pbn: Pbn, page: u16) {
        let plane = self.map.plane_of(pbn);
        let block = self.map.block_in_plane(pbn);
        if let Some(b) = self.planes[plane.0 as usize].blocks.get_mut(&block) {
            if b.pages[page as usize] == PageState::Valid {
                b.pages[page as usize] = PageState::Stale;
            }
        }
    }

    /// Erases a block, drops its LPMT and returns it to the plane's pool.
    pub fn erase(&mut self, pbn: Pbn) {
        let pages = self.map.geometry().pages;
        for page in 0..pages {
            self.images.remove(&self.map.phys_page(pbn, page as u16));
        }
        self.lpmts.remove(&pbn);
        let plane = self.map.plane_of(pbn);
        let block = self.map.block_in_plane(pbn);
        let p = &mut self.planes[plane.0 as usize];
        p.blocks.remove(&block);
        p.erase_count[block as usize] += 1;
        p.pool.insert((p.erase_count[block as usize], block));
        p.counters.erases += 1;
        self.stats.erases += 1;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashMap as Oracle;

    fn small_geo() -> Geometry {
        Geometry { channels: 1, dies: 1, planes: 2, blocks: 16, pages: 384, ..Default::default() }
    }

    fn array() -> FlashArray {
        FlashArray::new(small_geo(), &FtlConfig { group_size: 2, over_provision: 0.25 })
    }

    fn img(v: u64) -> PageImage {
        PageImage([v; SECTORS])
    }

    fn key(pdbn: u32, page: u16) -> PageKey {
        PageKey { pdbn: Pbn(pdbn), page }
    }

    #[test]
    fn lpmt_hit_and_miss() {
        let mut a = array();
        let plbn = a.take_free_block(PlaneId(0)).unwrap();
        a.open_log_block(plbn);
        assert_eq!(a.append_log(plbn, key(0, 3), &img(7)).unwrap(), Ok(0));
        let hit = a.array_read(0, key(0, 3), Some(plbn), 3600);
        assert_eq!(hit.source, ReadSource::Log(0));
        assert_eq!(hit.image, Some(img(7)));
        let miss = a.array_read(0, key(0, 4), Some(plbn), 3600);
        assert_eq!(miss.source, ReadSource::Uninitialized);
        assert_eq!(a.stats.uninitialized_reads, 1);
    }

    #[test]
    fn rewritten_page_returns_latest_row() {
        let mut a = array();
        let plbn = a.take_free_block(PlaneId(0)).unwrap();
        a.open_log_block(plbn);
        a.append_log(plbn, key(0, 3), &img(1)).unwrap().unwrap();
        a.append_log(plbn, key(0, 3), &img(2)).unwrap().unwrap();
        assert_eq!(a.lpmt(plbn).unwrap().rows(), &[key(0, 3), key(0, 3)]);
        assert_eq!(a.peek(key(0, 3), Some(plbn)).1, Some(&img(2)));
        assert_eq!(a.page_state(plbn, 0), Some(PageState::Stale));
        assert_eq!(a.page_state(plbn, 1), Some(PageState::Valid));
    }

    #[test]
    fn read_waits_for_busy_plane() {
        let mut a = array();
        let r1 = a.array_read(10, key(0, 0), None, 3600);
        let r2 = a.array_read(20, key(1, 0), None, 3600);
        assert_eq!(r1.ready, 3610);
        assert_eq!(r2.ready, 7210);
    }

    #[test]
    fn log_block_fills_after_pages_per_block_programs() {
        let mut a = array();
        let plbn = a.take_free_block(PlaneId(0)).unwrap();
        a.open_log_block(plbn);
        for i in 0..384u16 {
            let r = a.program_log_page(0, plbn, key(0, i % 7), &img(i as u64 + 1), 120_000).unwrap();
            assert_eq!(r.unwrap().page, i);
        }
        assert_eq!(a.lpmt(plbn).unwrap().len(), 384);
        assert_eq!(
            a.program_log_page(0, plbn, key(0, 0), &img(9), 120_000).unwrap(),
            Err(GcRequired { plbn })
        );
        assert_eq!(a.plane(PlaneId(0)).busy_until, 384 * 120_000);
    }

    #[test]
    fn interleaved_programs_match_oracle() {
        let mut a = array();
        let plbn = a.take_free_block(PlaneId(0)).unwrap();
        a.open_log_block(plbn);
        let mut oracle = Oracle::new();
        for v in 1..=50u64 {
            let k = if v % 3 == 0 { key(1, 5) } else { key(0, (v % 4) as u16) };
            a.append_log(plbn, k, &img(v)).unwrap().unwrap();
            oracle.insert(k, v);
        }
        for (k, v) in oracle {
            assert_eq!(a.peek(k, Some(plbn)).1, Some(&img(v)));
        }
    }

    #[test]
    fn in_order_and_erase_before_write() {
        let mut a = array();
        let pbn = a.take_free_block(PlaneId(1)).unwrap();
        a.program_page(pbn, 5, &img(1)).unwrap();
        assert!(a.program_page(pbn, 5, &img(2)).is_err());
        assert!(a.program_page(pbn, 4, &img(2)).is_err());
        a.program_page(pbn, 6, &img(2)).unwrap();
        a.erase(pbn);
        assert_eq!(a.erase_count(pbn), 1);
        assert_eq!(a.peek(key(pbn.0, 5), None).1, None);
        a.program_page(pbn, 0, &img(3)).unwrap();
        assert_eq!(a.lifetime_programs(pbn), 3);
    }

    #[test]
    fn pool_prefers_cold_blocks() {
        let mut a = array();
        let first = a.take_free_block(PlaneId(0)).unwrap();
        a.erase(first);
        let next = a.take_free_block(PlaneId(0)).unwrap();
        assert_ne!(first, next);
        assert_eq!(a.erase_count(next), 0);
    }

    #[test]
    fn overlay_respects_mask() {
        let mut base = img(1);
        base.overlay(&img(9), 0b101);
        assert_eq!(&base.0[..4], &[9, 1, 9, 1]);
    }
}
