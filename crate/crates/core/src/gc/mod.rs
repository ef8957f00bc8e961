//! Garbage collection run by the GPU helper thread: a group's data blocks and
//! its full log block are merged into fresh, wear-leveled blocks.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::clock::Cycle;
use crate::error::{Result, SimError};
use crate::ftl::{Ftl, GroupId, PageKey, Pbn, PlaneId};
use crate::znand::{BufferedPage, FlashArray, FlashTimes, PageImage};

/// One data block moved by a merge.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Relocation {
    pub lbn: u32,
    pub from: Pbn,
    pub to: Pbn,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct GcMerge {
    pub group: GroupId,
    pub app: u8,
    pub plane: PlaneId,
    pub old_plbn: Pbn,
    pub new_plbn: Pbn,
    pub relocations: Vec<Relocation>,
    /// Latest content of every page with data, per logical block.
    pub resolved: BTreeMap<(u32, u16), PageImage>,
    pub pages_read: u64,
    pub pages_programmed: u64,
    pub blocks_erased: u64,
    pub start: Cycle,
    pub end: Cycle,
}

/// Summary kept in the run report.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GcRecord {
    pub group: u32,
    pub app: u8,
    pub plane: u32,
    pub start: Cycle,
    pub end: Cycle,
    pub pages_read: u64,
    pub pages_programmed: u64,
    pub blocks_erased: u64,
}

impl From<&GcMerge> for GcRecord {
    fn from(m: &GcMerge) -> Self {
        Self {
            group: m.group.0,
            app: m.app,
            plane: m.plane.0,
            start: m.start,
            end: m.end,
            pages_read: m.pages_read,
            pages_programmed: m.pages_programmed,
            blocks_erased: m.blocks_erased,
        }
    }
}

/// Merges `group` starting no earlier than `start`.
///
/// `pending` holds dirty buffered pages of the group (flash registers,
/// pinned L2 lines, the page whose program found the log full); they are
/// folded into the merge so nothing newer stays outside flash. Every page
/// holding data is read once from the array, merged, and programmed at the
/// same offset of a destination block taken from the plane's pool. The
/// plane is busy for the serial sum of those operations plus the erases.
pub fn run_gc(
    start: Cycle,
    group: GroupId,
    ftl: &mut Ftl,
    flash: &mut FlashArray,
    pending: &[BufferedPage],
    times: &FlashTimes,
) -> Result<GcMerge> {
    let entry = *ftl
        .lbmt()
        .get(group)
        .ok_or_else(|| SimError::consistency("gc", format!("group {} has no log block", group.0)))?;
    let members = ftl.group_members(group);
    let pages = ftl.geometry().pages;
    let mut merge = GcMerge {
        group,
        app: entry.app,
        plane: entry.plane,
        old_plbn: entry.plbn,
        ..Default::default()
    };

    for &(lbn, pdbn) in &members {
        for page in 0..pages as u16 {
            let key = PageKey { pdbn, page };
            if let (_, Some(img)) = flash.peek(key, Some(entry.plbn)) {
                merge.resolved.insert((lbn, page), *img);
                merge.pages_read += 1;
            }
        }
    }
    flash.note_reads(entry.plane, merge.pages_read);
    for b in pending {
        if !members.iter().any(|m| m.0 == b.page.lbn) {
            return Err(SimError::consistency("gc", format!("buffered lbn {} is not in group {}", b.page.lbn, group.0)));
        }
        merge.resolved.entry((b.page.lbn, b.page.page)).or_default().overlay(&b.image, b.mask);
    }

    for &(lbn, from) in &members {
        let to = flash.take_free_block(entry.plane)?;
        for (&(_, page), img) in merge.resolved.range((lbn, 0)..(lbn + 1, 0)) {
            flash.program_page(to, page, img)?;
            merge.pages_programmed += 1;
        }
        merge.relocations.push(Relocation { lbn, from, to });
    }
    for r in &merge.relocations {
        flash.erase(r.from);
    }
    flash.erase(entry.plbn);
    merge.blocks_erased = merge.relocations.len() as u64 + 1;
    merge.new_plbn = flash.take_free_block(entry.plane)?;
    flash.open_log_block(merge.new_plbn);

    let duration =
        merge.pages_read * times.read + merge.pages_programmed * times.program + merge.blocks_erased * times.erase;
    let (s, e) = flash.reserve_plane(entry.plane, start, duration);
    merge.start = s;
    merge.end = e;
    ftl.apply_gc_result(&merge)?;
    Ok(merge)
}
