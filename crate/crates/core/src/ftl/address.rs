//! Flash address types and the block striping decomposer.

use serde::{Deserialize, Serialize};

use crate::config::Geometry;

/// Global physical block number: `plane * blocks_per_plane + block`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Pbn(pub u32);

/// Global plane index, package-major: `package * planes_per_package + die * planes + plane`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PlaneId(pub u32);

/// Data-block group sharing one log block. Groups never span planes.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct GroupId(pub u32);

/// LPMT search key: a page of a physical data block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PageKey {
    pub pdbn: Pbn,
    pub page: u16,
}

/// A page of a logical block. Stable across garbage collection, unlike
/// [`PageKey`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct LogicalPage {
    pub lbn: u32,
    pub page: u16,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BlockRole {
    Data,
    Log,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FlashAddress {
    pub channel: u32,
    pub package: u32,
    pub die: u32,
    pub plane: u32,
    /// Block index within the plane.
    pub block: u32,
    /// Physical page inside `block`; for log-role addresses this is the page
    /// offset of the logical block being written.
    pub page: u32,
    pub role: BlockRole,
    pub page_index: u32,
}

/// Decomposes block and plane numbers for one geometry.
#[derive(Debug, Clone, Copy)]
pub struct AddressMap {
    geo: Geometry,
}

impl AddressMap {
    pub fn new(geo: Geometry) -> Self {
        Self { geo }
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geo
    }

    /// Plane hosting the `slot`-th position of the striping order:
    /// consecutive slots go round-robin over channels, then dies, then
    /// planes, then packages of a channel.
    pub fn plane_for_slot(&self, slot: u32) -> PlaneId {
        let g = &self.geo;
        let channel = slot % g.channels;
        let die = (slot / g.channels) % g.dies;
        let plane = (slot / (g.channels * g.dies)) % g.planes;
        let pkg_in_channel = slot / (g.channels * g.dies * g.planes);
        let package = channel * g.packages_per_channel + pkg_in_channel;
        PlaneId(package * g.planes_per_package() + die * g.planes + plane)
    }

    pub fn package_of(&self, plane: PlaneId) -> u32 {
        plane.0 / self.geo.planes_per_package()
    }

    /// Plane index inside its package.
    pub fn plane_in_package(&self, plane: PlaneId) -> u32 {
        plane.0 % self.geo.planes_per_package()
    }

    pub fn channel_of_package(&self, package: u32) -> u32 {
        package / self.geo.packages_per_channel
    }

    pub fn pbn(&self, plane: PlaneId, block: u32) -> Pbn {
        Pbn(plane.0 * self.geo.blocks + block)
    }

    pub fn plane_of(&self, pbn: Pbn) -> PlaneId {
        PlaneId(pbn.0 / self.geo.blocks)
    }

    pub fn block_in_plane(&self, pbn: Pbn) -> u32 {
        pbn.0 % self.geo.blocks
    }

    /// Flat physical page number, used to key stored page images.
    pub fn phys_page(&self, pbn: Pbn, page: u16) -> u64 {
        pbn.0 as u64 * self.geo.pages as u64 + page as u64
    }

    pub fn flash_address(&self, pbn: Pbn, page: u32, role: BlockRole, page_index: u32) -> FlashAddress {
        let g = &self.geo;
        let plane = self.plane_of(pbn);
        let package = self.package_of(plane);
        let in_pkg = self.plane_in_package(plane);
        FlashAddress {
            channel: self.channel_of_package(package),
            package,
            die: in_pkg / g.planes,
            plane: in_pkg % g.planes,
            block: self.block_in_plane(pbn),
            page,
            role,
            page_index,
        }
    }
}
