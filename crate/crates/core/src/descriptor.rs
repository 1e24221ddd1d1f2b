//! The locality descriptor: which data structure, what kind of reuse it has,
//! how its tiles pair with CTA tiles, and how important it is.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{CtaGrid, Dim3};

/// Data structures must start on a 64 KiB boundary.
pub const PAGE_SIZE: u64 = 64 * 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LocalityType {
    /// Data shared between threads.
    InterThread,
    /// Data reused by the thread that loaded it.
    IntraThread,
    NoReuse,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SharingType {
    /// The whole D-tile is read by every thread of the C-tile.
    Coaccessed,
    /// Neighboring threads read neighboring elements.
    Nearby,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum AccessPattern {
    Regular { stride_bytes: u64 },
    Irregular,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataStructureRef {
    pub name: String,
    pub base_addr: u64,
    pub elem_size: u64,
    /// Length in elements along X, Y, Z.
    pub dims: Dim3,
}

impl DataStructureRef {
    pub fn total_bytes(&self) -> u64 {
        self.dims.product() * self.elem_size
    }

    pub fn end_addr(&self) -> u64 {
        self.base_addr + self.total_bytes()
    }

    pub fn contains(&self, addr: u64) -> bool {
        addr >= self.base_addr && addr < self.end_addr()
    }

    pub fn overlaps(&self, other: &DataStructureRef) -> bool {
        self.base_addr < other.end_addr() && other.base_addr < self.end_addr()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TileSemantics {
    /// D-tile extent in elements.
    pub dtile_dims: Dim3,
    /// C-tile extent in CTAs.
    pub ctile_dims: Dim3,
    /// Traversal rank of each C-tile axis; 1 is enumerated fastest and 0 marks
    /// an axis that is not enumerated.
    pub compute_data_map: [u8; 3],
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LocalityDescriptor {
    pub data: DataStructureRef,
    pub ltype: LocalityType,
    pub tiles: TileSemantics,
    pub sharing: Option<SharingType>,
    pub pattern: AccessPattern,
    /// 0 is the highest priority.
    pub priority: u32,
}

impl LocalityDescriptor {
    /// Number of D-tiles along each axis.
    pub fn dtile_count(&self) -> Dim3 {
        self.data.dims.ceil_div(&self.tiles.dtile_dims)
    }

    /// Number of C-tiles along each axis of `grid`.
    pub fn ctile_count(&self, grid: &CtaGrid) -> Dim3 {
        grid.dims.ceil_div(&self.tiles.ctile_dims)
    }

    /// Width in bytes of one D-tile row.
    pub fn dtile_width(&self) -> u64 {
        self.tiles.dtile_dims.x as u64 * self.data.elem_size
    }

    /// Checks every single-descriptor invariant against `grid`.
    pub fn check(&self, grid: &CtaGrid) -> Result<(), DescriptorError> {
        let name = || self.data.name.clone();
        let d = &self.data;
        if d.elem_size == 0 || !d.dims.all_positive() {
            return Err(DescriptorError::EmptyStructure { name: name() });
        }
        if d.base_addr % PAGE_SIZE != 0 {
            return Err(DescriptorError::MisalignedBase {
                name: name(),
                base_addr: d.base_addr,
            });
        }
        match (self.ltype, self.sharing) {
            (LocalityType::InterThread, None) | (LocalityType::IntraThread | LocalityType::NoReuse, Some(_)) => {
                return Err(DescriptorError::SharingMismatch { name: name() })
            }
            _ => {}
        }
        if let AccessPattern::Regular { stride_bytes } = self.pattern {
            if stride_bytes == 0 || stride_bytes % d.elem_size != 0 {
                return Err(DescriptorError::InvalidStride {
                    name: name(),
                    stride_bytes,
                });
            }
        }
        let t = &self.tiles;
        let bad_tiles = |reason: String| DescriptorError::InvalidTileSemantics {
            name: name(),
            reason,
        };
        if !t.dtile_dims.all_positive() || !t.ctile_dims.all_positive() {
            return Err(bad_tiles("tile dimensions must be at least 1".into()));
        }
        if !t.dtile_dims.fits_in(&d.dims) {
            return Err(bad_tiles(format!(
                "D-tile {} exceeds structure {}",
                t.dtile_dims, d.dims
            )));
        }
        if !t.ctile_dims.fits_in(&grid.dims) {
            return Err(bad_tiles(format!(
                "C-tile {} exceeds grid {}",
                t.ctile_dims, grid.dims
            )));
        }
        check_map(t.compute_data_map).map_err(bad_tiles)?;
        let cc = self.ctile_count(grid);
        for axis in 0..3 {
            if t.compute_data_map[axis] == 0 && cc.get(axis) != 1 {
                return Err(bad_tiles(format!(
                    "axis {axis} is unranked but spans {} C-tiles",
                    cc.get(axis)
                )));
            }
        }
        let dn = self.dtile_count().product();
        let cn = cc.product();
        if dn != cn {
            return Err(bad_tiles(format!(
                "{dn} D-tiles cannot pair 1:1 with {cn} C-tiles"
            )));
        }
        Ok(())
    }
}

/// Nonzero ranks must be exactly {1..k}.
fn check_map(map: [u8; 3]) -> Result<(), String> {
    let mut ranks: Vec<u8> = map.iter().copied().filter(|&r| r != 0).collect();
    ranks.sort_unstable();
    let ok = !ranks.is_empty() && ranks.iter().enumerate().all(|(i, &r)| r as usize == i + 1);
    if ok {
        Ok(())
    } else {
        Err(format!(
            "compute-data map {map:?} is not a ranking of the grid axes"
        ))
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum DescriptorError {
    #[error("no locality descriptors given")]
    Empty,
    #[error("grid dimensions must be at least 1")]
    InvalidGrid,
    #[error("data structure {name} is empty")]
    EmptyStructure { name: String },
    #[error("invalid tile semantics for {name}: {reason}")]
    InvalidTileSemantics { name: String, reason: String },
    #[error("descriptors for {a} and {b} overlap and share priority {priority}")]
    OverlapConflict { a: String, b: String, priority: u32 },
    #[error("data structure {name} base 0x{base_addr:x} is not 64 KiB aligned")]
    MisalignedBase { name: String, base_addr: u64 },
    #[error("{name}: sharing type must be given exactly for inter-thread locality")]
    SharingMismatch { name: String },
    #[error("{name}: stride {stride_bytes} must be a positive multiple of the element size")]
    InvalidStride { name: String, stride_bytes: u64 },
}

/// Validates a descriptor set against `grid` and returns it sorted by priority,
/// highest (0) first. Equal priorities keep their input order.
pub fn validate_descriptor_set(
    descs: &[LocalityDescriptor],
    grid: &CtaGrid,
) -> Result<Vec<LocalityDescriptor>, DescriptorError> {
    if descs.is_empty() {
        return Err(DescriptorError::Empty);
    }
    if !grid.is_valid() {
        return Err(DescriptorError::InvalidGrid);
    }
    for d in descs {
        d.check(grid)?;
    }
    for (i, a) in descs.iter().enumerate() {
        for b in &descs[i + 1..] {
            if a.priority == b.priority && a.data.overlaps(&b.data) {
                return Err(DescriptorError::OverlapConflict {
                    a: a.data.name.clone(),
                    b: b.data.name.clone(),
                    priority: a.priority,
                });
            }
        }
    }
    let mut sorted = descs.to_vec();
    sorted.sort_by_key(|d| d.priority);
    Ok(sorted)
}
