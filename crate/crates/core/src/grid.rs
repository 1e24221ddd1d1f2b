//! CTA grid geometry, C-tile/D-tile indexing and the compute-data map.
//!
//! All linearizations use X→Y→Z order (X fastest) unless stated otherwise.
//! Data structures are laid out row-major with X fastest-varying.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::descriptor::LocalityDescriptor;

/// An extent or coordinate along the three grid axes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(from = "[u32; 3]", into = "[u32; 3]")]
pub struct Dim3 {
    pub x: u32,
    pub y: u32,
    pub z: u32,
}

impl Dim3 {
    pub const ONE: Dim3 = Dim3 { x: 1, y: 1, z: 1 };
    pub const ZERO: Dim3 = Dim3 { x: 0, y: 0, z: 0 };

    pub const fn new(x: u32, y: u32, z: u32) -> Self {
        Self { x, y, z }
    }

    pub fn get(&self, axis: usize) -> u32 {
        match axis {
            0 => self.x,
            1 => self.y,
            2 => self.z,
            _ => panic!("axis {axis} out of range"),
        }
    }

    pub fn set(&mut self, axis: usize, v: u32) {
        match axis {
            0 => self.x = v,
            1 => self.y = v,
            2 => self.z = v,
            _ => panic!("axis {axis} out of range"),
        }
    }

    pub fn to_array(self) -> [u32; 3] {
        [self.x, self.y, self.z]
    }

    pub fn product(&self) -> u64 {
        self.x as u64 * self.y as u64 * self.z as u64
    }

    pub fn all_positive(&self) -> bool {
        self.x >= 1 && self.y >= 1 && self.z >= 1
    }

    /// Componentwise `self <= other`.
    pub fn fits_in(&self, other: &Dim3) -> bool {
        self.x <= other.x && self.y <= other.y && self.z <= other.z
    }

    pub fn ceil_div(&self, d: &Dim3) -> Dim3 {
        Dim3::new(
            self.x.div_ceil(d.x),
            self.y.div_ceil(d.y),
            self.z.div_ceil(d.z),
        )
    }

    pub fn floor_div(&self, d: &Dim3) -> Dim3 {
        Dim3::new(self.x / d.x, self.y / d.y, self.z / d.z)
    }

    /// Linear index of `self` inside `extent`, X fastest.
    pub fn flat_in(&self, extent: &Dim3) -> u64 {
        (self.z as u64 * extent.y as u64 + self.y as u64) * extent.x as u64 + self.x as u64
    }

    /// Inverse of [`Dim3::flat_in`].
    pub fn from_flat(flat: u64, extent: &Dim3) -> Dim3 {
        let ex = extent.x as u64;
        let ey = extent.y as u64;
        Dim3::new(
            (flat % ex) as u32,
            ((flat / ex) % ey) as u32,
            (flat / (ex * ey)) as u32,
        )
    }

    /// Iterates every coordinate inside `self` in X→Y→Z order.
    pub fn iter(self) -> impl Iterator<Item = Dim3> {
        (0..self.product()).map(move |k| Dim3::from_flat(k, &self))
    }
}

impl From<[u32; 3]> for Dim3 {
    fn from(a: [u32; 3]) -> Self {
        Dim3::new(a[0], a[1], a[2])
    }
}

impl From<Dim3> for [u32; 3] {
    fn from(d: Dim3) -> Self {
        d.to_array()
    }
}

impl std::fmt::Display for Dim3 {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({},{},{})", self.x, self.y, self.z)
    }
}

fn default_threads_per_warp() -> u32 {
    32
}

/// The 3D grid of CTAs launched by one kernel.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CtaGrid {
    pub dims: Dim3,
    pub warps_per_cta: u32,
    #[serde(default = "default_threads_per_warp")]
    pub threads_per_warp: u32,
}

impl CtaGrid {
    pub fn new(dims: Dim3, warps_per_cta: u32) -> Self {
        Self {
            dims,
            warps_per_cta,
            threads_per_warp: 32,
        }
    }

    pub fn is_valid(&self) -> bool {
        self.dims.all_positive() && self.warps_per_cta >= 1 && self.threads_per_warp >= 1
    }

    pub fn cta_count(&self) -> u64 {
        self.dims.product()
    }

    pub fn cta_id(&self, cta: Dim3) -> u64 {
        cta.flat_in(&self.dims)
    }

    pub fn cta_coords(&self, id: u64) -> Dim3 {
        Dim3::from_flat(id, &self.dims)
    }
}

/// A tile position together with its linearization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TileIndex {
    pub coords: Dim3,
    pub flat: u64,
}

impl TileIndex {
    /// Tile at `coords` linearized X→Y→Z inside `counts`.
    pub fn xyz(coords: Dim3, counts: &Dim3) -> Self {
        Self {
            coords,
            flat: coords.flat_in(counts),
        }
    }
}

/// A contiguous range of bytes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ByteRun {
    pub start: u64,
    pub len: u64,
}

impl ByteRun {
    pub fn end(&self) -> u64 {
        self.start + self.len
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum GridError {
    #[error("CTA {cta} lies outside grid {grid}")]
    OutOfGrid { cta: Dim3, grid: Dim3 },
    #[error("tile {tile} lies outside tile counts {counts}")]
    OutOfRange { tile: Dim3, counts: Dim3 },
}

/// C-tile containing `cta`, linearized X→Y→Z over the C-tile counts.
pub fn ctile_of_cta(
    cta: Dim3,
    desc: &LocalityDescriptor,
    grid: &CtaGrid,
) -> Result<TileIndex, GridError> {
    if !cta.fits_in(&Dim3::new(grid.dims.x - 1, grid.dims.y - 1, grid.dims.z - 1)) {
        return Err(GridError::OutOfGrid {
            cta,
            grid: grid.dims,
        });
    }
    let coords = cta.floor_div(&desc.tiles.ctile_dims);
    Ok(TileIndex::xyz(coords, &desc.ctile_count(grid)))
}

/// Axes enumerated by a compute-data map, fastest first. Rank-0 axes are skipped.
pub fn enumeration_order(map: [u8; 3]) -> Vec<usize> {
    let mut axes: Vec<usize> = (0..3).filter(|&a| map[a] != 0).collect();
    axes.sort_by_key(|&a| map[a]);
    axes
}

/// Position of a C-tile in the enumeration order defined by the compute-data map.
pub fn ctile_enumeration_index(coords: Dim3, counts: &Dim3, map: [u8; 3]) -> u64 {
    let mut k = 0u64;
    let mut radix = 1u64;
    for axis in enumeration_order(map) {
        k += coords.get(axis) as u64 * radix;
        radix *= counts.get(axis) as u64;
    }
    k
}

/// D-tile accessed by the given C-tile: the k-th C-tile in map order pairs with
/// the k-th D-tile in X→Y→Z order.
pub fn dtile_of_ctile(
    ctile: &TileIndex,
    desc: &LocalityDescriptor,
    grid: &CtaGrid,
) -> Result<TileIndex, GridError> {
    let ccounts = desc.ctile_count(grid);
    let map = desc.tiles.compute_data_map;
    let out_of_range = !ctile.coords.fits_in(&Dim3::new(
        ccounts.x - 1,
        ccounts.y - 1,
        ccounts.z - 1,
    )) || (0..3).any(|a| map[a] == 0 && ctile.coords.get(a) != 0);
    if out_of_range {
        return Err(GridError::OutOfRange {
            tile: ctile.coords,
            counts: ccounts,
        });
    }
    let k = ctile_enumeration_index(ctile.coords, &ccounts, map);
    let dcounts = desc.dtile_count();
    if k >= dcounts.product() {
        return Err(GridError::OutOfRange {
            tile: ctile.coords,
            counts: ccounts,
        });
    }
    Ok(TileIndex::xyz(Dim3::from_flat(k, &dcounts), &dcounts))
}

/// D-tile accessed by a CTA.
pub fn dtile_of_cta(
    cta: Dim3,
    desc: &LocalityDescriptor,
    grid: &CtaGrid,
) -> Result<TileIndex, GridError> {
    let ct = ctile_of_cta(cta, desc, grid)?;
    dtile_of_ctile(&ct, desc, grid)
}

/// Row-major decomposition of a D-tile into one byte run per (y, z) line.
pub fn dtile_byte_runs(dtile: &TileIndex, desc: &LocalityDescriptor) -> Vec<ByteRun> {
    let data = &desc.data;
    let len = data.dims;
    let t = desc.tiles.dtile_dims;
    let es = data.elem_size;
    let x0 = dtile.coords.x as u64 * t.x as u64;
    let y0 = dtile.coords.y as u64 * t.y as u64;
    let z0 = dtile.coords.z as u64 * t.z as u64;
    let (lx, ly, lz) = (len.x as u64, len.y as u64, len.z as u64);
    if x0 >= lx || y0 >= ly || z0 >= lz {
        return Vec::new();
    }
    let width = (t.x as u64).min(lx - x0);
    let ys = (t.y as u64).min(ly - y0);
    let zs = (t.z as u64).min(lz - z0);
    let mut runs = Vec::with_capacity((ys * zs) as usize);
    for z in z0..z0 + zs {
        for y in y0..y0 + ys {
            runs.push(ByteRun {
                start: data.base_addr + ((z * ly + y) * lx + x0) * es,
                len: width * es,
            });
        }
    }
    runs
}

/// D-tile containing the byte at `addr`, if it lies inside the structure.
pub fn dtile_of_address(addr: u64, desc: &LocalityDescriptor) -> Option<TileIndex> {
    let data = &desc.data;
    if !data.contains(addr) {
        return None;
    }
    let elem = (addr - data.base_addr) / data.elem_size;
    let lx = data.dims.x as u64;
    let ly = data.dims.y as u64;
    let e = Dim3::new(
        (elem % lx) as u32,
        ((elem / lx) % ly) as u32,
        (elem / (lx * ly)) as u32,
    );
    let coords = e.floor_div(&desc.tiles.dtile_dims);
    Some(TileIndex::xyz(coords, &desc.dtile_count()))
}
