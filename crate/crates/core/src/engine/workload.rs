//! Synthetic per-CTA, per-warp access streams that realize each descriptor's
//! declared locality.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::descriptor::{
    validate_descriptor_set, AccessPattern, DescriptorError, LocalityDescriptor, LocalityType,
    SharingType,
};
use crate::grid::{ctile_of_cta, dtile_byte_runs, dtile_of_ctile, ByteRun, CtaGrid, Dim3};

/// A grid plus its validated, priority-sorted descriptors.
#[derive(Debug, Clone, PartialEq)]
pub struct Workload {
    pub grid: CtaGrid,
    pub descriptors: Vec<LocalityDescriptor>,
    pub seed: u64,
    pub line_size: u64,
}

/// Address streams indexed `[cta][warp]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CtaStreams {
    pub streams: Vec<Vec<Vec<u64>>>,
}

impl CtaStreams {
    pub fn total_accesses(&self) -> u64 {
        self.streams
            .iter()
            .flat_map(|c| c.iter().map(|w| w.len() as u64))
            .sum()
    }
}

impl Workload {
    pub fn new(
        descs: &[LocalityDescriptor],
        grid: CtaGrid,
        seed: u64,
        line_size: u64,
    ) -> Result<Self, DescriptorError> {
        let descriptors = validate_descriptor_set(descs, &grid)?;
        Ok(Self {
            grid,
            descriptors,
            seed,
            line_size,
        })
    }

    /// Streams for every CTA. Each warp interleaves its per-descriptor streams
    /// one access at a time, in priority order.
    pub fn streams(&self) -> CtaStreams {
        let warps = self.grid.warps_per_cta as usize;
        let streams = (0..self.grid.cta_count())
            .map(|cta| {
                let per_desc: Vec<Vec<Vec<u64>>> = self
                    .descriptors
                    .iter()
                    .map(|d| generate_warp_streams(d, cta, &self.grid, self.seed, self.line_size))
                    .collect();
                (0..warps)
                    .map(|w| interleave(per_desc.iter().map(|s| s[w].as_slice())))
                    .collect()
            })
            .collect();
        CtaStreams { streams }
    }
}

fn interleave<'a>(lists: impl Iterator<Item = &'a [u64]>) -> Vec<u64> {
    let lists: Vec<&[u64]> = lists.collect();
    let longest = lists.iter().map(|l| l.len()).max().unwrap_or(0);
    let mut out = Vec::with_capacity(lists.iter().map(|l| l.len()).sum());
    for i in 0..longest {
        for l in &lists {
            if let Some(&a) = l.get(i) {
                out.push(a);
            }
        }
    }
    out
}

/// Every `stride`-th byte of each run.
fn stride_walk(runs: &[ByteRun], stride: u64) -> Vec<u64> {
    runs.iter()
        .flat_map(|r| (0..r.len).step_by(stride as usize).map(move |o| r.start + o))
        .collect()
}

/// Distinct line addresses covered by the runs, ascending.
fn line_walk(runs: &[ByteRun], line_size: u64) -> Vec<u64> {
    let mut lines: Vec<u64> = runs
        .iter()
        .flat_map(|r| (r.start / line_size..=(r.end() - 1) / line_size).map(|l| l * line_size))
        .collect();
    lines.sort_unstable();
    lines.dedup();
    lines
}

fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn rng_for(seed: u64, desc: &LocalityDescriptor, cta: u64) -> ChaCha8Rng {
    let s = mix(mix(seed ^ mix(desc.data.base_addr)) ^ mix(cta) ^ desc.priority as u64);
    ChaCha8Rng::seed_from_u64(s)
}

/// Position of `cta` inside its C-tile and the C-tile's population.
fn rank_in_ctile(cta: Dim3, desc: &LocalityDescriptor, grid: &CtaGrid) -> (u64, u64) {
    let ct = desc.tiles.ctile_dims;
    let origin = Dim3::new(
        cta.x / ct.x * ct.x,
        cta.y / ct.y * ct.y,
        cta.z / ct.z * ct.z,
    );
    let extent = Dim3::new(
        ct.x.min(grid.dims.x - origin.x),
        ct.y.min(grid.dims.y - origin.y),
        ct.z.min(grid.dims.z - origin.z),
    );
    let local = Dim3::new(cta.x - origin.x, cta.y - origin.y, cta.z - origin.z);
    (local.flat_in(&extent), extent.product())
}

fn share(len: usize, part: u64, parts: u64) -> std::ops::Range<usize> {
    let lo = (len as u64 * part / parts) as usize;
    let hi = (len as u64 * (part + 1) / parts) as usize;
    lo..hi
}

fn chunk(seq: &[u64], warps: usize) -> Vec<Vec<u64>> {
    (0..warps)
        .map(|w| seq[share(seq.len(), w as u64, warps as u64)].to_vec())
        .collect()
}

/// Per-warp address streams of one CTA for one descriptor.
///
/// Co-accessed data: every CTA of a C-tile walks the whole D-tile. Nearby
/// data: each CTA walks its slice of the D-tile widened by one line on each
/// side. Intra-thread data: each warp walks a private slice twice. No-reuse
/// data: each CTA streams its slice once. Regular patterns walk by stride;
/// irregular ones visit the lines in a seeded random order.
pub fn generate_warp_streams(
    desc: &LocalityDescriptor,
    cta: u64,
    grid: &CtaGrid,
    seed: u64,
    line_size: u64,
) -> Vec<Vec<u64>> {
    let warps = grid.warps_per_cta as usize;
    let coords = grid.cta_coords(cta);
    let ctile = ctile_of_cta(coords, desc, grid).expect("CTA inside grid");
    let dtile = dtile_of_ctile(&ctile, desc, grid).expect("validated descriptor");
    let runs = dtile_byte_runs(&dtile, desc);
    let (base, elems_per_line) = match desc.pattern {
        AccessPattern::Regular { stride_bytes } => (
            stride_walk(&runs, stride_bytes),
            line_size.div_ceil(stride_bytes).max(1) as usize,
        ),
        AccessPattern::Irregular => (line_walk(&runs, line_size), 1),
    };
    let irregular = desc.pattern == AccessPattern::Irregular;
    let mut rng = rng_for(seed, desc, cta);
    let mut shuffle = |mut v: Vec<u64>| {
        if irregular {
            v.shuffle(&mut rng);
        }
        v
    };
    let (rank, members) = rank_in_ctile(coords, desc, grid);
    let slice = share(base.len(), rank, members);

    match (desc.ltype, desc.sharing) {
        (LocalityType::InterThread, Some(SharingType::Nearby)) => {
            let lo = slice.start.saturating_sub(elems_per_line);
            let hi = (slice.end + elems_per_line).min(base.len());
            chunk(&shuffle(base[lo..hi].to_vec()), warps)
        }
        (LocalityType::InterThread, _) => chunk(&shuffle(base), warps),
        (LocalityType::IntraThread, _) => {
            let mine = shuffle(base[slice].to_vec());
            chunk(&mine, warps)
                .into_iter()
                .map(|w| w.iter().chain(w.iter()).copied().collect())
                .collect()
        }
        (LocalityType::NoReuse, _) => chunk(&shuffle(base[slice].to_vec()), warps),
    }
}

/// All of one CTA's accesses for one descriptor, warp 0 first.
pub fn generate_accesses(
    desc: &LocalityDescriptor,
    cta: u64,
    grid: &CtaGrid,
    seed: u64,
    line_size: u64,
) -> Vec<u64> {
    generate_warp_streams(desc, cta, grid, seed, line_size)
        .into_iter()
        .flatten()
        .collect()
}
