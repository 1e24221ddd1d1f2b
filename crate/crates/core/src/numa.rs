//! NUMA zone mapping: bit-range interleaving, XOR hashing and first-touch
//! pages, plus the coordinated CTA-partition / placement search.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::descriptor::{LocalityDescriptor, PAGE_SIZE};
use crate::grid::{ctile_of_cta, dtile_byte_runs, dtile_of_ctile, ByteRun, CtaGrid, TileIndex};
use crate::scalar::Scalar;
use crate::sched::Schedule;

/// Lowest and highest candidate interleaving bit. Bit 7 keeps 128-byte bursts
/// inside one zone; bit 16 is one 64 KiB page.
pub const MIN_LOW_BIT: u32 = 7;
pub const MAX_LOW_BIT: u32 = 16;

/// Default balance guard: a partition is rejected when its busiest zone holds
/// more than this multiple of the ideal per-zone CTA count.
pub const DEFAULT_BALANCE_GUARD: f64 = 1.25;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MappingScheme {
    BitRange,
    XorHash,
    FirstTouch,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ZoneMapping {
    pub scheme: MappingScheme,
    pub low_bit: u32,
    pub num_bits: u32,
}

impl ZoneMapping {
    pub fn bit_range(low_bit: u32, zone_count: u32) -> Self {
        Self {
            scheme: MappingScheme::BitRange,
            low_bit,
            num_bits: zone_bits(zone_count),
        }
    }

    pub fn xor_hash(zone_count: u32) -> Self {
        Self {
            scheme: MappingScheme::XorHash,
            low_bit: MIN_LOW_BIT,
            num_bits: zone_bits(zone_count),
        }
    }

    pub fn first_touch(zone_count: u32) -> Self {
        Self {
            scheme: MappingScheme::FirstTouch,
            low_bit: PAGE_SIZE.trailing_zeros(),
            num_bits: zone_bits(zone_count),
        }
    }
}

pub fn zone_bits(zone_count: u32) -> u32 {
    zone_count.trailing_zeros()
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum NumaError {
    #[error("address 0x{addr:x} lies on a page that was never touched")]
    UnplacedPage { addr: u64 },
    #[error("zone count {0} is not a power of two")]
    BadZoneCount(u32),
    #[error("no locality descriptors given")]
    NoDescriptors,
    #[error("every candidate partition exceeds the balance guard")]
    NoFeasiblePartition,
}

pub fn check_zone_count(zone_count: u32) -> Result<(), NumaError> {
    if zone_count.is_power_of_two() {
        Ok(())
    } else {
        Err(NumaError::BadZoneCount(zone_count))
    }
}

/// Zone of `addr` under a bit-range or XOR mapping. First-touch mappings
/// consult `pages`.
pub fn zone_of_address(
    addr: u64,
    m: &ZoneMapping,
    zone_count: u32,
    pages: Option<&FirstTouchPlacement>,
) -> Result<u32, NumaError> {
    let zc = zone_count as u64;
    match m.scheme {
        MappingScheme::BitRange => Ok(((addr >> m.low_bit) % zc) as u32),
        MappingScheme::XorHash => {
            let nb = m.num_bits;
            let h = (addr >> 7) ^ (addr >> (7 + nb)) ^ (addr >> (7 + 2 * nb));
            Ok((h % zc) as u32)
        }
        MappingScheme::FirstTouch => pages
            .ok_or(NumaError::UnplacedPage { addr })?
            .zone_of(addr),
    }
}

/// Adds the bytes of `run` falling in each zone of a `low_bit` interleaving.
pub fn add_stripe_bytes(run: ByteRun, low_bit: u32, counts: &mut [u64]) {
    let zc = counts.len() as u64;
    let mut a = run.start;
    let end = run.end();
    while a < end {
        let next = ((a >> low_bit) + 1) << low_bit;
        let e = next.min(end);
        counts[((a >> low_bit) % zc) as usize] += e - a;
        a = e;
    }
}

/// Per-zone byte counts of one D-tile.
pub fn dtile_zone_bytes(
    dtile: &TileIndex,
    desc: &LocalityDescriptor,
    low_bit: u32,
    zone_count: u32,
) -> Vec<u64> {
    let mut counts = vec![0u64; zone_count as usize];
    for run in dtile_byte_runs(dtile, desc) {
        add_stripe_bytes(run, low_bit, &mut counts);
    }
    counts
}

/// Zone holding the most bytes; the lowest id wins ties.
fn majority_zone(counts: &[u64]) -> u32 {
    let mut best = 0;
    for (z, &c) in counts.iter().enumerate() {
        if c > counts[best] {
            best = z;
        }
    }
    best as u32
}

/// CTA to C-tile to D-tile wiring for one descriptor.
#[derive(Debug, Clone)]
struct TileMap {
    cta_ctile: Vec<usize>,
    ctile_dtile: Vec<TileIndex>,
    ctile_size: Vec<u64>,
}

impl TileMap {
    fn new(desc: &LocalityDescriptor, grid: &CtaGrid) -> Self {
        let ccount = desc.ctile_count(grid);
        let n = ccount.product() as usize;
        let mut cta_ctile = Vec::with_capacity(grid.cta_count() as usize);
        let mut ctile_size = vec![0u64; n];
        for cta in grid.dims.iter() {
            let ct = ctile_of_cta(cta, desc, grid).expect("CTA inside grid");
            cta_ctile.push(ct.flat as usize);
            ctile_size[ct.flat as usize] += 1;
        }
        let ctile_dtile = ccount
            .iter()
            .map(|c| {
                dtile_of_ctile(&TileIndex::xyz(c, &ccount), desc, grid)
                    .expect("validated descriptor pairs every C-tile")
            })
            .collect();
        Self {
            cta_ctile,
            ctile_dtile,
            ctile_size,
        }
    }

    /// Zone histogram of the D-tile paired with each C-tile.
    fn profile(&self, desc: &LocalityDescriptor, low_bit: u32, zone_count: u32) -> Vec<Vec<u64>> {
        self.ctile_dtile
            .iter()
            .map(|d| dtile_zone_bytes(d, desc, low_bit, zone_count))
            .collect()
    }
}

fn partition_from_profile(map: &TileMap, profile: &[Vec<u64>]) -> Vec<u32> {
    let ctile_zone: Vec<u32> = profile.iter().map(|c| majority_zone(c)).collect();
    map.cta_ctile.iter().map(|&c| ctile_zone[c]).collect()
}

fn gcd(a: u128, b: u128) -> u128 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Local byte fraction as an exact `(numerator, denominator)` pair.
///
/// Each C-tile contributes the bytes of its D-tile that sit in its CTAs'
/// zones, averaged over those CTAs.
fn local_fraction(
    map: &TileMap,
    profile: &[Vec<u64>],
    partition: &[u32],
    total_bytes: u64,
) -> (u128, u128) {
    let mut local = vec![0u128; map.ctile_size.len()];
    for (cta, &ct) in map.cta_ctile.iter().enumerate() {
        local[ct] += profile[ct][partition[cta] as usize] as u128;
    }
    let lcm = map
        .ctile_size
        .iter()
        .filter(|&&s| s > 0)
        .fold(1u128, |l, &s| l / gcd(l, s as u128) * s as u128);
    let num: u128 = local
        .iter()
        .zip(&map.ctile_size)
        .filter(|(_, &s)| s > 0)
        .map(|(&l, &s)| l * (lcm / s as u128))
        .sum();
    (num, lcm * total_bytes as u128)
}

/// CTA partition that sends each C-tile to the zone holding most of its D-tile
/// under a `low_bit` interleaving. Indexed by CTA flat id.
pub fn numa_part(
    desc: &LocalityDescriptor,
    low_bit: u32,
    grid: &CtaGrid,
    zone_count: u32,
) -> Vec<u32> {
    let map = TileMap::new(desc, grid);
    partition_from_profile(&map, &map.profile(desc, low_bit, zone_count))
}

/// `weight` times the fraction of the structure's bytes that are local to the
/// CTAs accessing them.
pub fn comp_util<S: Scalar>(
    weight: u64,
    desc: &LocalityDescriptor,
    partition: &[u32],
    low_bit: u32,
    grid: &CtaGrid,
    zone_count: u32,
) -> S {
    let map = TileMap::new(desc, grid);
    let profile = map.profile(desc, low_bit, zone_count);
    let (num, den) = local_fraction(&map, &profile, partition, desc.data.total_bytes());
    S::from_ratio(weight as u128 * num, den)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlacementOptions {
    /// `None` disables the guard.
    pub balance_guard: Option<f64>,
    /// Fail with [`NumaError::NoFeasiblePartition`] instead of relaxing the guard.
    pub strict: bool,
}

impl Default for PlacementOptions {
    fn default() -> Self {
        Self {
            balance_guard: Some(DEFAULT_BALANCE_GUARD),
            strict: false,
        }
    }
}

/// Coordinated CTA partition and per-structure address mapping.
#[derive(Debug, Clone, PartialEq)]
pub struct NumaPlan<S> {
    /// Zone of each CTA, by flat id.
    pub cta_partition: Vec<u32>,
    pub per_structure: BTreeMap<String, ZoneMapping>,
    /// Chosen interleaving bit per descriptor, in priority order.
    pub descriptor_bits: Vec<u32>,
    pub utility: S,
    /// Set when every candidate broke the balance guard and the guard was dropped.
    pub guard_relaxed: bool,
}

#[derive(Serialize)]
struct PlanJson<'a> {
    partition: &'a [u32],
    mappings: BTreeMap<&'a str, MappingJson>,
    utility: f64,
    guard_relaxed: bool,
}

#[derive(Serialize)]
struct MappingJson {
    scheme: MappingScheme,
    low_bit: u32,
}

impl<S: Scalar> NumaPlan<S> {
    pub fn to_json(&self) -> serde_json::Value {
        let mappings = self
            .per_structure
            .iter()
            .map(|(k, m)| {
                (
                    k.as_str(),
                    MappingJson {
                        scheme: m.scheme,
                        low_bit: m.low_bit,
                    },
                )
            })
            .collect();
        serde_json::to_value(PlanJson {
            partition: &self.cta_partition,
            mappings,
            utility: self.utility.to_f64(),
            guard_relaxed: self.guard_relaxed,
        })
        .expect("plan serializes")
    }

    /// The same plan with its utility converted to another scalar.
    pub fn map_utility<T: Scalar>(self, f: impl FnOnce(S) -> T) -> NumaPlan<T> {
        NumaPlan {
            cta_partition: self.cta_partition,
            per_structure: self.per_structure,
            descriptor_bits: self.descriptor_bits,
            utility: f(self.utility),
            guard_relaxed: self.guard_relaxed,
        }
    }
}

fn within_guard(partition: &[u32], zone_count: u32, guard: f64) -> bool {
    let mut load = vec![0u64; zone_count as usize];
    for &z in partition {
        load[z as usize] += 1;
    }
    let ideal = (partition.len() as u64).div_ceil(zone_count as u64);
    let max = load.into_iter().max().unwrap_or(0);
    max as f64 <= ideal as f64 * guard
}

struct Candidate<S> {
    b_hi: u32,
    partition: Vec<u32>,
    bits: Vec<u32>,
    utility: S,
    balanced: bool,
}

/// Searches every interleaving bit for the top-priority descriptor, derives
/// its CTA partition, then picks the best bit for each remaining descriptor
/// under that partition. The candidate with the highest total utility wins;
/// ties go to the smaller top-priority bit.
///
/// `descs` must be validated and sorted by priority.
pub fn place_and_partition<S: Scalar>(
    descs: &[LocalityDescriptor],
    grid: &CtaGrid,
    zone_count: u32,
    opts: PlacementOptions,
) -> Result<NumaPlan<S>, NumaError> {
    check_zone_count(zone_count)?;
    if descs.is_empty() {
        return Err(NumaError::NoDescriptors);
    }
    let n = descs.len() as u64;
    let maps: Vec<TileMap> = descs.iter().map(|d| TileMap::new(d, grid)).collect();
    let bits: Vec<u32> = (MIN_LOW_BIT..=MAX_LOW_BIT).collect();
    // profiles[desc][bit] -> per C-tile zone histogram
    let profiles: Vec<Vec<Vec<Vec<u64>>>> = descs
        .iter()
        .zip(&maps)
        .map(|(d, m)| bits.iter().map(|&b| m.profile(d, b, zone_count)).collect())
        .collect();
    let util = |i: usize, bi: usize, partition: &[u32]| -> S {
        let (num, den) = local_fraction(
            &maps[i],
            &profiles[i][bi],
            partition,
            descs[i].data.total_bytes(),
        );
        S::from_ratio((n - i as u64) as u128 * num, den)
    };

    let candidates: Vec<Candidate<S>> = bits
        .iter()
        .enumerate()
        .map(|(hi_idx, &b_hi)| {
            let partition = partition_from_profile(&maps[0], &profiles[0][hi_idx]);
            let mut total = util(0, hi_idx, &partition);
            let mut chosen = vec![b_hi];
            for i in 1..descs.len() {
                let mut best_bit = MIN_LOW_BIT;
                let mut best = S::zero();
                for (lo_idx, &b_lo) in bits.iter().enumerate() {
                    let u = util(i, lo_idx, &partition);
                    if u > best {
                        best = u;
                        best_bit = b_lo;
                    }
                }
                chosen.push(best_bit);
                total = total + best;
            }
            let balanced = opts
                .balance_guard
                .map_or(true, |g| within_guard(&partition, zone_count, g));
            Candidate {
                b_hi,
                partition,
                bits: chosen,
                utility: total,
                balanced,
            }
        })
        .collect();

    let pick = |require_balance: bool| {
        let mut best: Option<&Candidate<S>> = None;
        for c in candidates.iter().filter(|c| c.balanced || !require_balance) {
            if best.map_or(true, |b| c.utility > b.utility) {
                best = Some(c);
            }
        }
        best
    };
    let (winner, relaxed) = match pick(true) {
        Some(c) => (c, false),
        None if opts.strict => return Err(NumaError::NoFeasiblePartition),
        None => (pick(false).expect("at least one candidate"), true),
    };
    debug_assert!(bits.contains(&winner.b_hi));

    let mut per_structure = BTreeMap::new();
    for (d, &b) in descs.iter().zip(&winner.bits) {
        per_structure
            .entry(d.data.name.clone())
            .or_insert_with(|| ZoneMapping::bit_range(b, zone_count));
    }
    Ok(NumaPlan {
        cta_partition: winner.partition.clone(),
        per_structure,
        descriptor_bits: winner.bits.clone(),
        utility: winner.utility,
        guard_relaxed: relaxed,
    })
}

/// Pages placed in the zone of their first accessor.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FirstTouchPlacement {
    pages: BTreeMap<u64, u32>,
}

impl FirstTouchPlacement {
    pub fn page_of(addr: u64) -> u64 {
        addr / PAGE_SIZE
    }

    /// Zone of `addr`'s page, placing the page in `zone` if untouched.
    pub fn touch(&mut self, addr: u64, zone: u32) -> u32 {
        *self.pages.entry(Self::page_of(addr)).or_insert(zone)
    }

    pub fn zone_of(&self, addr: u64) -> Result<u32, NumaError> {
        self.pages
            .get(&Self::page_of(addr))
            .copied()
            .ok_or(NumaError::UnplacedPage { addr })
    }

    pub fn page_count(&self) -> usize {
        self.pages.len()
    }
}

/// Splits the grid into `zone_count` contiguous X→Y→Z ranges of CTAs.
pub fn contiguous_partition(grid: &CtaGrid, zone_count: u32) -> Vec<u32> {
    let total = grid.cta_count();
    (0..total)
        .map(|k| (k * zone_count as u64 / total) as u32)
        .collect()
}

/// Round-robin over each zone's own SMs, given a CTA partition.
pub fn schedule_in_zones(partition: &[u32], sm_count: u32, zone_count: u32) -> Schedule {
    assert!(sm_count % zone_count == 0);
    let per_zone = sm_count / zone_count;
    let mut next = vec![0u32; zone_count as usize];
    let assignment = partition
        .iter()
        .map(|&z| {
            let slot = next[z as usize];
            next[z as usize] += 1;
            z * per_zone + slot % per_zone
        })
        .collect();
    Schedule {
        assignment,
        sm_count,
    }
}

#[derive(Debug, Clone)]
pub struct FirstTouchOutcome {
    pub placement: FirstTouchPlacement,
    pub partition: Vec<u32>,
    pub schedule: Schedule,
}

/// First-touch page placement with a contiguous distributed CTA schedule.
/// `trace` lists `(cta id, address)` in the order the accesses happen.
pub fn baseline_first_touch(
    grid: &CtaGrid,
    zone_count: u32,
    sm_count: u32,
    trace: &[(u64, u64)],
) -> FirstTouchOutcome {
    let partition = contiguous_partition(grid, zone_count);
    let mut placement = FirstTouchPlacement::default();
    for &(cta, addr) in trace {
        placement.touch(addr, partition[cta as usize]);
    }
    let schedule = schedule_in_zones(&partition, sm_count, zone_count);
    FirstTouchOutcome {
        placement,
        partition,
        schedule,
    }
}
