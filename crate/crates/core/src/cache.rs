//! Set-associative cache with per-line insertion priority, bypass, hard/soft
//! pinning, periodic unpinning, and MSHRs that track in-flight misses.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheConfig {
    pub capacity: u64,
    #[serde(default = "default_line_size")]
    pub line_size: u64,
    pub ways: u32,
    #[serde(default = "default_mshr_entries")]
    pub mshr_entries: u32,
    /// Cycles between priority resets; 0 disables the timer.
    #[serde(default = "default_pin_reset_period")]
    pub pin_reset_period: u64,
}

fn default_line_size() -> u64 {
    128
}
fn default_mshr_entries() -> u32 {
    32
}
fn default_pin_reset_period() -> u64 {
    100_000
}

impl CacheConfig {
    pub fn new(capacity: u64, ways: u32) -> Self {
        Self {
            capacity,
            line_size: default_line_size(),
            ways,
            mshr_entries: default_mshr_entries(),
            pin_reset_period: default_pin_reset_period(),
        }
    }

    pub fn num_sets(&self) -> u64 {
        self.capacity / (self.line_size * self.ways as u64)
    }

    pub fn validate(&self) -> Result<(), CacheError> {
        let bad = |m: &str| Err(CacheError::InvalidConfig(m.to_string()));
        if !self.line_size.is_power_of_two() {
            return bad("line size must be a power of two");
        }
        if self.ways == 0 || self.mshr_entries == 0 {
            return bad("ways and MSHR entries must be positive");
        }
        let set_bytes = self.line_size * self.ways as u64;
        if self.capacity == 0 || self.capacity % set_bytes != 0 {
            return bad("capacity must be a positive multiple of line_size * ways");
        }
        Ok(())
    }
}

/// Insertion class, ordered from weakest to strongest retention.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InsertionClass {
    Bypass,
    Normal,
    SoftPin,
    HardPin,
}

impl InsertionClass {
    fn priority(self) -> u8 {
        match self {
            InsertionClass::Bypass | InsertionClass::Normal => 0,
            InsertionClass::SoftPin => 1,
            InsertionClass::HardPin => 2,
        }
    }
}

const HIGHEST_PRIORITY: u8 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AccessOutcome {
    Hit,
    /// The line's miss is already outstanding in an MSHR.
    InflightHit,
    Miss,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PrefetchIssue {
    Issued,
    /// Line already resident or in flight.
    Redundant,
    /// No free MSHR.
    Dropped,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CacheError {
    #[error("all MSHR entries are busy")]
    MshrFull,
    #[error("invalid cache configuration: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheStats {
    pub hits: u64,
    pub inflight_hits: u64,
    pub misses: u64,
    pub mshr_stalls: u64,
    pub evictions: u64,
    pub prefetch_issued: u64,
    pub prefetch_useful: u64,
}

impl CacheStats {
    pub fn demand_accesses(&self) -> u64 {
        self.hits + self.inflight_hits + self.misses
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct Line {
    valid: bool,
    line: u64,
    priority: u8,
    last_use: u64,
    /// Filled by a prefetch and not yet demanded.
    prefetched: bool,
}

#[derive(Debug, Clone, Copy)]
struct Mshr {
    class: InsertionClass,
    prefetch: bool,
    demanded: bool,
}

#[derive(Debug, Clone)]
pub struct Cache {
    cfg: CacheConfig,
    num_sets: u64,
    lines: Vec<Line>,
    mshrs: HashMap<u64, Mshr>,
    stamp: u64,
    next_reset: u64,
    stats: CacheStats,
}

impl Cache {
    pub fn new(cfg: CacheConfig) -> Result<Self, CacheError> {
        cfg.validate()?;
        let num_sets = cfg.num_sets();
        Ok(Self {
            cfg,
            num_sets,
            lines: vec![Line::default(); (num_sets * cfg.ways as u64) as usize],
            mshrs: HashMap::new(),
            stamp: 0,
            next_reset: cfg.pin_reset_period,
            stats: CacheStats::default(),
        })
    }

    pub fn config(&self) -> &CacheConfig {
        &self.cfg
    }

    pub fn stats(&self) -> &CacheStats {
        &self.stats
    }

    pub fn line_of(&self, addr: u64) -> u64 {
        addr / self.cfg.line_size
    }

    fn set_range(&self, line: u64) -> std::ops::Range<usize> {
        let ways = self.cfg.ways as usize;
        let set = (line % self.num_sets) as usize;
        set * ways..(set + 1) * ways
    }

    fn find(&self, line: u64) -> Option<usize> {
        self.set_range(line)
            .find(|&i| self.lines[i].valid && self.lines[i].line == line)
    }

    pub fn contains(&self, addr: u64) -> bool {
        self.find(self.line_of(addr)).is_some()
    }

    pub fn is_inflight(&self, addr: u64) -> bool {
        self.mshrs.contains_key(&self.line_of(addr))
    }

    pub fn inflight_count(&self) -> usize {
        self.mshrs.len()
    }

    /// Way holding `addr`, if resident.
    pub fn way_of(&self, addr: u64) -> Option<u32> {
        let line = self.line_of(addr);
        let start = self.set_range(line).start;
        self.find(line).map(|i| (i - start) as u32)
    }

    /// Retention priority of a resident line: 0 normal, 1 soft pin, 2 hard pin.
    pub fn priority_of(&self, addr: u64) -> Option<u8> {
        self.find(self.line_of(addr)).map(|i| self.lines[i].priority)
    }

    fn touch_stamp(&mut self) -> u64 {
        self.stamp += 1;
        self.stamp
    }

    /// Demand access. Misses allocate an MSHR; the line is installed by
    /// [`Cache::fill`]. Bypass accesses never change line state.
    pub fn access(
        &mut self,
        addr: u64,
        class: InsertionClass,
        _cycle: u64,
    ) -> Result<AccessOutcome, CacheError> {
        let line = self.line_of(addr);
        if let Some(i) = self.find(line) {
            if self.lines[i].prefetched {
                self.lines[i].prefetched = false;
                self.stats.prefetch_useful += 1;
            }
            if class != InsertionClass::Bypass {
                let s = self.touch_stamp();
                let l = &mut self.lines[i];
                l.last_use = s;
                l.priority = l.priority.max(class.priority());
            }
            self.stats.hits += 1;
            return Ok(AccessOutcome::Hit);
        }
        if let Some(m) = self.mshrs.get_mut(&line) {
            m.class = m.class.max(class);
            if m.prefetch && !m.demanded {
                self.stats.prefetch_useful += 1;
            }
            m.demanded = true;
            self.stats.inflight_hits += 1;
            return Ok(AccessOutcome::InflightHit);
        }
        if self.mshrs.len() >= self.cfg.mshr_entries as usize {
            self.stats.mshr_stalls += 1;
            return Err(CacheError::MshrFull);
        }
        self.mshrs.insert(
            line,
            Mshr {
                class,
                prefetch: false,
                demanded: true,
            },
        );
        self.stats.misses += 1;
        Ok(AccessOutcome::Miss)
    }

    /// Starts a prefetch of `addr`'s line.
    pub fn prefetch(&mut self, addr: u64, class: InsertionClass) -> PrefetchIssue {
        let line = self.line_of(addr);
        if self.find(line).is_some() || self.mshrs.contains_key(&line) {
            return PrefetchIssue::Redundant;
        }
        if self.mshrs.len() >= self.cfg.mshr_entries as usize {
            return PrefetchIssue::Dropped;
        }
        self.mshrs.insert(
            line,
            Mshr {
                class,
                prefetch: true,
                demanded: false,
            },
        );
        self.stats.prefetch_issued += 1;
        PrefetchIssue::Issued
    }

    /// Completes the outstanding miss for `addr` and installs the line unless
    /// every request for it bypassed. Returns false if no miss was outstanding.
    pub fn fill(&mut self, addr: u64, _cycle: u64) -> bool {
        let line = self.line_of(addr);
        let Some(m) = self.mshrs.remove(&line) else {
            return false;
        };
        if m.class == InsertionClass::Bypass || self.find(line).is_some() {
            return true;
        }
        let victim = self.victim(line);
        if self.lines[victim].valid {
            self.stats.evictions += 1;
        }
        let s = self.touch_stamp();
        self.lines[victim] = Line {
            valid: true,
            line,
            priority: m.class.priority(),
            last_use: s,
            prefetched: m.prefetch && !m.demanded,
        };
        true
    }

    /// Invalid way first; way 0 when the whole set is at the highest priority;
    /// otherwise the lowest priority, least recently used.
    fn victim(&self, line: u64) -> usize {
        let range = self.set_range(line);
        if let Some(i) = range.clone().find(|&i| !self.lines[i].valid) {
            return i;
        }
        if range
            .clone()
            .all(|i| self.lines[i].priority == HIGHEST_PRIORITY)
        {
            return range.start;
        }
        range
            .min_by_key(|&i| (self.lines[i].priority, self.lines[i].last_use))
            .expect("sets have at least one way")
    }

    /// Resets every line to normal priority once per reset period.
    pub fn tick(&mut self, cycle: u64) {
        let period = self.cfg.pin_reset_period;
        if period == 0 || cycle < self.next_reset {
            return;
        }
        for l in &mut self.lines {
            l.priority = 0;
        }
        self.next_reset = (cycle / period + 1) * period;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use InsertionClass::*;

    fn small() -> Cache {
        // 2 KiB, 4 ways, 128 B lines: 4 sets
        let mut cfg = CacheConfig::new(2048, 4);
        cfg.pin_reset_period = 0;
        Cache::new(cfg).unwrap()
    }

    fn load(c: &mut Cache, addr: u64, class: InsertionClass) -> AccessOutcome {
        let out = c.access(addr, class, 0).unwrap();
        if out == AccessOutcome::Miss {
            c.fill(addr, 0);
        }
        out
    }

    #[test]
    fn hit_after_fill() {
        let mut c = small();
        assert_eq!(load(&mut c, 0, Normal), AccessOutcome::Miss);
        assert_eq!(load(&mut c, 64, Normal), AccessOutcome::Hit);
    }

    #[test]
    fn inflight_hit_before_fill() {
        let mut c = small();
        assert_eq!(c.access(0, Normal, 0), Ok(AccessOutcome::Miss));
        assert_eq!(c.access(0, Normal, 1), Ok(AccessOutcome::InflightHit));
        assert!(c.fill(0, 10));
        assert_eq!(c.access(0, Normal, 11), Ok(AccessOutcome::Hit));
        assert!(!c.fill(0, 12));
    }

    #[test]
    fn mshr_full_leaves_state_alone() {
        let mut cfg = CacheConfig::new(2048, 4);
        cfg.mshr_entries = 2;
        let mut c = Cache::new(cfg).unwrap();
        c.access(0, Normal, 0).unwrap();
        c.access(128, Normal, 0).unwrap();
        assert_eq!(c.access(256, Normal, 0), Err(CacheError::MshrFull));
        assert_eq!(c.stats().demand_accesses(), 2);
        assert_eq!(c.stats().mshr_stalls, 1);
    }

    #[test]
    fn bypass_never_allocates() {
        let mut c = small();
        load(&mut c, 0, Normal);
        let way_before = c.way_of(0);
        assert_eq!(load(&mut c, 4096, Bypass), AccessOutcome::Miss);
        assert!(!c.contains(4096));
        assert_eq!(c.way_of(0), way_before);
    }

    #[test]
    fn hard_pin_full_set_evicts_way_zero() {
        let mut c = small();
        // lines 0, 4, 8, 12 map to set 0
        let set0 = |i: u64| i * 4 * 128;
        for i in 0..4 {
            load(&mut c, set0(i), HardPin);
        }
        for i in 0..4 {
            assert_eq!(c.way_of(set0(i)), Some(i as u32));
        }
        load(&mut c, set0(4), HardPin);
        assert_eq!(c.way_of(set0(4)), Some(0));
        for i in 1..4 {
            assert_eq!(c.way_of(set0(i)), Some(i as u32));
        }
    }

    #[test]
    fn normal_line_evicted_before_pinned() {
        let mut c = small();
        let set0 = |i: u64| i * 4 * 128;
        load(&mut c, set0(0), Normal);
        for i in 1..4 {
            load(&mut c, set0(i), HardPin);
        }
        load(&mut c, set0(4), HardPin);
        assert!(!c.contains(set0(0)));
        for i in 1..5 {
            assert!(c.contains(set0(i)));
        }
    }

    #[test]
    fn soft_pin_outranks_normal_only() {
        let mut c = small();
        let set0 = |i: u64| i * 4 * 128;
        load(&mut c, set0(0), SoftPin);
        load(&mut c, set0(1), Normal);
        load(&mut c, set0(2), Normal);
        load(&mut c, set0(3), Normal);
        load(&mut c, set0(4), Normal);
        assert!(c.contains(set0(0)));
        assert!(!c.contains(set0(1)));
    }

    #[test]
    fn timer_unpins() {
        let mut cfg = CacheConfig::new(2048, 4);
        cfg.pin_reset_period = 100;
        let mut c = Cache::new(cfg).unwrap();
        load(&mut c, 0, HardPin);
        c.tick(99);
        assert_eq!(c.priority_of(0), Some(2));
        c.tick(100);
        assert_eq!(c.priority_of(0), Some(0));
        assert!(c.contains(0));
        load(&mut c, 0, HardPin);
        assert_eq!(c.priority_of(0), Some(2));
        c.tick(150);
        assert_eq!(c.priority_of(0), Some(2));
        c.tick(200);
        assert_eq!(c.priority_of(0), Some(0));
    }

    #[test]
    fn prefetch_usefulness() {
        let mut c = small();
        assert_eq!(c.prefetch(0, SoftPin), PrefetchIssue::Issued);
        assert_eq!(c.prefetch(0, SoftPin), PrefetchIssue::Redundant);
        c.fill(0, 5);
        assert_eq!(c.priority_of(0), Some(1));
        assert_eq!(c.access(0, Normal, 6), Ok(AccessOutcome::Hit));
        assert_eq!(c.access(0, Normal, 7), Ok(AccessOutcome::Hit));
        assert_eq!(c.stats().prefetch_useful, 1);
        // demand while the prefetch is still in flight
        c.prefetch(128, SoftPin);
        assert_eq!(c.access(128, Normal, 8), Ok(AccessOutcome::InflightHit));
        assert_eq!(c.stats().prefetch_useful, 2);
    }

    #[test]
    fn rejects_bad_geometry() {
        assert!(Cache::new(CacheConfig::new(1000, 4)).is_err());
        let mut cfg = CacheConfig::new(2048, 4);
        cfg.line_size = 96;
        assert!(Cache::new(cfg).is_err());
    }
}
