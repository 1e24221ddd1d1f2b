use serde::{Deserialize, Serialize};

use crate::cache::CacheConfig;
use crate::engine::EngineError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Latencies {
    pub l1_hit: u64,
    pub l2_hit: u64,
    pub local_mem: u64,
    pub remote_mem: u64,
}

impl Default for Latencies {
    fn default() -> Self {
        Self {
            l1_hit: 1,
            l2_hit: 30,
            local_mem: 200,
            remote_mem: 300,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemConfig {
    pub sm_count: u32,
    pub zone_count: u32,
    pub l1: CacheConfig,
    pub l2: CacheConfig,
    pub latencies: Latencies,
    /// Accesses per cycle on each directed inter-zone link.
    pub remote_link_capacity: f64,
    pub max_resident_ctas_per_sm: u32,
}

fn l2(capacity: u64, ways: u32) -> CacheConfig {
    CacheConfig {
        mshr_entries: 256,
        ..CacheConfig::new(capacity, ways)
    }
}

impl SystemConfig {
    /// 8 SMs, one zone.
    pub fn desk() -> Self {
        Self {
            sm_count: 8,
            zone_count: 1,
            l1: CacheConfig::new(32 * 1024, 4),
            l2: l2(256 * 1024, 8),
            latencies: Latencies::default(),
            remote_link_capacity: 0.5,
            max_resident_ctas_per_sm: 4,
        }
    }

    /// 16 SMs split over 4 zones.
    pub fn desk_numa() -> Self {
        Self {
            sm_count: 16,
            zone_count: 4,
            ..Self::desk()
        }
    }

    /// Single-chip system: 15 SMs, 32 KiB 4-way L1, 768 KiB 16-way L2.
    pub fn paper_single() -> Self {
        Self {
            sm_count: 15,
            zone_count: 1,
            l2: l2(768 * 1024, 16),
            ..Self::desk()
        }
    }

    /// Multi-module system: 64 SMs in 4 zones, 4 MiB 16-way L2.
    pub fn paper_numa() -> Self {
        Self {
            sm_count: 64,
            zone_count: 4,
            l2: l2(4 * 1024 * 1024, 16),
            ..Self::desk()
        }
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "desk" => Some(Self::desk()),
            "desk-numa" => Some(Self::desk_numa()),
            "paper-single" => Some(Self::paper_single()),
            "paper-numa" => Some(Self::paper_numa()),
            _ => None,
        }
    }

    pub const PRESETS: [&'static str; 4] = ["desk", "desk-numa", "paper-single", "paper-numa"];

    pub fn sms_per_zone(&self) -> u32 {
        self.sm_count / self.zone_count
    }

    pub fn zone_of_sm(&self, sm: u32) -> u32 {
        sm / self.sms_per_zone()
    }

    pub fn validate(&self) -> Result<(), EngineError> {
        let bad = |m: String| Err(EngineError::InvalidConfig(m));
        if self.sm_count == 0 || self.max_resident_ctas_per_sm == 0 {
            return bad("sm_count and max_resident_ctas_per_sm must be positive".into());
        }
        if !self.zone_count.is_power_of_two() {
            return bad(format!("zone_count {} is not a power of two", self.zone_count));
        }
        if self.sm_count % self.zone_count != 0 {
            return bad(format!(
                "sm_count {} does not split evenly over {} zones",
                self.sm_count, self.zone_count
            ));
        }
        if !(self.remote_link_capacity > 0.0) {
            return bad("remote_link_capacity must be positive".into());
        }
        let l = &self.latencies;
        if l.l1_hit == 0 || l.l2_hit == 0 || l.local_mem == 0 || l.remote_mem == 0 {
            return bad("latencies must be positive".into());
        }
        self.l1.validate()?;
        self.l2.validate()?;
        if self.l1.line_size != self.l2.line_size {
            return bad("L1 and L2 line sizes differ".into());
        }
        Ok(())
    }
}
