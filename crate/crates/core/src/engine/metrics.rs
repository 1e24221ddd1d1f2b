use std::collections::HashSet;

use serde::{Deserialize, Serialize};

/// Counting metrics for one simulation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimMetrics {
    pub demand_accesses: u64,
    pub l1_hits: u64,
    pub l1_inflight_hits: u64,
    pub l1_misses: u64,
    pub l1_hit_rate: f64,
    pub inflight_hit_rate: f64,
    /// Unique lines demanded by each SM.
    pub working_set: Vec<u64>,
    pub avg_working_set: f64,
    /// Requests leaving the L1s (misses, bypasses and prefetches).
    pub memory_requests: u64,
    /// Fraction of memory requests served by the requester's own zone.
    pub access_efficiency: f64,
    /// Share of memory requests homed in each zone.
    pub zone_access_distribution: Vec<f64>,
    pub remote_traffic: u64,
    pub l2_hit_rate: f64,
    pub prefetch_issued: u64,
    pub prefetch_useful: u64,
    pub prefetch_accuracy: f64,
    pub total_cycles: u64,
}

impl SimMetrics {
    pub fn max_zone_share(&self) -> f64 {
        self.zone_access_distribution
            .iter()
            .copied()
            .fold(0.0, f64::max)
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("metrics serialize")
    }
}

pub(crate) fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Distinct line count per SM over `(sm, addr)` pairs.
pub fn working_set<I>(accesses: I, sm_count: u32, line_size: u64) -> Vec<u64>
where
    I: IntoIterator<Item = (u32, u64)>,
{
    let mut sets: Vec<HashSet<u64>> = vec![HashSet::new(); sm_count as usize];
    for (sm, addr) in accesses {
        sets[sm as usize].insert(addr / line_size);
    }
    sets.into_iter().map(|s| s.len() as u64).collect()
}
