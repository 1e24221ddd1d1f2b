//! Descriptor-guided prefetching: next-line for nearby sharing and a stride
//! prefetcher whose distance shrinks as more D-tiles are streamed at once.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::descriptor::{AccessPattern, LocalityDescriptor, LocalityType, SharingType};
use crate::grid::dtile_of_address;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrefetchKind {
    Nextline,
    Stride,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PrefetchRequest {
    pub addr: u64,
    pub trigger_addr: u64,
    pub kind: PrefetchKind,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PrefetchError {
    #[error("no active stream for D-tile {0}")]
    UnknownStream(u64),
}

/// Streams currently being prefetched for one descriptor on one SM.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct StreamState {
    pub active_dtiles: BTreeSet<u64>,
    /// Bytes in one D-tile row.
    pub dtile_width: u64,
}

impl StreamState {
    pub fn new(desc: &LocalityDescriptor) -> Self {
        Self {
            active_dtiles: BTreeSet::new(),
            dtile_width: desc.dtile_width(),
        }
    }

    /// Number of strides to run ahead: `l1_size / (active tiles * tile width)`.
    pub fn distance_factor(&self, l1_size: u64) -> u64 {
        let active = self.active_dtiles.len().max(1) as u64;
        l1_size / (active * self.dtile_width.max(1))
    }
}

/// Prefetches triggered by a demand miss at `addr` on `desc`'s structure.
pub fn on_miss(
    addr: u64,
    desc: &LocalityDescriptor,
    l1_size: u64,
    line_size: u64,
    state: &mut StreamState,
) -> Vec<PrefetchRequest> {
    if desc.ltype != LocalityType::InterThread {
        return Vec::new();
    }
    let Some(tile) = dtile_of_address(addr, desc) else {
        return Vec::new();
    };
    state.active_dtiles.insert(tile.flat);
    let nextline = PrefetchRequest {
        addr: addr + line_size,
        trigger_addr: addr,
        kind: PrefetchKind::Nextline,
    };
    let req = match (desc.sharing, desc.pattern) {
        (Some(SharingType::Nearby), _) => Some(nextline),
        (Some(SharingType::Coaccessed), AccessPattern::Regular { stride_bytes }) => {
            match state.distance_factor(l1_size) {
                0 => Some(nextline),
                f => Some(PrefetchRequest {
                    addr: addr + f * stride_bytes,
                    trigger_addr: addr,
                    kind: PrefetchKind::Stride,
                }),
            }
        }
        _ => None,
    };
    req.into_iter()
        .filter(|r| desc.data.contains(r.addr))
        .collect()
}

/// Drops a D-tile from the active set once the CTAs streaming it are done.
pub fn retire_stream(dtile_index: u64, state: &mut StreamState) -> Result<(), PrefetchError> {
    if state.active_dtiles.remove(&dtile_index) {
        Ok(())
    } else {
        Err(PrefetchError::UnknownStream(dtile_index))
    }
}
