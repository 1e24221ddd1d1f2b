//! Locality descriptors for GPU programs and the architectural mechanisms
//! they drive: CTA clustering, NUMA data placement with coordinated CTA
//! partitioning, cache bypass and pinning, and guided prefetching. A small
//! cycle-driven simulator measures their effect on synthetic workloads.
//!
//! Placement utilities are generic over [`Scalar`]; the aliases below fix the
//! two scalars used in practice.

pub mod cache;
pub mod descriptor;
pub mod engine;
pub mod grid;
pub mod numa;
pub mod prefetch;
pub mod scalar;
pub mod sched;

pub use descriptor::{
    validate_descriptor_set, AccessPattern, DataStructureRef, DescriptorError, LocalityDescriptor,
    LocalityType, SharingType, TileSemantics,
};
pub use grid::{CtaGrid, Dim3, TileIndex};
pub use scalar::{Exact, Scalar};
pub use sched::{ClusterDims, Schedule};

/// Floating-point placement utility.
pub type Utility = f64;
/// Placement plan scored in `f64`.
pub type NumaPlanF64 = numa::NumaPlan<f64>;
/// Placement plan scored with exact rationals.
pub type ExactNumaPlan = numa::NumaPlan<Exact>;
