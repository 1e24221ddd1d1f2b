//! Workload generation, policy selection, and the multi-SM simulation.

pub mod config;
pub mod experiment;
pub mod metrics;
pub mod policy;
pub mod sim;
pub mod trace;
pub mod workload;

use thiserror::Error;

pub use config::{Latencies, SystemConfig};
pub use experiment::{prepare, run_experiment, PlacementChoice, SchedulerKind, Setup, Strategy};
pub use metrics::{working_set, SimMetrics};
pub use policy::{select_policies, DescriptorPolicy, Features, PolicySet, PrefetchPolicy};
pub use sim::{simulate, simulate_streams, PlacementKind, SimOptions, SimOutput};
pub use trace::AccessEvent;
pub use workload::{generate_accesses, generate_warp_streams, CtaStreams, Workload};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("configuration mismatch: {0}")]
    ConfigMismatch(String),
    #[error("invalid system configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Cache(#[from] crate::cache::CacheError),
    #[error(transparent)]
    Numa(#[from] crate::numa::NumaError),
    #[error(transparent)]
    Descriptor(#[from] crate::descriptor::DescriptorError),
    #[error(transparent)]
    Trace(#[from] trace::TraceError),
}
