//! Turns a scheduler / feature / placement choice into a schedule and a
//! memory placement, then runs the simulation.

use serde::{Deserialize, Serialize};

use crate::engine::config::SystemConfig;
use crate::engine::policy::{select_policies, Features, PolicySet};
use crate::engine::sim::{simulate_streams, PlacementKind, SimOptions, SimOutput};
use crate::engine::workload::{CtaStreams, Workload};
use crate::engine::EngineError;
use crate::numa::{contiguous_partition, place_and_partition, schedule_in_zones, NumaPlan, PlacementOptions};
use crate::scalar::Exact;
use crate::sched::{
    assign_clusters, assign_clusters_in_zones, baseline_bcs, baseline_round_robin, form_clusters,
    ClusterDims, Schedule,
};
use crate::grid::Dim3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchedulerKind {
    RoundRobin,
    Bcs,
    /// Descriptor-driven CTA clusters.
    Clusters,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlacementChoice {
    Ldesc,
    Xor,
    FirstTouch,
}

/// A named configuration: baselines and descriptor-driven variants.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Strategy {
    pub scheduler: SchedulerKind,
    pub features: Features,
}

impl Strategy {
    pub const NAMES: [&'static str; 6] = ["rr", "bcs", "ldesc", "ldesc-sched", "ldesc-pref", "ldesc-cache"];

    pub fn named(name: &str) -> Option<Self> {
        let only = |scheduling, prefetching, cache_management| Features {
            scheduling,
            prefetching,
            cache_management,
        };
        let (scheduler, features) = match name {
            "rr" => (SchedulerKind::RoundRobin, Features::NONE),
            "bcs" => (SchedulerKind::Bcs, Features::NONE),
            "ldesc" => (SchedulerKind::Clusters, Features::ALL),
            "ldesc-sched" => (SchedulerKind::Clusters, only(true, false, false)),
            "ldesc-pref" => (SchedulerKind::RoundRobin, only(false, true, false)),
            "ldesc-cache" => (SchedulerKind::RoundRobin, only(false, false, true)),
            _ => return None,
        };
        Some(Self { scheduler, features })
    }
}

/// Everything decided before the simulation starts.
#[derive(Debug, Clone)]
pub struct Setup {
    pub schedule: Schedule,
    pub placement: PlacementKind,
    pub policies: PolicySet,
    pub clusters: Option<ClusterDims>,
    pub plan: Option<NumaPlan<Exact>>,
}

pub fn prepare(
    workload: &Workload,
    config: &SystemConfig,
    strategy: Strategy,
    placement: PlacementChoice,
    placement_opts: PlacementOptions,
) -> Result<Setup, EngineError> {
    config.validate()?;
    let grid = &workload.grid;
    let descs = &workload.descriptors;
    let sm = config.sm_count;
    let zones = config.zone_count;
    let policies = select_policies(descs).restricted(strategy.features);

    let clusters = (strategy.scheduler == SchedulerKind::Clusters).then(|| {
        let clusterable: Vec<_> = descs
            .iter()
            .zip(&policies.per_descriptor)
            .filter(|(_, p)| p.schedule_with_clusters)
            .map(|(d, _)| d.clone())
            .collect();
        if clusterable.is_empty() {
            ClusterDims(Dim3::ONE)
        } else {
            form_clusters(&clusterable, grid, sm)
        }
    });
    let global = |clusters: &Option<ClusterDims>| match (strategy.scheduler, clusters) {
        (SchedulerKind::Clusters, Some(c)) => assign_clusters(c, grid, sm),
        (SchedulerKind::Bcs, _) => baseline_bcs(grid, sm),
        _ => baseline_round_robin(grid, sm),
    };

    let mut plan = None;
    let (schedule, placement) = if zones == 1 {
        (global(&clusters), PlacementKind::Xor)
    } else {
        match placement {
            PlacementChoice::Xor => (global(&clusters), PlacementKind::Xor),
            PlacementChoice::Ldesc => {
                let p: NumaPlan<Exact> = place_and_partition(descs, grid, zones, placement_opts)?;
                let schedule = match &clusters {
                    Some(c) => assign_clusters_in_zones(c, grid, sm, &p.cta_partition, zones),
                    None => global(&clusters),
                };
                let kind = PlacementKind::Mapped(p.per_structure.clone());
                plan = Some(p);
                (schedule, kind)
            }
            PlacementChoice::FirstTouch => {
                let part = contiguous_partition(grid, zones);
                let schedule = match &clusters {
                    Some(c) => assign_clusters_in_zones(c, grid, sm, &part, zones),
                    None => schedule_in_zones(&part, sm, zones),
                };
                (schedule, PlacementKind::FirstTouch)
            }
        }
    };
    Ok(Setup {
        schedule,
        placement,
        policies,
        clusters,
        plan,
    })
}

/// Prepares and simulates one configuration. `streams` defaults to the
/// workload's generated streams.
pub fn run_experiment(
    workload: &Workload,
    config: &SystemConfig,
    strategy: Strategy,
    placement: PlacementChoice,
    streams: Option<&CtaStreams>,
    opts: SimOptions,
) -> Result<(Setup, SimOutput), EngineError> {
    let setup = prepare(workload, config, strategy, placement, PlacementOptions::default())?;
    let generated;
    let streams = match streams {
        Some(s) => s,
        None => {
            generated = workload.streams();
            &generated
        }
    };
    let out = simulate_streams(
        workload,
        streams,
        config,
        &setup.schedule,
        &setup.placement,
        &setup.policies,
        opts,
    )?;
    Ok((setup, out))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn strategy_names() {
        for n in Strategy::NAMES {
            assert!(Strategy::named(n).is_some());
        }
        assert!(Strategy::named("gto").is_none());
        assert_eq!(Strategy::named("ldesc").unwrap().features, Features::ALL);
    }
}
