//! CTA cluster formation from descriptors, cluster placement on SMs, and the
//! baseline CTA schedulers.

use serde::{Deserialize, Serialize};

use crate::descriptor::LocalityDescriptor;
use crate::grid::{CtaGrid, Dim3};

/// CTAs per cluster along each grid axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterDims(pub Dim3);

impl ClusterDims {
    pub fn cluster_count(&self, grid: &CtaGrid) -> Dim3 {
        grid.dims.ceil_div(&self.0)
    }
}

/// Which SM runs each CTA. Indexed by the CTA's X→Y→Z flat id.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schedule {
    pub assignment: Vec<u32>,
    pub sm_count: u32,
}

impl Schedule {
    pub fn sm_of(&self, cta: u64) -> u32 {
        self.assignment[cta as usize]
    }

    /// CTA ids hosted by each SM, in increasing id order.
    pub fn ctas_per_sm(&self) -> Vec<Vec<u64>> {
        let mut out = vec![Vec::new(); self.sm_count as usize];
        for (cta, &sm) in self.assignment.iter().enumerate() {
            out[sm as usize].push(cta as u64);
        }
        out
    }
}

fn tile_count(grid: &Dim3, tile: &Dim3) -> u64 {
    grid.ceil_div(tile).product()
}

/// Axis with the largest extent; ties go to X, then Y, then Z.
fn largest_axis(d: &Dim3) -> usize {
    let mut best = 0;
    for axis in 1..3 {
        if d.get(axis) > d.get(best) {
            best = axis;
        }
    }
    best
}

/// Halves a C-tile along its largest axis until the grid holds at least
/// `sm_num` of them or it cannot shrink further.
pub fn split_ctile(ctile: Dim3, grid: &Dim3, sm_num: u32) -> Dim3 {
    let mut ct = ctile;
    while tile_count(grid, &ct) < sm_num as u64 && ct != Dim3::ONE {
        let axis = largest_axis(&ct);
        ct.set(axis, ct.get(axis).div_ceil(2));
    }
    ct
}

/// Cluster formation over raw C-tile shapes, highest priority first.
pub fn form_clusters_from_ctiles(ctiles: &[Dim3], grid: &CtaGrid, sm_num: u32) -> ClusterDims {
    assert!(!ctiles.is_empty(), "at least one C-tile shape is required");
    let split: Vec<Dim3> = ctiles
        .iter()
        .map(|ct| split_ctile(*ct, &grid.dims, sm_num))
        .collect();
    let mut cls = split[0];
    for ct in &split[1..] {
        let mut merged = cls;
        for axis in 0..3 {
            let c = cls.get(axis);
            merged.set(axis, c * (ct.get(axis) / c).max(1));
        }
        if tile_count(&grid.dims, &merged) >= sm_num as u64 {
            cls = merged;
        }
    }
    ClusterDims(cls)
}

/// Forms CTA clusters from priority-ordered descriptors.
pub fn form_clusters(descs: &[LocalityDescriptor], grid: &CtaGrid, sm_num: u32) -> ClusterDims {
    let ctiles: Vec<Dim3> = descs.iter().map(|d| d.tiles.ctile_dims).collect();
    form_clusters_from_ctiles(&ctiles, grid, sm_num)
}

/// Flat id of the cluster holding each CTA.
pub fn cluster_ids(cls: &ClusterDims, grid: &CtaGrid) -> Vec<u64> {
    let counts = cls.cluster_count(grid);
    grid.dims
        .iter()
        .map(|c| c.floor_div(&cls.0).flat_in(&counts))
        .collect()
}

/// Places clusters on SMs round-robin in X→Y→Z cluster order.
pub fn assign_clusters(cls: &ClusterDims, grid: &CtaGrid, sm_num: u32) -> Schedule {
    let assignment = cluster_ids(cls, grid)
        .into_iter()
        .map(|c| (c % sm_num as u64) as u32)
        .collect();
    Schedule {
        assignment,
        sm_count: sm_num,
    }
}

/// Cluster placement inside NUMA zones: each zone owns a contiguous block of
/// `sm_num / zone_count` SMs, and the part of each cluster that the partition
/// puts in a zone is placed round-robin over that zone's SMs.
pub fn assign_clusters_in_zones(
    cls: &ClusterDims,
    grid: &CtaGrid,
    sm_num: u32,
    partition: &[u32],
    zone_count: u32,
) -> Schedule {
    assert!(zone_count >= 1 && sm_num % zone_count == 0);
    let per_zone = sm_num / zone_count;
    let ids = cluster_ids(cls, grid);
    let mut next = vec![0u32; zone_count as usize];
    let mut seen: std::collections::HashMap<(u64, u32), u32> = std::collections::HashMap::new();
    let assignment = ids
        .iter()
        .zip(partition)
        .map(|(&cluster, &zone)| {
            let slot = *seen.entry((cluster, zone)).or_insert_with(|| {
                let s = next[zone as usize];
                next[zone as usize] += 1;
                s
            });
            zone * per_zone + slot % per_zone
        })
        .collect();
    Schedule {
        assignment,
        sm_count: sm_num,
    }
}

/// Default scheduler: CTA `k` in X→Y→Z order runs on SM `k mod sm_num`.
pub fn baseline_round_robin(grid: &CtaGrid, sm_num: u32) -> Schedule {
    Schedule {
        assignment: (0..grid.cta_count())
            .map(|k| (k % sm_num as u64) as u32)
            .collect(),
        sm_count: sm_num,
    }
}

/// Pairs consecutive CTAs on one SM.
pub fn baseline_bcs(grid: &CtaGrid, sm_num: u32) -> Schedule {
    Schedule {
        assignment: (0..grid.cta_count())
            .map(|k| ((k / 2) % sm_num as u64) as u32)
            .collect(),
        sm_count: sm_num,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(x: u32, y: u32, z: u32) -> CtaGrid {
        CtaGrid::new(Dim3::new(x, y, z), 4)
    }

    #[test]
    fn histo_no_split() {
        let g = grid(16, 8, 1);
        let cls = form_clusters_from_ctiles(&[Dim3::new(1, 8, 1)], &g, 15);
        assert_eq!(cls.0, Dim3::new(1, 8, 1));
        assert_eq!(cls.cluster_count(&g).product(), 16);
    }

    #[test]
    fn histo_one_split() {
        let g = grid(16, 8, 1);
        let cls = form_clusters_from_ctiles(&[Dim3::new(1, 8, 1)], &g, 32);
        assert_eq!(cls.0, Dim3::new(1, 4, 1));
        assert_eq!(cls.cluster_count(&g).product(), 32);
    }

    #[test]
    fn merge_two_descriptors() {
        let g = grid(8, 4, 1);
        let cls = form_clusters_from_ctiles(&[Dim3::new(2, 1, 1), Dim3::new(4, 4, 1)], &g, 4);
        assert_eq!(cls.0, Dim3::new(2, 4, 1));
    }

    #[test]
    fn split_tie_breaks_on_x() {
        assert_eq!(split_ctile(Dim3::new(4, 4, 1), &Dim3::new(8, 4, 1), 4), Dim3::new(2, 4, 1));
        // odd extents round up
        assert_eq!(split_ctile(Dim3::new(5, 1, 1), &Dim3::new(5, 1, 1), 2), Dim3::new(3, 1, 1));
        assert_eq!(split_ctile(Dim3::new(2, 2, 2), &Dim3::new(2, 2, 2), 100), Dim3::ONE);
    }

    #[test]
    fn cluster_round_robin() {
        let g = grid(5, 8, 1);
        let s = assign_clusters(&ClusterDims(Dim3::new(1, 8, 1)), &g, 4);
        let per = s.ctas_per_sm();
        let xs: std::collections::BTreeSet<u32> =
            per[0].iter().map(|&c| g.cta_coords(c).x).collect();
        assert_eq!(xs.into_iter().collect::<Vec<_>>(), vec![0, 4]);
        let one = assign_clusters(&ClusterDims(g.dims), &g, 4);
        assert!(one.assignment.iter().all(|&sm| sm == 0));
    }

    #[test]
    fn five_clusters_four_sms() {
        let g = grid(5, 1, 1);
        let s = assign_clusters(&ClusterDims(Dim3::ONE), &g, 4);
        assert_eq!(s.assignment, vec![0, 1, 2, 3, 0]);
    }

    #[test]
    fn round_robin_baseline() {
        assert_eq!(baseline_round_robin(&grid(4, 1, 1), 4).assignment, vec![0, 1, 2, 3]);
        let s = baseline_round_robin(&grid(5, 8, 1), 4);
        assert_eq!(s.ctas_per_sm()[0], (0..40).step_by(4).collect::<Vec<u64>>());
        assert!(baseline_round_robin(&grid(3, 3, 1), 1).assignment.iter().all(|&s| s == 0));
    }

    #[test]
    fn bcs_baseline() {
        assert_eq!(baseline_bcs(&grid(8, 1, 1), 2).ctas_per_sm()[0], vec![0, 1, 4, 5]);
        assert_eq!(baseline_bcs(&grid(2, 1, 1), 7).assignment, vec![0, 0]);
        assert_eq!(baseline_bcs(&grid(5, 1, 1), 2).assignment, vec![0, 0, 1, 1, 0]);
    }

    #[test]
    fn zone_local_clusters() {
        let g = grid(16, 1, 1);
        let partition: Vec<u32> = (0..16).map(|c| c / 4).collect();
        let s = assign_clusters_in_zones(&ClusterDims(Dim3::new(1, 1, 1)), &g, 16, &partition, 4);
        for (cta, &sm) in s.assignment.iter().enumerate() {
            assert_eq!(sm / 4, partition[cta]);
        }
        // every SM gets one CTA
        let mut sms = s.assignment.clone();
        sms.sort_unstable();
        assert_eq!(sms, (0..16).collect::<Vec<u32>>());
    }
}
