use serde::{Deserialize, Serialize};

use crate::cache::InsertionClass;
use crate::descriptor::{AccessPattern, LocalityDescriptor, LocalityType, SharingType};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrefetchPolicy {
    None,
    Nextline,
    Stride,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DescriptorPolicy {
    pub schedule_with_clusters: bool,
    pub insertion: InsertionClass,
    pub prefetch: PrefetchPolicy,
}

/// Which descriptor-driven mechanisms are switched on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Features {
    pub scheduling: bool,
    pub prefetching: bool,
    pub cache_management: bool,
}

impl Features {
    pub const ALL: Features = Features {
        scheduling: true,
        prefetching: true,
        cache_management: true,
    };
    pub const NONE: Features = Features {
        scheduling: false,
        prefetching: false,
        cache_management: false,
    };
}

/// One policy per descriptor, in the descriptors' priority order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicySet {
    pub per_descriptor: Vec<DescriptorPolicy>,
}

impl PolicySet {
    /// Switches off the mechanisms not in `features`.
    pub fn restricted(mut self, features: Features) -> Self {
        for p in &mut self.per_descriptor {
            p.schedule_with_clusters &= features.scheduling;
            if !features.prefetching {
                p.prefetch = PrefetchPolicy::None;
            }
            if !features.cache_management {
                p.insertion = InsertionClass::Normal;
            }
        }
        self
    }

    pub fn any_clustering(&self) -> bool {
        self.per_descriptor.iter().any(|p| p.schedule_with_clusters)
    }
}

/// Maps each descriptor's locality type to the mechanisms that exploit it.
pub fn policy_for(desc: &LocalityDescriptor) -> DescriptorPolicy {
    use InsertionClass::*;
    match desc.ltype {
        LocalityType::InterThread => {
            let prefetch = match (desc.sharing, desc.pattern) {
                (Some(SharingType::Nearby), _) => PrefetchPolicy::Nextline,
                (_, AccessPattern::Regular { .. }) => PrefetchPolicy::Stride,
                (_, AccessPattern::Irregular) => PrefetchPolicy::None,
            };
            DescriptorPolicy {
                schedule_with_clusters: true,
                insertion: SoftPin,
                prefetch,
            }
        }
        LocalityType::IntraThread => DescriptorPolicy {
            schedule_with_clusters: false,
            insertion: HardPin,
            prefetch: PrefetchPolicy::None,
        },
        LocalityType::NoReuse => DescriptorPolicy {
            schedule_with_clusters: false,
            insertion: Bypass,
            prefetch: PrefetchPolicy::None,
        },
    }
}

/// Policies for a priority-sorted descriptor set. Where descriptors overlap,
/// accesses follow the highest-priority one (see [`owner_of`]).
pub fn select_policies(descs: &[LocalityDescriptor]) -> PolicySet {
    PolicySet {
        per_descriptor: descs.iter().map(policy_for).collect(),
    }
}

/// Index of the first (highest-priority) descriptor whose structure holds `addr`.
pub fn owner_of(descs: &[LocalityDescriptor], addr: u64) -> Option<usize> {
    descs.iter().position(|d| d.data.contains(addr))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::descriptor::tests::simple_desc;
    use crate::grid::Dim3;

    fn d() -> LocalityDescriptor {
        simple_desc(Dim3::new(64, 1, 1), Dim3::new(16, 1, 1), Dim3::ONE)
    }

    #[test]
    fn flowchart() {
        let mut x = d();
        assert_eq!(
            policy_for(&x),
            DescriptorPolicy {
                schedule_with_clusters: true,
                insertion: InsertionClass::SoftPin,
                prefetch: PrefetchPolicy::Stride
            }
        );
        x.pattern = AccessPattern::Irregular;
        assert_eq!(policy_for(&x).prefetch, PrefetchPolicy::None);
        assert_eq!(policy_for(&x).insertion, InsertionClass::SoftPin);
        x.sharing = Some(SharingType::Nearby);
        assert_eq!(policy_for(&x).prefetch, PrefetchPolicy::Nextline);
        x.ltype = LocalityType::IntraThread;
        x.sharing = None;
        assert_eq!(
            policy_for(&x),
            DescriptorPolicy {
                schedule_with_clusters: false,
                insertion: InsertionClass::HardPin,
                prefetch: PrefetchPolicy::None
            }
        );
        x.ltype = LocalityType::NoReuse;
        let p = policy_for(&x);
        assert_eq!(p.insertion, InsertionClass::Bypass);
        assert_eq!(p.prefetch, PrefetchPolicy::None);
        assert!(!p.schedule_with_clusters);
    }

    #[test]
    fn restriction() {
        let set = select_policies(&[d()]).restricted(Features::NONE);
        assert_eq!(
            set.per_descriptor[0],
            DescriptorPolicy {
                schedule_with_clusters: false,
                insertion: InsertionClass::Normal,
                prefetch: PrefetchPolicy::None
            }
        );
        assert!(!set.any_clustering());
    }

    #[test]
    fn owner_prefers_priority_order() {
        let a = d();
        let mut b = d();
        b.priority = 1;
        b.ltype = LocalityType::NoReuse;
        b.sharing = None;
        assert_eq!(owner_of(&[a.clone(), b], 8), Some(0));
        assert_eq!(owner_of(&[a], 1 << 20), None);
    }
}
