//! Experiment configuration files.
//!
//! Structures are declared once and referenced by name from descriptors;
//! addresses are hex strings. `system` is either a preset name or an object
//! whose missing fields come from `base` (default `desk`).

use std::path::Path;

use ldesc_core::cache::CacheConfig;
use ldesc_core::engine::trace::parse_hex;
use ldesc_core::engine::{Latencies, PlacementChoice, Strategy, SystemConfig, Workload};
use ldesc_core::{
    AccessPattern, CtaGrid, DataStructureRef, Dim3, LocalityDescriptor, LocalityType, SharingType,
    TileSemantics,
};
use serde::{Deserialize, Deserializer};

use crate::CliError;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_system")]
    pub system: SystemSpec,
    pub grid: CtaGrid,
    pub data_structures: Vec<StructureSpec>,
    pub descriptors: Vec<DescriptorSpec>,
    #[serde(default = "default_policy")]
    pub policy: String,
    #[serde(default = "default_placement")]
    pub placement: PlacementChoice,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_line_size")]
    pub line_size: u64,
}

fn default_system() -> SystemSpec {
    SystemSpec::Preset("desk".into())
}
fn default_policy() -> String {
    "ldesc".into()
}
fn default_placement() -> PlacementChoice {
    PlacementChoice::Ldesc
}
fn default_seed() -> u64 {
    1
}
fn default_line_size() -> u64 {
    128
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum SystemSpec {
    Preset(String),
    Custom(SystemOverrides),
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemOverrides {
    pub base: Option<String>,
    pub sm_count: Option<u32>,
    pub zone_count: Option<u32>,
    pub l1: Option<CacheConfig>,
    pub l2: Option<CacheConfig>,
    pub latencies: Option<Latencies>,
    pub remote_link_capacity: Option<f64>,
    pub max_resident_ctas_per_sm: Option<u32>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StructureSpec {
    pub name: String,
    #[serde(deserialize_with = "de_addr")]
    pub base_addr: u64,
    pub elem_size: u64,
    pub dims: Dim3,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DescriptorSpec {
    pub data: String,
    pub locality: LocalityType,
    #[serde(default)]
    pub sharing: Option<SharingType>,
    pub pattern: AccessPattern,
    pub dtile: Dim3,
    pub ctile: Dim3,
    pub compute_data_map: [u8; 3],
    #[serde(default)]
    pub priority: u32,
}

fn de_addr<'de, D: Deserializer<'de>>(d: D) -> Result<u64, D::Error> {
    let s = String::deserialize(d)?;
    parse_hex(&s).map_err(serde::de::Error::custom)
}

fn preset(name: &str) -> Result<SystemConfig, CliError> {
    SystemConfig::preset(name).ok_or_else(|| {
        CliError::Config(format!(
            "system: unknown preset {name:?} (expected one of {})",
            SystemConfig::PRESETS.join(", ")
        ))
    })
}

impl SystemSpec {
    pub fn resolve(&self) -> Result<SystemConfig, CliError> {
        match self {
            SystemSpec::Preset(name) => preset(name),
            SystemSpec::Custom(o) => {
                let mut c = preset(o.base.as_deref().unwrap_or("desk"))?;
                if let Some(v) = o.sm_count {
                    c.sm_count = v;
                }
                if let Some(v) = o.zone_count {
                    c.zone_count = v;
                }
                if let Some(v) = o.l1 {
                    c.l1 = v;
                }
                if let Some(v) = o.l2 {
                    c.l2 = v;
                }
                if let Some(v) = o.latencies {
                    c.latencies = v;
                }
                if let Some(v) = o.remote_link_capacity {
                    c.remote_link_capacity = v;
                }
                if let Some(v) = o.max_resident_ctas_per_sm {
                    c.max_resident_ctas_per_sm = v;
                }
                Ok(c)
            }
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Parses and reports failures with the offending field path and line.
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: Self = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            match path.as_str() {
                "" | "." | "?" => CliError::Config(e.into_inner().to_string()),
                _ => CliError::Config(format!("{path}: {}", e.into_inner())),
            }
        })?;
        cfg.check_references()?;
        Ok(cfg)
    }

    fn check_references(&self) -> Result<(), CliError> {
        for (i, s) in self.data_structures.iter().enumerate() {
            if self.data_structures[..i].iter().any(|p| p.name == s.name) {
                return Err(CliError::Config(format!(
                    "data_structures[{i}].name: duplicate structure {:?}",
                    s.name
                )));
            }
        }
        for (i, d) in self.descriptors.iter().enumerate() {
            if !self.data_structures.iter().any(|s| s.name == d.data) {
                return Err(CliError::Config(format!(
                    "descriptors[{i}].data: unknown data structure {:?}",
                    d.data
                )));
            }
        }
        if Strategy::named(&self.policy).is_none() {
            return Err(CliError::Config(format!(
                "policy: unknown policy {:?} (expected one of {})",
                self.policy,
                Strategy::NAMES.join(", ")
            )));
        }
        Ok(())
    }

    pub fn descriptors(&self) -> Vec<LocalityDescriptor> {
        self.descriptors
            .iter()
            .map(|d| {
                let s = self
                    .data_structures
                    .iter()
                    .find(|s| s.name == d.data)
                    .expect("references checked at load");
                LocalityDescriptor {
                    data: DataStructureRef {
                        name: s.name.clone(),
                        base_addr: s.base_addr,
                        elem_size: s.elem_size,
                        dims: s.dims,
                    },
                    ltype: d.locality,
                    tiles: TileSemantics {
                        dtile_dims: d.dtile,
                        ctile_dims: d.ctile,
                        compute_data_map: d.compute_data_map,
                    },
                    sharing: d.sharing,
                    pattern: d.pattern,
                    priority: d.priority,
                }
            })
            .collect()
    }

    pub fn workload(&self, seed: u64) -> Result<Workload, CliError> {
        Workload::new(&self.descriptors(), self.grid.clone(), seed, self.line_size)
            .map_err(|e| CliError::Config(format!("descriptors: {e}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MIN: &str = r#"{
        "grid": {"dims": [4, 1, 1], "warps_per_cta": 2},
        "data_structures": [{"name": "a", "base_addr": "0x0", "elem_size": 4, "dims": [1024, 1, 1]}],
        "descriptors": [{"data": "a", "locality": "inter_thread", "sharing": "coaccessed",
            "pattern": {"kind": "regular", "stride_bytes": 128},
            "dtile": [256, 1, 1], "ctile": [1, 1, 1], "compute_data_map": [1, 0, 0]}]
    }"#;

    #[test]
    fn defaults_apply() {
        let c = ExperimentConfig::parse(MIN).unwrap();
        assert_eq!(c.seed, 1);
        assert_eq!(c.policy, "ldesc");
        assert_eq!(c.system.resolve().unwrap(), SystemConfig::desk());
        c.workload(c.seed).unwrap();
    }

    #[test]
    fn overrides_layer_on_base() {
        let s: SystemSpec = serde_json::from_str(r#"{"base": "desk-numa", "sm_count": 8}"#).unwrap();
        let c = s.resolve().unwrap();
        assert_eq!((c.sm_count, c.zone_count), (8, 4));
    }

    #[test]
    fn unknown_reference_names_path() {
        let bad = MIN.replace(r#""data": "a""#, r#""data": "b""#);
        let e = ExperimentConfig::parse(&bad).unwrap_err().to_string();
        assert!(e.contains("descriptors[0].data"), "{e}");
    }

    #[test]
    fn type_error_names_path_and_line() {
        let bad = MIN.replace(r#""elem_size": 4"#, r#""elem_size": "four""#);
        let e = ExperimentConfig::parse(&bad).unwrap_err().to_string();
        assert!(e.contains("data_structures[0].elem_size"), "{e}");
        assert!(e.contains("line 3"), "{e}");
    }
}
