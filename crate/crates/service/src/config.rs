//! The instrument configuration document served at `/config`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sievebot_core::hal::HalConfig;
use sievebot_core::model::Mesh;
use sievebot_core::protocol::ProtocolTiming;
use sievebot_core::sim::ProcessParams;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServiceConfig {
    pub hal: HalConfig,
    pub timing: ProtocolTiming,
    /// Mesh number to pore size in µm; must be the standard kit.
    pub pore_map: BTreeMap<u32, u32>,
    /// Process parameters for every run. When absent, runs on a shipped
    /// soil use that soil's calibrated robotic parameters.
    #[serde(default)]
    pub params: Option<ProcessParams>,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig {
            hal: HalConfig::default(),
            timing: ProtocolTiming::default(),
            pore_map: standard_pore_map(),
            params: None,
        }
    }
}

pub fn standard_pore_map() -> BTreeMap<u32, u32> {
    Mesh::ALL
        .iter()
        .map(|m| (m.number(), m.pore_um()))
        .collect()
}

impl ServiceConfig {
    /// Checks everything a run would otherwise trip over later.
    pub fn validate(&self) -> Result<(), String> {
        self.hal.validate().map_err(|e| e.to_string())?;
        self.timing.validate().map_err(|e| e.to_string())?;
        if self.pore_map != standard_pore_map() {
            return Err(format!(
                "pore_map must be {:?}, got {:?}",
                standard_pore_map(),
                self.pore_map
            ));
        }
        if let Some(p) = &self.params {
            p.validate().map_err(|e| e.to_string())?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VersionedConfig {
    pub version: u64,
    pub config: ServiceConfig,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_is_valid_and_round_trips() {
        let c = ServiceConfig::default();
        c.validate().unwrap();
        let text = serde_json::to_string(&c).unwrap();
        assert!(text.contains("\"pore_map\":{\"20\":850,\"60\":250,\"200\":75,\"500\":25}"));
        let back: ServiceConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn schema_violations() {
        let mut c = ServiceConfig::default();
        c.pore_map.insert(60, 300);
        assert!(c.validate().unwrap_err().contains("pore_map"));

        let mut c = ServiceConfig::default();
        c.pore_map.remove(&200);
        assert!(c.validate().is_err());

        let mut c = ServiceConfig::default();
        c.timing.egg.cycles = Some(0);
        assert!(c.validate().is_err());

        let mut c = ServiceConfig::default();
        c.hal.valve_flow_lpm = 20.0;
        assert!(c.validate().is_err());

        let mut v = serde_json::to_value(ServiceConfig::default()).unwrap();
        v["extra"] = 1.into();
        assert!(serde_json::from_value::<ServiceConfig>(v).is_err());
    }
}
