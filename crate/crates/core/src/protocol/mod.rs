//! Extraction protocols as timed scripts: building, static validation and
//! execution against the simulated machine.

mod build;
mod exec;
mod validate;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hal::DeviceError;
use crate::mechanism::{Compression, MechanismError, SlotRef};
use crate::model::{ModelError, SieveId};
use crate::sim::SimError;

pub use build::{
    build_cyst_protocol, build_egg_protocol, build_full_protocol, CystTiming, EggTiming,
    PrepTiming, ProtocolTiming,
};
pub use exec::{
    AbortHandle, Executor, MachineSnapshot, OutputCounts, Phase, RunInput, RunRecord, RunStatus,
    TelemetryEvent, VesselSummary,
};
pub use validate::{apply_action, validate_script, Violation};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProtocolError {
    #[error("timing configuration lacks an allocation for '{0}'")]
    MissingAllocation(&'static str),
    #[error("timing allocation '{0}' must be a finite number of seconds >= 0")]
    BadAllocation(&'static str),
    #[error("egg extraction needs at least one grind cycle")]
    EmptyGrind,
    #[error("script does not validate: {}", .0.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
    Invalid(Vec<Violation>),
    #[error("script file: {0}")]
    Format(String),
    #[error("no run is in progress")]
    NotRunning,
    #[error(transparent)]
    Device(#[from] DeviceError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// What a step does. Durations inside an action are the timed part
/// (water on, pad grinding); the rest of the step's allocation is motion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum Action {
    /// Pour the prepared suspension through the column at the decant station.
    Decant,
    /// Engage the sprayer over `sieve` (top of the washer column) and run it.
    Wash {
        sieve: SieveId,
        duration_s: f64,
    },
    Rotate {
        quarter_turns: i32,
    },
    Compress {
        target: Compression,
    },
    SprayerRetract,
    GripperTransfer {
        from: SlotRef,
        to: SlotRef,
    },
    GrinderLower {
        height_mm: f64,
    },
    Spin {
        on: bool,
    },
    Grind {
        duration_s: f64,
    },
    GrinderRaise,
    /// Rinse through the column under the grinder with the water nozzle.
    NozzleSpray {
        duration_s: f64,
    },
    /// Rinse a sieve's contents into the collection container.
    CollectOutput {
        sieve: SieveId,
    },
    Dwell {
        duration_s: f64,
    },
}

impl Action {
    /// Time the action itself needs, in ms, excluding motion.
    pub fn timed_ms(&self) -> u64 {
        match *self {
            Action::Wash { duration_s, .. }
            | Action::Grind { duration_s }
            | Action::NozzleSpray { duration_s }
            | Action::Dwell { duration_s } => secs_to_ms(duration_s),
            _ => 0,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Action::Decant => "decant",
            Action::Wash { .. } => "wash",
            Action::Rotate { .. } => "rotate",
            Action::Compress { .. } => "compress",
            Action::SprayerRetract => "sprayer_retract",
            Action::GripperTransfer { .. } => "gripper_transfer",
            Action::GrinderLower { .. } => "grinder_lower",
            Action::Spin { .. } => "spin",
            Action::Grind { .. } => "grind",
            Action::GrinderRaise => "grinder_raise",
            Action::NozzleSpray { .. } => "nozzle_spray",
            Action::CollectOutput { .. } => "collect_output",
            Action::Dwell { .. } => "dwell",
        }
    }
}

pub(crate) fn secs_to_ms(s: f64) -> u64 {
    if s.is_finite() && s > 0.0 {
        (s * 1000.0).round() as u64
    } else {
        0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolStep {
    pub label: String,
    #[serde(flatten)]
    pub action: Action,
    pub duration_ms: u64,
}

impl ProtocolStep {
    pub fn new(label: impl Into<String>, action: Action, duration_ms: u64) -> Self {
        ProtocolStep {
            label: label.into(),
            action,
            duration_ms,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScriptName {
    CystExtraction,
    EggExtraction,
    /// Mixing, settling, cyst extraction and egg extraction back to back.
    FullExtraction,
    Custom,
}

impl fmt::Display for ScriptName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ScriptName::CystExtraction => "cyst_extraction",
            ScriptName::EggExtraction => "egg_extraction",
            ScriptName::FullExtraction => "full_extraction",
            ScriptName::Custom => "custom",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolScript {
    pub name: ScriptName,
    pub steps: Vec<ProtocolStep>,
    pub expected_total_ms: u64,
}

impl ProtocolScript {
    /// Builds a script whose expected total is the sum of its steps.
    pub fn new(name: ScriptName, steps: Vec<ProtocolStep>) -> Self {
        let expected_total_ms = steps.iter().map(|s| s.duration_ms).sum();
        ProtocolScript {
            name,
            steps,
            expected_total_ms,
        }
    }

    pub fn sum_ms(&self) -> u64 {
        self.steps.iter().map(|s| s.duration_ms).sum()
    }

    /// Parses a script file; the stated total must equal the step sum.
    pub fn from_json(s: &str) -> Result<Self, ProtocolError> {
        let script: ProtocolScript =
            serde_json::from_str(s).map_err(|e| ProtocolError::Format(e.to_string()))?;
        if script.expected_total_ms != script.sum_ms() {
            return Err(ProtocolError::Format(format!(
                "expected_total_ms {} differs from the step sum {}",
                script.expected_total_ms,
                script.sum_ms()
            )));
        }
        Ok(script)
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("scripts serialize")
    }

    pub fn shipped_cyst() -> Self {
        Self::from_json(include_str!("../../data/scripts/cyst_extraction.json"))
            .expect("shipped cyst script parses")
    }

    pub fn shipped_egg() -> Self {
        Self::from_json(include_str!("../../data/scripts/egg_extraction.json"))
            .expect("shipped egg script parses")
    }

    /// Total of the grind and nozzle-spray steps.
    pub fn grind_spray_ms(&self) -> u64 {
        self.steps
            .iter()
            .filter(|s| matches!(s.action, Action::Grind { .. } | Action::NozzleSpray { .. }))
            .map(|s| s.action.timed_ms())
            .sum()
    }
}

/// Converts mechanism errors into the reason strings used in violations.
pub(crate) fn reason(e: &MechanismError) -> String {
    match e {
        MechanismError::Interlock(i) => i.reason().to_string(),
        other => other.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shipped_scripts_match_the_builders() {
        let cyst = build_cyst_protocol(&CystTiming::default()).unwrap();
        assert_eq!(ProtocolScript::shipped_cyst(), cyst);
        let egg = build_egg_protocol(&EggTiming::default()).unwrap();
        assert_eq!(ProtocolScript::shipped_egg(), egg);
    }

    #[test]
    fn script_json_round_trip() {
        let egg = ProtocolScript::shipped_egg();
        let back = ProtocolScript::from_json(&egg.to_json_pretty()).unwrap();
        assert_eq!(back, egg);
        let mut bad: serde_json::Value = serde_json::from_str(&egg.to_json_pretty()).unwrap();
        bad["expected_total_ms"] = 1.into();
        assert!(ProtocolScript::from_json(&bad.to_string()).is_err());
    }
}
