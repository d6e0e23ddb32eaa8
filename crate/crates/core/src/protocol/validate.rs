use std::fmt;

use serde::{Deserialize, Serialize};

use super::{reason, Action, ProtocolScript, ScriptName};
use crate::mechanism::{
    station, Compression, Interlock, Level, MachineState, MechanismError, SlotRef, PAD_CLEAR_MM,
};
use crate::model::SieveStack;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    /// Index of the offending step; `None` for script-level problems.
    pub step: Option<usize>,
    pub label: String,
    pub reason: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.step {
            Some(i) => write!(f, "step {i} ({}): {}", self.label, self.reason),
            None => write!(f, "{}", self.reason),
        }
    }
}

/// The machine-state effect of one action, or the interlock it trips.
/// Shared by the validator and the executor so the two cannot disagree.
pub fn apply_action(m: &MachineState, action: &Action) -> Result<MachineState, MechanismError> {
    match *action {
        Action::Decant => {
            let column = m.stage.column(station::DECANT);
            if column.is_empty() {
                return Err(Interlock::NothingToDecant.into());
            }
            let specs = column
                .iter()
                .map(|id| m.spec_of(*id).ok_or(Interlock::SieveMismatch))
                .collect::<Result<Vec<_>, _>>()?;
            SieveStack::new(specs).map_err(|_| {
                MechanismError::Domain("decant column is not ordered by decreasing pore size")
            })?;
            Ok(m.clone())
        }
        Action::Wash { sieve, duration_s } => {
            if !(duration_s.is_finite() && duration_s >= 0.0) {
                return Err(MechanismError::Domain("wash duration must be >= 0"));
            }
            let next = m.sprayer_engage()?;
            if next.sprayer.engaged_over != Some(sieve) {
                return Err(Interlock::SieveMismatch.into());
            }
            Ok(next)
        }
        Action::Rotate { quarter_turns } => m.rotate_stage(quarter_turns),
        Action::Compress { target } => m.set_compression(target),
        Action::SprayerRetract => Ok(m.sprayer_retract()),
        Action::GripperTransfer { from, to } => m.gripper_transfer(from, to),
        Action::GrinderLower { height_mm } => m.grinder_set(height_mm, m.grinder.spinning),
        Action::Spin { on } => m.grinder_set(m.grinder.pad_height_mm, on),
        Action::Grind { duration_s } => {
            if !(duration_s.is_finite() && duration_s >= 0.0) {
                return Err(MechanismError::Domain("grind duration must be >= 0"));
            }
            if !m.is_grinding() {
                return Err(Interlock::NoGrindContact.into());
            }
            Ok(m.clone())
        }
        Action::GrinderRaise => m.grinder_set(PAD_CLEAR_MM, m.grinder.spinning),
        Action::NozzleSpray { duration_s } => {
            if !(duration_s.is_finite() && duration_s >= 0.0) {
                return Err(MechanismError::Domain("spray duration must be >= 0"));
            }
            if m.stage.compression != Compression::Full
                || m.stage.column(station::GRINDER).len() < 2
                || m.stage
                    .at(SlotRef::new(Level::Top, station::GRINDER))
                    .is_none()
            {
                return Err(Interlock::NoStackedColumn.into());
            }
            Ok(m.clone())
        }
        Action::CollectOutput { sieve } => {
            if m.find_sieve(sieve).is_none() {
                return Err(Interlock::SieveMismatch.into());
            }
            if !m.grinder.is_raised() {
                return Err(Interlock::CollectWithGrinderLowered.into());
            }
            Ok(m.clone())
        }
        Action::Dwell { duration_s } => {
            if !(duration_s.is_finite() && duration_s >= 0.0) {
                return Err(MechanismError::Domain("dwell duration must be >= 0"));
            }
            Ok(m.clone())
        }
    }
}

/// Symbolically executes the script from `initial`. A step that trips an
/// interlock is reported and skipped; the rest of the script is still
/// checked against the state before it.
pub fn validate_script(
    script: &ProtocolScript,
    initial: &MachineState,
) -> Result<(), Vec<Violation>> {
    let mut out = Vec::new();
    if script.expected_total_ms != script.sum_ms() {
        out.push(Violation {
            step: None,
            label: String::new(),
            reason: format!(
                "expected total {} ms differs from the step sum {} ms",
                script.expected_total_ms,
                script.sum_ms()
            ),
        });
    }
    if script.name == ScriptName::EggExtraction
        && !script
            .steps
            .iter()
            .any(|s| matches!(s.action, Action::Grind { .. }))
    {
        out.push(Violation {
            step: None,
            label: String::new(),
            reason: "egg extraction has no grind cycle".into(),
        });
    }
    let mut state = initial.clone();
    for (i, step) in script.steps.iter().enumerate() {
        let violation = |reason: String| Violation {
            step: Some(i),
            label: step.label.clone(),
            reason,
        };
        if step.duration_ms < step.action.timed_ms() {
            out.push(violation("step is shorter than its timed action".into()));
        }
        match apply_action(&state, &step.action) {
            Ok(next) => match next.check_invariants() {
                Ok(()) => state = next,
                Err(e) => out.push(violation(e)),
            },
            Err(e) => out.push(violation(reason(&e))),
        }
    }
    if out.is_empty() {
        Ok(())
    } else {
        Err(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::{
        build_cyst_protocol, build_egg_protocol, build_full_protocol, CystTiming, EggTiming,
        ProtocolStep, ProtocolTiming,
    };

    #[test]
    fn shipped_scripts_validate() {
        let cyst = build_cyst_protocol(&CystTiming::default()).unwrap();
        validate_script(&cyst, &MachineState::cyst_layout()).unwrap();
        let egg = build_egg_protocol(&EggTiming::default()).unwrap();
        validate_script(&egg, &MachineState::egg_layout()).unwrap();
        let full = build_full_protocol(&ProtocolTiming::default()).unwrap();
        validate_script(&full, &MachineState::cyst_layout()).unwrap();
    }

    #[test]
    fn rotation_while_compressed_is_reported() {
        let mut s = build_cyst_protocol(&CystTiming::default()).unwrap();
        s.steps.insert(
            3,
            ProtocolStep::new("bad", Action::Rotate { quarter_turns: 1 }, 1000),
        );
        s.expected_total_ms = s.sum_ms();
        let v = validate_script(&s, &MachineState::cyst_layout()).unwrap_err();
        assert_eq!(v[0].step, Some(3));
        assert_eq!(v[0].reason, "rotation while compressed");
    }

    #[test]
    fn grinding_before_compression_is_reported() {
        let mut s = build_egg_protocol(&EggTiming::default()).unwrap();
        s.steps.remove(1);
        s.expected_total_ms = s.sum_ms();
        let v = validate_script(&s, &MachineState::egg_layout()).unwrap_err();
        assert_eq!(v[0].reason, "pad cannot reach unstacked sieve");
    }

    #[test]
    fn total_mismatch_is_reported() {
        let mut s = build_cyst_protocol(&CystTiming::default()).unwrap();
        s.expected_total_ms += 1;
        let v = validate_script(&s, &MachineState::cyst_layout()).unwrap_err();
        assert_eq!(v[0].step, None);
    }
}
