use serde::{Deserialize, Serialize};

use super::{Action, ProtocolError, ProtocolScript, ProtocolStep, ScriptName};
use crate::mechanism::{station, Compression, Level, SlotRef, PAD_HOVER_MM};
use crate::model::{Mesh, SieveId};

/// Time allocations for the cyst protocol, in seconds. A missing entry is
/// a configuration error rather than an implicit default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CystTiming {
    pub decant_s: Option<f64>,
    pub rotate_s: Option<f64>,
    pub compress_s: Option<f64>,
    pub sprayer_engage_s: Option<f64>,
    pub wash_s: Option<f64>,
    pub uncompress_s: Option<f64>,
    pub sprayer_retract_s: Option<f64>,
    pub transfer_s: Option<f64>,
}

impl Default for CystTiming {
    fn default() -> Self {
        CystTiming {
            decant_s: Some(20.0),
            rotate_s: Some(10.0),
            compress_s: Some(15.0),
            sprayer_engage_s: Some(10.0),
            wash_s: Some(30.0),
            uncompress_s: Some(15.0),
            sprayer_retract_s: Some(10.0),
            transfer_s: Some(30.0),
        }
    }
}

/// Time allocations for the egg protocol, in seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EggTiming {
    pub rotate_s: Option<f64>,
    pub compress_s: Option<f64>,
    /// Lowering the pad to its hover height.
    pub approach_s: Option<f64>,
    pub spin_up_s: Option<f64>,
    /// Lowering from hover into contact, each cycle.
    pub contact_s: Option<f64>,
    pub grind_s: Option<f64>,
    /// Lifting back to hover, each cycle.
    pub lift_s: Option<f64>,
    pub spray_s: Option<f64>,
    pub cycles: Option<u32>,
    pub spin_down_s: Option<f64>,
    pub raise_s: Option<f64>,
    pub collect_s: Option<f64>,
}

impl Default for EggTiming {
    fn default() -> Self {
        EggTiming {
            rotate_s: Some(4.0),
            compress_s: Some(4.0),
            approach_s: Some(4.0),
            spin_up_s: Some(1.0),
            contact_s: Some(2.0),
            grind_s: Some(10.0),
            lift_s: Some(2.0),
            spray_s: Some(10.0),
            cycles: Some(3),
            spin_down_s: Some(1.0),
            raise_s: Some(4.0),
            collect_s: Some(8.0),
        }
    }
}

/// Sample preparation charged to end-to-end runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrepTiming {
    pub mix_s: Option<f64>,
    pub settle_s: Option<f64>,
}

impl Default for PrepTiming {
    fn default() -> Self {
        PrepTiming {
            mix_s: Some(15.0),
            settle_s: Some(15.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ProtocolTiming {
    pub prep: PrepTiming,
    pub cyst: CystTiming,
    pub egg: EggTiming,
}

impl ProtocolTiming {
    /// Checks that every allocation is present and usable.
    pub fn validate(&self) -> Result<(), ProtocolError> {
        build_cyst_protocol(&self.cyst)?;
        build_egg_protocol(&self.egg)?;
        ms(self.prep.mix_s, "prep.mix_s")?;
        ms(self.prep.settle_s, "prep.settle_s")?;
        Ok(())
    }
}

fn ms(v: Option<f64>, name: &'static str) -> Result<u64, ProtocolError> {
    let s = v.ok_or(ProtocolError::MissingAllocation(name))?;
    if !(s.is_finite() && s >= 0.0) {
        return Err(ProtocolError::BadAllocation(name));
    }
    Ok((s * 1000.0).round() as u64)
}

fn sieve(m: Mesh) -> SieveId {
    SieveId::standard(m)
}

/// Decant over #20/#60, wash #20 into #60, then move #60 on top of the
/// #200/#500 column. Starts from the cyst-loading layout.
pub fn build_cyst_protocol(t: &CystTiming) -> Result<ProtocolScript, ProtocolError> {
    let wash_s = t
        .wash_s
        .ok_or(ProtocolError::MissingAllocation("cyst.wash_s"))?;
    let steps = vec![
        ProtocolStep::new("decant", Action::Decant, ms(t.decant_s, "cyst.decant_s")?),
        ProtocolStep::new(
            "rotate to washer",
            Action::Rotate { quarter_turns: 1 },
            ms(t.rotate_s, "cyst.rotate_s")?,
        ),
        ProtocolStep::new(
            "compress",
            Action::Compress {
                target: Compression::Full,
            },
            ms(t.compress_s, "cyst.compress_s")?,
        ),
        ProtocolStep::new(
            "wash #20",
            Action::Wash {
                sieve: sieve(Mesh::M20),
                duration_s: wash_s,
            },
            ms(t.sprayer_engage_s, "cyst.sprayer_engage_s")? + ms(Some(wash_s), "cyst.wash_s")?,
        ),
        ProtocolStep::new(
            "uncompress",
            Action::Compress {
                target: Compression::Uncompressed,
            },
            ms(t.uncompress_s, "cyst.uncompress_s")?,
        ),
        ProtocolStep::new(
            "retract sprayer",
            Action::SprayerRetract,
            ms(t.sprayer_retract_s, "cyst.sprayer_retract_s")?,
        ),
        ProtocolStep::new(
            "transfer #60",
            Action::GripperTransfer {
                from: SlotRef::new(Level::Middle, station::WASHER),
                to: SlotRef::new(Level::Top, station::TRANSFER),
            },
            ms(t.transfer_s, "cyst.transfer_s")?,
        ),
    ];
    Ok(ProtocolScript::new(ScriptName::CystExtraction, steps))
}

/// Grind the cysts on #60 over #200/#500 and collect the #500 contents.
/// Starts from the layout the cyst protocol leaves.
pub fn build_egg_protocol(t: &EggTiming) -> Result<ProtocolScript, ProtocolError> {
    let cycles = t
        .cycles
        .ok_or(ProtocolError::MissingAllocation("egg.cycles"))?;
    if cycles == 0 {
        return Err(ProtocolError::EmptyGrind);
    }
    let grind_s = t
        .grind_s
        .ok_or(ProtocolError::MissingAllocation("egg.grind_s"))?;
    let spray_s = t
        .spray_s
        .ok_or(ProtocolError::MissingAllocation("egg.spray_s"))?;
    let grind_ms = ms(Some(grind_s), "egg.grind_s")?;
    let spray_ms = ms(Some(spray_s), "egg.spray_s")?;
    let contact_ms = ms(t.contact_s, "egg.contact_s")?;
    let lift_ms = ms(t.lift_s, "egg.lift_s")?;
    let mut steps = vec![
        ProtocolStep::new(
            "rotate to grinder",
            Action::Rotate { quarter_turns: 1 },
            ms(t.rotate_s, "egg.rotate_s")?,
        ),
        ProtocolStep::new(
            "compress",
            Action::Compress {
                target: Compression::Full,
            },
            ms(t.compress_s, "egg.compress_s")?,
        ),
        ProtocolStep::new(
            "lower pad to hover",
            Action::GrinderLower {
                height_mm: PAD_HOVER_MM,
            },
            ms(t.approach_s, "egg.approach_s")?,
        ),
        ProtocolStep::new(
            "spin up",
            Action::Spin { on: true },
            ms(t.spin_up_s, "egg.spin_up_s")?,
        ),
    ];
    for c in 1..=cycles {
        steps.push(ProtocolStep::new(
            format!("contact {c}"),
            Action::GrinderLower { height_mm: 0.0 },
            contact_ms,
        ));
        steps.push(ProtocolStep::new(
            format!("grind {c}"),
            Action::Grind {
                duration_s: grind_s,
            },
            grind_ms,
        ));
        steps.push(ProtocolStep::new(
            format!("lift {c}"),
            Action::GrinderLower {
                height_mm: PAD_HOVER_MM,
            },
            lift_ms,
        ));
        steps.push(ProtocolStep::new(
            format!("spray {c}"),
            Action::NozzleSpray {
                duration_s: spray_s,
            },
            spray_ms,
        ));
    }
    steps.push(ProtocolStep::new(
        "spin down",
        Action::Spin { on: false },
        ms(t.spin_down_s, "egg.spin_down_s")?,
    ));
    steps.push(ProtocolStep::new(
        "raise pad",
        Action::GrinderRaise,
        ms(t.raise_s, "egg.raise_s")?,
    ));
    steps.push(ProtocolStep::new(
        "collect #500",
        Action::CollectOutput {
            sieve: sieve(Mesh::M500),
        },
        ms(t.collect_s, "egg.collect_s")?,
    ));
    Ok(ProtocolScript::new(ScriptName::EggExtraction, steps))
}

/// Mixing and settling, then the cyst and egg protocols back to back.
pub fn build_full_protocol(t: &ProtocolTiming) -> Result<ProtocolScript, ProtocolError> {
    let mix_s = t
        .prep
        .mix_s
        .ok_or(ProtocolError::MissingAllocation("prep.mix_s"))?;
    let settle_s = t
        .prep
        .settle_s
        .ok_or(ProtocolError::MissingAllocation("prep.settle_s"))?;
    let mut steps = vec![
        ProtocolStep::new(
            "mix",
            Action::Dwell { duration_s: mix_s },
            ms(Some(mix_s), "prep.mix_s")?,
        ),
        ProtocolStep::new(
            "settle",
            Action::Dwell {
                duration_s: settle_s,
            },
            ms(Some(settle_s), "prep.settle_s")?,
        ),
    ];
    steps.extend(build_cyst_protocol(&t.cyst)?.steps);
    steps.extend(build_egg_protocol(&t.egg)?.steps);
    Ok(ProtocolScript::new(ScriptName::FullExtraction, steps))
}
