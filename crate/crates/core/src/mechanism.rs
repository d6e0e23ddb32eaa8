//! Kinematic state of the stage, gripper, grinder and sprayer.
//!
//! Every transition is a pure function from a [`MachineState`] to either a
//! new state or an error; a rejected command never changes anything. The
//! interlocks encode what the physical geometry forbids: the stage only turns
//! when it is uncompressed, the pad is raised, the gripper is parked and the
//! sprayer is clear; the pad only enters a sieve that is stacked under it.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Mesh, SieveId, SieveSpec};

pub const MM_PER_INCH: f64 = 25.4;

pub const LEVELS: usize = 3;
pub const SLOTS: usize = 4;

/// Pad height at which it is clear of every sieve.
pub const PAD_CLEAR_MM: f64 = 4.0 * MM_PER_INCH;
/// Depth of a sieve body; below this the pad is inside the sieve.
pub const SIEVE_RIM_MM: f64 = 2.0 * MM_PER_INCH;
/// Pad height during spin-up and rinsing.
pub const PAD_HOVER_MM: f64 = MM_PER_INCH;

/// Fixed work stations around the central post, as world positions.
pub mod station {
    pub const DECANT: u8 = 0;
    pub const WASHER: u8 = 1;
    pub const TRANSFER: u8 = 2;
    pub const GRINDER: u8 = 3;

    /// Positions the gripper arm can reach.
    pub const GRIPPER_REACH: [u8; 2] = [WASHER, TRANSFER];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Level {
    Top,
    Middle,
    Bottom,
}

impl Level {
    pub const ALL: [Level; 3] = [Level::Top, Level::Middle, Level::Bottom];

    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Compression {
    Uncompressed,
    Partial,
    Full,
}

impl Compression {
    /// Heights of the (top, middle, bottom) levels above the base.
    pub fn level_heights_mm(self) -> [f64; 3] {
        // 11.5, 7 and 2.5 inches
        let (top, middle, bottom) = (292.1, 177.8, 63.5);
        match self {
            Compression::Uncompressed => [top, middle, bottom],
            Compression::Partial => [top, middle, middle],
            Compression::Full => [top, top, top],
        }
    }
}

/// A slot addressed by level and world position (0..4).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SlotRef {
    pub level: Level,
    pub position: u8,
}

impl SlotRef {
    pub fn new(level: Level, position: u8) -> Self {
        SlotRef { level, position }
    }
}

impl fmt::Display for SlotRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({:?},{})", self.level, self.position)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageState {
    pub rotation_index: u8,
    pub compression: Compression,
    /// Slot contents in the stage's own frame: `slots[level][slot]`.
    pub slots: [[Option<SieveId>; SLOTS]; LEVELS],
}

impl StageState {
    fn stage_slot(&self, position: u8) -> usize {
        (usize::from(position) + SLOTS - usize::from(self.rotation_index)) % SLOTS
    }

    /// Sieve at a world position.
    pub fn at(&self, slot: SlotRef) -> Option<SieveId> {
        self.slots[slot.level.index()][self.stage_slot(slot.position)]
    }

    fn set(&mut self, slot: SlotRef, id: Option<SieveId>) {
        let s = self.stage_slot(slot.position);
        self.slots[slot.level.index()][s] = id;
    }

    /// Sieves at a world position, top to bottom.
    pub fn column(&self, position: u8) -> Vec<SieveId> {
        Level::ALL
            .iter()
            .filter_map(|&l| self.at(SlotRef::new(l, position)))
            .collect()
    }

    pub fn level_heights_mm(&self) -> [f64; 3] {
        self.compression.level_heights_mm()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fingers {
    Open,
    Closed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "slot", rename_all = "snake_case")]
pub enum GripperPosition {
    Parked,
    At(SlotRef),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GripperState {
    pub wrist_deg: u16,
    pub fingers: Fingers,
    pub holding: Option<SieveId>,
    pub position: GripperPosition,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrinderState {
    /// Pad height above the mesh of the top sieve at the grinder station.
    pub pad_height_mm: f64,
    pub spinning: bool,
}

impl GrinderState {
    pub fn is_raised(&self) -> bool {
        self.pad_height_mm >= PAD_CLEAR_MM
    }

    pub fn in_contact(&self) -> bool {
        self.pad_height_mm == 0.0
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SprayerState {
    pub engaged_over: Option<SieveId>,
    pub bar_spinning: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MachineState {
    pub stage: StageState,
    pub gripper: GripperState,
    pub grinder: GrinderState,
    pub sprayer: SprayerState,
    pub sprayer_valve_open: bool,
    pub nozzle_valve_open: bool,
    /// Every sieve the machine owns.
    pub kit: Vec<(SieveId, SieveSpec)>,
}

/// Why an interlock refused a motion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Interlock {
    RotationWhileCompressed,
    RotationWithGrinderLowered,
    RotationWithGripperEngaged,
    RotationWithSprayerEngaged,
    CompressionWithGrinderLowered,
    CompressionWithGripperInStage,
    GripperAccessWhileCompressed,
    GripperBusy,
    GripperEmpty,
    OutOfGripperReach,
    SprayerCoversStation,
    SieveInverted,
    WristWhileEngaged,
    PadCannotReachUnstackedSieve,
    GripperBlocksSprayer,
    NothingToSpray,
    SieveMismatch,
    NoGrindContact,
    NothingToDecant,
    NoStackedColumn,
    CollectWithGrinderLowered,
}

impl Interlock {
    pub fn reason(self) -> &'static str {
        match self {
            Interlock::RotationWhileCompressed => "rotation while compressed",
            Interlock::RotationWithGrinderLowered => "rotation with grinder lowered",
            Interlock::RotationWithGripperEngaged => "rotation with gripper engaged",
            Interlock::RotationWithSprayerEngaged => "rotation with sprayer covering a sieve",
            Interlock::CompressionWithGrinderLowered => "compression with grinder lowered",
            Interlock::CompressionWithGripperInStage => {
                "compression with gripper in stage envelope"
            }
            Interlock::GripperAccessWhileCompressed => "gripper access while compressed",
            Interlock::GripperBusy => "gripper busy",
            Interlock::GripperEmpty => "gripper holds no sieve",
            Interlock::OutOfGripperReach => "slot out of gripper reach",
            Interlock::SprayerCoversStation => "sprayer covers the station",
            Interlock::SieveInverted => "sieve inverted",
            Interlock::WristWhileEngaged => "wrist rotation while engaged with a slot",
            Interlock::PadCannotReachUnstackedSieve => "pad cannot reach unstacked sieve",
            Interlock::GripperBlocksSprayer => "gripper blocks sprayer",
            Interlock::NothingToSpray => "no sieve under the sprayer",
            Interlock::SieveMismatch => "step names a sieve that is not in position",
            Interlock::NoGrindContact => "grinding without pad contact",
            Interlock::NothingToDecant => "no sieve at the decant station",
            Interlock::NoStackedColumn => "nozzle spray without a stacked column under the grinder",
            Interlock::CollectWithGrinderLowered => "collection with grinder lowered",
        }
    }
}

impl fmt::Display for Interlock {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.reason())
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MechanismError {
    #[error("interlock violation: {0}")]
    Interlock(Interlock),
    #[error("slot {0} is empty")]
    SlotEmpty(SlotRef),
    #[error("slot {0} is occupied")]
    SlotOccupied(SlotRef),
    #[error("position {0} out of range 0..4")]
    BadPosition(u8),
    #[error("domain error: {0}")]
    Domain(&'static str),
}

impl From<Interlock> for MechanismError {
    fn from(i: Interlock) -> Self {
        MechanismError::Interlock(i)
    }
}

/// One atomic machine command, used by the fuzzer and the script validator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "cmd", rename_all = "snake_case")]
pub enum MachineCommand {
    Rotate { quarter_turns: i32 },
    SetCompression { target: Compression },
    GripperTransfer { from: SlotRef, to: SlotRef },
    GripperGrab { at: SlotRef },
    GripperPlace { at: SlotRef },
    GripperPark,
    Wrist { deg: u16 },
    GrinderSet { pad_height_mm: f64, spinning: bool },
    SprayerEngage,
    SprayerRetract,
    SprayerValve { open: bool },
    NozzleValve { open: bool },
}

fn check_position(p: u8) -> Result<(), MechanismError> {
    if usize::from(p) < SLOTS {
        Ok(())
    } else {
        Err(MechanismError::BadPosition(p))
    }
}

impl MachineState {
    /// Machine with the standard kit loaded for cyst extraction: #20 over #60
    /// at the decant station, #200 over #500 one position behind it.
    pub fn cyst_layout() -> Self {
        let mut m = Self::empty(standard_kit());
        let id = SieveId::standard;
        m.stage.slots[Level::Top.index()][0] = Some(id(Mesh::M20));
        m.stage.slots[Level::Middle.index()][0] = Some(id(Mesh::M60));
        m.stage.slots[Level::Middle.index()][1] = Some(id(Mesh::M200));
        m.stage.slots[Level::Bottom.index()][1] = Some(id(Mesh::M500));
        m
    }

    /// The layout the cyst protocol leaves behind: #60 stacked over #200 and
    /// #500 at the transfer station, #20 at the washer.
    pub fn egg_layout() -> Self {
        let mut m = Self::empty(standard_kit());
        let id = SieveId::standard;
        m.stage.rotation_index = 1;
        m.stage.slots[Level::Top.index()][0] = Some(id(Mesh::M20));
        m.stage.slots[Level::Top.index()][1] = Some(id(Mesh::M60));
        m.stage.slots[Level::Middle.index()][1] = Some(id(Mesh::M200));
        m.stage.slots[Level::Bottom.index()][1] = Some(id(Mesh::M500));
        m
    }

    pub fn empty(kit: Vec<(SieveId, SieveSpec)>) -> Self {
        MachineState {
            stage: StageState {
                rotation_index: 0,
                compression: Compression::Uncompressed,
                slots: [[None; SLOTS]; LEVELS],
            },
            gripper: GripperState {
                wrist_deg: 0,
                fingers: Fingers::Open,
                holding: None,
                position: GripperPosition::Parked,
            },
            grinder: GrinderState {
                pad_height_mm: PAD_CLEAR_MM,
                spinning: false,
            },
            sprayer: SprayerState {
                engaged_over: None,
                bar_spinning: false,
            },
            sprayer_valve_open: false,
            nozzle_valve_open: false,
            kit,
        }
    }

    pub fn spec_of(&self, id: SieveId) -> Option<SieveSpec> {
        self.kit.iter().find(|(k, _)| *k == id).map(|(_, s)| *s)
    }

    pub fn find_sieve(&self, id: SieveId) -> Option<SlotRef> {
        for level in Level::ALL {
            for position in 0..SLOTS as u8 {
                let slot = SlotRef::new(level, position);
                if self.stage.at(slot) == Some(id) {
                    return Some(slot);
                }
            }
        }
        None
    }

    /// True while the pad is spinning against the mesh.
    pub fn is_grinding(&self) -> bool {
        self.grinder.in_contact() && self.grinder.spinning
    }

    pub fn gripper_parked(&self) -> bool {
        self.gripper.position == GripperPosition::Parked
    }

    pub fn apply(&self, cmd: &MachineCommand) -> Result<MachineState, MechanismError> {
        match *cmd {
            MachineCommand::Rotate { quarter_turns } => self.rotate_stage(quarter_turns),
            MachineCommand::SetCompression { target } => self.set_compression(target),
            MachineCommand::GripperTransfer { from, to } => self.gripper_transfer(from, to),
            MachineCommand::GripperGrab { at } => self.gripper_grab(at),
            MachineCommand::GripperPlace { at } => self.gripper_place(at),
            MachineCommand::GripperPark => Ok(self.gripper_park()),
            MachineCommand::Wrist { deg } => self.wrist(deg),
            MachineCommand::GrinderSet {
                pad_height_mm,
                spinning,
            } => self.grinder_set(pad_height_mm, spinning),
            MachineCommand::SprayerEngage => self.sprayer_engage(),
            MachineCommand::SprayerRetract => Ok(self.sprayer_retract()),
            MachineCommand::SprayerValve { open } => Ok(self.set_sprayer_valve(open)),
            MachineCommand::NozzleValve { open } => Ok(self.set_nozzle_valve(open)),
        }
    }

    pub fn rotate_stage(&self, quarter_turns: i32) -> Result<MachineState, MechanismError> {
        if self.stage.compression != Compression::Uncompressed {
            return Err(Interlock::RotationWhileCompressed.into());
        }
        if !self.grinder.is_raised() {
            return Err(Interlock::RotationWithGrinderLowered.into());
        }
        if !self.gripper_parked() {
            return Err(Interlock::RotationWithGripperEngaged.into());
        }
        if self.sprayer.engaged_over.is_some() {
            return Err(Interlock::RotationWithSprayerEngaged.into());
        }
        let mut next = self.clone();
        next.stage.rotation_index =
            (i32::from(self.stage.rotation_index) + quarter_turns).rem_euclid(SLOTS as i32) as u8;
        Ok(next)
    }

    pub fn set_compression(&self, target: Compression) -> Result<MachineState, MechanismError> {
        if target == self.stage.compression {
            return Ok(self.clone());
        }
        if !self.grinder.is_raised() {
            return Err(Interlock::CompressionWithGrinderLowered.into());
        }
        if !self.gripper_parked() {
            return Err(Interlock::CompressionWithGripperInStage.into());
        }
        let mut next = self.clone();
        next.stage.compression = target;
        Ok(next)
    }

    fn check_gripper_access(&self, at: SlotRef) -> Result<(), MechanismError> {
        check_position(at.position)?;
        if self.stage.compression != Compression::Uncompressed {
            return Err(Interlock::GripperAccessWhileCompressed.into());
        }
        if !station::GRIPPER_REACH.contains(&at.position) {
            return Err(Interlock::OutOfGripperReach.into());
        }
        if at.position == station::WASHER && self.sprayer.engaged_over.is_some() {
            return Err(Interlock::SprayerCoversStation.into());
        }
        Ok(())
    }

    pub fn gripper_grab(&self, at: SlotRef) -> Result<MachineState, MechanismError> {
        self.check_gripper_access(at)?;
        if self.gripper.holding.is_some() || !self.gripper_parked() {
            return Err(Interlock::GripperBusy.into());
        }
        if self.gripper.wrist_deg != 0 {
            return Err(Interlock::SieveInverted.into());
        }
        let id = self.stage.at(at).ok_or(MechanismError::SlotEmpty(at))?;
        let mut next = self.clone();
        next.stage.set(at, None);
        next.gripper.holding = Some(id);
        next.gripper.fingers = Fingers::Closed;
        next.gripper.position = GripperPosition::At(at);
        Ok(next)
    }

    pub fn gripper_place(&self, at: SlotRef) -> Result<MachineState, MechanismError> {
        self.check_gripper_access(at)?;
        let id = self.gripper.holding.ok_or(Interlock::GripperEmpty)?;
        if self.gripper.wrist_deg != 0 {
            return Err(Interlock::SieveInverted.into());
        }
        if self.stage.at(at).is_some() {
            return Err(MechanismError::SlotOccupied(at));
        }
        let mut next = self.clone();
        next.stage.set(at, Some(id));
        next.gripper.holding = None;
        next.gripper.fingers = Fingers::Open;
        next.gripper.position = GripperPosition::At(at);
        Ok(next)
    }

    pub fn gripper_park(&self) -> MachineState {
        let mut next = self.clone();
        next.gripper.position = GripperPosition::Parked;
        next
    }

    pub fn wrist(&self, deg: u16) -> Result<MachineState, MechanismError> {
        if deg > 180 {
            return Err(MechanismError::Domain("wrist angle must be within 0..=180"));
        }
        if !(self.gripper.holding.is_some() || self.gripper_parked()) {
            return Err(Interlock::WristWhileEngaged.into());
        }
        let mut next = self.clone();
        next.gripper.wrist_deg = deg;
        Ok(next)
    }

    /// Moves a sieve between slots: grab, lift clear, place, park.
    pub fn gripper_transfer(
        &self,
        from: SlotRef,
        to: SlotRef,
    ) -> Result<MachineState, MechanismError> {
        check_position(from.position)?;
        check_position(to.position)?;
        if self.stage.compression != Compression::Uncompressed {
            return Err(Interlock::GripperAccessWhileCompressed.into());
        }
        if self.stage.at(from).is_none() {
            return Err(MechanismError::SlotEmpty(from));
        }
        if self.stage.at(to).is_some() {
            return Err(MechanismError::SlotOccupied(to));
        }
        self.gripper_grab(from)?
            .gripper_park()
            .gripper_place(to)
            .map(|s| s.gripper_park())
    }

    fn top_at_grinder_is_60(&self) -> bool {
        self.stage
            .at(SlotRef::new(Level::Top, station::GRINDER))
            .and_then(|id| self.spec_of(id))
            .is_some_and(|s| s.mesh == Mesh::M60)
    }

    pub fn grinder_set(
        &self,
        pad_height_mm: f64,
        spinning: bool,
    ) -> Result<MachineState, MechanismError> {
        if !(pad_height_mm >= 0.0 && pad_height_mm.is_finite()) {
            return Err(MechanismError::Domain(
                "pad height must be a non-negative length",
            ));
        }
        if pad_height_mm < SIEVE_RIM_MM
            && !(self.stage.compression == Compression::Full && self.top_at_grinder_is_60())
        {
            return Err(Interlock::PadCannotReachUnstackedSieve.into());
        }
        let mut next = self.clone();
        next.grinder.pad_height_mm = pad_height_mm;
        next.grinder.spinning = spinning;
        Ok(next)
    }

    pub fn sprayer_engage(&self) -> Result<MachineState, MechanismError> {
        if !self.gripper_parked() {
            return Err(Interlock::GripperBlocksSprayer.into());
        }
        let id = self
            .stage
            .at(SlotRef::new(Level::Top, station::WASHER))
            .ok_or(Interlock::NothingToSpray)?;
        let mut next = self.clone();
        next.sprayer.engaged_over = Some(id);
        Ok(next)
    }

    pub fn sprayer_retract(&self) -> MachineState {
        let mut next = self.clone();
        next.sprayer.engaged_over = None;
        next
    }

    pub fn set_sprayer_valve(&self, open: bool) -> MachineState {
        let mut next = self.clone();
        next.sprayer_valve_open = open;
        next.sprayer.bar_spinning = open;
        next
    }

    pub fn set_nozzle_valve(&self, open: bool) -> MachineState {
        let mut next = self.clone();
        next.nozzle_valve_open = open;
        next
    }

    /// Sieve ids in slots and in the gripper hand, sorted.
    pub fn sieve_inventory(&self) -> Vec<SieveId> {
        let mut ids: Vec<SieveId> = self
            .stage
            .slots
            .iter()
            .flatten()
            .flatten()
            .copied()
            .chain(self.gripper.holding)
            .collect();
        ids.sort();
        ids
    }

    /// Structural invariants of every reachable state.
    pub fn check_invariants(&self) -> Result<(), String> {
        if usize::from(self.stage.rotation_index) >= SLOTS {
            return Err(format!("rotation index {}", self.stage.rotation_index));
        }
        if self.gripper.holding.is_some() && self.gripper.fingers != Fingers::Closed {
            return Err("holding a sieve with open fingers".into());
        }
        if self.gripper.wrist_deg > 180 {
            return Err(format!("wrist at {} deg", self.gripper.wrist_deg));
        }
        if let GripperPosition::At(slot) = self.gripper.position {
            if !station::GRIPPER_REACH.contains(&slot.position) {
                return Err(format!("gripper at unreachable slot {slot}"));
            }
        }
        let h = self.grinder.pad_height_mm;
        if !(h >= 0.0 && h.is_finite()) {
            return Err(format!("pad height {h}"));
        }
        if h < SIEVE_RIM_MM
            && !(self.stage.compression == Compression::Full && self.top_at_grinder_is_60())
        {
            return Err("pad inside a sieve that is not a stacked #60".into());
        }
        if let Some(id) = self.sprayer.engaged_over {
            if self.stage.at(SlotRef::new(Level::Top, station::WASHER)) != Some(id) {
                return Err("sprayer engaged over a sieve that is not under it".into());
            }
        }
        if self.sprayer.bar_spinning != self.sprayer_valve_open {
            return Err("spray bar state disagrees with its valve".into());
        }
        let mut kit: Vec<SieveId> = self.kit.iter().map(|(id, _)| *id).collect();
        kit.sort();
        if self.sieve_inventory() != kit {
            return Err("sieve inventory changed".into());
        }
        Ok(())
    }
}

pub fn standard_kit() -> Vec<(SieveId, SieveSpec)> {
    Mesh::ALL
        .iter()
        .map(|&m| (SieveId::standard(m), SieveSpec::standard(m)))
        .collect()
}
