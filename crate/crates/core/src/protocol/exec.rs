use std::sync::atomic::{AtomicU8, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::validate::{apply_action, validate_script};
use super::{
    build_cyst_protocol, build_egg_protocol, reason, secs_to_ms, Action, ProtocolError,
    ProtocolScript, ProtocolTiming, ScriptName,
};
use crate::hal::{
    DeviceBus, DeviceSnapshot, HalConfig, StepperId, DRILL_RELAY, NOZZLE_VALVE, SPRAYER_VALVE,
};
use crate::mechanism::{
    station, Compression, GripperPosition, Level, MachineState, SlotRef, PAD_CLEAR_MM,
};
use crate::model::{Mesh, ParticleBatch, ParticleClass, SieveId, VesselId};
use crate::rng::{stream, StreamKey};
use crate::sim::{EggLedger, ProcessParams, Workbench};

/// What the operator puts into the machine; it selects the protocol.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunInput {
    /// Soil goes through cyst extraction.
    SoilSample,
    /// Extracted cysts go through egg extraction.
    CystSample,
}

impl RunInput {
    pub fn script(self, timing: &ProtocolTiming) -> Result<ProtocolScript, ProtocolError> {
        match self {
            RunInput::SoilSample => build_cyst_protocol(&timing.cyst),
            RunInput::CystSample => build_egg_protocol(&timing.egg),
        }
    }

    pub fn initial_machine(self) -> MachineState {
        match self {
            RunInput::SoilSample => MachineState::cyst_layout(),
            RunInput::CystSample => MachineState::egg_layout(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Enter,
    Exit,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TelemetryEvent {
    pub run_id: u64,
    /// Contiguous from 0 within a run.
    pub seq: u64,
    pub t_ms: u64,
    /// Step index in the script.
    pub step: usize,
    pub label: String,
    pub action: String,
    pub phase: Phase,
    /// Index into the run's snapshot list.
    pub machine_snapshot_ref: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VesselSummary {
    pub vessel: VesselId,
    pub particles: u64,
    pub cysts: u64,
    pub free_eggs: u64,
}

/// Everything an observer needs to draw the machine at one instant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MachineSnapshot {
    pub t_ms: u64,
    pub machine: MachineState,
    pub devices: DeviceSnapshot,
    pub vessels: Vec<VesselSummary>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "reason", rename_all = "snake_case")]
pub enum RunStatus {
    Running,
    Completed,
    Aborted,
    Faulted(String),
}

impl RunStatus {
    pub fn is_terminal(&self) -> bool {
        !matches!(self, RunStatus::Running)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct OutputCounts {
    /// Cysts on the #60 sieve when it was transferred.
    pub cysts: Option<u64>,
    /// Free eggs rinsed into the collection container.
    pub eggs: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_id: u64,
    pub script: ScriptName,
    pub profile: String,
    pub seed: u64,
    pub start_ms: u64,
    pub end_ms: u64,
    pub expected_total_ms: u64,
    pub status: RunStatus,
    pub steps_executed: usize,
    pub output_counts: OutputCounts,
    pub egg_ledger: EggLedger,
    pub telemetry: Vec<TelemetryEvent>,
    pub snapshots: Vec<MachineSnapshot>,
    /// Machine state after the run, including any safe-state sequence.
    pub final_snapshot: Option<MachineSnapshot>,
}

impl RunRecord {
    pub fn duration_ms(&self) -> u64 {
        self.end_ms - self.start_ms
    }
}

const IDLE: u8 = 0;
const RUNNING: u8 = 1;
const ABORT_REQUESTED: u8 = 2;
const FINISHED: u8 = 3;

/// Shared abort switch for one executor.
#[derive(Debug, Clone, Default)]
pub struct AbortHandle(Arc<AtomicU8>);

impl AbortHandle {
    /// Requests an abort. Only the first request against a running run
    /// succeeds.
    pub fn abort(&self) -> Result<(), ProtocolError> {
        self.0
            .compare_exchange(RUNNING, ABORT_REQUESTED, Ordering::SeqCst, Ordering::SeqCst)
            .map(|_| ())
            .map_err(|_| ProtocolError::NotRunning)
    }

    pub fn is_running(&self) -> bool {
        matches!(self.0.load(Ordering::SeqCst), RUNNING | ABORT_REQUESTED)
    }

    fn requested(&self) -> bool {
        self.0.load(Ordering::SeqCst) == ABORT_REQUESTED
    }

    fn set(&self, v: u8) {
        self.0.store(v, Ordering::SeqCst);
    }
}

enum Halt {
    Abort,
    Fault(String),
}

/// Owns the machine, the device bus and the particle bench for one run.
#[derive(Debug)]
pub struct Executor {
    machine: MachineState,
    bus: DeviceBus,
    bench: Workbench,
    params: ProcessParams,
    seed: u64,
    profile: String,
    control: AbortHandle,
    counts: OutputCounts,
}

impl Executor {
    pub fn new(
        machine: MachineState,
        hal: HalConfig,
        params: ProcessParams,
        seed: u64,
    ) -> Result<Self, ProtocolError> {
        params.validate()?;
        let bench = Workbench::new(&machine.kit);
        Ok(Executor {
            machine,
            bus: DeviceBus::new(hal)?,
            bench,
            params,
            seed,
            profile: String::new(),
            control: AbortHandle::default(),
            counts: OutputCounts::default(),
        })
    }

    /// Puts soil into the bucket.
    pub fn load_soil(&mut self, batch: &ParticleBatch, label: &str) {
        self.bench.load(VesselId::Bucket, batch);
        self.profile = label.to_string();
    }

    /// Puts extracted cysts on the #60 sieve.
    pub fn load_cysts(&mut self, batch: &ParticleBatch, label: &str) {
        let cysts = batch.split_by(|k| k.class == ParticleClass::Cyst).0;
        self.bench
            .load(VesselId::SieveSurface(SieveId::standard(Mesh::M60)), &cysts);
        self.profile = label.to_string();
    }

    pub fn abort_handle(&self) -> AbortHandle {
        self.control.clone()
    }

    pub fn machine(&self) -> &MachineState {
        &self.machine
    }

    pub fn bus(&self) -> &DeviceBus {
        &self.bus
    }

    pub fn bench(&self) -> &Workbench {
        &self.bench
    }

    pub fn snapshot(&self) -> MachineSnapshot {
        let vessels = self
            .bench
            .vessels()
            .map(|(v, b)| VesselSummary {
                vessel: *v,
                particles: b.total_count(),
                cysts: b.count_class(ParticleClass::Cyst),
                free_eggs: b.free_eggs(),
            })
            .collect();
        MachineSnapshot {
            t_ms: self.bus.now_ms(),
            machine: self.machine.clone(),
            devices: self.bus.snapshot(),
            vessels,
        }
    }

    /// Validates and runs `script`, reporting every step boundary to
    /// `observer`.
    pub fn run(
        &mut self,
        run_id: u64,
        script: &ProtocolScript,
        observer: &mut dyn FnMut(&TelemetryEvent, &MachineSnapshot),
    ) -> Result<RunRecord, ProtocolError> {
        validate_script(script, &self.machine).map_err(ProtocolError::Invalid)?;
        if self.control.0.load(Ordering::SeqCst) != IDLE {
            return Err(ProtocolError::Format("executor has already run".into()));
        }
        self.control.set(RUNNING);
        let start_ms = self.bus.now_ms();
        let mut record = RunRecord {
            run_id,
            script: script.name,
            profile: self.profile.clone(),
            seed: self.seed,
            start_ms,
            end_ms: start_ms,
            expected_total_ms: script.expected_total_ms,
            status: RunStatus::Running,
            steps_executed: 0,
            output_counts: OutputCounts::default(),
            egg_ledger: EggLedger::default(),
            telemetry: Vec::new(),
            snapshots: Vec::new(),
            final_snapshot: None,
        };
        let mut halt = None;
        for (i, step) in script.steps.iter().enumerate() {
            if self.control.requested() {
                halt = Some(Halt::Abort);
                break;
            }
            self.emit(&mut record, i, step, Phase::Enter, observer);
            let result = self.step(i, &step.action, step.duration_ms);
            record.steps_executed += 1;
            self.emit(&mut record, i, step, Phase::Exit, observer);
            if let Err(h) = result {
                halt = Some(h);
                break;
            }
        }
        if halt.is_none() && self.control.requested() {
            halt = Some(Halt::Abort);
        }
        record.status = match halt {
            None => RunStatus::Completed,
            Some(Halt::Abort) => {
                self.safe_state()?;
                RunStatus::Aborted
            }
            Some(Halt::Fault(reason)) => {
                self.safe_state()?;
                RunStatus::Faulted(reason)
            }
        };
        record.end_ms = self.bus.now_ms();
        record.output_counts = self.counts;
        record.egg_ledger = self.bench.ledger();
        record.final_snapshot = Some(self.snapshot());
        self.control.set(FINISHED);
        Ok(record)
    }

    fn emit(
        &self,
        record: &mut RunRecord,
        step: usize,
        s: &super::ProtocolStep,
        phase: Phase,
        observer: &mut dyn FnMut(&TelemetryEvent, &MachineSnapshot),
    ) {
        let snap = self.snapshot();
        let event = TelemetryEvent {
            run_id: record.run_id,
            seq: record.telemetry.len() as u64,
            t_ms: snap.t_ms,
            step,
            label: s.label.clone(),
            action: s.action.name().to_string(),
            phase,
            machine_snapshot_ref: record.snapshots.len(),
        };
        observer(&event, &snap);
        record.telemetry.push(event);
        record.snapshots.push(snap);
    }

    /// Waits in clock ticks, stopping early on an abort request.
    fn wait(&mut self, ms: u64) -> Result<(), Halt> {
        let tick = self.bus.config().tick_ms;
        let mut left = ms;
        while left > 0 {
            if self.control.requested() {
                return Err(Halt::Abort);
            }
            let d = left.min(tick);
            self.bus
                .advance(d as i64)
                .map_err(|e| Halt::Fault(e.to_string()))?;
            left -= d;
        }
        Ok(())
    }

    fn dev<T>(r: Result<T, crate::hal::DeviceError>) -> Result<T, Halt> {
        r.map_err(|e| Halt::Fault(e.to_string()))
    }

    fn lift_target(&self, c: Compression) -> i64 {
        let h = c.level_heights_mm();
        let base = Compression::Uncompressed.level_heights_mm();
        ((h[2] - base[2]) * self.bus.config().lift_steps_per_mm).round() as i64
    }

    fn quill_target(&self, height_mm: f64) -> i64 {
        ((PAD_CLEAR_MM - height_mm).max(0.0) * self.bus.config().quill_steps_per_mm).round() as i64
    }

    fn reach_target(&self, position: u8) -> i64 {
        let idx = station::GRIPPER_REACH
            .iter()
            .position(|&p| p == position)
            .unwrap_or(0) as i64;
        (idx + 1) * self.bus.config().reach_steps_per_slot
    }

    /// The sieve directly below `id` in its column, or the drain.
    fn below(&self, id: SieveId) -> VesselId {
        let Some(slot) = self.machine.find_sieve(id) else {
            return VesselId::Drain;
        };
        let column = self.machine.stage.column(slot.position);
        column
            .iter()
            .position(|&s| s == id)
            .and_then(|i| column.get(i + 1))
            .map_or(VesselId::Drain, |&s| VesselId::SieveSurface(s))
    }

    fn step(&mut self, index: usize, action: &Action, duration_ms: u64) -> Result<(), Halt> {
        let t0 = self.bus.now_ms();
        let next = apply_action(&self.machine, action).map_err(|e| Halt::Fault(reason(&e)))?;
        let mut rng = stream(self.seed, StreamKey::default().at(0, index as u16));
        let cfg = self.bus.config().clone();
        let sim = |r: Result<(), crate::sim::SimError>| r.map_err(|e| Halt::Fault(e.to_string()));
        match *action {
            Action::Decant => {
                self.machine = next;
                let column = self.machine.stage.column(station::DECANT);
                self.bench.mix_and_settle(&self.params, &mut rng);
                sim(self.bench.decant(&column, &self.params, &mut rng))?;
            }
            Action::Wash { sieve, duration_s } => {
                Self::dev(
                    self.bus
                        .step_to(StepperId::SPRAYER_ARM, cfg.sprayer_arm_steps),
                )?;
                self.machine = next.set_sprayer_valve(true);
                Self::dev(self.bus.set_relay(SPRAYER_VALVE, true))?;
                self.wait(secs_to_ms(duration_s))?;
                Self::dev(self.bus.set_relay(SPRAYER_VALVE, false))?;
                self.machine = self.machine.set_sprayer_valve(false);
                let below = self.below(sieve);
                sim(self
                    .bench
                    .wash(sieve, below, duration_s, &self.params, &mut rng)
                    .map(|_| ()))?;
            }
            Action::Rotate { quarter_turns } => {
                let steps = i64::from(quarter_turns) * cfg.stage_steps_per_quarter();
                Self::dev(self.bus.step(StepperId::STAGE_ROTATION, steps))?;
                self.machine = next;
            }
            Action::Compress { target } => {
                let t = self.lift_target(target);
                Self::dev(self.bus.step_to(StepperId::STAGE_LIFT, t))?;
                self.machine = next;
            }
            Action::SprayerRetract => {
                Self::dev(self.bus.step_to(StepperId::SPRAYER_ARM, 0))?;
                self.machine = next;
            }
            Action::GripperTransfer { from, to } => {
                let moved = self.machine.stage.at(from);
                Self::dev(
                    self.bus
                        .step_to(StepperId::GRIPPER_REACH, self.reach_target(from.position)),
                )?;
                self.bus.set_servo(90);
                Self::dev(
                    self.bus
                        .step_to(StepperId::GRIPPER_REACH, self.reach_target(to.position)),
                )?;
                self.bus.set_servo(0);
                Self::dev(self.bus.step_to(StepperId::GRIPPER_REACH, 0))?;
                self.machine = next;
                if let Some(id) = moved {
                    if self
                        .machine
                        .spec_of(id)
                        .is_some_and(|s| s.mesh == Mesh::M60)
                    {
                        let cysts = self
                            .bench
                            .contents(VesselId::SieveSurface(id))
                            .count_class(ParticleClass::Cyst);
                        self.counts.cysts = Some(cysts);
                    }
                }
            }
            Action::GrinderLower { height_mm } => {
                Self::dev(
                    self.bus
                        .step_to(StepperId::GRINDER_QUILL, self.quill_target(height_mm)),
                )?;
                self.machine = next;
            }
            Action::GrinderRaise => {
                Self::dev(self.bus.step_to(StepperId::GRINDER_QUILL, 0))?;
                self.machine = next;
            }
            Action::Spin { on } => {
                Self::dev(self.bus.set_relay(DRILL_RELAY, on))?;
                self.machine = next;
            }
            Action::Grind { duration_s } => {
                self.machine = next;
                self.wait(secs_to_ms(duration_s))?;
                let top = self
                    .machine
                    .stage
                    .at(SlotRef::new(Level::Top, station::GRINDER))
                    .ok_or_else(|| Halt::Fault("no sieve under the pad".into()))?;
                let below = self.below(top);
                self.bench.grind(top, below, &self.params, &mut rng);
            }
            Action::NozzleSpray { duration_s } => {
                self.machine = next.set_nozzle_valve(true);
                Self::dev(self.bus.set_relay(NOZZLE_VALVE, true))?;
                self.wait(secs_to_ms(duration_s))?;
                Self::dev(self.bus.set_relay(NOZZLE_VALVE, false))?;
                self.machine = self.machine.set_nozzle_valve(false);
                let column = self.machine.stage.column(station::GRINDER);
                for pair in column.windows(2).skip(1) {
                    sim(self
                        .bench
                        .wash(
                            pair[0],
                            VesselId::SieveSurface(pair[1]),
                            duration_s,
                            &self.params,
                            &mut rng,
                        )
                        .map(|_| ()))?;
                }
            }
            Action::CollectOutput { sieve } => {
                self.machine = next;
                let eggs = self.bench.collect(sieve, &self.params, &mut rng);
                *self.counts.eggs.get_or_insert(0) += eggs;
            }
            Action::Dwell { duration_s } => {
                self.machine = next;
                self.wait(secs_to_ms(duration_s))?;
            }
        }
        let spent = self.bus.now_ms() - t0;
        self.wait(duration_ms.saturating_sub(spent))?;
        self.machine.check_invariants().map_err(Halt::Fault)?;
        self.bus.check_invariants().map_err(Halt::Fault)?;
        sim(self.bench.check_conservation())?;
        Ok(())
    }

    /// Power off first (valves, drill), then move: raise the pad, retract
    /// the sprayer, park the gripper, uncompress the stage.
    fn safe_state(&mut self) -> Result<(), ProtocolError> {
        self.bus.set_relay(SPRAYER_VALVE, false)?;
        self.bus.set_relay(NOZZLE_VALVE, false)?;
        self.bus.set_relay(DRILL_RELAY, false)?;
        let m = self
            .machine
            .set_sprayer_valve(false)
            .set_nozzle_valve(false);
        let mut m = m
            .grinder_set(m.grinder.pad_height_mm, false)
            .unwrap_or_else(|_| m.clone());
        if !m.grinder.is_raised() {
            self.bus.step_to(StepperId::GRINDER_QUILL, 0)?;
            m = m.grinder_set(PAD_CLEAR_MM, false).unwrap_or(m);
        }
        if m.sprayer.engaged_over.is_some() {
            self.bus.step_to(StepperId::SPRAYER_ARM, 0)?;
            m = m.sprayer_retract();
        }
        if m.gripper.position != GripperPosition::Parked {
            self.bus.step_to(StepperId::GRIPPER_REACH, 0)?;
            m = m.gripper_park();
        }
        if m.stage.compression != Compression::Uncompressed {
            if let Ok(u) = m.set_compression(Compression::Uncompressed) {
                self.bus.step_to(StepperId::STAGE_LIFT, 0)?;
                m = u;
            }
        }
        self.machine = m;
        Ok(())
    }
}
