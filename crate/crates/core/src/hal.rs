//! Simulated device bus: six stepper channels, the finger servo, an
//! eight-relay board and the supply flow sensor, all driven by a virtual clock.
//!
//! Every command appends one line to the device trace,
//! `now_ms<TAB>device<TAB>command<TAB>value`, which is what golden-trace
//! tests diff.

use std::fmt;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DeviceError {
    #[error("unknown stepper channel {0}")]
    UnknownStepper(u8),
    #[error("relay index {0} out of range 0..8")]
    UnknownRelay(u8),
    #[error("cannot advance the clock by a negative interval ({0} ms)")]
    NegativeAdvance(i64),
    #[error("invalid device configuration: {0}")]
    Config(String),
}

pub const STEPPER_COUNT: usize = 6;
pub const RELAY_COUNT: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct StepperId(pub u8);

impl StepperId {
    pub const STAGE_ROTATION: StepperId = StepperId(0);
    pub const STAGE_LIFT: StepperId = StepperId(1);
    pub const GRIPPER_REACH: StepperId = StepperId(2);
    pub const GRIPPER_WRIST: StepperId = StepperId(3);
    pub const SPRAYER_ARM: StepperId = StepperId(4);
    pub const GRINDER_QUILL: StepperId = StepperId(5);

    pub fn name(self) -> &'static str {
        match self.0 {
            0 => "stage_rotation",
            1 => "stage_lift",
            2 => "gripper_reach",
            3 => "gripper_wrist",
            4 => "sprayer_arm",
            5 => "grinder_quill",
            _ => "unknown",
        }
    }
}

/// What each relay on the board switches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RelayRole {
    SprayerValve,
    NozzleValve,
    DrillPress,
    Spare,
}

impl RelayRole {
    pub fn is_valve(self) -> bool {
        matches!(self, RelayRole::SprayerValve | RelayRole::NozzleValve)
    }
}

pub const SPRAYER_VALVE: u8 = 0;
pub const NOZZLE_VALVE: u8 = 1;
pub const DRILL_RELAY: u8 = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HalConfig {
    pub step_period_ms: u64,
    pub steps_per_rev: u32,
    pub stage_gear_ratio: f64,
    /// Supply flow while any valve is open, L/min.
    pub valve_flow_lpm: f64,
    pub drill_setpoint_rpm: f64,
    pub drill_ramp_ms: u64,
    pub flow_pulses_per_liter: u64,
    /// Granularity at which long waits are split (abort polling, pacing).
    pub tick_ms: u64,
    pub lift_steps_per_mm: f64,
    pub quill_steps_per_mm: f64,
    pub reach_steps_per_slot: i64,
    pub sprayer_arm_steps: i64,
    /// Real-time multiplier; 0 runs as fast as possible.
    pub speed: f64,
}

impl Default for HalConfig {
    fn default() -> Self {
        HalConfig {
            step_period_ms: 1,
            steps_per_rev: 200,
            stage_gear_ratio: 2.0,
            valve_flow_lpm: 4.0,
            drill_setpoint_rpm: 500.0,
            drill_ramp_ms: 1000,
            flow_pulses_per_liter: 450,
            tick_ms: 100,
            lift_steps_per_mm: 4.0,
            quill_steps_per_mm: 4.0,
            reach_steps_per_slot: 400,
            sprayer_arm_steps: 300,
            speed: 0.0,
        }
    }
}

impl HalConfig {
    pub fn validate(&self) -> Result<(), DeviceError> {
        let bad = |m: &str| Err(DeviceError::Config(m.to_string()));
        if self.steps_per_rev == 0 {
            return bad("steps_per_rev must be positive");
        }
        if self.stage_gear_ratio.is_nan() || self.stage_gear_ratio <= 0.0 {
            return bad("stage_gear_ratio must be positive");
        }
        if !(0.3..=10.0).contains(&self.valve_flow_lpm) {
            return bad("valve_flow_lpm must lie in the sensor range 0.3..=10 L/min");
        }
        if self.drill_setpoint_rpm.is_nan() || self.drill_setpoint_rpm <= 0.0 {
            return bad("drill_setpoint_rpm must be positive");
        }
        if self.tick_ms == 0 {
            return bad("tick_ms must be positive");
        }
        if !(self.lift_steps_per_mm > 0.0 && self.quill_steps_per_mm > 0.0) {
            return bad("steps per mm must be positive");
        }
        if !(self.speed >= 0.0 && self.speed.is_finite()) {
            return bad("speed must be >= 0");
        }
        Ok(())
    }

    /// Full stage turn in motor steps, gearing included.
    pub fn stage_steps_per_quarter(&self) -> i64 {
        (f64::from(self.steps_per_rev) * self.stage_gear_ratio / 4.0).round() as i64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepperChannel {
    pub position_steps: i64,
    pub steps_per_rev: u32,
    pub gear_ratio: f64,
}

impl StepperChannel {
    /// Output-shaft angle in degrees.
    pub fn angle_deg(&self) -> f64 {
        self.position_steps as f64 * (360.0 / f64::from(self.steps_per_rev)) / self.gear_ratio
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ServoChannel {
    pub angle_deg: u16,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RelayChannel {
    pub role: RelayRole,
    pub on: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlowSensor {
    pub rate_lpm: f64,
    pub pulse_count: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VirtualClock {
    now_ms: u64,
    speed: f64,
}

impl VirtualClock {
    pub fn new(speed: f64) -> Self {
        VirtualClock { now_ms: 0, speed }
    }

    pub fn now_ms(&self) -> u64 {
        self.now_ms
    }

    pub fn speed(&self) -> f64 {
        self.speed
    }

    fn tick(&mut self, ms: u64) {
        if self.speed > 0.0 && ms > 0 {
            std::thread::sleep(Duration::from_secs_f64(ms as f64 / 1000.0 / self.speed));
        }
        self.now_ms += ms;
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceLine {
    pub now_ms: u64,
    pub device: String,
    pub command: String,
    pub value: String,
}

impl fmt::Display for TraceLine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}\t{}\t{}\t{}",
            self.now_ms, self.device, self.command, self.value
        )
    }
}

/// Immutable view of the bus handed to observers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceSnapshot {
    pub now_ms: u64,
    pub stepper_positions: [i64; STEPPER_COUNT],
    pub servo_deg: u16,
    pub relays: [bool; RELAY_COUNT],
    pub flow_lpm: f64,
    pub flow_pulses: u64,
    pub water_ml: f64,
    pub drill_rpm: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeviceBus {
    config: HalConfig,
    clock: VirtualClock,
    steppers: [StepperChannel; STEPPER_COUNT],
    servo: ServoChannel,
    relays: [RelayChannel; RELAY_COUNT],
    flow_ml_per_min: u64,
    // water delivered, in mL·ms/min; exact under any split of advances
    water_units: u64,
    drill_on_ms: u64,
    trace: Vec<TraceLine>,
}

impl DeviceBus {
    pub fn new(config: HalConfig) -> Result<Self, DeviceError> {
        config.validate()?;
        let stepper = |gear: f64| StepperChannel {
            position_steps: 0,
            steps_per_rev: config.steps_per_rev,
            gear_ratio: gear,
        };
        let steppers = [
            stepper(config.stage_gear_ratio),
            stepper(1.0),
            stepper(1.0),
            stepper(1.0),
            stepper(1.0),
            stepper(1.0),
        ];
        let mut relays = [RelayChannel {
            role: RelayRole::Spare,
            on: false,
        }; RELAY_COUNT];
        relays[SPRAYER_VALVE as usize].role = RelayRole::SprayerValve;
        relays[NOZZLE_VALVE as usize].role = RelayRole::NozzleValve;
        relays[DRILL_RELAY as usize].role = RelayRole::DrillPress;
        Ok(DeviceBus {
            clock: VirtualClock::new(config.speed),
            flow_ml_per_min: (config.valve_flow_lpm * 1000.0).round() as u64,
            config,
            steppers,
            servo: ServoChannel { angle_deg: 0 },
            relays,
            water_units: 0,
            drill_on_ms: 0,
            trace: Vec::new(),
        })
    }

    pub fn config(&self) -> &HalConfig {
        &self.config
    }

    pub fn now_ms(&self) -> u64 {
        self.clock.now_ms()
    }

    pub fn stepper(&self, id: StepperId) -> Result<&StepperChannel, DeviceError> {
        self.steppers
            .get(id.0 as usize)
            .ok_or(DeviceError::UnknownStepper(id.0))
    }

    pub fn relay(&self, index: u8) -> Result<RelayChannel, DeviceError> {
        self.relays
            .get(index as usize)
            .copied()
            .ok_or(DeviceError::UnknownRelay(index))
    }

    pub fn trace(&self) -> &[TraceLine] {
        &self.trace
    }

    pub fn trace_text(&self) -> String {
        self.trace.iter().map(|l| format!("{l}\n")).collect()
    }

    fn log(&mut self, device: &str, command: &str, value: impl fmt::Display) {
        self.trace.push(TraceLine {
            now_ms: self.clock.now_ms(),
            device: device.to_string(),
            command: command.to_string(),
            value: value.to_string(),
        });
    }

    /// Moves a stepper by `steps`; the clock advances by one step period per step.
    pub fn step(&mut self, id: StepperId, steps: i64) -> Result<i64, DeviceError> {
        let idx = id.0 as usize;
        if idx >= STEPPER_COUNT {
            return Err(DeviceError::UnknownStepper(id.0));
        }
        self.log(id.name(), "step", steps);
        self.steppers[idx].position_steps += steps;
        self.integrate(steps.unsigned_abs() * self.config.step_period_ms);
        Ok(self.steppers[idx].position_steps)
    }

    /// Moves a stepper to an absolute position.
    pub fn step_to(&mut self, id: StepperId, target: i64) -> Result<i64, DeviceError> {
        let current = self.stepper(id)?.position_steps;
        if current == target {
            return Ok(current);
        }
        self.step(id, target - current)
    }

    pub fn set_servo(&mut self, angle_deg: u16) {
        self.log("servo", "angle", angle_deg);
        self.servo.angle_deg = angle_deg;
    }

    pub fn set_relay(&mut self, index: u8, on: bool) -> Result<bool, DeviceError> {
        let relay = self
            .relays
            .get_mut(index as usize)
            .ok_or(DeviceError::UnknownRelay(index))?;
        relay.on = on;
        let role = relay.role;
        if role == RelayRole::DrillPress && !on {
            self.drill_on_ms = 0;
        }
        self.log(
            &format!("relay{index}"),
            role_name(role),
            if on { "on" } else { "off" },
        );
        Ok(on)
    }

    /// Advances virtual time, integrating drill ramp and water delivery.
    pub fn advance(&mut self, ms: i64) -> Result<u64, DeviceError> {
        if ms < 0 {
            return Err(DeviceError::NegativeAdvance(ms));
        }
        self.integrate(ms as u64);
        Ok(self.clock.now_ms())
    }

    fn integrate(&mut self, ms: u64) {
        if ms == 0 {
            return;
        }
        if self.any_valve_open() {
            self.water_units += self.flow_ml_per_min * ms;
        }
        if self.drill_relay_on() {
            self.drill_on_ms = (self.drill_on_ms + ms).min(self.config.drill_ramp_ms);
        }
        self.clock.tick(ms);
    }

    fn any_valve_open(&self) -> bool {
        self.relays.iter().any(|r| r.on && r.role.is_valve())
    }

    fn drill_relay_on(&self) -> bool {
        self.relays[DRILL_RELAY as usize].on
    }

    pub fn read_flow(&self) -> f64 {
        if self.any_valve_open() {
            self.flow_ml_per_min as f64 / 1000.0
        } else {
            0.0
        }
    }

    pub fn flow_sensor(&self) -> FlowSensor {
        FlowSensor {
            rate_lpm: self.read_flow(),
            pulse_count: self.water_units * self.config.flow_pulses_per_liter / 60_000_000,
        }
    }

    /// Total water delivered since power-on, in liters.
    pub fn water_liters(&self) -> f64 {
        self.water_units as f64 / 60_000_000.0
    }

    pub fn drill_rpm(&self) -> f64 {
        if !self.drill_relay_on() {
            return 0.0;
        }
        if self.config.drill_ramp_ms == 0 {
            return self.config.drill_setpoint_rpm;
        }
        self.config.drill_setpoint_rpm * self.drill_on_ms as f64 / self.config.drill_ramp_ms as f64
    }

    pub fn snapshot(&self) -> DeviceSnapshot {
        let flow = self.flow_sensor();
        DeviceSnapshot {
            now_ms: self.now_ms(),
            stepper_positions: std::array::from_fn(|i| self.steppers[i].position_steps),
            servo_deg: self.servo.angle_deg,
            relays: std::array::from_fn(|i| self.relays[i].on),
            flow_lpm: flow.rate_lpm,
            flow_pulses: flow.pulse_count,
            water_ml: self.water_units as f64 / 60_000.0,
            drill_rpm: self.drill_rpm(),
        }
    }

    /// Flow and drill invariants that must hold at every instant.
    pub fn check_invariants(&self) -> Result<(), String> {
        let rate = self.read_flow();
        if self.any_valve_open() {
            if !(0.3..=10.0).contains(&rate) {
                return Err(format!("open valve reports {rate} L/min"));
            }
        } else if rate != 0.0 {
            return Err(format!("closed valves report {rate} L/min"));
        }
        if self.drill_rpm() > 0.0 && !self.drill_relay_on() {
            return Err("drill spinning with relay off".into());
        }
        let drills = self
            .relays
            .iter()
            .filter(|r| r.role == RelayRole::DrillPress)
            .count();
        if drills != 1 {
            return Err(format!("{drills} relays designated as drill switch"));
        }
        Ok(())
    }
}

fn role_name(role: RelayRole) -> &'static str {
    match role {
        RelayRole::SprayerValve => "sprayer_valve",
        RelayRole::NozzleValve => "nozzle_valve",
        RelayRole::DrillPress => "drill_press",
        RelayRole::Spare => "spare",
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bus() -> DeviceBus {
        DeviceBus::new(HalConfig::default()).unwrap()
    }

    #[test]
    fn geared_stage_quarter_turn() {
        let mut b = bus();
        b.step(StepperId::STAGE_ROTATION, 100).unwrap();
        let ch = b.stepper(StepperId::STAGE_ROTATION).unwrap();
        assert_eq!(ch.angle_deg(), 90.0);
        assert_eq!(b.now_ms(), 100);
    }

    #[test]
    fn zero_step_takes_no_time() {
        let mut b = bus();
        assert_eq!(b.step(StepperId::GRINDER_QUILL, 0).unwrap(), 0);
        assert_eq!(b.now_ms(), 0);
    }

    #[test]
    fn inverse_steps_cancel() {
        let mut b = bus();
        b.step(StepperId::STAGE_ROTATION, -100).unwrap();
        assert_eq!(b.step(StepperId::STAGE_ROTATION, 100).unwrap(), 0);
    }

    #[test]
    fn unknown_channels() {
        let mut b = bus();
        assert_eq!(b.step(StepperId(6), 1), Err(DeviceError::UnknownStepper(6)));
        assert_eq!(b.set_relay(8, true), Err(DeviceError::UnknownRelay(8)));
    }

    #[test]
    fn valve_flow() {
        let mut b = bus();
        b.set_relay(SPRAYER_VALVE, true).unwrap();
        let f = b.read_flow();
        assert!((0.3..=10.0).contains(&f));
        b.set_relay(SPRAYER_VALVE, false).unwrap();
        assert_eq!(b.read_flow(), 0.0);
    }

    #[test]
    fn drill_ramps_to_setpoint() {
        let mut b = bus();
        b.set_relay(DRILL_RELAY, true).unwrap();
        assert_eq!(b.drill_rpm(), 0.0);
        b.advance(500).unwrap();
        assert_eq!(b.drill_rpm(), 250.0);
        b.advance(600).unwrap();
        assert_eq!(b.drill_rpm(), 500.0);
        b.set_relay(DRILL_RELAY, false).unwrap();
        assert_eq!(b.drill_rpm(), 0.0);
    }

    #[test]
    fn wash_water_volume() {
        let mut b = bus();
        b.set_relay(SPRAYER_VALVE, true).unwrap();
        b.advance(30_000).unwrap();
        assert_eq!(b.water_liters(), 4.0 * 0.5);
        assert_eq!(b.flow_sensor().pulse_count, 900);
    }

    #[test]
    fn advance_rejects_negative_and_zero_is_noop() {
        let mut b = bus();
        assert_eq!(b.advance(-1), Err(DeviceError::NegativeAdvance(-1)));
        let before = b.clone();
        b.advance(0).unwrap();
        assert_eq!(b, before);
    }

    #[test]
    fn advance_is_additive() {
        let mut a = bus();
        a.set_relay(DRILL_RELAY, true).unwrap();
        a.set_relay(NOZZLE_VALVE, true).unwrap();
        let mut b = a.clone();
        a.advance(500).unwrap();
        a.advance(500).unwrap();
        b.advance(1000).unwrap();
        assert_eq!(a.snapshot(), b.snapshot());
    }

    #[test]
    fn trace_format() {
        let mut b = bus();
        b.advance(5).unwrap();
        b.set_relay(DRILL_RELAY, true).unwrap();
        assert_eq!(b.trace_text(), "5\trelay2\tdrill_press\ton\n");
    }

    #[test]
    fn config_rejects_out_of_range_flow() {
        let cfg = HalConfig {
            valve_flow_lpm: 12.0,
            ..HalConfig::default()
        };
        assert!(DeviceBus::new(cfg).is_err());
    }
}
