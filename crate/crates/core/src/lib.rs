//! Digital twin of a robotic soil-sieving workstation for soybean cyst
//! nematode diagnostics.
//!
//! * [`model`]: particles, sieves, samples and vessels.
//! * [`hal`]: simulated steppers, relays, valves and flow sensor on a virtual clock.
//! * [`mechanism`]: stage, gripper, grinder and sprayer state with interlocks.
//! * [`protocol`]: cyst and egg extraction scripts, validation and execution.
//! * [`sim`]: stochastic particle transport, extinction experiments and calibration.

pub mod hal;
pub mod mechanism;
pub mod model;
pub mod protocol;
pub mod rng;
pub mod sim;
