use std::fmt;

use serde::{Deserialize, Serialize};

/// Every particle in a sample belongs to exactly one class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParticleClass {
    LargeDebris,
    Cyst,
    CystSizedDebris,
    Egg,
    EggSizedDebris,
    Fines,
}

impl ParticleClass {
    pub const ALL: [ParticleClass; 6] = [
        ParticleClass::LargeDebris,
        ParticleClass::Cyst,
        ParticleClass::CystSizedDebris,
        ParticleClass::Egg,
        ParticleClass::EggSizedDebris,
        ParticleClass::Fines,
    ];

    /// Inclusive effective-diameter range in micrometers.
    ///
    /// Each range sits strictly between the pore of the sieve that must pass
    /// the class and the pore of the sieve that must trap it.
    pub fn size_range_um(self) -> (u32, u32) {
        match self {
            ParticleClass::LargeDebris => (851, 3000),
            ParticleClass::Cyst | ParticleClass::CystSizedDebris => (251, 849),
            ParticleClass::Egg | ParticleClass::EggSizedDebris => (26, 74),
            ParticleClass::Fines => (1, 24),
        }
    }

    /// Classes that are not nematode material; they make up the soil mass.
    pub fn is_soil(self) -> bool {
        !matches!(self, ParticleClass::Cyst | ParticleClass::Egg)
    }

    /// Classes a debris mat can hold on the top sieve during decanting.
    pub fn is_cyst_sized(self) -> bool {
        matches!(self, ParticleClass::Cyst | ParticleClass::CystSizedDebris)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ParticleClass::LargeDebris => "large_debris",
            ParticleClass::Cyst => "cyst",
            ParticleClass::CystSizedDebris => "cyst_sized_debris",
            ParticleClass::Egg => "egg",
            ParticleClass::EggSizedDebris => "egg_sized_debris",
            ParticleClass::Fines => "fines",
        }
    }
}

impl fmt::Display for ParticleClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}
