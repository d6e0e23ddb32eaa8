//! Particles, sieves, samples and the vessels that hold them.

mod batch;
mod particle;
mod profile;
mod sieve;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use batch::{binomial, ParticleBatch, ParticleKey};
pub use particle::ParticleClass;
pub use profile::{
    scatter_uniform, synthesize_sample, synthesize_with_key, ClassProfile, CountDist, SampleProfile,
};
pub use sieve::{passes_sieve, Mesh, SieveSpec, SieveStack, STANDARD_DIAMETER_MM};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("domain error: {0}")]
    Domain(&'static str),
    #[error("unknown mesh number #{0}")]
    UnknownMesh(u32),
    #[error("mesh #{mesh} must have its standard pore size, got {pore_um} um")]
    PoreMismatch { mesh: u32, pore_um: u32 },
    #[error("sieve stack is not ordered by decreasing pore size")]
    UnorderedStack,
    #[error("invalid sample profile: {0}")]
    Profile(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoilSample {
    pub volume_cc: f64,
    pub batch: ParticleBatch,
    pub origin_label: String,
}

/// Identifies a physical sieve in the instrument's kit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SieveId(pub u8);

impl SieveId {
    /// Id of the standard-kit sieve with the given mesh.
    pub fn standard(mesh: Mesh) -> Self {
        SieveId(match mesh {
            Mesh::M20 => 0,
            Mesh::M60 => 1,
            Mesh::M200 => 2,
            Mesh::M500 => 3,
        })
    }
}

impl fmt::Display for SieveId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "sieve-{}", self.0)
    }
}

/// Where particles can sit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "role", content = "sieve", rename_all = "snake_case")]
pub enum VesselId {
    SieveSurface(SieveId),
    Bucket,
    SuspensionColumn,
    CollectionContainer,
    Drain,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vessel {
    pub id: VesselId,
    pub contents: ParticleBatch,
}
