//! Sieve meshes, pore sizes and the pass/trap rule.

use std::fmt;

use serde::{Deserialize, Serialize};

use super::ModelError;

/// Diameter of a standard 6-inch sieve body.
pub const STANDARD_DIAMETER_MM: f64 = 152.4;

/// US standard sieve designations carried by the instrument.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u32", into = "u32")]
pub enum Mesh {
    M20,
    M60,
    M200,
    M500,
}

impl Mesh {
    /// All meshes ordered from coarsest to finest.
    pub const ALL: [Mesh; 4] = [Mesh::M20, Mesh::M60, Mesh::M200, Mesh::M500];

    pub fn number(self) -> u32 {
        match self {
            Mesh::M20 => 20,
            Mesh::M60 => 60,
            Mesh::M200 => 200,
            Mesh::M500 => 500,
        }
    }

    /// Pore opening in micrometers.
    pub fn pore_um(self) -> u32 {
        match self {
            Mesh::M20 => 850,
            Mesh::M60 => 250,
            Mesh::M200 => 75,
            Mesh::M500 => 25,
        }
    }
}

impl TryFrom<u32> for Mesh {
    type Error = ModelError;

    fn try_from(n: u32) -> Result<Self, Self::Error> {
        match n {
            20 => Ok(Mesh::M20),
            60 => Ok(Mesh::M60),
            200 => Ok(Mesh::M200),
            500 => Ok(Mesh::M500),
            other => Err(ModelError::UnknownMesh(other)),
        }
    }
}

impl From<Mesh> for u32 {
    fn from(m: Mesh) -> u32 {
        m.number()
    }
}

impl fmt::Display for Mesh {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.number())
    }
}

/// A physical sieve: mesh designation, pore opening and body diameter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SieveSpec {
    pub mesh: Mesh,
    pub pore_um: u32,
    pub diameter_mm: f64,
}

impl SieveSpec {
    pub fn standard(mesh: Mesh) -> Self {
        SieveSpec {
            mesh,
            pore_um: mesh.pore_um(),
            diameter_mm: STANDARD_DIAMETER_MM,
        }
    }

    /// Checks the mesh/pore pairing and the body diameter.
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.pore_um != self.mesh.pore_um() {
            return Err(ModelError::PoreMismatch {
                mesh: self.mesh.number(),
                pore_um: self.pore_um,
            });
        }
        if self.diameter_mm.is_nan() || self.diameter_mm <= 0.0 {
            return Err(ModelError::Domain("sieve diameter must be positive"));
        }
        Ok(())
    }
}

/// Sieves stacked top to bottom; pore sizes strictly decrease downward.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<SieveSpec>", into = "Vec<SieveSpec>")]
pub struct SieveStack(Vec<SieveSpec>);

impl SieveStack {
    pub fn new(sieves: Vec<SieveSpec>) -> Result<Self, ModelError> {
        for s in &sieves {
            s.validate()?;
        }
        if sieves.windows(2).any(|w| w[0].pore_um <= w[1].pore_um) {
            return Err(ModelError::UnorderedStack);
        }
        Ok(SieveStack(sieves))
    }

    pub fn of(meshes: &[Mesh]) -> Result<Self, ModelError> {
        Self::new(meshes.iter().copied().map(SieveSpec::standard).collect())
    }

    /// The four-sieve stack, #20 over #60 over #200 over #500.
    pub fn full() -> Self {
        SieveStack(Mesh::ALL.iter().copied().map(SieveSpec::standard).collect())
    }

    pub fn sieves(&self) -> &[SieveSpec] {
        &self.0
    }

    pub fn pores(&self) -> impl Iterator<Item = u32> + '_ {
        self.0.iter().map(|s| s.pore_um)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl TryFrom<Vec<SieveSpec>> for SieveStack {
    type Error = ModelError;

    fn try_from(v: Vec<SieveSpec>) -> Result<Self, Self::Error> {
        SieveStack::new(v)
    }
}

impl From<SieveStack> for Vec<SieveSpec> {
    fn from(s: SieveStack) -> Self {
        s.0
    }
}

/// A particle passes only when strictly smaller than the pore; a tie is trapped.
pub fn passes_sieve(diameter_um: u32, pore_um: u32) -> Result<bool, ModelError> {
    if diameter_um == 0 {
        return Err(ModelError::Domain("particle diameter must be positive"));
    }
    if pore_um == 0 {
        return Err(ModelError::Domain("pore size must be positive"));
    }
    Ok(diameter_um < pore_um)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pass_rule_examples() {
        assert!(passes_sieve(300, 850).unwrap());
        assert!(!passes_sieve(850, 850).unwrap());
        assert!(!passes_sieve(40, 25).unwrap());
    }

    #[test]
    fn zero_inputs_are_domain_errors() {
        assert!(matches!(passes_sieve(0, 25), Err(ModelError::Domain(_))));
        assert!(matches!(passes_sieve(10, 0), Err(ModelError::Domain(_))));
    }

    #[test]
    fn pore_table() {
        let pores: Vec<u32> = Mesh::ALL.iter().map(|m| m.pore_um()).collect();
        assert_eq!(pores, vec![850, 250, 75, 25]);
        assert_eq!(Mesh::try_from(60).unwrap(), Mesh::M60);
        assert!(Mesh::try_from(100).is_err());
    }

    #[test]
    fn stack_must_be_ordered() {
        assert!(SieveStack::of(&[Mesh::M20, Mesh::M60]).is_ok());
        assert_eq!(
            SieveStack::of(&[Mesh::M60, Mesh::M20]),
            Err(ModelError::UnorderedStack)
        );
        let bad = SieveSpec {
            pore_um: 300,
            ..SieveSpec::standard(Mesh::M60)
        };
        assert!(SieveStack::new(vec![bad]).is_err());
    }

    #[test]
    fn mesh_serializes_as_number() {
        assert_eq!(serde_json::to_string(&Mesh::M500).unwrap(), "500");
        let m: Mesh = serde_json::from_str("200").unwrap();
        assert_eq!(m, Mesh::M200);
    }
}
