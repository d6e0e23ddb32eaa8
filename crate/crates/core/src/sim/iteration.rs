use serde::{Deserialize, Serialize};

use super::{ProcessParams, SimError, Workbench};
use crate::model::{Mesh, SieveId, VesselId};
use crate::rng::{stream, StreamKey};

/// Timing knobs of one cyst + egg extraction pass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IterationProtocol {
    /// Wash of the #20 sieve after decanting.
    pub wash_s: f64,
    pub grind_cycles: u32,
    /// Nozzle spray after each grind cycle.
    pub spray_s: f64,
}

impl Default for IterationProtocol {
    fn default() -> Self {
        IterationProtocol {
            wash_s: 30.0,
            grind_cycles: 3,
            spray_s: 10.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct IterationOutcome {
    /// Free eggs added to the collection container.
    pub eggs: u64,
    pub cysts_on_60: u64,
    pub ruptured_cysts: u64,
}

const STEP_MIX: u16 = 0;
const STEP_DECANT: u16 = 1;
const STEP_WASH: u16 = 2;
const STEP_COLLECT: u16 = 3;
const STEP_CYCLES: u16 = 16;

/// One complete extraction pass on the bench's bucket: mix and settle,
/// decant over #20/#60, wash #20, grind #60 over #200/#500 with a spray
/// after each cycle, collect #500, then rinse everything left on the
/// sieves back into the bucket for the next pass.
pub fn run_iteration(
    bench: &mut Workbench,
    protocol: &IterationProtocol,
    params: &ProcessParams,
    seed: u64,
    key: StreamKey,
    iteration: u16,
) -> Result<IterationOutcome, SimError> {
    let s20 = SieveId::standard(Mesh::M20);
    let s60 = SieveId::standard(Mesh::M60);
    let s200 = SieveId::standard(Mesh::M200);
    let s500 = SieveId::standard(Mesh::M500);
    let rng = |step: u16| stream(seed, key.at(iteration, step));

    bench.mix_and_settle(params, &mut rng(STEP_MIX));
    bench.decant(&[s20, s60], params, &mut rng(STEP_DECANT))?;
    bench.wash(
        s20,
        VesselId::SieveSurface(s60),
        protocol.wash_s,
        params,
        &mut rng(STEP_WASH),
    )?;
    let mut out = IterationOutcome {
        cysts_on_60: bench
            .contents(VesselId::SieveSurface(s60))
            .count_class(crate::model::ParticleClass::Cyst),
        ..Default::default()
    };
    for c in 0..protocol.grind_cycles {
        let step = STEP_CYCLES.saturating_add((c as u16).saturating_mul(2));
        let g = bench.grind(s60, VesselId::SieveSurface(s200), params, &mut rng(step));
        out.ruptured_cysts += g.ruptured_cysts;
        bench.wash(
            s200,
            VesselId::SieveSurface(s500),
            protocol.spray_s,
            params,
            &mut rng(step.saturating_add(1)),
        )?;
    }
    out.eggs = bench.collect(s500, params, &mut rng(STEP_COLLECT));
    for s in [s20, s60, s200] {
        bench.transfer(VesselId::SieveSurface(s), VesselId::Bucket);
    }
    Ok(out)
}
