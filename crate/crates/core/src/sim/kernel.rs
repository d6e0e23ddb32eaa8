//! The individual process steps as pure functions over batches.

use rand::Rng;

use super::{ProcessParams, SimError};
use crate::model::{
    binomial, scatter_uniform, ParticleBatch, ParticleClass, ParticleKey, SieveStack,
};

/// Splits the bucket into what is in suspension after mixing and settling
/// and what stays in the sediment.
///
/// `depletion` is the fraction of the original soil that has already left
/// the bucket (0 for a fresh sample).
pub fn mix_and_settle<R: Rng + ?Sized>(
    bucket: &ParticleBatch,
    params: &ProcessParams,
    depletion: f64,
    rng: &mut R,
) -> (ParticleBatch, ParticleBatch) {
    let target = params.effective_suspend(depletion);
    bucket.thin(rng, |k| match k.class {
        ParticleClass::LargeDebris => params.large_debris_suspend,
        ParticleClass::Fines => params.fines_suspend,
        _ => target,
    })
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DecantOutcome {
    /// Contents of each sieve, in stack order.
    pub on_sieves: Vec<ParticleBatch>,
    pub drain: ParticleBatch,
}

/// Pours a suspension through a stack: a sequential partition with
/// everything finer than the last sieve going to the drain.
pub fn decant(suspension: &ParticleBatch, stack: &SieveStack) -> Result<DecantOutcome, SimError> {
    let mut out = DecantOutcome::default();
    let mut flowing = suspension.clone();
    for pore in stack.pores() {
        let (passed, trapped) = flowing.partition(pore)?;
        out.on_sieves.push(trapped);
        flowing = passed;
    }
    out.drain = flowing;
    Ok(out)
}

/// Decanting with spill losses and debris hold-up on the top sieve.
pub fn decant_retained<R: Rng + ?Sized>(
    suspension: &ParticleBatch,
    stack: &SieveStack,
    params: &ProcessParams,
    rng: &mut R,
) -> Result<DecantOutcome, SimError> {
    let (spilled, poured) = suspension.thin(rng, |_| params.losses.decant);
    let mut out = DecantOutcome::default();
    let mut flowing = poured;
    for (i, pore) in stack.pores().enumerate() {
        let (passed, mut trapped) = flowing.partition(pore)?;
        flowing = if i == 0 {
            let (held, through) = passed.thin(rng, |k| {
                if k.class.is_cyst_sized() {
                    params.hold_up
                } else {
                    0.0
                }
            });
            trapped.merge(&held);
            through
        } else {
            passed
        };
        out.on_sieves.push(trapped);
    }
    flowing.merge(&spilled);
    out.drain = flowing;
    Ok(out)
}

/// Washes a sieve: each particle smaller than `pore_um` drops to the next
/// level down with probability `1 - (1 - w)^(duration_s / 10)`.
/// Returns `(remaining, moved_down)`.
pub fn wash<R: Rng + ?Sized>(
    on_sieve: &ParticleBatch,
    pore_um: u32,
    duration_s: f64,
    params: &ProcessParams,
    rng: &mut R,
) -> Result<(ParticleBatch, ParticleBatch), SimError> {
    if duration_s < 0.0 {
        return Err(SimError::Params("wash duration must be >= 0".into()));
    }
    let (sub_pore, retained) = on_sieve.partition(pore_um)?;
    let p = params.wash_transfer_prob(duration_s);
    let (moved, stayed) = sub_pore.thin(rng, |_| p);
    let mut remaining = retained;
    remaining.merge(&stayed);
    Ok((remaining, moved))
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct GrindOutcome {
    /// Sieve contents afterwards; ruptured cysts become cyst-sized debris.
    pub remaining: ParticleBatch,
    /// Free eggs released onto the next sieve down.
    pub released: ParticleBatch,
    pub ruptured_cysts: u64,
    pub eggs_released: u64,
    /// Eggs that stayed inside ruptured shells.
    pub eggs_retained: u64,
}

/// One grind cycle on the cyst-holding sieve.
pub fn grind_cycle<R: Rng + ?Sized>(
    on_sieve: &ParticleBatch,
    params: &ProcessParams,
    rng: &mut R,
) -> GrindOutcome {
    let mut out = GrindOutcome::default();
    for (k, c) in on_sieve.iter() {
        if k.class != ParticleClass::Cyst {
            out.remaining.add(*k, c);
            continue;
        }
        let ruptured = binomial(rng, c, params.r_rupture);
        out.remaining.add(*k, c - ruptured);
        if ruptured == 0 {
            continue;
        }
        out.remaining.add(
            ParticleKey::new(ParticleClass::CystSizedDebris, k.diameter_um),
            ruptured,
        );
        let content = ruptured * u64::from(k.eggs);
        let released = binomial(rng, content, params.e_release);
        out.ruptured_cysts += ruptured;
        out.eggs_released += released;
        out.eggs_retained += content - released;
    }
    scatter_uniform(
        &mut out.released,
        rng,
        ParticleClass::Egg,
        out.eggs_released,
        ParticleClass::Egg.size_range_um(),
    );
    out
}
