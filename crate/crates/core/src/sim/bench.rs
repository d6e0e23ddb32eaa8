//! Vessel inventory shared by the protocol engine and the extinction runner.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::kernel::{self, GrindOutcome};
use super::{ProcessParams, SimError};
use crate::model::{ParticleBatch, SieveId, SieveSpec, SieveStack, VesselId};

/// Eggs that changed form during grinding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct EggLedger {
    pub ruptured_cysts: u64,
    /// Free eggs created by rupture (new particles).
    pub released: u64,
    /// Eggs left inside ruptured shells (no longer counted anywhere).
    pub retained_in_shells: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Inventory {
    pub particles: u64,
    pub eggs: u64,
}

/// All vessels of one sample, plus the rupture ledger.
///
/// At every step `particles(vessels) - ledger.released` equals the initial
/// particle count and `eggs(vessels) + ledger.retained_in_shells` equals the
/// initial egg inventory.
#[derive(Debug, Clone, PartialEq)]
pub struct Workbench {
    vessels: BTreeMap<VesselId, ParticleBatch>,
    sieves: BTreeMap<SieveId, SieveSpec>,
    ledger: EggLedger,
    initial: Inventory,
    initial_soil: u64,
}

impl Workbench {
    pub fn new(kit: &[(SieveId, SieveSpec)]) -> Self {
        Workbench {
            vessels: BTreeMap::new(),
            sieves: kit.iter().copied().collect(),
            ledger: EggLedger::default(),
            initial: Inventory {
                particles: 0,
                eggs: 0,
            },
            initial_soil: 0,
        }
    }

    /// Loads material into a vessel and counts it as part of the inventory.
    pub fn load(&mut self, into: VesselId, batch: &ParticleBatch) {
        self.initial.particles += batch.total_count();
        self.initial.eggs += batch.egg_total();
        self.initial_soil += batch.count_where(|c| c.is_soil());
        self.vessels.entry(into).or_default().merge(batch);
    }

    pub fn contents(&self, v: VesselId) -> &ParticleBatch {
        static EMPTY: ParticleBatch = ParticleBatch::empty_const();
        self.vessels.get(&v).unwrap_or(&EMPTY)
    }

    pub fn vessels(&self) -> impl Iterator<Item = (&VesselId, &ParticleBatch)> {
        self.vessels.iter()
    }

    pub fn ledger(&self) -> EggLedger {
        self.ledger
    }

    pub fn initial(&self) -> Inventory {
        self.initial
    }

    fn take(&mut self, v: VesselId) -> ParticleBatch {
        self.vessels.remove(&v).unwrap_or_default()
    }

    fn put(&mut self, v: VesselId, batch: &ParticleBatch) {
        if !batch.is_empty() {
            self.vessels.entry(v).or_default().merge(batch);
        }
    }

    fn spec(&self, id: SieveId) -> Result<SieveSpec, SimError> {
        self.sieves
            .get(&id)
            .copied()
            .ok_or(SimError::UnknownSieve(id))
    }

    /// Soil (non-nematode) particles still in the bucket, relative to the
    /// amount loaded.
    pub fn soil_fraction(&self) -> f64 {
        if self.initial_soil == 0 {
            return 1.0;
        }
        self.contents(VesselId::Bucket).count_where(|c| c.is_soil()) as f64
            / self.initial_soil as f64
    }

    /// Mixes the bucket and moves the suspended part into the suspension column.
    pub fn mix_and_settle<R: Rng + ?Sized>(&mut self, params: &ProcessParams, rng: &mut R) {
        let depletion = 1.0 - self.soil_fraction();
        let bucket = self.take(VesselId::Bucket);
        let (suspension, sediment) = kernel::mix_and_settle(&bucket, params, depletion, rng);
        self.put(VesselId::Bucket, &sediment);
        self.put(VesselId::SuspensionColumn, &suspension);
    }

    /// Pours the suspension column over `stack` (top first).
    pub fn decant<R: Rng + ?Sized>(
        &mut self,
        stack: &[SieveId],
        params: &ProcessParams,
        rng: &mut R,
    ) -> Result<(), SimError> {
        let specs = stack
            .iter()
            .map(|&id| self.spec(id))
            .collect::<Result<Vec<_>, _>>()?;
        let sieve_stack = SieveStack::new(specs)?;
        let suspension = self.take(VesselId::SuspensionColumn);
        let out = kernel::decant_retained(&suspension, &sieve_stack, params, rng)?;
        for (&id, batch) in stack.iter().zip(&out.on_sieves) {
            self.put(VesselId::SieveSurface(id), batch);
        }
        self.put(VesselId::Drain, &out.drain);
        Ok(())
    }

    /// Washes one sieve, dropping sub-pore material into `below`.
    pub fn wash<R: Rng + ?Sized>(
        &mut self,
        sieve: SieveId,
        below: VesselId,
        duration_s: f64,
        params: &ProcessParams,
        rng: &mut R,
    ) -> Result<u64, SimError> {
        let pore = self.spec(sieve)?.pore_um;
        let on = self.take(VesselId::SieveSurface(sieve));
        let (remaining, moved) = kernel::wash(&on, pore, duration_s, params, rng)?;
        self.put(VesselId::SieveSurface(sieve), &remaining);
        self.put(below, &moved);
        Ok(moved.total_count())
    }

    /// One grind cycle on `sieve`; released eggs land in `below`.
    pub fn grind<R: Rng + ?Sized>(
        &mut self,
        sieve: SieveId,
        below: VesselId,
        params: &ProcessParams,
        rng: &mut R,
    ) -> GrindOutcome {
        let on = self.take(VesselId::SieveSurface(sieve));
        let out = kernel::grind_cycle(&on, params, rng);
        self.put(VesselId::SieveSurface(sieve), &out.remaining);
        self.put(below, &out.released);
        self.ledger.ruptured_cysts += out.ruptured_cysts;
        self.ledger.released += out.eggs_released;
        self.ledger.retained_in_shells += out.eggs_retained;
        out
    }

    /// Rinses a sieve into the collection container; returns eggs collected.
    pub fn collect<R: Rng + ?Sized>(
        &mut self,
        sieve: SieveId,
        params: &ProcessParams,
        rng: &mut R,
    ) -> u64 {
        let on = self.take(VesselId::SieveSurface(sieve));
        let (lost, kept) = on.thin(rng, |_| params.losses.collect);
        self.put(VesselId::Drain, &lost);
        self.put(VesselId::CollectionContainer, &kept);
        kept.free_eggs()
    }

    /// Moves everything in `from` into `to`.
    pub fn transfer(&mut self, from: VesselId, to: VesselId) {
        let b = self.take(from);
        self.put(to, &b);
    }

    pub fn inventory(&self) -> Inventory {
        let mut inv = Inventory {
            particles: 0,
            eggs: 0,
        };
        for b in self.vessels.values() {
            inv.particles += b.total_count();
            inv.eggs += b.egg_total();
        }
        inv
    }

    pub fn check_conservation(&self) -> Result<(), SimError> {
        let now = self.inventory();
        let particles = now.particles.checked_sub(self.ledger.released);
        if particles != Some(self.initial.particles)
            || now.eggs + self.ledger.retained_in_shells != self.initial.eggs
        {
            return Err(SimError::Conservation(format!(
                "initial {:?}, now {:?}, ledger {:?}",
                self.initial, now, self.ledger
            )));
        }
        Ok(())
    }
}
