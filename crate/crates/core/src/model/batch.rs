//! Particle counts grouped by class, 1 µm size bin and (for cysts) egg content.

use std::ops::AddAssign;

use rand::Rng;
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};

use super::{passes_sieve, ModelError, ParticleClass};

/// Identifies one bin of a batch.
///
/// `eggs` is the egg content of each cyst in the bin and is zero for every
/// other class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ParticleKey {
    pub class: ParticleClass,
    pub diameter_um: u32,
    #[serde(default)]
    pub eggs: u32,
}

impl ParticleKey {
    pub fn new(class: ParticleClass, diameter_um: u32) -> Self {
        ParticleKey {
            class,
            diameter_um,
            eggs: 0,
        }
    }

    pub fn cyst(diameter_um: u32, eggs: u32) -> Self {
        ParticleKey {
            class: ParticleClass::Cyst,
            diameter_um,
            eggs,
        }
    }

    /// Eggs carried by one particle of this bin (free egg or cyst content).
    pub fn eggs_per_particle(&self) -> u64 {
        match self.class {
            ParticleClass::Egg => 1,
            ParticleClass::Cyst => u64::from(self.eggs),
            _ => 0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct BinEntry {
    #[serde(flatten)]
    key: ParticleKey,
    count: u64,
}

/// Non-negative particle counts per bin, kept as a key-sorted vector. Empty
/// bins are never stored, so two batches with the same contents compare
/// equal.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<BinEntry>", into = "Vec<BinEntry>")]
pub struct ParticleBatch {
    bins: Vec<(ParticleKey, u64)>,
}

impl From<Vec<BinEntry>> for ParticleBatch {
    fn from(entries: Vec<BinEntry>) -> Self {
        let mut b = ParticleBatch::new();
        for e in entries {
            b.add(e.key, e.count);
        }
        b
    }
}

impl From<ParticleBatch> for Vec<BinEntry> {
    fn from(b: ParticleBatch) -> Self {
        b.bins
            .into_iter()
            .map(|(key, count)| BinEntry { key, count })
            .collect()
    }
}

impl ParticleBatch {
    pub fn new() -> Self {
        Self::default()
    }

    pub const fn empty_const() -> Self {
        ParticleBatch { bins: Vec::new() }
    }

    /// Adds `count` particles to a bin. Non-cyst keys have their egg content
    /// cleared.
    pub fn add(&mut self, mut key: ParticleKey, count: u64) {
        if count == 0 {
            return;
        }
        if key.class != ParticleClass::Cyst {
            key.eggs = 0;
        }
        if self.bins.last().is_none_or(|(k, _)| *k < key) {
            self.bins.push((key, count));
            return;
        }
        match self.bins.binary_search_by(|(k, _)| k.cmp(&key)) {
            Ok(i) => self.bins[i].1 += count,
            Err(i) => self.bins.insert(i, (key, count)),
        }
    }

    pub fn with(mut self, key: ParticleKey, count: u64) -> Self {
        self.add(key, count);
        self
    }

    /// Removes up to `count` particles from a bin, returning how many were removed.
    pub fn remove(&mut self, key: &ParticleKey, count: u64) -> u64 {
        let Ok(i) = self.bins.binary_search_by(|(k, _)| k.cmp(key)) else {
            return 0;
        };
        let have = &mut self.bins[i].1;
        let taken = count.min(*have);
        *have -= taken;
        if *have == 0 {
            self.bins.remove(i);
        }
        taken
    }

    pub fn get(&self, key: &ParticleKey) -> u64 {
        self.bins
            .binary_search_by(|(k, _)| k.cmp(key))
            .map_or(0, |i| self.bins[i].1)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&ParticleKey, u64)> {
        self.bins.iter().map(|(k, c)| (k, *c))
    }

    pub fn is_empty(&self) -> bool {
        self.bins.is_empty()
    }

    pub fn bin_count(&self) -> usize {
        self.bins.len()
    }

    pub fn total_count(&self) -> u64 {
        self.bins.iter().map(|(_, c)| c).sum()
    }

    pub fn count_class(&self, class: ParticleClass) -> u64 {
        self.iter()
            .filter(|(k, _)| k.class == class)
            .map(|(_, c)| c)
            .sum()
    }

    pub fn count_where(&self, pred: impl Fn(ParticleClass) -> bool) -> u64 {
        self.iter()
            .filter(|(k, _)| pred(k.class))
            .map(|(_, c)| c)
            .sum()
    }

    pub fn free_eggs(&self) -> u64 {
        self.count_class(ParticleClass::Egg)
    }

    pub fn eggs_in_cysts(&self) -> u64 {
        self.iter()
            .filter(|(k, _)| k.class == ParticleClass::Cyst)
            .map(|(k, c)| u64::from(k.eggs) * c)
            .sum()
    }

    /// Free eggs plus the content of intact cysts.
    pub fn egg_total(&self) -> u64 {
        self.free_eggs() + self.eggs_in_cysts()
    }

    pub fn merge(&mut self, other: &ParticleBatch) {
        if other.bins.is_empty() {
            return;
        }
        if self.bins.is_empty() {
            self.bins = other.bins.clone();
            return;
        }
        let mut out = Vec::with_capacity(self.bins.len() + other.bins.len());
        let (mut a, mut b) = (self.bins.iter().peekable(), other.bins.iter().peekable());
        loop {
            match (a.peek(), b.peek()) {
                (Some(x), Some(y)) => match x.0.cmp(&y.0) {
                    std::cmp::Ordering::Less => out.push(*a.next().unwrap()),
                    std::cmp::Ordering::Greater => out.push(*b.next().unwrap()),
                    std::cmp::Ordering::Equal => {
                        out.push((x.0, x.1 + y.1));
                        a.next();
                        b.next();
                    }
                },
                (Some(_), None) => out.extend(a.by_ref().copied()),
                (None, Some(_)) => out.extend(b.by_ref().copied()),
                (None, None) => break,
            }
        }
        self.bins = out;
    }

    /// Moves everything out of `self`, leaving it empty.
    pub fn take(&mut self) -> ParticleBatch {
        std::mem::take(self)
    }

    /// Splits off the bins matching `pred`.
    pub fn split_by(&self, pred: impl Fn(&ParticleKey) -> bool) -> (ParticleBatch, ParticleBatch) {
        let mut yes = ParticleBatch::new();
        let mut no = ParticleBatch::new();
        for (k, c) in self.iter() {
            if pred(k) {
                yes.add(*k, c);
            } else {
                no.add(*k, c);
            }
        }
        (yes, no)
    }

    /// Routes each bin by [`passes_sieve`]; returns `(passed, trapped)`.
    pub fn partition(&self, pore_um: u32) -> Result<(ParticleBatch, ParticleBatch), ModelError> {
        let mut passed = Vec::new();
        let mut trapped = Vec::new();
        for (k, c) in self.iter() {
            if passes_sieve(k.diameter_um, pore_um)? {
                passed.push((*k, c));
            } else {
                trapped.push((*k, c));
            }
        }
        Ok((Self::from_sorted(passed), Self::from_sorted(trapped)))
    }

    /// Independently selects each particle with a per-bin probability.
    /// Returns `(selected, rest)`.
    pub fn thin<R: Rng + ?Sized>(
        &self,
        rng: &mut R,
        prob: impl Fn(&ParticleKey) -> f64,
    ) -> (ParticleBatch, ParticleBatch) {
        let mut selected = Vec::new();
        let mut rest = Vec::new();
        for (k, c) in self.iter() {
            let n = binomial(rng, c, prob(k));
            if n > 0 {
                selected.push((*k, n));
            }
            if n < c {
                rest.push((*k, c - n));
            }
        }
        (Self::from_sorted(selected), Self::from_sorted(rest))
    }

    // bins taken in order from a valid batch: non-zero, normalized keys
    fn from_sorted(bins: Vec<(ParticleKey, u64)>) -> Self {
        ParticleBatch { bins }
    }
}

impl AddAssign<&ParticleBatch> for ParticleBatch {
    fn add_assign(&mut self, rhs: &ParticleBatch) {
        self.merge(rhs);
    }
}

impl FromIterator<(ParticleKey, u64)> for ParticleBatch {
    fn from_iter<I: IntoIterator<Item = (ParticleKey, u64)>>(iter: I) -> Self {
        let mut b = ParticleBatch::new();
        for (k, c) in iter {
            b.add(k, c);
        }
        b
    }
}

const SMALL_N: u64 = 16;

/// Binomial draw with the degenerate probabilities resolved exactly.
pub fn binomial<R: Rng + ?Sized>(rng: &mut R, n: u64, p: f64) -> u64 {
    if n == 0 || p <= 0.0 {
        return 0;
    }
    if p >= 1.0 {
        return n;
    }
    if n <= SMALL_N {
        return (0..n).filter(|_| rng.random::<f64>() < p).count() as u64;
    }
    Binomial::new(n, p)
        .expect("probability checked to lie in (0, 1)")
        .sample(rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ParticleClass::*;

    #[test]
    fn partition_example() {
        let batch = ParticleBatch::new()
            .with(ParticleKey::new(Cyst, 400), 10)
            .with(ParticleKey::new(Egg, 50), 5);
        let (passed, trapped) = batch.partition(250).unwrap();
        assert_eq!(
            passed,
            ParticleBatch::new().with(ParticleKey::new(Egg, 50), 5)
        );
        assert_eq!(
            trapped,
            ParticleBatch::new().with(ParticleKey::new(Cyst, 400), 10)
        );
    }

    #[test]
    fn partition_empty_and_fines() {
        let (p, t) = ParticleBatch::new().partition(25).unwrap();
        assert!(p.is_empty() && t.is_empty());
        let fines = ParticleBatch::new().with(ParticleKey::new(Fines, 10), 1000);
        let (p, t) = fines.partition(25).unwrap();
        assert_eq!(p, fines);
        assert!(t.is_empty());
    }

    #[test]
    fn egg_accounting() {
        let b = ParticleBatch::new()
            .with(ParticleKey::cyst(400, 200), 3)
            .with(ParticleKey::new(Egg, 40), 7)
            .with(
                ParticleKey {
                    class: Fines,
                    diameter_um: 5,
                    eggs: 9,
                },
                2,
            );
        assert_eq!(b.eggs_in_cysts(), 600);
        assert_eq!(b.free_eggs(), 7);
        assert_eq!(b.egg_total(), 607);
        assert_eq!(b.total_count(), 12);
    }

    #[test]
    fn remove_drops_empty_bins() {
        let k = ParticleKey::new(Fines, 3);
        let mut b = ParticleBatch::new().with(k, 4);
        assert_eq!(b.remove(&k, 10), 4);
        assert!(b.is_empty());
        assert_eq!(b, ParticleBatch::new());
    }

    #[test]
    fn json_round_trip() {
        let b = ParticleBatch::new()
            .with(ParticleKey::cyst(300, 120), 2)
            .with(ParticleKey::new(Egg, 30), 1);
        let s = serde_json::to_string(&b).unwrap();
        assert_eq!(serde_json::from_str::<ParticleBatch>(&s).unwrap(), b);
    }
}
