use proptest::prelude::*;
use sievebot_core::model::{
    passes_sieve, synthesize_sample, ClassProfile, CountDist, ParticleBatch, ParticleClass,
    ParticleKey, SampleProfile, SieveStack,
};
use sievebot_core::sim::kernel::decant;

const CLASSES: [ParticleClass; 6] = [
    ParticleClass::LargeDebris,
    ParticleClass::Cyst,
    ParticleClass::CystSizedDebris,
    ParticleClass::Egg,
    ParticleClass::EggSizedDebris,
    ParticleClass::Fines,
];

fn bin() -> impl Strategy<Value = (ParticleKey, u64)> {
    (0..CLASSES.len(), 1u32..3000, 0u32..400, 1u64..1000).prop_map(|(c, d, eggs, n)| {
        let class = CLASSES[c];
        let key = if class == ParticleClass::Cyst {
            ParticleKey::cyst(d, eggs)
        } else {
            ParticleKey::new(class, d)
        };
        (key, n)
    })
}

fn batch(max_bins: usize) -> impl Strategy<Value = ParticleBatch> {
    prop::collection::vec(bin(), 0..=max_bins).prop_map(|bins| bins.into_iter().collect())
}

fn pore() -> impl Strategy<Value = u32> {
    prop_oneof![Just(850u32), Just(250), Just(75), Just(25), 1u32..4000]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10_000))]

    #[test]
    fn partition_conserves_every_bin(b in batch(12), p in pore()) {
        let (passed, trapped) = b.partition(p).unwrap();
        let mut sum = passed.clone();
        sum.merge(&trapped);
        prop_assert_eq!(&sum, &b);
        for (k, _) in passed.iter() {
            prop_assert!(k.diameter_um < p);
        }
        for (k, _) in trapped.iter() {
            prop_assert!(k.diameter_um >= p);
        }
    }

    #[test]
    fn partition_keeps_egg_inventory(b in batch(12), p in pore()) {
        let (passed, trapped) = b.partition(p).unwrap();
        prop_assert_eq!(passed.egg_total() + trapped.egg_total(), b.egg_total());
        prop_assert_eq!(passed.eggs_in_cysts() + trapped.eggs_in_cysts(), b.eggs_in_cysts());
        prop_assert_eq!(passed.total_count() + trapped.total_count(), b.total_count());
    }

    #[test]
    fn trapped_stays_trapped_on_finer_pores(d in 1u32..4000, p in 1u32..4000, q in 1u32..4000) {
        let (fine, coarse) = if p <= q { (p, q) } else { (q, p) };
        if !passes_sieve(d, coarse).unwrap() {
            prop_assert!(!passes_sieve(d, fine).unwrap());
        }
    }

    #[test]
    fn stack_routing_matches_independent_classification(b in batch(10)) {
        let pores = [850u32, 250, 75, 25];
        let out = decant(&b, &SieveStack::full()).unwrap();
        let mut expected = vec![ParticleBatch::new(); pores.len()];
        let mut drain = ParticleBatch::new();
        for (k, c) in b.iter() {
            // first sieve whose pore is not larger than the particle
            match pores.iter().position(|&p| k.diameter_um >= p) {
                Some(i) => expected[i].add(*k, c),
                None => drain.add(*k, c),
            }
        }
        prop_assert_eq!(out.on_sieves, expected);
        prop_assert_eq!(out.drain, drain);
    }

    #[test]
    fn batch_json_round_trip(b in batch(8)) {
        let text = serde_json::to_string(&b).unwrap();
        let back: ParticleBatch = serde_json::from_str(&text).unwrap();
        prop_assert_eq!(back, b);
    }
}

#[test]
fn passes_sieve_examples() {
    assert!(passes_sieve(300, 850).unwrap());
    assert!(!passes_sieve(850, 850).unwrap());
    assert!(!passes_sieve(40, 25).unwrap());
    assert!(passes_sieve(0, 25).is_err());
    assert!(passes_sieve(25, 0).is_err());
}

#[test]
fn partition_examples() {
    let b = ParticleBatch::new()
        .with(ParticleKey::cyst(400, 0), 10)
        .with(ParticleKey::new(ParticleClass::Egg, 50), 5);
    let (passed, trapped) = b.partition(250).unwrap();
    assert_eq!(
        passed,
        ParticleBatch::new().with(ParticleKey::new(ParticleClass::Egg, 50), 5)
    );
    assert_eq!(
        trapped,
        ParticleBatch::new().with(ParticleKey::cyst(400, 0), 10)
    );

    let (p, t) = ParticleBatch::new().partition(250).unwrap();
    assert!(p.is_empty() && t.is_empty());

    let fines = ParticleBatch::new().with(ParticleKey::new(ParticleClass::Fines, 10), 1000);
    let (p, t) = fines.partition(25).unwrap();
    assert_eq!(p, fines);
    assert!(t.is_empty());
}

#[test]
fn class_ranges_land_on_their_sieves() {
    let stack = SieveStack::full();
    let expected = |c: ParticleClass| match c {
        ParticleClass::LargeDebris => Some(0),
        ParticleClass::Cyst | ParticleClass::CystSizedDebris => Some(1),
        ParticleClass::Egg | ParticleClass::EggSizedDebris => Some(3),
        ParticleClass::Fines => None,
    };
    for class in CLASSES {
        let (lo, hi) = class.size_range_um();
        for d in [lo, hi] {
            let b = ParticleBatch::new().with(ParticleKey::new(class, d), 1);
            let out = decant(&b, &stack).unwrap();
            let at = out.on_sieves.iter().position(|s| !s.is_empty());
            assert_eq!(at, expected(class), "{class} at {d} um");
        }
    }
}

#[test]
fn synthesized_sample_inventory() {
    let mut classes = std::collections::BTreeMap::new();
    classes.insert(
        ParticleClass::Cyst,
        ClassProfile {
            count: CountDist::Constant { value: 100 },
            size_um: None,
            egg_content: Some(CountDist::Constant { value: 200 }),
        },
    );
    let profile = SampleProfile {
        label: "fixed".into(),
        volume_cc: 100.0,
        classes,
    };
    let s = synthesize_sample(&profile, 3).unwrap();
    assert_eq!(s.batch.count_class(ParticleClass::Cyst), 100);
    assert_eq!(s.batch.egg_total(), 100 * 200);
    assert_eq!(synthesize_sample(&profile, 3).unwrap(), s);

    let m = SampleProfile::muscatine();
    let a = synthesize_sample(&m, 11).unwrap();
    for (k, _) in a.batch.iter() {
        let (lo, hi) = k.class.size_range_um();
        assert!((lo..=hi).contains(&k.diameter_um));
    }
    assert_eq!(a.volume_cc, 100.0);
}
