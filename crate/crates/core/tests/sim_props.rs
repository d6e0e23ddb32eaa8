use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sievebot_core::mechanism::standard_kit;
use sievebot_core::model::{
    Mesh, ParticleBatch, ParticleClass, ParticleKey, SampleProfile, SieveId, VesselId,
};
use sievebot_core::rng::StreamKey;
use sievebot_core::sim::{
    run_extinction, run_iteration, ExtinctionPlan, IterationProtocol, Method, ProcessParams,
    StrayLosses, Workbench,
};

fn sid(m: Mesh) -> SieveId {
    SieveId::standard(m)
}

fn soil_bin() -> impl Strategy<Value = (ParticleKey, u64)> {
    prop_oneof![
        (251u32..850, 0u32..400, 1u64..40).prop_map(|(d, e, n)| (ParticleKey::cyst(d, e), n)),
        (26u32..75, 1u64..200).prop_map(|(d, n)| (ParticleKey::new(ParticleClass::Egg, d), n)),
        (850u32..3000, 1u64..500)
            .prop_map(|(d, n)| (ParticleKey::new(ParticleClass::LargeDebris, d), n)),
        (251u32..850, 1u64..500)
            .prop_map(|(d, n)| (ParticleKey::new(ParticleClass::CystSizedDebris, d), n)),
        (26u32..75, 1u64..500)
            .prop_map(|(d, n)| (ParticleKey::new(ParticleClass::EggSizedDebris, d), n)),
        (1u32..25, 1u64..2000).prop_map(|(d, n)| (ParticleKey::new(ParticleClass::Fines, d), n)),
    ]
}

fn soil() -> impl Strategy<Value = ParticleBatch> {
    prop::collection::vec(soil_bin(), 1..12).prop_map(|v| v.into_iter().collect())
}

fn unit() -> impl Strategy<Value = f64> {
    prop_oneof![Just(0.0), Just(1.0), 0.0..=1.0]
}

fn params() -> impl Strategy<Value = ProcessParams> {
    (
        (unit(), unit(), unit(), unit(), unit()),
        (unit(), unit(), unit(), unit(), unit()),
    )
        .prop_map(
            |((f, b, w, r, e), (h, ld, fi, ld_spill, lc))| ProcessParams {
                f_suspend: f,
                suspension_boost: b,
                w_transfer: w,
                r_rupture: r,
                e_release: e,
                hold_up: h,
                large_debris_suspend: ld,
                fines_suspend: fi,
                losses: StrayLosses {
                    decant: ld_spill,
                    collect: lc,
                },
            },
        )
}

#[derive(Debug, Clone)]
enum Op {
    Mix,
    Decant(bool),
    Wash(usize, usize, f64),
    Grind(usize, usize),
    Collect(usize),
    Transfer(usize, usize),
}

const VESSELS: usize = 8;

fn vessel(i: usize) -> VesselId {
    match i {
        0..=3 => VesselId::SieveSurface(sid(Mesh::ALL[i])),
        4 => VesselId::Bucket,
        5 => VesselId::SuspensionColumn,
        6 => VesselId::CollectionContainer,
        _ => VesselId::Drain,
    }
}

fn op() -> impl Strategy<Value = Op> {
    prop_oneof![
        Just(Op::Mix),
        any::<bool>().prop_map(Op::Decant),
        (0usize..4, 0usize..VESSELS, 0.0f64..60.0).prop_map(|(s, b, d)| Op::Wash(s, b, d)),
        (0usize..4, 0usize..VESSELS).prop_map(|(s, b)| Op::Grind(s, b)),
        (0usize..4).prop_map(Op::Collect),
        (0usize..VESSELS, 0usize..VESSELS).prop_map(|(a, b)| Op::Transfer(a, b)),
    ]
}

fn eggs_in_cysts_oracle(b: &ParticleBatch) -> u64 {
    b.iter()
        .filter(|(k, _)| k.class == ParticleClass::Cyst)
        .map(|(k, c)| c * u64::from(k.eggs))
        .sum()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10_000))]

    #[test]
    fn random_operation_sequences_conserve(
        sample in soil(),
        p in params(),
        ops in prop::collection::vec(op(), 0..24),
        seed in any::<u64>(),
    ) {
        let mut bench = Workbench::new(&standard_kit());
        bench.load(VesselId::Bucket, &sample);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for op in &ops {
            match *op {
                Op::Mix => bench.mix_and_settle(&p, &mut rng),
                Op::Decant(full) => {
                    let stack: Vec<SieveId> = if full {
                        Mesh::ALL.iter().map(|&m| sid(m)).collect()
                    } else {
                        vec![sid(Mesh::M20), sid(Mesh::M60)]
                    };
                    bench.decant(&stack, &p, &mut rng).unwrap();
                }
                Op::Wash(s, below, d) => {
                    bench.wash(sid(Mesh::ALL[s]), vessel(below), d, &p, &mut rng).unwrap();
                }
                Op::Grind(s, below) => {
                    bench.grind(sid(Mesh::ALL[s]), vessel(below), &p, &mut rng);
                }
                Op::Collect(s) => {
                    bench.collect(sid(Mesh::ALL[s]), &p, &mut rng);
                }
                Op::Transfer(a, b) => bench.transfer(vessel(a), vessel(b)),
            }
            prop_assert!(bench.check_conservation().is_ok(), "{:?}", bench.check_conservation());
            let ledger = bench.ledger();
            let inv = bench.inventory();
            prop_assert_eq!(inv.eggs + ledger.retained_in_shells, sample.egg_total());
            prop_assert_eq!(inv.particles - ledger.released, sample.total_count());
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2_000))]

    #[test]
    fn lossless_iteration_recovers_every_egg_in_a_cyst(sample in soil(), seed in any::<u64>()) {
        let p = ProcessParams::lossless();
        let mut bench = Workbench::new(&standard_kit());
        bench.load(VesselId::Bucket, &sample);
        let out = run_iteration(
            &mut bench,
            &IterationProtocol::default(),
            &p,
            seed,
            StreamKey::sample(0, 0),
            0,
        )
        .unwrap();
        let cysts = sample.count_class(ParticleClass::Cyst);
        prop_assert_eq!(out.eggs, eggs_in_cysts_oracle(&sample));
        prop_assert_eq!(out.ruptured_cysts, cysts);
        prop_assert_eq!(out.cysts_on_60, cysts);
        prop_assert!(bench.check_conservation().is_ok());
        // a second pass finds nothing left
        let again = run_iteration(
            &mut bench,
            &IterationProtocol::default(),
            &p,
            seed,
            StreamKey::sample(0, 0),
            1,
        )
        .unwrap();
        prop_assert_eq!(again.eggs, 0);
    }
}

fn iter1(params: ProcessParams, seed: u64) -> f64 {
    let mut plan = ExtinctionPlan::new(SampleProfile::nevada(), Method::Robotic, params, seed);
    plan.replicates = 20;
    plan.iterations = 2;
    run_extinction(&plan).unwrap().iter1_mean()
}

#[test]
fn recovery_rises_with_suspension_probability() {
    let base = Method::Robotic.shipped_params("nevada").unwrap();
    let means: Vec<f64> = [0.2, 0.4, 0.6, 0.8, 1.0]
        .iter()
        .map(|&f| {
            iter1(
                ProcessParams {
                    f_suspend: f,
                    ..base.clone()
                },
                31,
            )
        })
        .collect();
    for w in means.windows(2) {
        assert!(w[1] > w[0], "{means:?}");
    }
}

#[test]
fn recovery_rises_with_rupture_probability() {
    let base = Method::Robotic.shipped_params("nevada").unwrap();
    let means: Vec<f64> = [0.1, 0.3, 0.6, 0.9]
        .iter()
        .map(|&r| {
            iter1(
                ProcessParams {
                    r_rupture: r,
                    ..base.clone()
                },
                32,
            )
        })
        .collect();
    for w in means.windows(2) {
        assert!(w[1] > w[0], "{means:?}");
    }
}

#[test]
fn extinction_is_independent_of_thread_count() {
    let params = Method::Robotic.shipped_params("muscatine").unwrap();
    let mut plan = ExtinctionPlan::new(SampleProfile::muscatine(), Method::Robotic, params, 77);
    plan.replicates = 16;
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap();
        let report = pool.install(|| run_extinction(&plan)).unwrap();
        serde_json::to_string(&report).unwrap()
    };
    let one = run(1);
    assert_eq!(one, run(4));
    assert_eq!(one, run(3));
}

#[test]
fn different_seeds_give_different_samples() {
    let params = Method::Robotic.shipped_params("muscatine").unwrap();
    let a = ExtinctionPlan::new(
        SampleProfile::muscatine(),
        Method::Robotic,
        params.clone(),
        1,
    );
    let b = ExtinctionPlan::new(SampleProfile::muscatine(), Method::Robotic, params, 2);
    assert_ne!(run_extinction(&a).unwrap(), run_extinction(&b).unwrap());
}
