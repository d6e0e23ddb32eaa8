use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sievebot_core::hal::HalConfig;
use sievebot_core::mechanism::{station, Compression, Level, MachineState, SlotRef};
use sievebot_core::model::{synthesize_sample, Mesh, SampleProfile, SieveId};
use sievebot_core::protocol::{
    apply_action, build_cyst_protocol, build_egg_protocol, build_full_protocol, validate_script,
    Action, CystTiming, EggTiming, Executor, MachineSnapshot, Phase, ProtocolError, ProtocolScript,
    ProtocolStep, ProtocolTiming, RunInput, RunRecord, RunStatus, ScriptName, TelemetryEvent,
};
use sievebot_core::sim::ProcessParams;

fn executor(machine: MachineState, params: ProcessParams, seed: u64) -> Executor {
    let soil = synthesize_sample(&SampleProfile::muscatine(), seed).unwrap();
    let mut ex = Executor::new(machine.clone(), HalConfig::default(), params, seed).unwrap();
    if machine == MachineState::egg_layout() {
        ex.load_cysts(&soil.batch, "muscatine");
    } else {
        ex.load_soil(&soil.batch, "muscatine");
    }
    ex
}

fn run(script: &ProtocolScript, machine: MachineState, seed: u64) -> (RunRecord, Executor) {
    let mut ex = executor(machine, ProcessParams::default(), seed);
    let rec = ex.run(1, script, &mut |_, _| {}).unwrap();
    (rec, ex)
}

fn shipped() -> Vec<(ProtocolScript, MachineState)> {
    vec![
        (
            build_cyst_protocol(&CystTiming::default()).unwrap(),
            MachineState::cyst_layout(),
        ),
        (
            build_egg_protocol(&EggTiming::default()).unwrap(),
            MachineState::egg_layout(),
        ),
        (
            build_full_protocol(&ProtocolTiming::default()).unwrap(),
            MachineState::cyst_layout(),
        ),
    ]
}

fn check_step_timing(rec: &RunRecord, script: &ProtocolScript) {
    for (i, pair) in rec.telemetry.chunks(2).enumerate() {
        assert_eq!(pair[0].phase, Phase::Enter);
        assert_eq!(pair[1].phase, Phase::Exit);
        assert_eq!(pair[0].step, i);
        assert_eq!(pair[1].step, i);
        assert_eq!(
            pair[1].t_ms - pair[0].t_ms,
            script.steps[i].duration_ms,
            "step {i} ({})",
            script.steps[i].label
        );
    }
}

#[test]
fn shipped_scripts_take_their_allocated_time() {
    let expected = [140_000, 98_000, 268_000];
    for ((script, machine), total) in shipped().into_iter().zip(expected) {
        let (rec, _) = run(&script, machine, 5);
        assert_eq!(rec.status, RunStatus::Completed);
        assert_eq!(rec.duration_ms(), total);
        assert_eq!(rec.expected_total_ms, total);
        check_step_timing(&rec, &script);
    }
    let egg = build_egg_protocol(&EggTiming::default()).unwrap();
    assert_eq!(egg.grind_spray_ms(), 60_000);
}

fn secs() -> impl Strategy<Value = f64> {
    (3_000u32..60_000).prop_map(|ms| f64::from(ms) / 1000.0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn custom_timings_run_for_their_sum(
        a in prop::collection::vec(secs(), 8),
        b in prop::collection::vec(secs(), 11),
        wash in 0u32..60,
        cycles in 1u32..5,
        seed in any::<u64>(),
    ) {
        let cyst = CystTiming {
            decant_s: Some(a[0]),
            rotate_s: Some(a[1]),
            compress_s: Some(a[2]),
            sprayer_engage_s: Some(a[3]),
            wash_s: Some(f64::from(wash)),
            uncompress_s: Some(a[4]),
            sprayer_retract_s: Some(a[5]),
            transfer_s: Some(a[6]),
        };
        let egg = EggTiming {
            rotate_s: Some(b[0]),
            compress_s: Some(b[1]),
            approach_s: Some(b[2]),
            spin_up_s: Some(b[3]),
            contact_s: Some(b[4]),
            grind_s: Some(b[5]),
            lift_s: Some(b[6]),
            spray_s: Some(b[7]),
            cycles: Some(cycles),
            spin_down_s: Some(b[8]),
            raise_s: Some(b[9]),
            collect_s: Some(b[10]),
        };
        let cs = build_cyst_protocol(&cyst).unwrap();
        let es = build_egg_protocol(&egg).unwrap();
        for (script, machine) in [(cs, MachineState::cyst_layout()), (es, MachineState::egg_layout())] {
            let (rec, _) = run(&script, machine, seed);
            prop_assert_eq!(&rec.status, &RunStatus::Completed);
            prop_assert_eq!(rec.duration_ms(), script.sum_ms());
            check_step_timing(&rec, &script);
        }
    }
}

#[test]
fn telemetry_covers_every_step_boundary() {
    for (script, machine) in shipped() {
        let mut ex = executor(machine, ProcessParams::default(), 11);
        let mut seen: Vec<(TelemetryEvent, MachineSnapshot)> = Vec::new();
        let rec = ex
            .run(42, &script, &mut |e, s| seen.push((e.clone(), s.clone())))
            .unwrap();
        assert_eq!(rec.telemetry.len(), 2 * script.steps.len());
        assert_eq!(seen.len(), rec.telemetry.len());
        for (i, (e, s)) in seen.iter().enumerate() {
            assert_eq!(e, &rec.telemetry[i]);
            assert_eq!(e.seq, i as u64);
            assert_eq!(e.run_id, 42);
            assert_eq!(e.machine_snapshot_ref, i);
            assert_eq!(s, &rec.snapshots[i]);
            assert_eq!(s.t_ms, e.t_ms);
            assert_eq!(e.label, script.steps[e.step].label);
            assert_eq!(e.action, script.steps[e.step].action.name());
        }
        for w in rec.telemetry.windows(2) {
            assert!(w[0].t_ms <= w[1].t_ms);
        }
    }
}

#[test]
fn runs_are_byte_identical_for_a_seed() {
    for (script, machine) in shipped() {
        let (a, ea) = run(&script, machine.clone(), 2024);
        let (b, eb) = run(&script, machine.clone(), 2024);
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&b).unwrap()
        );
        assert_eq!(ea.bus().trace_text(), eb.bus().trace_text());
        assert!(!ea.bus().trace_text().is_empty());
    }
    let full = build_full_protocol(&ProtocolTiming::default()).unwrap();
    let (a, _) = run(&full, MachineState::cyst_layout(), 1);
    let (b, _) = run(&full, MachineState::cyst_layout(), 2);
    assert_ne!(a.output_counts, b.output_counts);
}

fn assert_safe(ex: &Executor) {
    let m = ex.machine();
    assert!(m.grinder.is_raised() && !m.grinder.spinning);
    assert!(!m.sprayer_valve_open && !m.nozzle_valve_open);
    assert!(m.sprayer.engaged_over.is_none());
    assert!(m.gripper_parked());
    assert_eq!(m.stage.compression, Compression::Uncompressed);
    m.check_invariants().unwrap();
    let d = ex.bus().snapshot();
    assert!(d.relays.iter().all(|on| !on));
    assert_eq!(d.drill_rpm, 0.0);
    assert_eq!(d.flow_lpm, 0.0);

    // the shutdown sequence: both valves and the drill off, then motion only
    let trace = ex.bus().trace();
    let k = (0..trace.len().saturating_sub(2))
        .rev()
        .find(|&k| {
            trace[k].device == "relay0"
                && trace[k + 1].device == "relay1"
                && trace[k + 2].device == "relay2"
                && trace[k..k + 3].iter().all(|l| l.value == "off")
        })
        .expect("power-off sequence in the trace");
    for line in &trace[k + 3..] {
        assert!(
            !line.device.starts_with("relay") && line.device != "servo",
            "{line}"
        );
    }
}

#[test]
fn abort_from_every_step_reaches_safe_state() {
    for (script, machine) in shipped() {
        for target in 0..script.steps.len() {
            let mut ex = executor(machine.clone(), ProcessParams::default(), 3);
            let handle = ex.abort_handle();
            let mut enter_ms = 0;
            let rec = ex
                .run(9, &script, &mut |e, _| {
                    if e.step == target && e.phase == Phase::Enter {
                        enter_ms = e.t_ms;
                        handle.abort().unwrap();
                        assert_eq!(handle.abort(), Err(ProtocolError::NotRunning));
                    }
                })
                .unwrap();
            assert_eq!(
                rec.status,
                RunStatus::Aborted,
                "{} step {target}",
                script.name
            );
            assert_eq!(rec.steps_executed, target + 1);
            assert_eq!(rec.telemetry.len(), 2 * (target + 1));
            // the aborted step is cut short at the next tick
            let exit = rec.telemetry.last().unwrap().t_ms;
            assert!(exit <= enter_ms + script.steps[target].duration_ms);
            assert_safe(&ex);
            assert!(ex.bench().check_conservation().is_ok());
            assert_eq!(handle.abort(), Err(ProtocolError::NotRunning));
        }
    }
}

#[test]
fn a_second_run_on_the_same_executor_is_refused() {
    let script = build_cyst_protocol(&CystTiming::default()).unwrap();
    let (_, mut ex) = run(&script, MachineState::cyst_layout(), 1);
    assert!(ex.run(2, &script, &mut |_, _| {}).is_err());
}

#[test]
fn input_type_selects_the_protocol() {
    let t = ProtocolTiming::default();
    assert_eq!(
        RunInput::SoilSample.script(&t).unwrap().name,
        ScriptName::CystExtraction
    );
    assert_eq!(
        RunInput::CystSample.script(&t).unwrap().name,
        ScriptName::EggExtraction
    );
}

fn random_action<R: Rng>(rng: &mut R) -> Action {
    let sieve = SieveId(rng.random_range(0..4));
    let reach = [station::WASHER, station::TRANSFER];
    let slot = |rng: &mut R| {
        SlotRef::new(
            Level::ALL[rng.random_range(0..3)],
            reach[rng.random_range(0..2)],
        )
    };
    match rng.random_range(0..13) {
        0 => Action::Decant,
        1 => Action::Wash {
            sieve,
            duration_s: f64::from(rng.random_range(0..40u32)),
        },
        2 => Action::Rotate {
            quarter_turns: rng.random_range(-2..=2),
        },
        3 => Action::Compress {
            target: [
                Compression::Uncompressed,
                Compression::Partial,
                Compression::Full,
            ][rng.random_range(0..3)],
        },
        4 => Action::SprayerRetract,
        5 => Action::GripperTransfer {
            from: slot(rng),
            to: slot(rng),
        },
        6 => Action::GrinderLower {
            height_mm: [0.0, 25.4, 50.8, 101.6][rng.random_range(0..4)],
        },
        7 => Action::Spin {
            on: rng.random_bool(0.5),
        },
        8 => Action::Grind {
            duration_s: f64::from(rng.random_range(0..15u32)),
        },
        9 => Action::GrinderRaise,
        10 => Action::NozzleSpray {
            duration_s: f64::from(rng.random_range(0..15u32)),
        },
        11 => Action::CollectOutput {
            sieve: SieveId::standard(Mesh::M500),
        },
        _ => Action::Dwell {
            duration_s: f64::from(rng.random_range(0..5u32)),
        },
    }
}

/// Mostly legal scripts (each step checked against the symbolic state),
/// with some unchecked steps mixed in so rejections happen too.
fn random_script(seed: u64, start: &MachineState) -> ProtocolScript {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut state = start.clone();
    let mut steps = Vec::new();
    let len = rng.random_range(1..30);
    let mut attempts = 0;
    while steps.len() < len && attempts < 2000 {
        attempts += 1;
        let action = random_action(&mut rng);
        let guided = rng.random_bool(0.97);
        let next = apply_action(&state, &action);
        if guided && next.is_err() {
            continue;
        }
        if let Ok(n) = next {
            state = n;
        }
        let duration_ms = action.timed_ms() + rng.random_range(3_000..6_000);
        steps.push(ProtocolStep::new(
            format!("s{}", steps.len()),
            action,
            duration_ms,
        ));
    }
    ProtocolScript::new(ScriptName::Custom, steps)
}

#[test]
fn accepted_scripts_never_fault() {
    let mut accepted = 0;
    let mut rejected = 0;
    for seed in 0..400u64 {
        let start = if seed % 2 == 0 {
            MachineState::cyst_layout()
        } else {
            MachineState::egg_layout()
        };
        let script = random_script(seed, &start);
        if validate_script(&script, &start).is_err() {
            rejected += 1;
            let mut ex = executor(start, ProcessParams::default(), seed);
            assert!(matches!(
                ex.run(1, &script, &mut |_, _| {}),
                Err(ProtocolError::Invalid(_))
            ));
            continue;
        }
        accepted += 1;
        let mut ex = executor(start, ProcessParams::default(), seed);
        let rec = ex.run(1, &script, &mut |_, _| {}).unwrap();
        assert_eq!(
            rec.status,
            RunStatus::Completed,
            "seed {seed}: {:?}",
            rec.status
        );
        assert!(ex.bench().check_conservation().is_ok());
    }
    assert!(accepted > 100, "accepted {accepted}");
    assert!(rejected > 20, "rejected {rejected}");
}
