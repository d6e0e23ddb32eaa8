//! Per-run CSV: one row per executed step.

use sievebot_core::model::VesselId;
use sievebot_core::protocol::{MachineSnapshot, Phase, RunRecord};

pub const RUN_REPORT_HEADER: [&str; 8] = [
    "run_id",
    "step",
    "label",
    "action",
    "start_ms",
    "end_ms",
    "container_cysts",
    "container_eggs",
];

fn container(s: &MachineSnapshot) -> (u64, u64) {
    s.vessels
        .iter()
        .find(|v| v.vessel == VesselId::CollectionContainer)
        .map_or((0, 0), |v| (v.cysts, v.free_eggs))
}

/// Step timeline of a run with the collection container contents at the
/// end of each step. A run with no telemetry yields the header only.
pub fn run_report_csv(record: &RunRecord) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(RUN_REPORT_HEADER).expect("in-memory write");
    let mut enter = None;
    for e in &record.telemetry {
        match e.phase {
            Phase::Enter => enter = Some(e),
            Phase::Exit => {
                let start = enter
                    .take()
                    .filter(|s| s.step == e.step)
                    .map_or(e.t_ms, |s| s.t_ms);
                let (cysts, eggs) = record
                    .snapshots
                    .get(e.machine_snapshot_ref)
                    .map_or((0, 0), container);
                w.write_record([
                    record.run_id.to_string(),
                    e.step.to_string(),
                    e.label.clone(),
                    e.action.clone(),
                    start.to_string(),
                    e.t_ms.to_string(),
                    cysts.to_string(),
                    eggs.to_string(),
                ])
                .expect("in-memory write");
            }
        }
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv is utf-8")
}
