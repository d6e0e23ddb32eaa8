//! CSV export of recovery reports.
//!
//! Numbers are written with three decimals so the output is byte-stable.

use std::io::Write;

use super::{Method, RecoveryReport};

pub const DETAIL_HEADER: [&str; 7] = [
    "profile",
    "soil",
    "sample",
    "iteration",
    "eggs",
    "pct",
    "cum_pct",
];
pub const SUMMARY_HEADER: [&str; 9] = [
    "panel",
    "profile",
    "soil",
    "iteration",
    "n",
    "mean_pct",
    "sd_pct",
    "cum_mean_pct",
    "true_mean_pct",
];

/// Plot panel for the built-in soils: robotic on A/C, manual on B/D,
/// Muscatine on top, Nevada below.
pub fn panel(soil: &str, method: Method) -> &'static str {
    match (soil.to_ascii_lowercase().as_str(), method) {
        ("muscatine", Method::Robotic) => "A",
        ("muscatine", Method::Manual) => "B",
        ("nevada", Method::Robotic) => "C",
        ("nevada", Method::Manual) => "D",
        _ => "-",
    }
}

fn f3(x: f64) -> String {
    format!("{x:.3}")
}

/// One row per sample and iteration. Samples are numbered across
/// replicates: `replicate * samples_n + sample`.
pub fn write_detail<W: Write>(report: &RecoveryReport, out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(DETAIL_HEADER)?;
    let method = report.method.as_str();
    for rep in &report.replicates {
        for (s, sample) in rep.samples.iter().enumerate() {
            let idx = u64::from(rep.replicate) * u64::from(report.samples_n) + s as u64;
            let pct = sample.pct();
            let cum = sample.cum_pct();
            for (i, eggs) in sample.eggs.iter().enumerate() {
                w.write_record([
                    method.to_string(),
                    report.soil.clone(),
                    idx.to_string(),
                    (i + 1).to_string(),
                    eggs.to_string(),
                    f3(pct[i]),
                    f3(cum[i]),
                ])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_summary<W: Write>(report: &RecoveryReport, out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SUMMARY_HEADER)?;
    let panel = panel(&report.soil, report.method);
    for s in &report.summary {
        w.write_record([
            panel.to_string(),
            report.method.as_str().to_string(),
            report.soil.clone(),
            s.iteration.to_string(),
            s.n.to_string(),
            f3(s.mean_pct),
            f3(s.sd_pct),
            f3(s.cum_mean_pct),
            f3(s.true_mean_pct),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn detail_string(report: &RecoveryReport) -> String {
    let mut buf = Vec::new();
    write_detail(report, &mut buf).expect("writing to memory");
    String::from_utf8(buf).expect("csv output is utf-8")
}

pub fn summary_string(report: &RecoveryReport) -> String {
    let mut buf = Vec::new();
    write_summary(report, &mut buf).expect("writing to memory");
    String::from_utf8(buf).expect("csv output is utf-8")
}
