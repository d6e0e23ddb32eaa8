use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{run_iteration, IterationProtocol, ProcessParams, SimError, Workbench};
use crate::mechanism::standard_kit;
use crate::model::{synthesize_with_key, SampleProfile, SoilSample, VesselId};
use crate::rng::StreamKey;

/// Extraction method being simulated. Both share the particle kernel; they
/// differ only in their calibrated parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Robotic,
    Manual,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Robotic => "robotic",
            Method::Manual => "manual",
        }
    }

    /// Calibrated parameters shipped for a built-in soil.
    pub fn shipped_params(self, soil: &str) -> Option<ProcessParams> {
        let text = match (soil.to_ascii_lowercase().as_str(), self) {
            ("muscatine", Method::Robotic) => {
                include_str!("../../data/params/muscatine_robotic.json")
            }
            ("muscatine", Method::Manual) => {
                include_str!("../../data/params/muscatine_manual.json")
            }
            ("nevada", Method::Robotic) => include_str!("../../data/params/nevada_robotic.json"),
            ("nevada", Method::Manual) => include_str!("../../data/params/nevada_manual.json"),
            _ => return None,
        };
        Some(ProcessParams::from_json(text).expect("shipped parameter file is valid"))
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "robotic" => Ok(Method::Robotic),
            "manual" | "manual_bucket" | "manual-bucket" => Ok(Method::Manual),
            other => Err(format!(
                "unknown method '{other}' (expected robotic or manual)"
            )),
        }
    }
}

/// Repeated extraction of `samples_n` samples until `iterations` passes,
/// for `replicates` independent seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtinctionPlan {
    pub soil: SampleProfile,
    pub method: Method,
    pub params: ProcessParams,
    pub protocol: IterationProtocol,
    pub iterations: u16,
    pub samples_n: u32,
    pub replicates: u32,
    pub seed: u64,
}

impl ExtinctionPlan {
    /// Four passes over six samples, one replicate.
    pub fn new(soil: SampleProfile, method: Method, params: ProcessParams, seed: u64) -> Self {
        ExtinctionPlan {
            soil,
            method,
            params,
            protocol: IterationProtocol::default(),
            iterations: 4,
            samples_n: 6,
            replicates: 1,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if self.iterations == 0 || self.iterations > 0xFFF {
            return Err(SimError::Plan("iterations must be in 1..=4095".into()));
        }
        if self.samples_n == 0 || self.samples_n > 0xFFFF {
            return Err(SimError::Plan("samples must be in 1..=65535".into()));
        }
        if self.replicates == 0 || self.replicates > 0xFF_FFFF {
            return Err(SimError::Plan("replicates must be in 1..=16777215".into()));
        }
        if !(self.protocol.wash_s >= 0.0 && self.protocol.spray_s >= 0.0) {
            return Err(SimError::Plan(
                "wash and spray durations must be >= 0".into(),
            ));
        }
        self.params.validate()?;
        self.soil.validate()?;
        Ok(())
    }

    /// Initial samples of every replicate; they depend only on the soil
    /// profile and seed, so they can be reused across parameter sets.
    pub fn synthesize(&self) -> Result<Vec<Vec<SoilSample>>, SimError> {
        self.validate()?;
        (0..self.replicates)
            .into_par_iter()
            .map(|r| {
                (0..self.samples_n)
                    .map(|s| {
                        synthesize_with_key(&self.soil, self.seed, StreamKey::sample(r, s))
                            .map_err(SimError::from)
                    })
                    .collect()
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleResult {
    /// Eggs recovered in each iteration.
    pub eggs: Vec<u64>,
    /// Eggs in the sample before extraction (free and inside cysts).
    pub true_eggs: u64,
}

impl SampleResult {
    pub fn recovered(&self) -> u64 {
        self.eggs.iter().sum()
    }

    /// Percentage of the total recovered over all iterations. All zeros
    /// when nothing was recovered.
    pub fn pct(&self) -> Vec<f64> {
        let total = self.recovered();
        self.eggs
            .iter()
            .map(|&e| {
                if total == 0 {
                    0.0
                } else {
                    100.0 * e as f64 / total as f64
                }
            })
            .collect()
    }

    /// Cumulative percentage, computed from integer partial sums so the
    /// last entry is exactly 100.
    pub fn cum_pct(&self) -> Vec<f64> {
        let total = self.recovered();
        let mut acc = 0u64;
        self.eggs
            .iter()
            .map(|&e| {
                acc += e;
                if total == 0 {
                    0.0
                } else {
                    100.0 * acc as f64 / total as f64
                }
            })
            .collect()
    }

    /// Recovery relative to the true inventory.
    pub fn true_pct(&self) -> Vec<f64> {
        self.eggs
            .iter()
            .map(|&e| {
                if self.true_eggs == 0 {
                    0.0
                } else {
                    100.0 * e as f64 / self.true_eggs as f64
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateResult {
    pub replicate: u32,
    pub samples: Vec<SampleResult>,
}

impl ReplicateResult {
    /// Mean over samples (with a non-zero recovery) of the cumulative
    /// percentage through `iteration` (1-based).
    pub fn mean_cum_pct(&self, iteration: usize) -> Option<f64> {
        let vals: Vec<f64> = self
            .samples
            .iter()
            .filter(|s| s.recovered() > 0)
            .filter_map(|s| s.cum_pct().get(iteration - 1).copied())
            .collect();
        mean_sd(&vals).map(|(m, _)| m)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationStats {
    pub iteration: u16,
    /// Samples with a non-zero total recovery.
    pub n: usize,
    pub mean_pct: f64,
    pub sd_pct: f64,
    pub cum_mean_pct: f64,
    pub true_mean_pct: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryReport {
    pub soil: String,
    pub method: Method,
    pub seed: u64,
    pub iterations: u16,
    pub samples_n: u32,
    pub params: ProcessParams,
    pub replicates: Vec<ReplicateResult>,
    pub summary: Vec<IterationStats>,
}

impl RecoveryReport {
    pub fn iter1_mean(&self) -> f64 {
        self.summary.first().map_or(0.0, |s| s.mean_pct)
    }

    pub fn cum_mean(&self, iteration: usize) -> Option<f64> {
        self.summary.get(iteration - 1).map(|s| s.cum_mean_pct)
    }

    /// Fraction of replicates whose mean cumulative recovery through
    /// `iteration` is at least `threshold_pct`.
    pub fn cum_pass_fraction(&self, iteration: usize, threshold_pct: f64) -> f64 {
        if self.replicates.is_empty() || iteration > usize::from(self.iterations) {
            return 0.0;
        }
        let pass = self
            .replicates
            .iter()
            .filter(|r| {
                r.mean_cum_pct(iteration)
                    .is_some_and(|c| c >= threshold_pct)
            })
            .count();
        pass as f64 / self.replicates.len() as f64
    }

    /// Share of what iteration 1 missed that iteration 2 picked up, from the
    /// grand means.
    pub fn conditional_capture_2(&self) -> Option<f64> {
        let r1 = self.summary.first()?.cum_mean_pct;
        let c2 = self.summary.get(1)?.cum_mean_pct;
        if r1 >= 100.0 {
            return None;
        }
        Some((c2 - r1) / (100.0 - r1))
    }
}

fn mean_sd(vals: &[f64]) -> Option<(f64, f64)> {
    if vals.is_empty() {
        return None;
    }
    let n = vals.len() as f64;
    let mean = vals.iter().sum::<f64>() / n;
    let sd = if vals.len() < 2 {
        0.0
    } else {
        (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    };
    Some((mean, sd))
}

fn run_sample(
    plan: &ExtinctionPlan,
    sample: &SoilSample,
    key: StreamKey,
) -> Result<SampleResult, SimError> {
    let mut bench = Workbench::new(&standard_kit());
    bench.load(VesselId::Bucket, &sample.batch);
    let mut eggs = Vec::with_capacity(usize::from(plan.iterations));
    for it in 0..plan.iterations {
        let out = run_iteration(&mut bench, &plan.protocol, &plan.params, plan.seed, key, it)?;
        eggs.push(out.eggs);
    }
    bench.check_conservation()?;
    Ok(SampleResult {
        eggs,
        true_eggs: sample.batch.egg_total(),
    })
}

/// Runs the plan on freshly synthesized samples.
pub fn run_extinction(plan: &ExtinctionPlan) -> Result<RecoveryReport, SimError> {
    let samples = plan.synthesize()?;
    run_on_samples(plan, &samples)
}

/// Runs the plan on pre-synthesized samples (`samples[replicate][sample]`).
pub fn run_on_samples(
    plan: &ExtinctionPlan,
    samples: &[Vec<SoilSample>],
) -> Result<RecoveryReport, SimError> {
    plan.validate()?;
    if samples.len() != plan.replicates as usize
        || samples.iter().any(|r| r.len() != plan.samples_n as usize)
    {
        return Err(SimError::Plan("sample set does not match the plan".into()));
    }
    let replicates = samples
        .par_iter()
        .enumerate()
        .map(|(r, rep)| {
            let samples = rep
                .iter()
                .enumerate()
                .map(|(s, sample)| run_sample(plan, sample, StreamKey::sample(r as u32, s as u32)))
                .collect::<Result<Vec<_>, _>>()?;
            Ok(ReplicateResult {
                replicate: r as u32,
                samples,
            })
        })
        .collect::<Result<Vec<_>, SimError>>()?;
    let summary = summarize(&replicates, plan.iterations);
    Ok(RecoveryReport {
        soil: plan.soil.label.clone(),
        method: plan.method,
        seed: plan.seed,
        iterations: plan.iterations,
        samples_n: plan.samples_n,
        params: plan.params.clone(),
        replicates,
        summary,
    })
}

fn summarize(replicates: &[ReplicateResult], iterations: u16) -> Vec<IterationStats> {
    let recovered: Vec<&SampleResult> = replicates
        .iter()
        .flat_map(|r| &r.samples)
        .filter(|s| s.recovered() > 0)
        .collect();
    let pcts: Vec<Vec<f64>> = recovered.iter().map(|s| s.pct()).collect();
    let cums: Vec<Vec<f64>> = recovered.iter().map(|s| s.cum_pct()).collect();
    let trues: Vec<Vec<f64>> = recovered.iter().map(|s| s.true_pct()).collect();
    (0..usize::from(iterations))
        .map(|i| {
            let col = |m: &[Vec<f64>]| m.iter().map(|v| v[i]).collect::<Vec<_>>();
            let (mean_pct, sd_pct) = mean_sd(&col(&pcts)).unwrap_or((0.0, 0.0));
            let (cum_mean_pct, _) = mean_sd(&col(&cums)).unwrap_or((0.0, 0.0));
            let (true_mean_pct, _) = mean_sd(&col(&trues)).unwrap_or((0.0, 0.0));
            IterationStats {
                iteration: i as u16 + 1,
                n: recovered.len(),
                mean_pct,
                sd_pct,
                cum_mean_pct,
                true_mean_pct,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_iteration_is_always_100_percent() {
        let mut plan = ExtinctionPlan::new(
            SampleProfile::muscatine(),
            Method::Robotic,
            ProcessParams::default(),
            4,
        );
        plan.iterations = 1;
        plan.samples_n = 3;
        let rep = run_extinction(&plan).unwrap();
        for s in &rep.replicates[0].samples {
            assert_eq!(s.pct(), vec![100.0]);
            assert_eq!(s.cum_pct(), vec![100.0]);
        }
        assert_eq!(rep.summary[0].mean_pct, 100.0);
    }

    #[test]
    fn normalization_sums_to_100() {
        let s = SampleResult {
            eggs: vec![700, 250, 37, 0],
            true_eggs: 2000,
        };
        let total: f64 = s.pct().iter().sum();
        assert!((total - 100.0).abs() < 1e-9);
        assert_eq!(*s.cum_pct().last().unwrap(), 100.0);
        assert_eq!(s.true_pct()[0], 35.0);
    }

    #[test]
    fn zero_recovery_is_excluded_from_stats() {
        let reps = vec![ReplicateResult {
            replicate: 0,
            samples: vec![
                SampleResult {
                    eggs: vec![0, 0],
                    true_eggs: 10,
                },
                SampleResult {
                    eggs: vec![3, 1],
                    true_eggs: 10,
                },
            ],
        }];
        let st = summarize(&reps, 2);
        assert_eq!(st[0].n, 1);
        assert_eq!(st[0].mean_pct, 75.0);
        assert_eq!(st[1].cum_mean_pct, 100.0);
    }

    #[test]
    fn plan_validation() {
        let mut plan = ExtinctionPlan::new(
            SampleProfile::nevada(),
            Method::Manual,
            ProcessParams::default(),
            1,
        );
        plan.samples_n = 0;
        assert!(run_extinction(&plan).is_err());
    }

    #[test]
    fn method_parsing() {
        assert_eq!("Robotic".parse::<Method>().unwrap(), Method::Robotic);
        assert_eq!("manual".parse::<Method>().unwrap(), Method::Manual);
        assert!("hand".parse::<Method>().is_err());
        for soil in ["muscatine", "nevada"] {
            for m in [Method::Robotic, Method::Manual] {
                assert!(m.shipped_params(soil).is_some());
            }
        }
        assert!(Method::Robotic.shipped_params("ames").is_none());
    }
}
