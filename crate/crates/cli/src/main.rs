//! `sievebot`: headless entry points for the instrument twin.
//!
//! Exit codes: 0 success, 2 bad flags or configuration, 3 the run faulted
//! (or was aborted). Machine-readable output goes to stdout, progress and
//! summaries to stderr.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use sievebot_core::hal::HalConfig;
use sievebot_core::model::{synthesize_sample, SampleProfile};
use sievebot_core::protocol::{
    build_cyst_protocol, build_egg_protocol, build_full_protocol, Executor, Phase, RunInput,
    RunRecord, RunStatus,
};
use sievebot_core::sim::{
    calibrate, report, run_extinction, ExtinctionPlan, Method, ProcessParams, Targets,
};
use sievebot_service::report::run_report_csv;
use sievebot_service::{AppState, RunStore, ServiceConfig};

#[derive(Debug, Parser)]
#[command(name = "sievebot", version, about = "Soil-sieving instrument twin")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ProtocolArg {
    Cyst,
    Egg,
    Full,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum MethodArg {
    Robotic,
    Manual,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Robotic => Method::Robotic,
            MethodArg::Manual => Method::Manual,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run one protocol on a synthesized sample and print its run record.
    Run {
        #[arg(long, value_enum, default_value = "cyst")]
        protocol: ProtocolArg,
        /// Shipped soil name (muscatine, nevada) or a profile JSON file.
        #[arg(long, default_value = "muscatine")]
        profile: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Real-time multiplier; 0 runs as fast as possible.
        #[arg(long, default_value_t = 0.0)]
        speed: f64,
        /// Process parameters JSON; defaults to the shipped robotic set.
        #[arg(long)]
        params: Option<PathBuf>,
        /// Instrument configuration JSON (hal, timing, pore map).
        #[arg(long)]
        config: Option<PathBuf>,
        /// Write the device trace here.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Repeated extraction of the same samples until no eggs are left.
    Extinction {
        /// Shipped soil name or a profile JSON file.
        #[arg(long, default_value = "muscatine")]
        soil: String,
        #[arg(long, value_enum, default_value = "robotic")]
        method: MethodArg,
        #[arg(long, default_value_t = 6)]
        samples: u32,
        #[arg(long, default_value_t = 4)]
        iterations: u16,
        #[arg(long, default_value_t = 1)]
        replicates: u32,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Required for soils without shipped parameters.
        #[arg(long)]
        params: Option<PathBuf>,
        /// Write `<soil>_<method>_recovery.csv` and `_summary.csv` here;
        /// without it the summary CSV goes to stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fit process parameters to recovery targets; prints the parameters.
    Calibrate {
        #[arg(long)]
        targets: PathBuf,
        #[arg(long, default_value = "muscatine")]
        soil: String,
        #[arg(long, value_enum, default_value = "robotic")]
        method: MethodArg,
        #[arg(long, default_value_t = 200)]
        replicates: u32,
        #[arg(long, default_value_t = 2024)]
        seed: u64,
    },
    /// Serve the HTTP API.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: String,
        /// Run log; records survive restarts when set.
        #[arg(long)]
        store: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Print a stored run as JSON or as the per-step CSV report.
    Export {
        /// A run record JSON file, or a run log together with --run.
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        run: Option<u64>,
        #[arg(long, value_enum, default_value = "json")]
        format: Format,
    },
}

#[derive(Debug)]
enum Failure {
    Config(String),
    Run(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Config(_) => 2,
            Failure::Run(_) => 3,
        }
    }
}

fn config_err(e: impl ToString) -> Failure {
    Failure::Config(e.to_string())
}

fn read(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))
}

/// A shipped soil by name, otherwise a profile file.
fn load_profile(arg: &str) -> Result<(String, SampleProfile), Failure> {
    if let Some(p) = SampleProfile::builtin(arg) {
        return Ok((arg.to_ascii_lowercase(), p));
    }
    let p = SampleProfile::from_json(&read(Path::new(arg))?).map_err(config_err)?;
    Ok((p.label.clone(), p))
}

fn load_config(path: Option<&Path>) -> Result<ServiceConfig, Failure> {
    let Some(path) = path else {
        return Ok(ServiceConfig::default());
    };
    let c: ServiceConfig = serde_json::from_str(&read(path)?)
        .map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
    c.validate().map_err(Failure::Config)?;
    Ok(c)
}

fn load_params(path: &Path) -> Result<ProcessParams, Failure> {
    ProcessParams::from_json(&read(path)?).map_err(config_err)
}

fn write_file(path: &Path, text: &str) -> Result<(), Failure> {
    fs::write(path, text).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))
}

fn stdout(text: &str) {
    let mut out = std::io::stdout().lock();
    // a closed pipe is not worth a panic
    let _ = out.write_all(text.as_bytes());
    let _ = out.flush();
}

#[allow(clippy::too_many_arguments)]
fn cmd_run(
    protocol: ProtocolArg,
    profile: &str,
    seed: u64,
    speed: f64,
    params: Option<&Path>,
    config: Option<&Path>,
    trace: Option<&Path>,
) -> Result<(), Failure> {
    let config = load_config(config)?;
    let (label, profile) = load_profile(profile)?;
    let params = match params {
        Some(p) => load_params(p)?,
        None => config
            .params
            .clone()
            .or_else(|| Method::Robotic.shipped_params(&label))
            .unwrap_or_default(),
    };
    let hal = HalConfig {
        speed,
        ..config.hal.clone()
    };
    let (script, input) = match protocol {
        ProtocolArg::Cyst => (
            build_cyst_protocol(&config.timing.cyst),
            RunInput::SoilSample,
        ),
        ProtocolArg::Egg => (build_egg_protocol(&config.timing.egg), RunInput::CystSample),
        ProtocolArg::Full => (build_full_protocol(&config.timing), RunInput::SoilSample),
    };
    let script = script.map_err(config_err)?;
    let sample = synthesize_sample(&profile, seed).map_err(config_err)?;
    let mut exec = Executor::new(input.initial_machine(), hal, params, seed).map_err(config_err)?;
    match input {
        RunInput::SoilSample => exec.load_soil(&sample.batch, &label),
        RunInput::CystSample => exec.load_cysts(&sample.batch, &label),
    }
    let record = exec
        .run(1, &script, &mut |e, _| {
            let phase = match e.phase {
                Phase::Enter => "enter",
                Phase::Exit => "exit",
            };
            eprintln!("{:>7} ms  {phase:<5} {:>3} {}", e.t_ms, e.step, e.label);
        })
        .map_err(config_err)?;
    if let Some(path) = trace {
        write_file(path, &exec.bus().trace_text())?;
    }
    stdout(&record_json(&record));
    match &record.status {
        RunStatus::Completed => {
            eprintln!(
                "completed in {} ms: cysts {:?}, eggs {:?}",
                record.duration_ms(),
                record.output_counts.cysts,
                record.output_counts.eggs
            );
            Ok(())
        }
        other => Err(Failure::Run(format!("run ended {other:?}"))),
    }
}

fn record_json(r: &RunRecord) -> String {
    let mut s = serde_json::to_string_pretty(r).expect("run records serialize");
    s.push('\n');
    s
}

#[allow(clippy::too_many_arguments)]
fn cmd_extinction(
    soil: &str,
    method: Method,
    samples: u32,
    iterations: u16,
    replicates: u32,
    seed: u64,
    params: Option<&Path>,
    out: Option<&Path>,
) -> Result<(), Failure> {
    let (label, profile) = load_profile(soil)?;
    let params = match params {
        Some(p) => load_params(p)?,
        None => method.shipped_params(&label).ok_or_else(|| {
            Failure::Config(format!(
                "no shipped parameters for soil '{label}'; pass --params"
            ))
        })?,
    };
    let mut plan = ExtinctionPlan::new(profile, method, params, seed);
    plan.samples_n = samples;
    plan.iterations = iterations;
    plan.replicates = replicates;
    plan.validate().map_err(config_err)?;
    let rep = run_extinction(&plan).map_err(|e| Failure::Run(e.to_string()))?;

    let summary = report::summary_string(&rep);
    match out {
        Some(dir) => {
            fs::create_dir_all(dir)
                .map_err(|e| Failure::Config(format!("{}: {e}", dir.display())))?;
            let stem = format!("{}_{}", label, method.as_str());
            write_file(
                &dir.join(format!("{stem}_recovery.csv")),
                &report::detail_string(&rep),
            )?;
            write_file(&dir.join(format!("{stem}_summary.csv")), &summary)?;
        }
        None => stdout(&summary),
    }
    if let Some(s) = rep.summary.first() {
        eprintln!(
            "{label}/{method}: iteration 1 recovery {:.1} ± {:.1} % ({} samples)",
            s.mean_pct, s.sd_pct, s.n
        );
    }
    if let Some(c2) = rep.cum_mean(2) {
        eprintln!(
            "cumulative through iteration 2: {c2:.1} %, {:.1} % of replicates at >= 94 %",
            100.0 * rep.cum_pass_fraction(2, 94.0)
        );
    }
    Ok(())
}

fn cmd_calibrate(
    targets: &Path,
    soil: &str,
    method: Method,
    replicates: u32,
    seed: u64,
) -> Result<(), Failure> {
    let targets = Targets::from_json(&read(targets)?).map_err(config_err)?;
    let (label, profile) = load_profile(soil)?;
    let fit = calibrate(&targets, &profile, method, replicates, seed).map_err(config_err)?;
    eprintln!(
        "{label}/{method}: iteration 1 {:.2} %, through iteration 2 {:.2} % ({:.3} of replicates pass), \
         conditional capture {:.3} (bound {:.3})",
        fit.iter1_mean_pct,
        fit.cum2_mean_pct,
        fit.cum2_pass_fraction,
        fit.conditional_capture_2,
        fit.conditional_capture_bound
    );
    let mut text = serde_json::to_string_pretty(&fit.params).expect("params serialize");
    text.push('\n');
    stdout(&text);
    Ok(())
}

fn cmd_serve(addr: &str, store: Option<&Path>, config: Option<&Path>) -> Result<(), Failure> {
    let config = load_config(config)?;
    let state = match store {
        Some(path) => {
            let (state, replay) = AppState::open(path, config).map_err(config_err)?;
            eprintln!(
                "replayed {} records from {}{}",
                replay.records,
                path.display(),
                if replay.orphans.is_empty() {
                    String::new()
                } else {
                    format!(", closed interrupted runs {:?}", replay.orphans)
                }
            );
            state
        }
        None => AppState::new(RunStore::in_memory(), config).map_err(config_err)?,
    };
    let rt = tokio::runtime::Runtime::new().map_err(|e| Failure::Run(e.to_string()))?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(addr)
            .await
            .map_err(|e| Failure::Config(format!("bind {addr}: {e}")))?;
        let local = listener
            .local_addr()
            .map_err(|e| Failure::Run(e.to_string()))?;
        stdout(&format!("listening on http://{local}\n"));
        sievebot_service::serve(listener, state)
            .await
            .map_err(|e| Failure::Run(e.to_string()))
    })
}

fn cmd_export(input: &Path, run: Option<u64>, format: Format) -> Result<(), Failure> {
    let record: RunRecord = match run {
        Some(id) => {
            let (store, _) = RunStore::read(input).map_err(config_err)?;
            store
                .get(id)
                .cloned()
                .ok_or_else(|| Failure::Config(format!("run {id} is not in {}", input.display())))?
        }
        None => serde_json::from_str(&read(input)?)
            .map_err(|e| Failure::Config(format!("{}: {e}", input.display())))?,
    };
    if !record.status.is_terminal() {
        return Err(Failure::Config(format!(
            "run {} has not finished",
            record.run_id
        )));
    }
    match format {
        Format::Json => stdout(&record_json(&record)),
        Format::Csv => stdout(&run_report_csv(&record)),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run {
            protocol,
            profile,
            seed,
            speed,
            params,
            config,
            trace,
        } => cmd_run(
            *protocol,
            profile,
            *seed,
            *speed,
            params.as_deref(),
            config.as_deref(),
            trace.as_deref(),
        ),
        Command::Extinction {
            soil,
            method,
            samples,
            iterations,
            replicates,
            seed,
            params,
            out,
        } => cmd_extinction(
            soil,
            (*method).into(),
            *samples,
            *iterations,
            *replicates,
            *seed,
            params.as_deref(),
            out.as_deref(),
        ),
        Command::Calibrate {
            targets,
            soil,
            method,
            replicates,
            seed,
        } => cmd_calibrate(targets, soil, (*method).into(), *replicates, *seed),
        Command::Serve {
            addr,
            store,
            config,
        } => cmd_serve(addr, store.as_deref(), config.as_deref()),
        Command::Export { input, run, format } => cmd_export(input, *run, *format),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let (Failure::Config(m) | Failure::Run(m)) = &f;
            eprintln!("sievebot: {m}");
            ExitCode::from(f.code())
        }
    }
}
