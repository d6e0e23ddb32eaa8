//! Shared service state: active configuration, run store, the single
//! instrument engine and the event broadcast.

use std::path::Path;
use std::sync::{Arc, Mutex, MutexGuard};
use std::thread;

use serde::{Deserialize, Serialize};
use sievebot_core::hal::HalConfig;
use sievebot_core::mechanism::MachineState;
use sievebot_core::model::{synthesize_sample, SampleProfile};
use sievebot_core::protocol::{
    validate_script, AbortHandle, Executor, MachineSnapshot, ProtocolError, RunInput, RunRecord,
    RunStatus, TelemetryEvent,
};
use sievebot_core::sim::{Method, ProcessParams};
use tokio::sync::{broadcast, oneshot};

use crate::config::{ServiceConfig, VersionedConfig};
use crate::error::ApiError;
use crate::store::{Replay, RunStore, StoreError};

const EVENT_BUFFER: usize = 4096;

/// A shipped soil name or an inline sample profile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ProfileRef {
    Named(String),
    Inline(SampleProfile),
}

impl Default for ProfileRef {
    fn default() -> Self {
        ProfileRef::Named("muscatine".into())
    }
}

impl ProfileRef {
    /// The label recorded with the run and the profile to sample from.
    pub fn resolve(&self) -> Result<(String, SampleProfile), String> {
        match self {
            ProfileRef::Named(name) => SampleProfile::builtin(name)
                .map(|p| (name.to_ascii_lowercase(), p))
                .ok_or_else(|| format!("unknown sample profile '{name}'")),
            ProfileRef::Inline(p) => {
                p.validate().map_err(|e| e.to_string())?;
                Ok((p.label.clone(), p.clone()))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRequest {
    pub input_type: RunInput,
    #[serde(default)]
    pub profile: ProfileRef,
    /// Real-time multiplier; 0 runs in virtual time as fast as possible.
    #[serde(default)]
    pub speed: f64,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EngineStatus {
    Idle,
    Running,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EngineState {
    pub engine: EngineStatus,
    pub active_run: Option<u64>,
    /// Sequence number of the last telemetry event of the active run.
    pub last_seq: Option<u64>,
    pub config_version: u64,
    pub snapshot: MachineSnapshot,
}

/// One message on the `/events` stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum StreamMessage {
    Snapshot {
        state: EngineState,
    },
    Telemetry {
        event: TelemetryEvent,
        snapshot: MachineSnapshot,
    },
    RunFinished {
        run_id: u64,
        status: RunStatus,
    },
}

impl StreamMessage {
    pub fn kind(&self) -> &'static str {
        match self {
            StreamMessage::Snapshot { .. } => "snapshot",
            StreamMessage::Telemetry { .. } => "telemetry",
            StreamMessage::RunFinished { .. } => "run_finished",
        }
    }
}

/// Summary row for `GET /runs`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub run_id: u64,
    pub script: sievebot_core::protocol::ScriptName,
    pub profile: String,
    pub seed: u64,
    pub status: RunStatus,
    pub start_ms: u64,
    pub end_ms: u64,
    pub output_counts: sievebot_core::protocol::OutputCounts,
}

impl From<&RunRecord> for RunSummary {
    fn from(r: &RunRecord) -> Self {
        RunSummary {
            run_id: r.run_id,
            script: r.script,
            profile: r.profile.clone(),
            seed: r.seed,
            status: r.status.clone(),
            start_ms: r.start_ms,
            end_ms: r.end_ms,
            output_counts: r.output_counts,
        }
    }
}

struct ActiveRun {
    run_id: u64,
    abort: AbortHandle,
    last_seq: Option<u64>,
}

struct Inner {
    config: VersionedConfig,
    store: RunStore,
    active: Option<ActiveRun>,
    snapshot: MachineSnapshot,
}

pub struct AppState {
    inner: Mutex<Inner>,
    events: broadcast::Sender<StreamMessage>,
}

fn idle_snapshot(hal: &HalConfig) -> MachineSnapshot {
    Executor::new(
        MachineState::cyst_layout(),
        hal.clone(),
        ProcessParams::default(),
        0,
    )
    .expect("validated configuration")
    .snapshot()
}

impl AppState {
    pub fn new(store: RunStore, config: ServiceConfig) -> Result<Arc<Self>, ApiError> {
        config.validate().map_err(ApiError::SchemaViolation)?;
        let snapshot = idle_snapshot(&config.hal);
        let (events, _) = broadcast::channel(EVENT_BUFFER);
        Ok(Arc::new(AppState {
            inner: Mutex::new(Inner {
                config: VersionedConfig { version: 1, config },
                store,
                active: None,
                snapshot,
            }),
            events,
        }))
    }

    /// Opens the run log at `path`, replaying it.
    pub fn open(path: &Path, config: ServiceConfig) -> Result<(Arc<Self>, Replay), ApiError> {
        let (store, replay) = RunStore::open(path).map_err(ApiError::from)?;
        Ok((Self::new(store, config)?, replay))
    }

    fn lock(&self) -> MutexGuard<'_, Inner> {
        self.inner.lock().unwrap_or_else(|p| p.into_inner())
    }

    fn state_of(inner: &Inner) -> EngineState {
        EngineState {
            engine: if inner.active.is_some() {
                EngineStatus::Running
            } else {
                EngineStatus::Idle
            },
            active_run: inner.active.as_ref().map(|a| a.run_id),
            last_seq: inner.active.as_ref().and_then(|a| a.last_seq),
            config_version: inner.config.version,
            snapshot: inner.snapshot.clone(),
        }
    }

    pub fn engine_state(&self) -> EngineState {
        Self::state_of(&self.lock())
    }

    pub fn config(&self) -> VersionedConfig {
        self.lock().config.clone()
    }

    /// Replaces the configuration; refused while a run is active.
    pub fn put_config(&self, body: &[u8]) -> Result<VersionedConfig, ApiError> {
        let mut inner = self.lock();
        if inner.active.is_some() {
            return Err(ApiError::ConfigLocked);
        }
        let config: ServiceConfig =
            serde_json::from_slice(body).map_err(|e| ApiError::SchemaViolation(e.to_string()))?;
        config.validate().map_err(ApiError::SchemaViolation)?;
        inner.snapshot = idle_snapshot(&config.hal);
        inner.config = VersionedConfig {
            version: inner.config.version + 1,
            config,
        };
        Ok(inner.config.clone())
    }

    pub fn get_run(&self, id: u64) -> Result<RunRecord, ApiError> {
        self.lock()
            .store
            .get(id)
            .cloned()
            .ok_or(ApiError::NotFound(id))
    }

    pub fn list_runs(&self, profile: Option<&str>) -> Vec<RunSummary> {
        self.lock()
            .store
            .runs()
            .filter(|r| profile.is_none_or(|p| r.profile.eq_ignore_ascii_case(p)))
            .map(RunSummary::from)
            .collect()
    }

    pub fn abort(&self, id: u64) -> Result<(), ApiError> {
        let inner = self.lock();
        match &inner.active {
            Some(a) if a.run_id == id => a.abort.abort().map_err(|_| ApiError::NotRunning(id)),
            _ if inner.store.get(id).is_some() => Err(ApiError::NotRunning(id)),
            _ => Err(ApiError::NotFound(id)),
        }
    }

    /// Subscribes to the event stream. The returned state and the
    /// receiver are taken under one lock, so the first event received
    /// follows `state.last_seq` without a gap.
    pub fn subscribe(&self) -> (EngineState, broadcast::Receiver<StreamMessage>) {
        let inner = self.lock();
        (Self::state_of(&inner), self.events.subscribe())
    }

    /// Starts a run and returns its id once the engine is executing it.
    pub async fn start_run(self: &Arc<Self>, req: RunRequest) -> Result<u64, ApiError> {
        let (label, profile) = req.profile.resolve().map_err(ApiError::InvalidProfile)?;
        if !(req.speed.is_finite() && req.speed >= 0.0) {
            return Err(ApiError::BadRequest(
                "speed must be a finite number >= 0".into(),
            ));
        }
        let (started_tx, started_rx) = oneshot::channel();
        {
            let mut inner = self.lock();
            if let Some(a) = &inner.active {
                return Err(ApiError::EngineBusy(a.run_id));
            }
            let config = inner.config.config.clone();
            let hal = HalConfig {
                speed: req.speed,
                ..config.hal.clone()
            };
            let script = req
                .input_type
                .script(&config.timing)
                .map_err(|e| ApiError::BadRequest(e.to_string()))?;
            let params = config
                .params
                .clone()
                .or_else(|| Method::Robotic.shipped_params(&label))
                .unwrap_or_default();
            let sample = synthesize_sample(&profile, req.seed)
                .map_err(|e| ApiError::InvalidProfile(e.to_string()))?;
            let mut exec = Executor::new(req.input_type.initial_machine(), hal, params, req.seed)
                .map_err(|e| ApiError::BadRequest(e.to_string()))?;
            match req.input_type {
                RunInput::SoilSample => exec.load_soil(&sample.batch, &label),
                RunInput::CystSample => exec.load_cysts(&sample.batch, &label),
            }
            validate_script(&script, exec.machine())
                .map_err(|v| ApiError::BadRequest(ProtocolError::Invalid(v).to_string()))?;

            let id = inner.store.allocate_id();
            let stub = RunRecord {
                run_id: id,
                script: script.name,
                profile: label,
                seed: req.seed,
                start_ms: 0,
                end_ms: 0,
                expected_total_ms: script.expected_total_ms,
                status: RunStatus::Running,
                steps_executed: 0,
                output_counts: Default::default(),
                egg_ledger: Default::default(),
                telemetry: Vec::new(),
                snapshots: Vec::new(),
                final_snapshot: None,
            };
            inner.store.start(stub.clone())?;
            inner.active = Some(ActiveRun {
                run_id: id,
                abort: exec.abort_handle(),
                last_seq: None,
            });
            inner.snapshot = exec.snapshot();

            let state = Arc::clone(self);
            thread::spawn(move || state.execute(exec, script, stub, started_tx));
        }
        started_rx
            .await
            .map_err(|_| ApiError::Internal("engine thread ended before starting".into()))
    }

    fn execute(
        &self,
        mut exec: Executor,
        script: sievebot_core::protocol::ProtocolScript,
        stub: RunRecord,
        started: oneshot::Sender<u64>,
    ) {
        let id = stub.run_id;
        let mut started = Some(started);
        let result = exec.run(id, &script, &mut |event, snapshot| {
            if let Some(tx) = started.take() {
                let _ = tx.send(id);
            }
            let mut inner = self.lock();
            inner.snapshot = snapshot.clone();
            if let Some(a) = inner.active.as_mut() {
                a.last_seq = Some(event.seq);
            }
            let _ = self.events.send(StreamMessage::Telemetry {
                event: event.clone(),
                snapshot: snapshot.clone(),
            });
        });
        let record = result.unwrap_or_else(|e| RunRecord {
            status: RunStatus::Faulted(e.to_string()),
            ..stub
        });
        let mut inner = self.lock();
        let status = record.status.clone();
        if let Some(s) = &record.final_snapshot {
            inner.snapshot = s.clone();
        }
        if let Err(e) = inner.store.finish(record) {
            eprintln!("run {id}: could not store the terminal record: {e}");
        }
        inner.active = None;
        let _ = self
            .events
            .send(StreamMessage::RunFinished { run_id: id, status });
        drop(inner);
        if let Some(tx) = started {
            let _ = tx.send(id);
        }
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        ApiError::Internal(e.to_string())
    }
}
