use std::collections::VecDeque;
use std::convert::Infallible;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::IntoResponse;
use axum::routing::{get, post};
use axum::{Json, Router};
use futures::stream::{self, Stream};
use serde::Deserialize;
use serde_json::json;
use tokio::net::TcpListener;
use tokio::sync::broadcast::{error::RecvError, Receiver};

use crate::engine::{AppState, RunRequest, StreamMessage};
use crate::error::ApiError;
use crate::report::run_report_csv;

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/runs", post(start_run).get(list_runs))
        .route("/runs/{id}", get(get_run))
        .route("/runs/{id}/abort", post(abort_run))
        .route("/runs/{id}/report.csv", get(run_report))
        .route("/state", get(engine_state))
        .route("/config", get(get_config).put(put_config))
        .route("/events", get(events))
        .with_state(state)
}

pub async fn serve(listener: TcpListener, state: Arc<AppState>) -> std::io::Result<()> {
    axum::serve(listener, router(state)).await
}

fn run_id(raw: &str) -> Result<u64, ApiError> {
    raw.parse()
        .map_err(|_| ApiError::BadRequest(format!("'{raw}' is not a run id")))
}

async fn start_run(
    State(s): State<Arc<AppState>>,
    body: Bytes,
) -> Result<impl IntoResponse, ApiError> {
    let req: RunRequest =
        serde_json::from_slice(&body).map_err(|e| ApiError::BadRequest(e.to_string()))?;
    let id = s.start_run(req).await?;
    Ok((StatusCode::ACCEPTED, Json(json!({ "run_id": id }))))
}

#[derive(Debug, Deserialize)]
struct ListQuery {
    profile: Option<String>,
}

async fn list_runs(
    State(s): State<Arc<AppState>>,
    Query(q): Query<ListQuery>,
) -> impl IntoResponse {
    Json(s.list_runs(q.profile.as_deref()))
}

async fn get_run(
    State(s): State<Arc<AppState>>,
    Path(id): Path<String>,
) -> Result<impl IntoResponse, ApiError> {
    Ok(Json(s.get_run(run_id(&id)?)?))
}

async fn abort_run(
    State(s): State<Arc<AppState>>,
    Path(id): Path<String>,
) -> Result<impl IntoResponse, ApiError> {
    let id = run_id(&id)?;
    s.abort(id)?;
    Ok((
        StatusCode::ACCEPTED,
        Json(json!({ "run_id": id, "abort_requested": true })),
    ))
}

async fn run_report(
    State(s): State<Arc<AppState>>,
    Path(id): Path<String>,
) -> Result<impl IntoResponse, ApiError> {
    let record = s.get_run(run_id(&id)?)?;
    Ok((
        [(header::CONTENT_TYPE, "text/csv; charset=utf-8")],
        run_report_csv(&record),
    ))
}

async fn engine_state(State(s): State<Arc<AppState>>) -> impl IntoResponse {
    Json(s.engine_state())
}

async fn get_config(State(s): State<Arc<AppState>>) -> impl IntoResponse {
    Json(s.config())
}

async fn put_config(
    State(s): State<Arc<AppState>>,
    body: Bytes,
) -> Result<impl IntoResponse, ApiError> {
    Ok(Json(s.put_config(&body)?))
}

#[derive(Debug, Deserialize)]
struct EventsQuery {
    run: Option<u64>,
}

struct Feed {
    state: Arc<AppState>,
    pending: VecDeque<StreamMessage>,
    rx: Option<Receiver<StreamMessage>>,
    run: Option<u64>,
}

impl Feed {
    fn wants(&self, m: &StreamMessage) -> bool {
        match (self.run, m) {
            (None, _) | (_, StreamMessage::Snapshot { .. }) => true,
            (Some(id), StreamMessage::Telemetry { event, .. }) => event.run_id == id,
            (Some(id), StreamMessage::RunFinished { run_id, .. }) => *run_id == id,
        }
    }

    /// Next message to send; `None` ends the stream.
    async fn next(&mut self) -> Option<StreamMessage> {
        loop {
            if let Some(m) = self.pending.pop_front() {
                if self.run.is_some() && matches!(m, StreamMessage::RunFinished { .. }) {
                    self.rx = None;
                }
                return Some(m);
            }
            let rx = self.rx.as_mut()?;
            match rx.recv().await {
                Ok(m) => {
                    if self.wants(&m) {
                        self.pending.push_back(m);
                    }
                }
                Err(RecvError::Lagged(_)) => {
                    // too slow to keep up: resynchronize from a fresh snapshot
                    let (state, rx) = self.state.subscribe();
                    self.rx = Some(rx);
                    self.pending.push_back(StreamMessage::Snapshot { state });
                }
                Err(RecvError::Closed) => return None,
            }
        }
    }
}

fn to_event(m: &StreamMessage) -> Event {
    Event::default()
        .event(m.kind())
        .data(serde_json::to_string(m).expect("stream messages serialize"))
}

async fn events(
    State(s): State<Arc<AppState>>,
    Query(q): Query<EventsQuery>,
) -> Result<Sse<impl Stream<Item = Result<Event, Infallible>>>, ApiError> {
    let (state, rx) = s.subscribe();
    let mut pending = VecDeque::from([StreamMessage::Snapshot {
        state: state.clone(),
    }]);
    let mut live = Some(rx);
    if let Some(id) = q.run {
        if state.active_run != Some(id) {
            let record = s.get_run(id)?;
            for e in &record.telemetry {
                pending.push_back(StreamMessage::Telemetry {
                    event: e.clone(),
                    snapshot: record.snapshots[e.machine_snapshot_ref].clone(),
                });
            }
            pending.push_back(StreamMessage::RunFinished {
                run_id: id,
                status: record.status.clone(),
            });
            live = None;
        }
    }
    let feed = Feed {
        state: s,
        pending,
        rx: live,
        run: q.run,
    };
    let stream = stream::unfold(feed, |mut feed| async move {
        let m = feed.next().await?;
        Some((Ok(to_event(&m)), feed))
    });
    Ok(Sse::new(stream).keep_alive(KeepAlive::default()))
}
