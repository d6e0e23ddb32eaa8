//! Control service for the instrument twin: run lifecycle over HTTP+JSON,
//! a server-sent event stream, versioned configuration and a durable run log.
//! The wire contract is documented in `API.md` at the repository root.

mod api;
pub mod config;
mod engine;
mod error;
pub mod report;
pub mod store;

pub use api::{router, serve};
pub use config::{ServiceConfig, VersionedConfig};
pub use engine::{
    AppState, EngineState, EngineStatus, ProfileRef, RunRequest, RunSummary, StreamMessage,
};
pub use error::{ApiError, ErrorBody};
pub use store::{Replay, RunStore, StoreError};
