//! Checkpoint format, the routing HTTP gateway and a mock model backend.

mod checkpoint;
mod config;
mod mock;
mod server;

pub use checkpoint::{narrow, narrowing_flips, Checkpoint, CheckpointError, TrainingMeta, MAGIC, VERSION};
pub use config::{BackendConfig, GatewayConfig, RoutingMode, LISTEN_ENV};
pub use mock::MockBackend;
pub use server::{
    serve, spawn, CompletionRequest, CompletionResponse, ErrorBody, Gateway, HealthResponse, ModelCount,
    RouteRequest, RouteResponse, StatsResponse, COMPLETION_PATH,
};
