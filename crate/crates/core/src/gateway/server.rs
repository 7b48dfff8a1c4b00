use std::net::SocketAddr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use axum::body::Bytes;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::Json;
use serde::{Deserialize, Serialize};
use tokio::net::TcpListener;
use tokio::task::JoinHandle;

use super::checkpoint::{Checkpoint, TrainingMeta};
use super::config::{BackendConfig, GatewayConfig, RoutingMode};
use crate::error::{Error, Result};
use crate::router::{RoutingDecision, RoutingPolicy};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RouteRequest {
    pub query: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RouteResponse {
    pub model: String,
    /// 1-based index of the selected model.
    pub index: usize,
    pub scores: Vec<f64>,
    pub latency_ms: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub backend_latency_ms: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub field: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelCount {
    pub index: usize,
    pub name: String,
    pub count: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StatsResponse {
    pub routed: u64,
    pub models: Vec<ModelCount>,
    pub backend_errors: u64,
    pub timeouts: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HealthResponse {
    pub status: String,
    pub method: String,
    pub models: usize,
    pub mode: RoutingMode,
    pub meta: TrainingMeta,
}

#[derive(Debug, Default)]
struct Stats {
    per_model: Vec<AtomicU64>,
    backend_errors: AtomicU64,
    timeouts: AtomicU64,
}

struct Shared {
    policy: Box<dyn RoutingPolicy>,
    method: String,
    meta: TrainingMeta,
    mode: RoutingMode,
    backends: Vec<BackendConfig>,
    stats: Stats,
    client: reqwest::Client,
}

/// Completion call made to a backend.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub prompt: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompletionResponse {
    pub text: String,
}

/// Path appended to a backend base URL for completions.
pub const COMPLETION_PATH: &str = "/complete";

/// The routing service: an immutable policy plus per-model counters.
#[derive(Clone)]
pub struct Gateway {
    shared: Arc<Shared>,
}

impl Gateway {
    /// Loads the checkpoint named by `config` and checks it against the
    /// backend table.
    pub fn from_config(config: &GatewayConfig) -> Result<Self> {
        let ckpt = Checkpoint::load(&config.checkpoint)?;
        Self::new(config, ckpt)
    }

    pub fn new(config: &GatewayConfig, checkpoint: Checkpoint) -> Result<Self> {
        let method = checkpoint.router.spec().label();
        Self::with_policy(config, Box::new(checkpoint.router), method, checkpoint.meta)
    }

    /// Serves any routing policy, e.g. a fitted baseline.
    pub fn with_policy(
        config: &GatewayConfig,
        policy: Box<dyn RoutingPolicy>,
        method: String,
        meta: TrainingMeta,
    ) -> Result<Self> {
        config.validate(policy.models())?;
        let client = reqwest::Client::builder()
            .build()
            .map_err(|e| Error::Input(format!("http client: {e}")))?;
        let models = policy.models();
        Ok(Self {
            shared: Arc::new(Shared {
                policy,
                method,
                meta,
                mode: config.mode,
                backends: config.ordered_backends(),
                stats: Stats {
                    per_model: (0..models).map(|_| AtomicU64::new(0)).collect(),
                    ..Stats::default()
                },
                client,
            }),
        })
    }

    pub fn app(&self) -> axum::Router {
        axum::Router::new()
            .route("/route", post(route_handler))
            .route("/generate", post(generate_handler))
            .route("/healthz", get(health_handler))
            .route("/stats", get(stats_handler))
            .with_state(self.clone())
    }

    pub fn stats(&self) -> StatsResponse {
        let s = &self.shared.stats;
        let models: Vec<ModelCount> = self
            .shared
            .backends
            .iter()
            .zip(&s.per_model)
            .map(|(b, c)| ModelCount {
                index: b.index,
                name: b.name.clone(),
                count: c.load(Ordering::SeqCst),
            })
            .collect();
        StatsResponse {
            routed: models.iter().map(|m| m.count).sum(),
            models,
            backend_errors: s.backend_errors.load(Ordering::SeqCst),
            timeouts: s.timeouts.load(Ordering::SeqCst),
        }
    }

    async fn decide(&self, body: &Bytes) -> std::result::Result<(RoutingDecision, &BackendConfig, String), Response> {
        let req = parse_body(body)?;
        let this = self.clone();
        let query = req.query.clone();
        let decision = tokio::task::spawn_blocking(move || {
            let start = Instant::now();
            let ex = crate::corpus::RoutingExample::query_only(query);
            let mut d = this.shared.policy.decide(&ex)?;
            d.latency_ms = start.elapsed().as_secs_f64() * 1e3;
            Ok::<_, Error>(d)
        })
        .await
        .map_err(|e| error_response(StatusCode::INTERNAL_SERVER_ERROR, format!("routing task failed: {e}"), None))?
        .map_err(|e| match e {
            Error::Input(m) => error_response(StatusCode::BAD_REQUEST, m, Some("query".into())),
            other => error_response(StatusCode::INTERNAL_SERVER_ERROR, other.to_string(), None),
        })?;
        let backend = &self.shared.backends[decision.selected - 1];
        self.shared.stats.per_model[decision.selected - 1].fetch_add(1, Ordering::SeqCst);
        Ok((decision, backend, req.query))
    }
}

fn parse_body(body: &Bytes) -> std::result::Result<RouteRequest, Response> {
    let de = &mut serde_json::Deserializer::from_slice(body);
    serde_path_to_error::deserialize::<_, RouteRequest>(de).map_err(|e| {
        let path = e.path().to_string();
        error_response(StatusCode::BAD_REQUEST, format!("malformed body: {}", e.inner()), Some(path))
    })
}

fn error_response(status: StatusCode, error: String, field: Option<String>) -> Response {
    (status, Json(ErrorBody { error, field })).into_response()
}

fn response_for(d: &RoutingDecision, backend: &BackendConfig) -> RouteResponse {
    RouteResponse {
        model: backend.name.clone(),
        index: d.selected,
        scores: d.scores.clone(),
        latency_ms: d.latency_ms,
        text: None,
        backend_latency_ms: None,
        error: None,
    }
}

async fn route_handler(State(gw): State<Gateway>, body: Bytes) -> Response {
    match gw.decide(&body).await {
        Ok((d, backend, _)) => Json(response_for(&d, backend)).into_response(),
        Err(r) => r,
    }
}

async fn generate_handler(State(gw): State<Gateway>, body: Bytes) -> Response {
    if gw.shared.mode != RoutingMode::RouteAndProxy {
        return error_response(StatusCode::CONFLICT, "gateway runs in route-only mode".into(), None);
    }
    let (d, backend, query) = match gw.decide(&body).await {
        Ok(x) => x,
        Err(r) => return r,
    };
    let mut out = response_for(&d, backend);
    let url = format!("{}{COMPLETION_PATH}", backend.url.trim_end_matches('/'));
    let start = Instant::now();
    let call = gw
        .shared
        .client
        .post(&url)
        .timeout(Duration::from_millis(backend.timeout_ms))
        .json(&CompletionRequest { prompt: query })
        .send()
        .await;
    let result = match call {
        Ok(resp) if resp.status().is_success() => resp.json::<CompletionResponse>().await,
        Ok(resp) => {
            let status = resp.status();
            gw.shared.stats.backend_errors.fetch_add(1, Ordering::SeqCst);
            out.error = Some(format!("backend {} returned {status}", backend.name));
            return (StatusCode::BAD_GATEWAY, Json(out)).into_response();
        }
        Err(e) => Err(e),
    };
    out.backend_latency_ms = Some(start.elapsed().as_secs_f64() * 1e3);
    match result {
        Ok(c) => {
            out.text = Some(c.text);
            Json(out).into_response()
        }
        Err(e) if e.is_timeout() => {
            gw.shared.stats.timeouts.fetch_add(1, Ordering::SeqCst);
            out.error = Some(format!("backend {} timed out after {} ms", backend.name, backend.timeout_ms));
            (StatusCode::GATEWAY_TIMEOUT, Json(out)).into_response()
        }
        Err(e) => {
            gw.shared.stats.backend_errors.fetch_add(1, Ordering::SeqCst);
            out.error = Some(format!("backend {}: {e}", backend.name));
            (StatusCode::BAD_GATEWAY, Json(out)).into_response()
        }
    }
}

async fn health_handler(State(gw): State<Gateway>) -> Json<HealthResponse> {
    Json(HealthResponse {
        status: "ok".into(),
        method: gw.shared.method.clone(),
        models: gw.shared.backends.len(),
        mode: gw.shared.mode,
        meta: gw.shared.meta.clone(),
    })
}

async fn stats_handler(State(gw): State<Gateway>) -> Json<StatsResponse> {
    Json(gw.stats())
}

/// Binds `addr` and serves `app` in the background.
pub async fn spawn(app: axum::Router, addr: &str) -> Result<(SocketAddr, JoinHandle<()>)> {
    let listener = TcpListener::bind(addr).await?;
    let local = listener.local_addr()?;
    let handle = tokio::spawn(async move {
        let _ = axum::serve(listener, app).await;
    });
    Ok((local, handle))
}

/// Runs the gateway described by `config` until ctrl-c.
pub async fn serve(config: GatewayConfig) -> Result<()> {
    let gw = Gateway::from_config(&config)?;
    let listener = TcpListener::bind(&config.listen).await?;
    axum::serve(listener, gw.app())
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
