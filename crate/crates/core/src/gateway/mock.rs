use std::time::Duration;

use axum::extract::State;
use axum::routing::post;
use axum::Json;

use super::server::{CompletionRequest, CompletionResponse, COMPLETION_PATH};

/// A stand-in model endpoint with canned, deterministic completions.
#[derive(Clone, Debug)]
pub struct MockBackend {
    pub name: String,
    pub delay: Duration,
}

impl MockBackend {
    pub fn new(name: impl Into<String>, delay: Duration) -> Self {
        Self {
            name: name.into(),
            delay,
        }
    }

    pub fn completion(&self, prompt: &str) -> String {
        format!("[{}] canned completion for {} prompt bytes", self.name, prompt.len())
    }

    pub fn app(&self) -> axum::Router {
        axum::Router::new()
            .route(COMPLETION_PATH, post(complete))
            .with_state(self.clone())
    }
}

async fn complete(State(mock): State<MockBackend>, Json(req): Json<CompletionRequest>) -> Json<CompletionResponse> {
    if !mock.delay.is_zero() {
        tokio::time::sleep(mock.delay).await;
    }
    Json(CompletionResponse {
        text: mock.completion(&req.prompt),
    })
}
