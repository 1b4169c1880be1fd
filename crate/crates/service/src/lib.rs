//! HTTP facade over a model backend. Exposes teacher-forced scoring and
//! sampling on a small JSON protocol plus a health probe, so the attack
//! loop can talk to any backend through one contract.

use std::net::SocketAddr;
use std::sync::Arc;

use axum::extract::rejection::JsonRejection;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use deceptforge_core::{ModelClient, ModelError, SamplingParams, ScoredToken};
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio::net::TcpListener;

/// The backend shared across request handlers.
pub type SharedModel = Arc<dyn ModelClient>;

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("failed to bind listener: {0}")]
    Bind(std::io::Error),
    #[error("server stopped: {0}")]
    Serve(std::io::Error),
}

/// Body of `POST /v1/score`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScoreRequest {
    pub prompt: String,
    pub continuation: String,
}

/// Reply to `POST /v1/score`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScoreResponse {
    pub tokens: Vec<ScoredToken>,
}

/// Body of `POST /v1/generate`. Omitted sampling fields fall back to the
/// library defaults.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GenerateRequest {
    pub prompt: String,
    #[serde(flatten)]
    pub params: SamplingParams,
}

/// Reply to `POST /v1/generate`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GenerateResponse {
    pub completions: Vec<String>,
}

/// Error envelope returned with every non-2xx status.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: ErrorDetail,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ErrorDetail {
    pub code: String,
    pub message: String,
}

fn error_response(status: StatusCode, code: &str, message: String) -> Response {
    let body = ErrorBody {
        error: ErrorDetail { code: code.to_string(), message },
    };
    (status, Json(body)).into_response()
}

fn model_error(err: ModelError) -> Response {
    let (status, code) = match &err {
        ModelError::Tokenization(_) => (StatusCode::BAD_REQUEST, "tokenization"),
        ModelError::Vocab(_) => (StatusCode::BAD_REQUEST, "vocab"),
        ModelError::InvalidParams(_) => (StatusCode::BAD_REQUEST, "invalid_params"),
        ModelError::Transport(_) => (StatusCode::BAD_GATEWAY, "transport"),
        ModelError::Backend(_) => (StatusCode::INTERNAL_SERVER_ERROR, "backend"),
    };
    error_response(status, code, err.to_string())
}

fn rejection(rej: JsonRejection) -> Response {
    error_response(StatusCode::BAD_REQUEST, "bad_request", rej.body_text())
}

async fn score(
    State(model): State<SharedModel>,
    payload: Result<Json<ScoreRequest>, JsonRejection>,
) -> Response {
    let Json(req) = match payload {
        Ok(p) => p,
        Err(rej) => return rejection(rej),
    };
    match model.score(&req.prompt, &req.continuation).await {
        Ok(scored) => Json(ScoreResponse { tokens: scored.tokens }).into_response(),
        Err(err) => model_error(err),
    }
}

async fn generate(
    State(model): State<SharedModel>,
    payload: Result<Json<GenerateRequest>, JsonRejection>,
) -> Response {
    let Json(req) = match payload {
        Ok(p) => p,
        Err(rej) => return rejection(rej),
    };
    match model.generate(&req.prompt, &req.params).await {
        Ok(completions) => Json(GenerateResponse { completions }).into_response(),
        Err(err) => model_error(err),
    }
}

async fn healthz() -> Response {
    Json(serde_json::json!({"status": "ok"})).into_response()
}

/// Builds the service router around a shared backend.
pub fn router(model: SharedModel) -> Router {
    Router::new()
        .route("/v1/score", post(score))
        .route("/v1/generate", post(generate))
        .route("/healthz", get(healthz))
        .with_state(model)
}

/// Serves the router on an already-bound listener until the task is dropped.
pub async fn serve_on(model: SharedModel, listener: TcpListener) -> Result<(), ServiceError> {
    axum::serve(listener, router(model))
        .await
        .map_err(ServiceError::Serve)
}

/// Binds `addr` and serves forever. Use port 0 plus [`serve_on`] when the
/// caller needs the chosen port back.
pub async fn serve(model: SharedModel, addr: SocketAddr) -> Result<(), ServiceError> {
    let listener = TcpListener::bind(addr).await.map_err(ServiceError::Bind)?;
    serve_on(model, listener).await
}

#[cfg(test)]
mod tests {
    use super::*;
    use deceptforge_core::{ToyModel, ToyModelSpec};

    fn tiny_model() -> Arc<ToyModel> {
        let spec: ToyModelSpec = serde_json::from_value(serde_json::json!({
            "vocabulary": ["alpha", "beta", "gamma"],
            "base_logits": {"alpha": 0.5},
            "bigram_bonuses": [
                {"prev": "alpha", "next": "beta", "bonus": 3.0},
                {"prev": "beta", "next": "gamma", "bonus": 2.0}
            ],
            "trigger_boosts": [
                {"trigger": "amulet", "word": "gamma", "boost": 9.0}
            ]
        }))
        .unwrap();
        Arc::new(ToyModel::new(spec).unwrap())
    }

    async fn spawn() -> (String, Arc<ToyModel>) {
        let model = tiny_model();
        let listener = TcpListener::bind("127.0.0.1:0").await.unwrap();
        let addr = listener.local_addr().unwrap();
        let served: SharedModel = model.clone();
        tokio::spawn(async move { serve_on(served, listener).await });
        (format!("http://{addr}"), model)
    }

    #[tokio::test]
    async fn score_round_trips_tokens_exactly() {
        let (base, model) = spawn().await;
        let direct = model.score("alpha", "beta gamma").await.unwrap();
        let client = reqwest::Client::new();
        let resp = client
            .post(format!("{base}/v1/score"))
            .json(&ScoreRequest { prompt: "alpha".into(), continuation: "beta gamma".into() })
            .send()
            .await
            .unwrap();
        assert_eq!(resp.status(), 200);
        let body: ScoreResponse = resp.json().await.unwrap();
        assert_eq!(body.tokens, direct.tokens);
    }

    #[tokio::test]
    async fn generate_accepts_minimal_request_with_defaults() {
        let (base, _model) = spawn().await;
        let client = reqwest::Client::new();
        let resp = client
            .post(format!("{base}/v1/generate"))
            .json(&serde_json::json!({"prompt": "alpha", "max_tokens": 2}))
            .send()
            .await
            .unwrap();
        assert_eq!(resp.status(), 200);
        let body: GenerateResponse = resp.json().await.unwrap();
        assert_eq!(body.completions, vec!["beta gamma".to_string()]);
    }

    #[tokio::test]
    async fn unknown_continuation_word_maps_to_vocab_error() {
        let (base, _model) = spawn().await;
        let client = reqwest::Client::new();
        let resp = client
            .post(format!("{base}/v1/score"))
            .json(&ScoreRequest { prompt: "alpha".into(), continuation: "delta".into() })
            .send()
            .await
            .unwrap();
        assert_eq!(resp.status(), 400);
        let body: ErrorBody = resp.json().await.unwrap();
        assert_eq!(body.error.code, "vocab");
        assert!(body.error.message.contains("delta"));
    }

    #[tokio::test]
    async fn zero_temperature_with_bad_top_p_maps_to_invalid_params() {
        let (base, _model) = spawn().await;
        let client = reqwest::Client::new();
        let resp = client
            .post(format!("{base}/v1/generate"))
            .json(&serde_json::json!({"prompt": "alpha", "top_p": 0.0}))
            .send()
            .await
            .unwrap();
        assert_eq!(resp.status(), 400);
        let body: ErrorBody = resp.json().await.unwrap();
        assert_eq!(body.error.code, "invalid_params");
    }

    #[tokio::test]
    async fn malformed_json_reports_bad_request() {
        let (base, _model) = spawn().await;
        let client = reqwest::Client::new();
        let resp = client
            .post(format!("{base}/v1/score"))
            .header("content-type", "application/json")
            .body("{\"prompt\": ")
            .send()
            .await
            .unwrap();
        assert_eq!(resp.status(), 400);
        let body: ErrorBody = resp.json().await.unwrap();
        assert_eq!(body.error.code, "bad_request");
    }

    #[tokio::test]
    async fn health_probe_answers_ok() {
        let (base, _model) = spawn().await;
        let resp = reqwest::get(format!("{base}/healthz")).await.unwrap();
        assert_eq!(resp.status(), 200);
        let body: serde_json::Value = resp.json().await.unwrap();
        assert_eq!(body["status"], "ok");
    }
}
