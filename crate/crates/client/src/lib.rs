//! HTTP clients for the two remote dependencies of an attack run: the
//! victim model service and a paraphrase oracle. Both speak small JSON
//! protocols and map transport and protocol failures onto the core error
//! types.

use async_trait::async_trait;
use deceptforge_core::model::{
    ModelClient, ModelError, SamplingParams, ScoredContinuation, ScoredToken,
};
use deceptforge_core::oracle::{Oracle, OracleError, ParaphraseMode};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Deserialize)]
struct ErrorBody {
    error: ErrorDetail,
}

#[derive(Debug, Clone, Deserialize)]
struct ErrorDetail {
    code: String,
    message: String,
}

fn strip_slash(url: &str) -> String {
    url.trim_end_matches('/').to_string()
}

/// Talks to a model service over `POST /v1/score` and `POST /v1/generate`.
#[derive(Debug, Clone)]
pub struct HttpModelClient {
    base_url: String,
    http: reqwest::Client,
}

#[derive(Debug, Serialize)]
struct ScoreRequest<'a> {
    prompt: &'a str,
    continuation: &'a str,
}

#[derive(Debug, Deserialize)]
struct ScoreResponse {
    tokens: Vec<ScoredToken>,
}

#[derive(Debug, Serialize)]
struct GenerateRequest<'a> {
    prompt: &'a str,
    #[serde(flatten)]
    params: &'a SamplingParams,
}

#[derive(Debug, Deserialize)]
struct GenerateResponse {
    completions: Vec<String>,
}

impl HttpModelClient {
    pub fn new(base_url: &str) -> Self {
        Self { base_url: strip_slash(base_url), http: reqwest::Client::new() }
    }

    pub fn base_url(&self) -> &str {
        &self.base_url
    }

    async fn post_json<B: Serialize, R: for<'de> Deserialize<'de>>(
        &self,
        path: &str,
        body: &B,
    ) -> Result<R, ModelError> {
        let url = format!("{}{path}", self.base_url);
        let resp = self
            .http
            .post(&url)
            .json(body)
            .send()
            .await
            .map_err(|e| ModelError::Transport(e.to_string()))?;
        let status = resp.status();
        if status.is_success() {
            return resp
                .json::<R>()
                .await
                .map_err(|e| ModelError::Backend(format!("bad response body: {e}")));
        }
        let text = resp
            .text()
            .await
            .map_err(|e| ModelError::Transport(e.to_string()))?;
        Err(match serde_json::from_str::<ErrorBody>(&text) {
            Ok(body) => {
                let detail = body.error;
                match detail.code.as_str() {
                    "tokenization" => ModelError::Tokenization(detail.message),
                    "vocab" => ModelError::Vocab(detail.message),
                    "invalid_params" => ModelError::InvalidParams(detail.message),
                    _ => ModelError::Backend(format!("{} ({status})", detail.message)),
                }
            }
            Err(_) => ModelError::Backend(format!("{status}: {text}")),
        })
    }
}

#[async_trait]
impl ModelClient for HttpModelClient {
    async fn score(
        &self,
        prompt: &str,
        continuation: &str,
    ) -> Result<ScoredContinuation, ModelError> {
        let resp: ScoreResponse =
            self.post_json("/v1/score", &ScoreRequest { prompt, continuation }).await?;
        Ok(ScoredContinuation {
            continuation_text: continuation.to_string(),
            tokens: resp.tokens,
        })
    }

    async fn generate(
        &self,
        prompt: &str,
        params: &SamplingParams,
    ) -> Result<Vec<String>, ModelError> {
        let resp: GenerateResponse =
            self.post_json("/v1/generate", &GenerateRequest { prompt, params }).await?;
        Ok(resp.completions)
    }
}

/// Default instruction sent with every rewrite request.
pub const DEFAULT_INSTRUCTION: &str =
    "Rewrite the text so it keeps its meaning, tone, and approximate length. \
     Reply with the rewritten text only.";

/// One-method adapter over any chat-style rewriting endpoint: posts an
/// instruction plus the text and expects the rewritten text back.
#[derive(Debug, Clone)]
pub struct HttpOracle {
    url: String,
    instruction: String,
    http: reqwest::Client,
}

#[derive(Debug, Serialize)]
struct RewriteRequest<'a> {
    instruction: &'a str,
    text: &'a str,
    mode: ParaphraseMode,
}

#[derive(Debug, Deserialize)]
struct RewriteResponse {
    text: String,
}

impl HttpOracle {
    pub fn new(url: &str) -> Self {
        Self {
            url: strip_slash(url),
            instruction: DEFAULT_INSTRUCTION.to_string(),
            http: reqwest::Client::new(),
        }
    }

    pub fn with_instruction(mut self, instruction: &str) -> Self {
        self.instruction = instruction.to_string();
        self
    }
}

#[async_trait]
impl Oracle for HttpOracle {
    async fn rewrite(&self, text: &str, mode: ParaphraseMode) -> Result<String, OracleError> {
        let body = RewriteRequest { instruction: &self.instruction, text, mode };
        let resp = self
            .http
            .post(&self.url)
            .json(&body)
            .send()
            .await
            .map_err(|e| OracleError::Transport(e.to_string()))?;
        let status = resp.status();
        if !status.is_success() {
            let text = resp.text().await.unwrap_or_default();
            return Err(OracleError::Transport(format!("{status}: {text}")));
        }
        let parsed: RewriteResponse = resp
            .json()
            .await
            .map_err(|e| OracleError::Transport(format!("bad response body: {e}")))?;
        Ok(parsed.text)
    }
}
