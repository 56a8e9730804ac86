use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;
use ureq::Agent;

use super::{
    Backend, ClassifyRequest, ClassifyResponse, CorefRequest, CorefScore, FillRequest, FillResponse, Health,
    PairRequest, PairScore,
};
use crate::error::{Error, Result};

pub const REQUEST_ID_HEADER: &str = "X-Request-Id";

const ATTEMPTS: u32 = 3;

/// Client for a scoring service speaking the wire protocol.
pub struct RemoteBackend {
    base: String,
    agent: Agent,
    backoff: Duration,
    counter: AtomicU64,
    health: Health,
}

enum Failure {
    /// Worth another attempt: connection problems and 5xx answers.
    Retry(String),
    Fatal(Error),
}

impl RemoteBackend {
    /// Connect to `base` (e.g. `http://127.0.0.1:8080`) and fetch its health
    /// record.
    pub fn connect(base: &str) -> Result<Self> {
        Self::connect_with(base, Duration::from_secs(60), Duration::from_millis(200))
    }

    pub fn connect_with(base: &str, timeout: Duration, backoff: Duration) -> Result<Self> {
        let config = Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build();
        let mut backend = RemoteBackend {
            base: base.trim_end_matches('/').to_string(),
            agent: Agent::new_with_config(config),
            backoff,
            counter: AtomicU64::new(0),
            health: Health {
                model_id: String::new(),
                capabilities: Vec::new(),
            },
        };
        backend.health = backend.call::<(), Health>("GET", "/v1/health", None)?;
        Ok(backend)
    }

    pub fn endpoint(&self) -> &str {
        &self.base
    }

    fn supports_batch(&self) -> bool {
        self.health.capabilities.iter().any(|c| c == "batch")
    }

    fn call<B: Serialize, T: DeserializeOwned>(&self, method: &str, path: &str, body: Option<&B>) -> Result<T> {
        let url = format!("{}{}", self.base, path);
        let id = self.counter.fetch_add(1, Ordering::Relaxed);
        let request_id = format!("{}-{id}", std::process::id());
        let mut last = String::new();
        for attempt in 0..ATTEMPTS {
            if attempt > 0 {
                std::thread::sleep(self.backoff * 2u32.pow(attempt - 1));
            }
            match self.attempt(method, &url, &request_id, body) {
                Ok(v) => return Ok(v),
                Err(Failure::Fatal(e)) => return Err(e),
                Err(Failure::Retry(msg)) => last = msg,
            }
        }
        Err(Error::Transport {
            endpoint: url,
            message: format!("{last} (after {ATTEMPTS} attempts)"),
        })
    }

    fn attempt<B: Serialize, T: DeserializeOwned>(
        &self,
        method: &str,
        url: &str,
        request_id: &str,
        body: Option<&B>,
    ) -> std::result::Result<T, Failure> {
        let sent = match (method, body) {
            ("GET", _) => self.agent.get(url).header(REQUEST_ID_HEADER, request_id).call(),
            (_, Some(b)) => self.agent.post(url).header(REQUEST_ID_HEADER, request_id).send_json(b),
            (_, None) => self.agent.post(url).header(REQUEST_ID_HEADER, request_id).send_empty(),
        };
        let mut resp = sent.map_err(|e| Failure::Retry(e.to_string()))?;
        let status = resp.status().as_u16();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| Failure::Retry(e.to_string()))?;
        if status >= 500 {
            return Err(Failure::Retry(format!("status {status}: {}", error_message(&text))));
        }
        if status >= 400 {
            return Err(Failure::Fatal(Error::Protocol(format!(
                "{url} answered {status}: {}",
                error_message(&text)
            ))));
        }
        serde_json::from_str(&text)
            .map_err(|e| Failure::Fatal(Error::Protocol(format!("{url} sent an unreadable body: {e}"))))
    }
}

fn error_message(body: &str) -> String {
    serde_json::from_str::<Value>(body)
        .ok()
        .and_then(|v| v.get("error").and_then(Value::as_str).map(str::to_string))
        .unwrap_or_else(|| body.chars().take(200).collect())
}

impl Backend for RemoteBackend {
    fn model_id(&self) -> String {
        self.health.model_id.clone()
    }

    fn capabilities(&self) -> Vec<String> {
        self.health.capabilities.clone()
    }

    fn fill(&self, req: &FillRequest) -> Result<FillResponse> {
        self.call("POST", "/v1/fill", Some(req))
    }

    fn fill_batch(&self, reqs: &[FillRequest]) -> Vec<Result<FillResponse>> {
        if !self.supports_batch() || reqs.len() <= 1 {
            return reqs.iter().map(|r| self.fill(r)).collect();
        }
        let mut out = Vec::with_capacity(reqs.len());
        for chunk in reqs.chunks(super::MAX_BATCH) {
            match self.call::<_, Vec<Value>>("POST", "/v1/fill", Some(&chunk)) {
                Ok(items) if items.len() == chunk.len() => {
                    out.extend(items.into_iter().map(batch_item));
                }
                Ok(items) => {
                    let msg = format!("batch of {} answered with {} items", chunk.len(), items.len());
                    out.extend(chunk.iter().map(|_| Err(Error::Protocol(msg.clone()))));
                }
                Err(e) => out.extend(chunk.iter().map(|_| Err(copy_error(&e)))),
            }
        }
        out
    }

    fn pair_score(&self, req: &PairRequest) -> Result<PairScore> {
        self.call("POST", "/v1/pair_score", Some(req))
    }

    fn coref(&self, req: &CorefRequest) -> Result<CorefScore> {
        self.call("POST", "/v1/coref", Some(req))
    }

    fn classify(&self, req: &ClassifyRequest) -> Result<ClassifyResponse> {
        self.call("POST", "/v1/classify", Some(req))
    }

    fn health(&self) -> Health {
        self.health.clone()
    }
}

fn copy_error(e: &Error) -> Error {
    match e {
        Error::Transport { endpoint, message } => Error::Transport {
            endpoint: endpoint.clone(),
            message: message.clone(),
        },
        other => Error::Protocol(other.to_string()),
    }
}

/// A batch answer is either a response object or `{"error": ...}`.
fn batch_item(v: Value) -> Result<FillResponse> {
    if let Some(msg) = v.get("error").and_then(Value::as_str) {
        return Err(Error::Protocol(msg.to_string()));
    }
    serde_json::from_value(v).map_err(|e| Error::Protocol(format!("unreadable batch item: {e}")))
}
