//! HTTP gateway to remote agent backends.
//!
//! Requests and responses are single UTF-8 JSON objects POSTed to
//! `{endpoint}/v1/evaluate`. Unknown fields are ignored on decode so newer
//! peers can add fields. The client retries timeouts, transport errors and
//! 5xx responses with exponential backoff and jitter; 4xx and invalid
//! responses fail immediately.
//!
//! [`LoopbackServer`] serves the synthetic model over the same protocol, so an
//! episode can run against real HTTP while staying bit-identical to an
//! in-process run.

use std::collections::BTreeMap;
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::{
    AgentBackend, AgentId, AgentProfile, AgentResponse, BackendError, SemanticAmbiguity, SyntheticBackend, TaskId,
    TaskInstance,
};
use crate::uncertainty::UncertaintyVector;

pub const PROTOCOL_VERSION: u32 = 1;
pub const EVALUATE_PATH: &str = "/v1/evaluate";
/// Allowed deviation of a probability vector's sum from 1.
pub const SIMPLEX_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GatewayError {
    #[error("malformed message: {0}")]
    Protocol(String),
    #[error("invalid {field}: {message}")]
    Validation { field: &'static str, message: String },
    #[error("request timed out: {0}")]
    Timeout(String),
    #[error("transport error: {0}")]
    Transport(String),
    #[error("server answered {status}: {body}")]
    Status { status: u16, body: String },
    #[error("gave up after {attempts} attempts: {last}")]
    RetriesExhausted { attempts: u32, last: Box<GatewayError> },
}

impl GatewayError {
    pub fn is_retryable(&self) -> bool {
        match self {
            Self::Timeout(_) | Self::Transport(_) => true,
            Self::Status { status, .. } => *status >= 500,
            _ => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalPayload {
    pub feature_vector: Vec<f64>,
    pub declared_uncertainty: UncertaintyVector,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt_text: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRequest {
    pub protocol_version: u32,
    pub task_id: TaskId,
    pub payload: EvalPayload,
    pub deadline_ms: u64,
}

impl EvalRequest {
    pub fn for_task(task: &TaskInstance, deadline_ms: u64) -> Self {
        Self {
            protocol_version: PROTOCOL_VERSION,
            task_id: task.id.clone(),
            payload: EvalPayload {
                feature_vector: task.feature_vector.clone(),
                declared_uncertainty: task.epistemic(),
                prompt_text: None,
            },
            deadline_ms,
        }
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.protocol_version != PROTOCOL_VERSION {
            return Err(invalid("protocol_version", format!("expected {PROTOCOL_VERSION}, got {}", self.protocol_version)));
        }
        if self.task_id.as_str().is_empty() {
            return Err(invalid("task_id", "must be nonempty".into()));
        }
        if self.deadline_ms == 0 {
            return Err(invalid("deadline_ms", "must be positive".into()));
        }
        if !self.payload.feature_vector.iter().all(|x| x.is_finite()) {
            return Err(invalid("feature_vector", "entries must be finite".into()));
        }
        let u = &self.payload.declared_uncertainty;
        if !(u.is_finite() && u.is_nonnegative()) {
            return Err(invalid("declared_uncertainty", "entries must be finite and nonnegative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResponse {
    pub task_id: TaskId,
    pub class_probs: Vec<f64>,
    pub outcome_probs: Vec<f64>,
    pub semantic_ambiguities: Vec<SemanticAmbiguity>,
    pub tokens_generated: u64,
    pub latency_ms: u64,
}

impl EvalResponse {
    pub fn from_agent_response(task_id: TaskId, r: AgentResponse, latency_ms: u64) -> Self {
        Self {
            task_id,
            class_probs: r.class_probs,
            outcome_probs: r.outcome_probs,
            semantic_ambiguities: r.semantic_ambiguities,
            tokens_generated: r.tokens_generated,
            latency_ms,
        }
    }

    pub fn into_agent_response(self) -> AgentResponse {
        AgentResponse {
            class_probs: self.class_probs,
            outcome_probs: self.outcome_probs,
            semantic_ambiguities: self.semantic_ambiguities,
            tokens_generated: self.tokens_generated,
        }
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.task_id.as_str().is_empty() {
            return Err(invalid("task_id", "must be nonempty".into()));
        }
        check_simplex("class_probs", &self.class_probs)?;
        check_simplex("outcome_probs", &self.outcome_probs)?;
        if !self.semantic_ambiguities.iter().all(|s| s.weight >= 0.0 && s.ambiguity >= 0.0) {
            return Err(invalid("semantic_ambiguities", "weights and ambiguities must be nonnegative".into()));
        }
        Ok(())
    }
}

fn invalid(field: &'static str, message: String) -> GatewayError {
    GatewayError::Validation { field, message }
}

fn check_simplex(field: &'static str, p: &[f64]) -> Result<(), GatewayError> {
    if p.is_empty() {
        return Err(invalid(field, "probability vector is empty".into()));
    }
    if let Some((i, x)) = p.iter().enumerate().find(|(_, x)| !(x.is_finite() && **x >= 0.0 && **x <= 1.0)) {
        return Err(invalid(field, format!("entry {i} = {x} is not a probability")));
    }
    let sum: f64 = p.iter().sum();
    if (sum - 1.0).abs() > SIMPLEX_TOLERANCE {
        return Err(invalid(field, format!("sums to {sum}, expected 1")));
    }
    Ok(())
}

/// Error body returned with non-2xx statuses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
}

pub fn encode_request(r: &EvalRequest) -> String {
    serde_json::to_string(r).expect("request serializes")
}

pub fn decode_request(s: &str) -> Result<EvalRequest, GatewayError> {
    let r: EvalRequest = serde_json::from_str(s).map_err(|e| GatewayError::Protocol(e.to_string()))?;
    r.validate()?;
    Ok(r)
}

pub fn encode_response(r: &EvalResponse) -> String {
    serde_json::to_string(r).expect("response serializes")
}

pub fn decode_response(s: &str) -> Result<EvalResponse, GatewayError> {
    let r: EvalResponse = serde_json::from_str(s).map_err(|e| GatewayError::Protocol(e.to_string()))?;
    r.validate()?;
    Ok(r)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub base_delay_ms: u64,
    pub max_delay_ms: u64,
    /// Fraction of each backoff delay that is randomised away.
    pub jitter: f64,
    /// Per-attempt timeout.
    pub timeout_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self { max_retries: 3, base_delay_ms: 100, max_delay_ms: 5_000, jitter: 0.5, timeout_ms: 30_000 }
    }
}

impl RetryPolicy {
    /// Delay before retry number `retry` (0-based).
    pub fn backoff<R: Rng>(&self, retry: u32, rng: &mut R) -> Duration {
        let exp = self.base_delay_ms.saturating_mul(1u64 << retry.min(32)).min(self.max_delay_ms);
        let jitter = self.jitter.clamp(0.0, 1.0) * rng.gen::<f64>();
        Duration::from_secs_f64(exp as f64 * (1.0 - jitter) / 1000.0)
    }
}

/// A successful call plus how many attempts it took.
#[derive(Debug, Clone, PartialEq)]
pub struct Delivered {
    pub response: EvalResponse,
    pub attempts: u32,
}

/// Blocking client for one endpoint. Safe to share across threads.
#[derive(Debug, Clone)]
pub struct GatewayClient {
    agent: ureq::Agent,
    policy: RetryPolicy,
    bearer_token: Option<String>,
}

impl GatewayClient {
    pub fn new(policy: RetryPolicy) -> Self {
        let agent = ureq::AgentBuilder::new().timeout(Duration::from_millis(policy.timeout_ms)).build();
        Self { agent, policy, bearer_token: None }
    }

    pub fn with_bearer_token(mut self, token: impl Into<String>) -> Self {
        self.bearer_token = Some(token.into());
        self
    }

    pub fn policy(&self) -> &RetryPolicy {
        &self.policy
    }

    /// POST `request` to `{endpoint}/v1/evaluate`, retrying per the policy.
    pub fn evaluate(&self, endpoint: &str, request: &EvalRequest) -> Result<Delivered, GatewayError> {
        request.validate()?;
        let url = format!("{}{EVALUATE_PATH}", endpoint.trim_end_matches('/'));
        let body = encode_request(request);
        let mut rng = rand::thread_rng();
        let mut attempts = 0;
        loop {
            attempts += 1;
            match self.attempt(&url, &body, &request.task_id) {
                Ok(response) => return Ok(Delivered { response, attempts }),
                Err(e) if e.is_retryable() && attempts <= self.policy.max_retries => {
                    log::debug!("attempt {attempts} for {} failed: {e}", request.task_id);
                    std::thread::sleep(self.policy.backoff(attempts - 1, &mut rng));
                }
                Err(e) if e.is_retryable() => {
                    return Err(GatewayError::RetriesExhausted { attempts, last: Box::new(e) });
                }
                Err(e) => return Err(e),
            }
        }
    }

    fn attempt(&self, url: &str, body: &str, task_id: &TaskId) -> Result<EvalResponse, GatewayError> {
        let mut req = self
            .agent
            .post(url)
            .set("Content-Type", "application/json")
            .set("Idempotency-Key", task_id.as_str());
        if let Some(token) = &self.bearer_token {
            req = req.set("Authorization", &format!("Bearer {token}"));
        }
        let text = match req.send_string(body) {
            Ok(resp) => resp.into_string().map_err(|e| classify_io(&e))?,
            Err(ureq::Error::Status(status, resp)) => {
                let body = resp.into_string().unwrap_or_default();
                return Err(GatewayError::Status { status, body });
            }
            Err(ureq::Error::Transport(t)) => {
                let msg = t.to_string();
                return Err(if msg.contains("timed out") || msg.contains("Timeout") {
                    GatewayError::Timeout(msg)
                } else {
                    GatewayError::Transport(msg)
                });
            }
        };
        let response = decode_response(&text)?;
        if &response.task_id != task_id {
            return Err(invalid("task_id", format!("expected echo of {task_id}, got {}", response.task_id)));
        }
        Ok(response)
    }
}

fn classify_io(e: &std::io::Error) -> GatewayError {
    match e.kind() {
        std::io::ErrorKind::TimedOut | std::io::ErrorKind::WouldBlock => GatewayError::Timeout(e.to_string()),
        _ => GatewayError::Transport(e.to_string()),
    }
}

/// One-shot helper around [`GatewayClient::evaluate`].
pub fn remote_evaluate(endpoint: &str, request: &EvalRequest, policy: RetryPolicy) -> Result<EvalResponse, GatewayError> {
    GatewayClient::new(policy).evaluate(endpoint, request).map(|d| d.response)
}

/// [`AgentBackend`] that evaluates through the gateway. Agent `a` is reached
/// at `{base}/{a}` unless given its own endpoint.
#[derive(Debug, Clone)]
pub struct GatewayBackend {
    client: GatewayClient,
    base: String,
    endpoints: BTreeMap<AgentId, String>,
}

impl GatewayBackend {
    pub fn new(base: impl Into<String>, client: GatewayClient) -> Self {
        Self { client, base: base.into(), endpoints: BTreeMap::new() }
    }

    pub fn with_endpoint(mut self, agent: AgentId, endpoint: impl Into<String>) -> Self {
        self.endpoints.insert(agent, endpoint.into());
        self
    }

    fn endpoint(&self, agent: &AgentId) -> String {
        self.endpoints
            .get(agent)
            .cloned()
            .unwrap_or_else(|| format!("{}/{}", self.base.trim_end_matches('/'), agent))
    }
}

impl AgentBackend for GatewayBackend {
    fn evaluate(&self, agent: &AgentProfile, task: &TaskInstance) -> Result<AgentResponse, BackendError> {
        let request = EvalRequest::for_task(task, self.client.policy.timeout_ms);
        match self.client.evaluate(&self.endpoint(&agent.id), &request) {
            Ok(d) => Ok(d.response.into_agent_response()),
            Err(e @ GatewayError::RetriesExhausted { .. }) => Err(BackendError::Transport(e.to_string())),
            Err(e) => Err(BackendError::Protocol(e.to_string())),
        }
    }
}

/// What a server handler sees of a request.
#[derive(Debug, Clone)]
pub struct IncomingRequest {
    pub method: String,
    pub path: String,
    pub body: String,
    pub authorization: Option<String>,
}

/// Status code and JSON body.
#[derive(Debug, Clone)]
pub struct Reply {
    pub status: u16,
    pub body: String,
}

impl Reply {
    pub fn ok(body: String) -> Self {
        Self { status: 200, body }
    }

    pub fn error(status: u16, code: &str, message: impl Into<String>) -> Self {
        let body = serde_json::to_string(&ErrorBody { code: code.into(), message: message.into() })
            .expect("error body serializes");
        Self { status, body }
    }
}

type Handler = Arc<dyn Fn(&IncomingRequest) -> Reply + Send + Sync>;

fn serve_one(mut req: tiny_http::Request, handler: &(dyn Fn(&IncomingRequest) -> Reply + Send + Sync)) {
    let mut body = String::new();
    let reply = match req.as_reader().read_to_string(&mut body) {
        Ok(_) => handler(&IncomingRequest {
            method: req.method().as_str().to_owned(),
            path: req.url().to_owned(),
            body,
            authorization: req
                .headers()
                .iter()
                .find(|h| h.field.equiv("Authorization"))
                .map(|h| h.value.as_str().to_owned()),
        }),
        Err(e) => Reply::error(400, "bad_body", e.to_string()),
    };
    let header = tiny_http::Header::from_bytes("Content-Type", "application/json").expect("static header");
    let response = tiny_http::Response::from_string(reply.body).with_status_code(reply.status).with_header(header);
    if let Err(e) = req.respond(response) {
        log::debug!("failed to send gateway reply: {e}");
    }
}

/// Minimal HTTP server on 127.0.0.1 with an arbitrary handler, one thread
/// per request; stops accepting on drop.
pub struct GatewayServer {
    server: Arc<tiny_http::Server>,
    worker: Option<JoinHandle<()>>,
    url: String,
}

impl GatewayServer {
    pub fn start(handler: impl Fn(&IncomingRequest) -> Reply + Send + Sync + 'static) -> std::io::Result<Self> {
        let server = tiny_http::Server::http("127.0.0.1:0").map_err(std::io::Error::other)?;
        let addr = server.server_addr().to_ip().expect("bound to an ip address");
        let server = Arc::new(server);
        let handler: Handler = Arc::new(handler);
        let s = Arc::clone(&server);
        let worker = std::thread::spawn(move || {
            for req in s.incoming_requests() {
                let handler = Arc::clone(&handler);
                std::thread::spawn(move || serve_one(req, handler.as_ref()));
            }
        });
        Ok(Self { server, worker: Some(worker), url: format!("http://{addr}") })
    }

    pub fn url(&self) -> &str {
        &self.url
    }
}

impl Drop for GatewayServer {
    fn drop(&mut self) {
        self.server.unblock();
        if let Some(w) = self.worker.take() {
            let _ = w.join();
        }
    }
}

/// Serves `SyntheticBackend` for every pool agent at `/{agent_id}/v1/evaluate`.
pub struct LoopbackServer {
    inner: GatewayServer,
}

impl LoopbackServer {
    pub fn start(pool: Vec<AgentProfile>, model: SyntheticBackend, bearer_token: Option<String>) -> std::io::Result<Self> {
        let agents: BTreeMap<String, AgentProfile> = pool.into_iter().map(|a| (a.id.as_str().to_owned(), a)).collect();
        let inner = GatewayServer::start(move |req| {
            if let Some(token) = &bearer_token {
                if req.authorization.as_deref() != Some(&format!("Bearer {token}")) {
                    return Reply::error(401, "unauthorized", "missing or wrong bearer token");
                }
            }
            if req.method != "POST" {
                return Reply::error(405, "method_not_allowed", "use POST");
            }
            let Some(agent_id) = req.path.strip_suffix(EVALUATE_PATH).and_then(|p| p.strip_prefix('/')) else {
                return Reply::error(404, "not_found", format!("no route for {}", req.path));
            };
            let Some(agent) = agents.get(agent_id) else {
                return Reply::error(404, "unknown_agent", format!("no agent {agent_id}"));
            };
            let started = Instant::now();
            match decode_request(&req.body) {
                Ok(r) => {
                    let out = model.respond(agent, &r.task_id, &r.payload.declared_uncertainty);
                    let latency = started.elapsed().as_millis() as u64;
                    Reply::ok(encode_response(&EvalResponse::from_agent_response(r.task_id, out, latency)))
                }
                Err(e) => Reply::error(400, "invalid_request", e.to_string()),
            }
        })?;
        Ok(Self { inner })
    }

    /// Base URL; agent `a` lives at `{url}/{a}`.
    pub fn url(&self) -> &str {
        self.inner.url()
    }
}
