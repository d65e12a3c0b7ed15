use std::path::{Path, PathBuf};
use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use serde_json::Value;

use crate::chat::{ChatMessage, ChatRequest, ChatResponse, Usage};
use crate::error::{GatewayError, Result};

pub const ENV_ENDPOINT: &str = "ELICIT_LLM_ENDPOINT";
pub const ENV_API_KEY: &str = "ELICIT_LLM_API_KEY";
pub const ENV_MODEL: &str = "ELICIT_LLM_MODEL";
pub const ENV_CACHE_DIR: &str = "ELICIT_LLM_CACHE";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TransportError {
    pub message: String,
    /// Connection failures, rate limits and server errors are worth retrying.
    pub retryable: bool,
}

impl TransportError {
    pub fn retryable(message: impl Into<String>) -> Self {
        Self { message: message.into(), retryable: true }
    }

    pub fn fatal(message: impl Into<String>) -> Self {
        Self { message: message.into(), retryable: false }
    }
}

/// One round trip to a chat-completion service.
pub trait Transport: Send + Sync {
    fn send(&self, request: &ChatRequest) -> Result<ChatResponse, TransportError>;
}

/// JSON over HTTP(S) to an endpoint speaking the common chat-completions shape.
pub struct HttpTransport {
    endpoint: String,
    api_key: Option<String>,
    agent: ureq::Agent,
}

impl HttpTransport {
    pub fn new(endpoint: impl Into<String>, api_key: Option<String>, timeout: Duration) -> Self {
        let config = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build();
        Self {
            endpoint: endpoint.into(),
            api_key,
            agent: ureq::Agent::new_with_config(config),
        }
    }

    pub fn from_env() -> Result<Self> {
        let endpoint = std::env::var(ENV_ENDPOINT)
            .map_err(|_| GatewayError::Config(format!("{ENV_ENDPOINT} is not set")))?;
        let api_key = std::env::var(ENV_API_KEY).ok().filter(|k| !k.is_empty());
        Ok(Self::new(endpoint, api_key, Duration::from_secs(120)))
    }
}

/// Reads `choices[0].message.content` and the usage counters.
pub fn parse_wire_response(body: &Value) -> std::result::Result<ChatResponse, String> {
    let choice = body
        .get("choices")
        .and_then(|c| c.get(0))
        .ok_or("response has no choices")?;
    let content = choice
        .pointer("/message/content")
        .and_then(Value::as_str)
        .ok_or("first choice has no message content")?;
    let count = |k: &str| body.pointer(&format!("/usage/{k}")).and_then(Value::as_u64).unwrap_or(0);
    Ok(ChatResponse {
        content: content.to_string(),
        finish_reason: choice.get("finish_reason").and_then(Value::as_str).map(str::to_string),
        usage: Usage {
            prompt_tokens: count("prompt_tokens"),
            completion_tokens: count("completion_tokens"),
        },
    })
}

impl Transport for HttpTransport {
    fn send(&self, request: &ChatRequest) -> Result<ChatResponse, TransportError> {
        let mut req = self.agent.post(&self.endpoint).header("Content-Type", "application/json");
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", format!("Bearer {key}"));
        }
        let mut resp = req
            .send_json(request)
            .map_err(|e| TransportError::retryable(e.to_string()))?;
        let status = resp.status().as_u16();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| TransportError::retryable(e.to_string()))?;
        if status == 429 || status >= 500 {
            return Err(TransportError::retryable(format!("HTTP {status}: {text}")));
        }
        if !(200..300).contains(&status) {
            return Err(TransportError::fatal(format!("HTTP {status}: {text}")));
        }
        let value: Value = serde_json::from_str(&text).map_err(|e| TransportError::fatal(e.to_string()))?;
        parse_wire_response(&value).map_err(TransportError::fatal)
    }
}

/// One JSON file per request hash. Reads and writes are serialized.
#[derive(Debug)]
pub struct ResponseCache {
    dir: PathBuf,
    lock: Mutex<()>,
}

impl ResponseCache {
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir).map_err(|source| GatewayError::Cache { path: dir.clone(), source })?;
        Ok(Self { dir, lock: Mutex::new(()) })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn path_for(&self, hash: &str) -> PathBuf {
        self.dir.join(format!("{hash}.json"))
    }

    pub fn get(&self, hash: &str) -> Result<Option<ChatResponse>> {
        let _guard = self.lock.lock().unwrap_or_else(|e| e.into_inner());
        let path = self.path_for(hash);
        match std::fs::read(&path) {
            Ok(bytes) => Ok(Some(serde_json::from_slice(&bytes)?)),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(source) => Err(GatewayError::Cache { path, source }),
        }
    }

    pub fn put(&self, hash: &str, response: &ChatResponse) -> Result<()> {
        let _guard = self.lock.lock().unwrap_or_else(|e| e.into_inner());
        let path = self.path_for(hash);
        let tmp = path.with_extension("json.tmp");
        let io = |source| GatewayError::Cache { path: path.clone(), source };
        std::fs::write(&tmp, serde_json::to_vec_pretty(response)?).map_err(io)?;
        std::fs::rename(&tmp, &path).map_err(io)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    pub attempts: u32,
    /// Delay before the second attempt; doubles after each failure.
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            attempts: 3,
            base_delay: Duration::from_millis(500),
        }
    }
}

struct Limiter {
    max: usize,
    in_flight: Mutex<usize>,
    freed: Condvar,
}

struct Slot<'a>(&'a Limiter);

impl Limiter {
    fn acquire(&self) -> Slot<'_> {
        let mut n = self.in_flight.lock().unwrap_or_else(|e| e.into_inner());
        while *n >= self.max {
            n = self.freed.wait(n).unwrap_or_else(|e| e.into_inner());
        }
        *n += 1;
        Slot(self)
    }
}

impl Drop for Slot<'_> {
    fn drop(&mut self) {
        *self.0.in_flight.lock().unwrap_or_else(|e| e.into_inner()) -= 1;
        self.0.freed.notify_one();
    }
}

/// Shareable chat client: response cache, bounded concurrency and retries
/// around a [`Transport`].
pub struct Client {
    transport: Arc<dyn Transport>,
    model: String,
    temperature: f64,
    max_tokens: u32,
    cache: Option<ResponseCache>,
    retry: RetryPolicy,
    limiter: Limiter,
}

impl Client {
    pub fn new(transport: Arc<dyn Transport>, model: impl Into<String>) -> Self {
        Self {
            transport,
            model: model.into(),
            temperature: 0.0,
            max_tokens: 1024,
            cache: None,
            retry: RetryPolicy::default(),
            limiter: Limiter {
                max: 4,
                in_flight: Mutex::new(0),
                freed: Condvar::new(),
            },
        }
    }

    /// HTTP client configured from `ELICIT_LLM_ENDPOINT`, `ELICIT_LLM_API_KEY`,
    /// `ELICIT_LLM_MODEL` and, if set, the cache directory `ELICIT_LLM_CACHE`.
    pub fn from_env() -> Result<Self> {
        let model = std::env::var(ENV_MODEL).map_err(|_| GatewayError::Config(format!("{ENV_MODEL} is not set")))?;
        let client = Self::new(Arc::new(HttpTransport::from_env()?), model);
        match std::env::var(ENV_CACHE_DIR) {
            Ok(dir) if !dir.is_empty() => client.with_cache(dir),
            _ => Ok(client),
        }
    }

    pub fn with_cache(mut self, dir: impl Into<PathBuf>) -> Result<Self> {
        self.cache = Some(ResponseCache::open(dir)?);
        Ok(self)
    }

    pub fn with_max_in_flight(mut self, n: usize) -> Self {
        self.limiter.max = n.max(1);
        self
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn with_sampling(mut self, temperature: f64, max_tokens: u32) -> Self {
        self.temperature = temperature;
        self.max_tokens = max_tokens;
        self
    }

    pub fn model(&self) -> &str {
        &self.model
    }

    pub fn request(&self, messages: Vec<ChatMessage>) -> ChatRequest {
        ChatRequest {
            model: self.model.clone(),
            messages,
            temperature: self.temperature,
            max_tokens: self.max_tokens,
        }
    }

    pub fn chat(&self, request: &ChatRequest) -> Result<ChatResponse> {
        let hash = request.hash();
        if let Some(cache) = &self.cache {
            if let Some(hit) = cache.get(&hash)? {
                return Ok(hit);
            }
        }
        let response = {
            let _slot = self.limiter.acquire();
            self.send_with_retry(request)?
        };
        if let Some(cache) = &self.cache {
            cache.put(&hash, &response)?;
        }
        Ok(response)
    }

    fn send_with_retry(&self, request: &ChatRequest) -> Result<ChatResponse> {
        let attempts = self.retry.attempts.max(1);
        let mut delay = self.retry.base_delay;
        for attempt in 1..=attempts {
            match self.transport.send(request) {
                Ok(r) => return Ok(r),
                Err(e) if !e.retryable || attempt == attempts => {
                    return Err(GatewayError::Transport { attempts: attempt, message: e.message })
                }
                Err(_) => {
                    std::thread::sleep(delay);
                    delay *= 2;
                }
            }
        }
        unreachable!("the final attempt always returns")
    }
}
