//! HTTP client for an external embedding service.
//!
//! `GET /info` describes the model; `POST /encode` takes
//! `{"tokens": [...], "mask_positions": [...]}` and answers
//! `{"dim": d, "vectors": [[...], ...]}`.

use std::sync::{Condvar, Mutex};
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{EmbeddingProvider, ProviderInfo};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct RemoteConfig {
    /// Base URL, e.g. `http://127.0.0.1:8088`.
    pub url: String,
    pub timeout: Duration,
    /// Attempts after the first failure.
    pub retries: u32,
    /// Delay before the first retry; doubles each time.
    pub backoff: Duration,
    pub max_in_flight: usize,
}

impl RemoteConfig {
    pub fn new(url: impl Into<String>) -> Self {
        Self {
            url: url.into().trim_end_matches('/').to_string(),
            timeout: Duration::from_secs(60),
            retries: 3,
            backoff: Duration::from_millis(200),
            max_in_flight: 4,
        }
    }
}

#[derive(Serialize)]
struct EncodeRequest<'a> {
    tokens: &'a [String],
    mask_positions: &'a [usize],
}

#[derive(Deserialize)]
struct EncodeResponse {
    dim: usize,
    vectors: Vec<Vec<f32>>,
}

struct Semaphore {
    free: Mutex<usize>,
    cv: Condvar,
}

impl Semaphore {
    fn acquire(&self) -> Permit<'_> {
        let mut free = self.free.lock().unwrap_or_else(|e| e.into_inner());
        while *free == 0 {
            free = self.cv.wait(free).unwrap_or_else(|e| e.into_inner());
        }
        *free -= 1;
        Permit(self)
    }
}

struct Permit<'a>(&'a Semaphore);

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().unwrap_or_else(|e| e.into_inner()) += 1;
        self.0.cv.notify_one();
    }
}

pub struct RemoteProvider {
    config: RemoteConfig,
    agent: ureq::Agent,
    info: ProviderInfo,
    gate: Semaphore,
}

enum Failure {
    /// Worth another attempt: connection problems and 5xx answers.
    Transient(String),
    Fatal(Error),
}

impl RemoteProvider {
    /// Connects and reads the service description.
    pub fn connect(config: RemoteConfig) -> Result<Self> {
        let agent = ureq::AgentBuilder::new().timeout(config.timeout).build();
        let gate = Semaphore {
            free: Mutex::new(config.max_in_flight.max(1)),
            cv: Condvar::new(),
        };
        let url = format!("{}/info", config.url);
        let info: ProviderInfo = with_retries(&config, || {
            let resp = agent.get(&url).call().map_err(classify)?;
            resp.into_json()
                .map_err(|e| Failure::Fatal(Error::ProviderProtocol(format!("bad /info body: {e}"))))
        })?;
        if info.dim == 0 || info.max_tokens == 0 || info.mask_token.is_empty() {
            return Err(Error::ProviderProtocol(format!("unusable /info: {info:?}")));
        }
        Ok(Self {
            config,
            agent,
            info,
            gate,
        })
    }

    pub fn config(&self) -> &RemoteConfig {
        &self.config
    }
}

fn classify(e: ureq::Error) -> Failure {
    match e {
        ureq::Error::Status(code, resp) if code >= 500 => {
            Failure::Transient(format!("HTTP {code}: {}", resp.into_string().unwrap_or_default()))
        }
        ureq::Error::Status(code, resp) => Failure::Fatal(Error::ProviderProtocol(format!(
            "HTTP {code}: {}",
            resp.into_string().unwrap_or_default()
        ))),
        ureq::Error::Transport(t) => Failure::Transient(t.to_string()),
    }
}

fn with_retries<T>(config: &RemoteConfig, mut op: impl FnMut() -> std::result::Result<T, Failure>) -> Result<T> {
    let mut delay = config.backoff;
    let mut attempt = 0;
    loop {
        match op() {
            Ok(v) => return Ok(v),
            Err(Failure::Fatal(e)) => return Err(e),
            Err(Failure::Transient(msg)) => {
                if attempt >= config.retries {
                    return Err(Error::ProviderUnavailable(format!(
                        "{} after {} attempts: {msg}",
                        config.url,
                        attempt + 1
                    )));
                }
                log::warn!("embedding service {}: {msg}; retrying in {delay:?}", config.url);
                thread::sleep(delay);
                delay *= 2;
                attempt += 1;
            }
        }
    }
}

impl EmbeddingProvider for RemoteProvider {
    fn info(&self) -> &ProviderInfo {
        &self.info
    }

    fn encode_raw(&self, tokens: &[String], mask_positions: &[usize]) -> Result<Vec<Vec<f32>>> {
        let _permit = self.gate.acquire();
        let url = format!("{}/encode", self.config.url);
        let body = EncodeRequest { tokens, mask_positions };
        let resp: EncodeResponse = with_retries(&self.config, || {
            let r = self.agent.post(&url).send_json(&body).map_err(classify)?;
            r.into_json()
                .map_err(|e| Failure::Fatal(Error::ProviderProtocol(format!("bad /encode body: {e}"))))
        })?;
        if resp.dim != self.info.dim {
            return Err(Error::DimMismatch(self.info.dim, resp.dim));
        }
        Ok(resp.vectors)
    }
}
