//! Blocking JSON-over-HTTP plumbing shared by the chat client and the remote
//! encoder: bounded retries with exponential backoff, a cap on in-flight
//! requests, and correlation ids.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Connection settings for a JSON endpoint. Credentials are never stored
/// here, only the name of the environment variable that holds them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EndpointConfig {
    pub base_url: String,
    pub path: String,
    pub api_key_env: String,
    pub timeout_secs: f64,
    pub max_in_flight: usize,
    pub retry: RetryPolicy,
}

impl Default for EndpointConfig {
    fn default() -> Self {
        Self {
            base_url: "http://127.0.0.1:8000".into(),
            path: "/v1/chat/completions".into(),
            api_key_env: "RELGRAPH_LLM_API_KEY".into(),
            timeout_secs: 60.0,
            max_in_flight: 4,
            retry: RetryPolicy::default(),
        }
    }
}

impl EndpointConfig {
    pub fn url(&self) -> String {
        format!(
            "{}/{}",
            self.base_url.trim_end_matches('/'),
            self.path.trim_start_matches('/')
        )
    }
}

/// Attempt `n` (1-based) that fails is followed by a sleep of
/// `base_delay * 2^(n-1)`, up to `max_attempts` total attempts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay_secs: f64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 3,
            base_delay_secs: 1.0,
        }
    }
}

impl RetryPolicy {
    pub fn delay_after(&self, attempt: u32) -> Duration {
        Duration::from_secs_f64(self.base_delay_secs * f64::from(1u32 << (attempt - 1).min(16)))
    }
}

/// Counting semaphore.
#[derive(Debug)]
struct Limiter {
    free: Mutex<usize>,
    cv: Condvar,
}

struct Permit<'a>(&'a Limiter);

impl Limiter {
    fn new(n: usize) -> Self {
        Self {
            free: Mutex::new(n.max(1)),
            cv: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut free = self.free.lock().unwrap_or_else(|e| e.into_inner());
        while *free == 0 {
            free = self.cv.wait(free).unwrap_or_else(|e| e.into_inner());
        }
        *free -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        let mut free = self.0.free.lock().unwrap_or_else(|e| e.into_inner());
        *free += 1;
        self.0.cv.notify_one();
    }
}

/// Reply plus the bookkeeping needed to correlate it with its request.
#[derive(Debug, Clone)]
pub struct JsonReply {
    pub body: serde_json::Value,
    pub correlation_id: String,
    pub attempts: u32,
}

#[derive(Clone)]
pub struct JsonEndpoint {
    config: EndpointConfig,
    http: reqwest::blocking::Client,
    limiter: Arc<Limiter>,
    next_id: Arc<AtomicU64>,
}

impl std::fmt::Debug for JsonEndpoint {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("JsonEndpoint")
            .field("url", &self.config.url())
            .finish_non_exhaustive()
    }
}

impl JsonEndpoint {
    pub fn new(config: EndpointConfig) -> Result<Self> {
        if config.timeout_secs.is_nan() || config.timeout_secs <= 0.0 {
            return Err(Error::Config("endpoint timeout must be positive".into()));
        }
        if config.retry.max_attempts == 0 {
            return Err(Error::Config("retry policy needs at least one attempt".into()));
        }
        let http = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs_f64(config.timeout_secs))
            .build()
            .map_err(|e| Error::Config(format!("http client: {e}")))?;
        Ok(Self {
            limiter: Arc::new(Limiter::new(config.max_in_flight)),
            config,
            http,
            next_id: Arc::new(AtomicU64::new(1)),
        })
    }

    pub fn config(&self) -> &EndpointConfig {
        &self.config
    }

    /// POSTs `body`, retrying transport failures, timeouts, 429 and 5xx.
    pub fn post(&self, body: &serde_json::Value) -> Result<JsonReply> {
        let correlation_id = format!(
            "relgraph-{}-{}",
            std::process::id(),
            self.next_id.fetch_add(1, Ordering::Relaxed)
        );
        let key = std::env::var(&self.config.api_key_env).ok();
        let url = self.config.url();
        let policy = self.config.retry;
        let mut last = String::new();
        for attempt in 1..=policy.max_attempts {
            let outcome = {
                let _permit = self.limiter.acquire();
                let mut req = self
                    .http
                    .post(&url)
                    .header("x-correlation-id", &correlation_id)
                    .json(body);
                if let Some(k) = &key {
                    req = req.bearer_auth(k);
                }
                req.send()
            };
            match outcome {
                Ok(resp) => {
                    let status = resp.status();
                    if status.is_success() {
                        let body = resp.json::<serde_json::Value>().map_err(|e| {
                            Error::Remote {
                                status: status.as_u16(),
                                message: format!("invalid JSON body: {e}"),
                            }
                        })?;
                        return Ok(JsonReply {
                            body,
                            correlation_id,
                            attempts: attempt,
                        });
                    }
                    let text = resp.text().unwrap_or_default();
                    if status.as_u16() != 429 && !status.is_server_error() {
                        return Err(Error::Remote {
                            status: status.as_u16(),
                            message: text,
                        });
                    }
                    last = format!("status {status}: {text}");
                }
                Err(e) => last = e.to_string(),
            }
            log::warn!("{correlation_id}: attempt {attempt} failed: {last}");
            if attempt < policy.max_attempts {
                std::thread::sleep(policy.delay_after(attempt));
            }
        }
        Err(Error::Transport {
            attempts: policy.max_attempts,
            message: last,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn backoff_doubles() {
        let p = RetryPolicy::default();
        assert_eq!(p.delay_after(1), Duration::from_secs(1));
        assert_eq!(p.delay_after(2), Duration::from_secs(2));
        assert_eq!(p.delay_after(3), Duration::from_secs(4));
    }

    #[test]
    fn url_joins_cleanly() {
        let c = EndpointConfig {
            base_url: "http://h:1/".into(),
            path: "/v1/x".into(),
            ..Default::default()
        };
        assert_eq!(c.url(), "http://h:1/v1/x");
    }

    #[test]
    fn limiter_caps_concurrency() {
        use std::sync::atomic::AtomicUsize;
        let lim = Arc::new(Limiter::new(2));
        let live = Arc::new(AtomicUsize::new(0));
        let peak = Arc::new(AtomicUsize::new(0));
        let handles: Vec<_> = (0..8)
            .map(|_| {
                let (lim, live, peak) = (lim.clone(), live.clone(), peak.clone());
                std::thread::spawn(move || {
                    let _p = lim.acquire();
                    let now = live.fetch_add(1, Ordering::SeqCst) + 1;
                    peak.fetch_max(now, Ordering::SeqCst);
                    std::thread::sleep(Duration::from_millis(5));
                    live.fetch_sub(1, Ordering::SeqCst);
                })
            })
            .collect();
        for h in handles {
            h.join().unwrap();
        }
        assert!(peak.load(Ordering::SeqCst) <= 2);
    }
}
