//! Cache-aware LLM client with retries and a cap on in-flight requests.

use std::fmt;
use std::str::FromStr;
use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use super::cache::{cache_key, CacheRecord, ResponseCache};
use super::{GroundingError, LlmBackend, LlmParams, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CacheMode {
    /// Call the backend; the cache is neither read nor written.
    Live,
    /// Call the backend and append every response to the cache.
    Record,
    /// Answer only from the cache; the backend is never called.
    Replay,
}

impl FromStr for CacheMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "live" => Ok(CacheMode::Live),
            "record" => Ok(CacheMode::Record),
            "replay" => Ok(CacheMode::Replay),
            other => Err(format!("unknown cache mode {other:?}")),
        }
    }
}

impl fmt::Display for CacheMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CacheMode::Live => "live",
            CacheMode::Record => "record",
            CacheMode::Replay => "replay",
        })
    }
}

/// Capped exponential backoff for network errors and rate limiting.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub initial_backoff: Duration,
    pub max_backoff: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self { max_retries: 4, initial_backoff: Duration::from_millis(500), max_backoff: Duration::from_secs(20) }
    }
}

impl RetryPolicy {
    pub fn none() -> Self {
        Self { max_retries: 0, ..Self::default() }
    }

    /// Delay before retry number `attempt` (0-based).
    pub fn backoff(&self, attempt: u32) -> Duration {
        let factor = 2u32.saturating_pow(attempt.min(31));
        self.initial_backoff.saturating_mul(factor).min(self.max_backoff)
    }
}

#[derive(Debug)]
struct Limiter {
    max: usize,
    in_flight: Mutex<usize>,
    freed: Condvar,
}

struct Permit<'a>(&'a Limiter);

impl Limiter {
    fn acquire(&self) -> Permit<'_> {
        let mut n = self.in_flight.lock().unwrap();
        while *n >= self.max {
            n = self.freed.wait(n).unwrap();
        }
        *n += 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.in_flight.lock().unwrap() -= 1;
        self.0.freed.notify_one();
    }
}

pub struct LlmClient {
    backend: Arc<dyn LlmBackend>,
    params: LlmParams,
    mode: CacheMode,
    cache: Arc<ResponseCache>,
    retry: RetryPolicy,
    limiter: Limiter,
}

impl fmt::Debug for LlmClient {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("LlmClient")
            .field("endpoint", &self.backend.endpoint())
            .field("params", &self.params)
            .field("mode", &self.mode)
            .field("retry", &self.retry)
            .field("max_in_flight", &self.limiter.max)
            .finish()
    }
}

impl LlmClient {
    pub fn new(backend: Arc<dyn LlmBackend>, params: LlmParams) -> Result<Self> {
        params.validate()?;
        Ok(Self {
            backend,
            params,
            mode: CacheMode::Live,
            cache: Arc::new(ResponseCache::in_memory()),
            retry: RetryPolicy::default(),
            limiter: Limiter { max: 4, in_flight: Mutex::new(0), freed: Condvar::new() },
        })
    }

    pub fn with_cache(mut self, cache: Arc<ResponseCache>, mode: CacheMode) -> Self {
        self.cache = cache;
        self.mode = mode;
        self
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn with_max_in_flight(mut self, max: usize) -> Self {
        self.limiter.max = max.max(1);
        self
    }

    pub fn params(&self) -> &LlmParams {
        &self.params
    }

    pub fn model(&self) -> &str {
        &self.params.model
    }

    pub fn mode(&self) -> CacheMode {
        self.mode
    }

    pub fn cache(&self) -> &ResponseCache {
        &self.cache
    }

    /// Completes `prompt` according to the cache mode.
    pub fn complete(&self, prompt: &str, template_id: &str) -> Result<String> {
        if self.mode == CacheMode::Replay {
            let key = cache_key(&self.params.model, template_id, prompt);
            return self.cache.get(&key).ok_or(GroundingError::CacheMiss { key });
        }
        let response = self.call_with_retry(prompt)?;
        if self.mode == CacheMode::Record {
            let rec = CacheRecord::new(&self.backend.endpoint(), template_id, &self.params, prompt, &response);
            self.cache.insert(rec)?;
        }
        Ok(response)
    }

    fn call_with_retry(&self, prompt: &str) -> Result<String> {
        let mut attempt = 0;
        loop {
            let result = {
                let _permit = self.limiter.acquire();
                self.backend.complete(prompt, &self.params)
            };
            let wait = match &result {
                Err(GroundingError::Network(_)) => self.retry.backoff(attempt),
                Err(GroundingError::RateLimited { retry_after }) => {
                    retry_after.unwrap_or_default().max(self.retry.backoff(attempt))
                }
                _ => return result,
            };
            if attempt >= self.retry.max_retries {
                return result;
            }
            log::warn!("LLM request failed ({}), retrying in {wait:?}", result.unwrap_err());
            std::thread::sleep(wait);
            attempt += 1;
        }
    }
}
