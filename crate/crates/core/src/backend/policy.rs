//! Retry with exponential backoff and request-rate limiting.

use std::collections::VecDeque;
use std::sync::{Arc, Condvar, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::{Backend, BackendError, ChatRequest, ChatResponse};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorClass {
    RateLimited,
    ServerError,
    Timeout,
    /// Never retried (authorization, malformed payloads, replay misses...).
    Fatal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    #[serde(with = "millis")]
    pub base_backoff: Duration,
    pub multiplier: f64,
    #[serde(with = "millis")]
    pub max_backoff: Duration,
    pub retry_on: Vec<ErrorClass>,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 5,
            base_backoff: Duration::from_millis(500),
            multiplier: 2.0,
            max_backoff: Duration::from_secs(30),
            retry_on: vec![ErrorClass::RateLimited, ErrorClass::ServerError, ErrorClass::Timeout],
        }
    }
}

impl RetryPolicy {
    /// One attempt, no retries.
    pub fn none() -> Self {
        Self {
            max_attempts: 1,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.max_attempts < 1 {
            return Err("max_attempts must be at least 1".into());
        }
        if !(self.multiplier > 1.0 && self.multiplier.is_finite()) {
            return Err("backoff multiplier must be greater than 1".into());
        }
        Ok(())
    }

    /// Wait after failed attempt `attempt` (1-based): base × multiplier^(attempt−1),
    /// capped at `max_backoff`.
    pub fn backoff(&self, attempt: u32) -> Duration {
        let exponent = attempt.saturating_sub(1).min(1024) as i32;
        let secs = self.base_backoff.as_secs_f64() * self.multiplier.powi(exponent);
        let cap = self.max_backoff.as_secs_f64();
        if !secs.is_finite() || secs >= cap {
            self.max_backoff
        } else {
            Duration::from_secs_f64(secs)
        }
    }

    pub fn retries(&self, error: &BackendError) -> bool {
        let class = error.class();
        class != ErrorClass::Fatal && self.retry_on.contains(&class)
    }
}

mod millis {
    use std::time::Duration;

    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(value: &Duration, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_u64(value.as_millis() as u64)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(deserializer: D) -> Result<Duration, D::Error> {
        Ok(Duration::from_millis(u64::deserialize(deserializer)?))
    }
}

/// Time source used for backoff and rate limiting.
pub trait Clock: Send + Sync {
    /// Time elapsed since the clock's origin.
    fn now(&self) -> Duration;
    fn sleep(&self, duration: Duration);
}

pub struct SystemClock {
    origin: Instant,
}

impl Default for SystemClock {
    fn default() -> Self {
        Self {
            origin: Instant::now(),
        }
    }
}

impl Clock for SystemClock {
    fn now(&self) -> Duration {
        self.origin.elapsed()
    }

    fn sleep(&self, duration: Duration) {
        std::thread::sleep(duration);
    }
}

/// Clock whose `sleep` advances time instantly; records every sleep.
#[derive(Default)]
pub struct VirtualClock {
    state: Mutex<(Duration, Vec<Duration>)>,
}

impl VirtualClock {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn sleeps(&self) -> Vec<Duration> {
        self.state.lock().expect("clock lock").1.clone()
    }

    pub fn advance(&self, duration: Duration) {
        self.state.lock().expect("clock lock").0 += duration;
    }
}

impl Clock for VirtualClock {
    fn now(&self) -> Duration {
        self.state.lock().expect("clock lock").0
    }

    fn sleep(&self, duration: Duration) {
        let mut state = self.state.lock().expect("clock lock");
        state.0 += duration;
        state.1.push(duration);
    }
}

#[derive(Default)]
struct LimiterState {
    starts: VecDeque<Duration>,
    in_flight: usize,
    peak_in_flight: usize,
}

/// Sliding-window request limiter with an in-flight bound.
pub struct RateLimiter {
    max_per_interval: Option<usize>,
    interval: Duration,
    max_in_flight: Option<usize>,
    state: Mutex<LimiterState>,
    released: Condvar,
}

/// Held while a request is in flight.
pub struct Permit<'a> {
    limiter: &'a RateLimiter,
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        let mut state = self.limiter.state.lock().expect("limiter lock");
        state.in_flight -= 1;
        self.limiter.released.notify_one();
    }
}

impl RateLimiter {
    /// `max_per_interval` requests may start in any window of `interval`;
    /// at most `max_in_flight` may run at once. `None` means unbounded.
    pub fn new(max_per_interval: Option<usize>, interval: Duration, max_in_flight: Option<usize>) -> Self {
        Self {
            max_per_interval: max_per_interval.map(|n| n.max(1)),
            interval,
            max_in_flight: max_in_flight.map(|n| n.max(1)),
            state: Mutex::new(LimiterState::default()),
            released: Condvar::new(),
        }
    }

    pub fn unlimited() -> Self {
        Self::new(None, Duration::from_secs(1), None)
    }

    /// Largest number of simultaneously held permits so far.
    pub fn peak_in_flight(&self) -> usize {
        self.state.lock().expect("limiter lock").peak_in_flight
    }

    pub fn acquire(&self, clock: &dyn Clock) -> Permit<'_> {
        loop {
            let mut state = self.state.lock().expect("limiter lock");
            if let Some(max) = self.max_in_flight {
                while state.in_flight >= max {
                    state = self.released.wait(state).expect("limiter lock");
                }
            }
            let now = clock.now();
            while state
                .starts
                .front()
                .is_some_and(|start| *start + self.interval <= now)
            {
                state.starts.pop_front();
            }
            let wait = match self.max_per_interval {
                Some(max) if state.starts.len() >= max => {
                    let oldest = *state.starts.front().expect("window is full");
                    oldest + self.interval - now
                }
                _ => {
                    if self.max_per_interval.is_some() {
                        state.starts.push_back(now);
                    }
                    state.in_flight += 1;
                    state.peak_in_flight = state.peak_in_flight.max(state.in_flight);
                    return Permit { limiter: self };
                }
            };
            drop(state);
            clock.sleep(wait);
        }
    }
}

/// Sends `request` under the limiter, retrying retryable failures with
/// exponential backoff. Non-retryable errors surface on the attempt that
/// produced them; exhausted retries carry the attempt history.
pub fn execute_with_policy(
    backend: &dyn Backend,
    request: &ChatRequest,
    policy: &RetryPolicy,
    limiter: &RateLimiter,
    clock: &dyn Clock,
) -> Result<ChatResponse, BackendError> {
    let mut history = Vec::new();
    let max_attempts = policy.max_attempts.max(1);
    for attempt in 1..=max_attempts {
        let result = {
            let _permit = limiter.acquire(clock);
            backend.complete(request)
        };
        let error = match result {
            Ok(response) => return Ok(response),
            Err(error) => error,
        };
        if !policy.retries(&error) {
            return Err(error);
        }
        history.push(format!("attempt {attempt}: {error}"));
        if attempt == max_attempts {
            return Err(BackendError::RetriesExhausted {
                history,
                last: Box::new(error),
            });
        }
        let wait = policy.backoff(attempt);
        log::warn!("{error}; retrying in {wait:?}");
        clock.sleep(wait);
    }
    unreachable!("loop returns on the last attempt")
}

/// A backend wrapped with retry policy and rate limiting.
pub struct PolicyBackend<B> {
    inner: B,
    policy: RetryPolicy,
    limiter: Arc<RateLimiter>,
    clock: Arc<dyn Clock>,
}

impl<B: Backend> PolicyBackend<B> {
    pub fn new(inner: B, policy: RetryPolicy, limiter: Arc<RateLimiter>, clock: Arc<dyn Clock>) -> Self {
        Self {
            inner,
            policy,
            limiter,
            clock,
        }
    }
}

impl<B: Backend> Backend for PolicyBackend<B> {
    fn id(&self) -> String {
        self.inner.id()
    }

    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError> {
        execute_with_policy(&self.inner, request, &self.policy, &self.limiter, self.clock.as_ref())
    }
}
