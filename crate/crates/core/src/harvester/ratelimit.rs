//! Sliding-window rate limiting over an injectable clock.

use std::collections::VecDeque;
use std::sync::{Arc, Mutex};
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

/// Requests allowed per window. Authenticated archive users get 30 per
/// minute, anonymous users 10.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RateLimitPolicy {
    pub max_requests: u32,
    pub window: Duration,
    pub authenticated: bool,
}

impl RateLimitPolicy {
    pub fn authenticated() -> Self {
        Self { max_requests: 30, window: Duration::from_secs(60), authenticated: true }
    }

    pub fn unauthenticated() -> Self {
        Self { max_requests: 10, window: Duration::from_secs(60), authenticated: false }
    }

    pub fn for_token(token: Option<&str>) -> Self {
        match token {
            Some(t) if !t.trim().is_empty() => Self::authenticated(),
            _ => Self::unauthenticated(),
        }
    }

    pub fn is_valid(&self) -> bool {
        self.max_requests > 0 && !self.window.is_zero()
    }
}

impl Default for RateLimitPolicy {
    fn default() -> Self {
        Self::authenticated()
    }
}

/// Grant history for one policy. Timestamps are offsets on a common clock.
#[derive(Debug, Clone)]
pub struct RateLimiter {
    policy: RateLimitPolicy,
    grants: VecDeque<Duration>,
    last: Option<Duration>,
}

impl RateLimiter {
    pub fn new(policy: RateLimitPolicy) -> Self {
        assert!(policy.is_valid(), "rate limit policy needs max_requests > 0 and a non-zero window");
        Self { policy, grants: VecDeque::with_capacity(policy.max_requests as usize), last: None }
    }

    pub fn policy(&self) -> RateLimitPolicy {
        self.policy
    }

    /// Reserves the earliest grant time `≥ now` (and ≥ every earlier grant)
    /// such that no window of length `policy.window` holds more than
    /// `max_requests` grants.
    pub fn acquire_permit(&mut self, now: Duration) -> Duration {
        let mut grant = self.last.map_or(now, |l| l.max(now));
        if self.grants.len() == self.policy.max_requests as usize {
            let oldest = self.grants.pop_front().expect("full history");
            grant = grant.max(oldest + self.policy.window);
        }
        self.grants.push_back(grant);
        self.last = Some(grant);
        grant
    }
}

/// Time source: offsets since the Unix epoch.
pub trait Clock: Send + Sync {
    fn now(&self) -> Duration;
    fn sleep_until(&self, t: Duration);
}

#[derive(Debug, Default, Clone, Copy)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> Duration {
        SystemTime::now().duration_since(UNIX_EPOCH).unwrap_or_default()
    }

    fn sleep_until(&self, t: Duration) {
        let now = self.now();
        if t > now {
            std::thread::sleep(t - now);
        }
    }
}

/// Virtual clock: sleeping advances time instantly.
#[derive(Debug, Default)]
pub struct SimClock {
    now: Mutex<Duration>,
}

impl SimClock {
    pub fn starting_at(t: Duration) -> Self {
        Self { now: Mutex::new(t) }
    }

    pub fn advance(&self, by: Duration) {
        *self.now.lock().expect("clock poisoned") += by;
    }
}

impl Clock for SimClock {
    fn now(&self) -> Duration {
        *self.now.lock().expect("clock poisoned")
    }

    fn sleep_until(&self, t: Duration) {
        let mut now = self.now.lock().expect("clock poisoned");
        if t > *now {
            *now = t;
        }
    }
}

/// Something that blocks until one more request may be sent.
pub trait PermitSource: Send + Sync {
    fn acquire(&self) -> Duration;
}

/// A limiter shared by every worker. Grants are reserved under one lock, so
/// they are totally ordered; the caller then waits outside the lock.
pub struct SharedLimiter {
    limiter: Mutex<RateLimiter>,
    clock: Arc<dyn Clock>,
    log: Mutex<Vec<Duration>>,
}

impl SharedLimiter {
    pub fn new(policy: RateLimitPolicy, clock: Arc<dyn Clock>) -> Self {
        Self { limiter: Mutex::new(RateLimiter::new(policy)), clock, log: Mutex::new(Vec::new()) }
    }

    pub fn clock(&self) -> &Arc<dyn Clock> {
        &self.clock
    }

    /// Every grant handed out so far, in grant order.
    pub fn grants(&self) -> Vec<Duration> {
        self.log.lock().expect("log poisoned").clone()
    }
}

impl PermitSource for SharedLimiter {
    fn acquire(&self) -> Duration {
        let grant = {
            let mut limiter = self.limiter.lock().expect("limiter poisoned");
            let grant = limiter.acquire_permit(self.clock.now());
            self.log.lock().expect("log poisoned").push(grant);
            grant
        };
        self.clock.sleep_until(grant);
        grant
    }
}

/// Largest number of grants inside any half-open window `[t, t + window)`,
/// checked at every grant as a window start.
pub fn max_in_any_window(grants: &[Duration], window: Duration) -> usize {
    let mut sorted = grants.to_vec();
    sorted.sort();
    let mut best = 0;
    let mut hi = 0;
    for lo in 0..sorted.len() {
        while hi < sorted.len() && sorted[hi] < sorted[lo] + window {
            hi += 1;
        }
        best = best.max(hi - lo);
    }
    best
}
