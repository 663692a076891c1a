//! Sliding-window request limiter and the clock it runs on.

use std::collections::VecDeque;
use std::sync::Mutex;
use std::time::{Duration, Instant};

const WINDOW: Duration = Duration::from_secs(60);

/// Time source used for rate limiting and retry backoff.
pub trait Clock: Send + Sync {
    /// Monotonic time since an arbitrary origin.
    fn now(&self) -> Duration;
    fn sleep(&self, d: Duration);
}

pub struct SystemClock {
    origin: Instant,
}

impl Default for SystemClock {
    fn default() -> Self {
        Self { origin: Instant::now() }
    }
}

impl Clock for SystemClock {
    fn now(&self) -> Duration {
        self.origin.elapsed()
    }

    fn sleep(&self, d: Duration) {
        std::thread::sleep(d);
    }
}

/// Clock whose `sleep` advances time instantly. Tests use it to exercise
/// backoff and rate limits without waiting.
#[derive(Default)]
pub struct VirtualClock {
    now: Mutex<Duration>,
    slept: Mutex<Vec<Duration>>,
}

impl VirtualClock {
    pub fn advance(&self, d: Duration) {
        *self.now.lock().unwrap() += d;
    }

    /// Every sleep requested so far, in order.
    pub fn sleeps(&self) -> Vec<Duration> {
        self.slept.lock().unwrap().clone()
    }
}

impl Clock for VirtualClock {
    fn now(&self) -> Duration {
        *self.now.lock().unwrap()
    }

    fn sleep(&self, d: Duration) {
        self.slept.lock().unwrap().push(d);
        self.advance(d);
    }
}

/// Admits at most `per_minute` acquisitions in any 60-second window.
///
/// Acquisition is serialized: the lock is held while waiting, so callers
/// are admitted in arrival order.
pub struct RateLimiter {
    per_minute: usize,
    granted: Mutex<VecDeque<Duration>>,
}

impl RateLimiter {
    pub fn new(per_minute: u32) -> Self {
        Self { per_minute: per_minute.max(1) as usize, granted: Mutex::new(VecDeque::new()) }
    }

    /// Blocks until a slot is free and returns the grant time.
    pub fn acquire(&self, clock: &dyn Clock) -> Duration {
        let mut granted = self.granted.lock().unwrap_or_else(|e| e.into_inner());
        loop {
            let now = clock.now();
            while granted.front().is_some_and(|&t| now >= t + WINDOW) {
                granted.pop_front();
            }
            if granted.len() < self.per_minute {
                granted.push_back(now);
                return now;
            }
            let oldest = *granted.front().expect("window is full");
            clock.sleep(oldest + WINDOW - now);
        }
    }
}
