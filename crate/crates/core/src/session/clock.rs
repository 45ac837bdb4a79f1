use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use chrono::{DateTime, Utc};

/// Wall-clock instants are for display; durations come from `monotonic`.
pub trait Clock: Send + Sync {
    fn wall(&self) -> DateTime<Utc>;
    /// Monotonic time since an arbitrary origin.
    fn monotonic(&self) -> Duration;
}

#[derive(Debug, Clone)]
pub struct SystemClock {
    origin: Instant,
}

impl Default for SystemClock {
    fn default() -> Self {
        SystemClock { origin: Instant::now() }
    }
}

impl Clock for SystemClock {
    fn wall(&self) -> DateTime<Utc> {
        Utc::now()
    }

    fn monotonic(&self) -> Duration {
        self.origin.elapsed()
    }
}

/// Clock advanced by hand; clones share the same time.
#[derive(Debug, Clone)]
pub struct ManualClock {
    inner: Arc<Mutex<(DateTime<Utc>, Duration)>>,
}

impl ManualClock {
    pub fn new(start: DateTime<Utc>) -> Self {
        ManualClock { inner: Arc::new(Mutex::new((start, Duration::ZERO))) }
    }

    pub fn advance(&self, d: Duration) {
        let mut g = self.inner.lock().expect("clock lock");
        g.0 += chrono::Duration::from_std(d).expect("duration in range");
        g.1 += d;
    }

    /// Moves only the wall clock, as an NTP adjustment would.
    pub fn adjust_wall(&self, by: chrono::Duration) {
        self.inner.lock().expect("clock lock").0 += by;
    }
}

impl Clock for ManualClock {
    fn wall(&self) -> DateTime<Utc> {
        self.inner.lock().expect("clock lock").0
    }

    fn monotonic(&self) -> Duration {
        self.inner.lock().expect("clock lock").1
    }
}
