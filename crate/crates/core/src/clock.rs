//! Injectable time source. The engine reads wall time only through this.

use std::sync::Mutex;
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use chrono::{DateTime, SecondsFormat, Utc};

pub trait Clock: Send + Sync {
    fn now_ms(&self) -> i64;

    /// Informs the clock that `ms` of simulated work has elapsed. Real clocks
    /// ignore this; the fixed clock moves forward by it.
    fn advance(&self, _ms: f64) {}

    fn sleep(&self, ms: u64);
}

#[derive(Debug, Default, Clone, Copy)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now_ms(&self) -> i64 {
        SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_millis() as i64)
            .unwrap_or(0)
    }

    fn sleep(&self, ms: u64) {
        std::thread::sleep(Duration::from_millis(ms));
    }
}

/// Starts at a fixed epoch and moves only when told to.
#[derive(Debug)]
pub struct FixedClock {
    now: Mutex<f64>,
}

impl FixedClock {
    pub fn new(epoch_ms: i64) -> Self {
        Self {
            now: Mutex::new(epoch_ms as f64),
        }
    }
}

impl Clock for FixedClock {
    fn now_ms(&self) -> i64 {
        *self.now.lock().unwrap_or_else(|p| p.into_inner()) as i64
    }

    fn advance(&self, ms: f64) {
        if ms > 0.0 {
            *self.now.lock().unwrap_or_else(|p| p.into_inner()) += ms;
        }
    }

    fn sleep(&self, ms: u64) {
        self.advance(ms as f64);
    }
}

/// RFC 3339 rendering with millisecond precision, UTC.
pub fn rfc3339(ms: i64) -> String {
    DateTime::<Utc>::from_timestamp_millis(ms)
        .unwrap_or_default()
        .to_rfc3339_opts(SecondsFormat::Millis, true)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixed_clock_moves_only_on_advance() {
        let c = FixedClock::new(1_700_000_000_000);
        assert_eq!(c.now_ms(), c.now_ms());
        c.advance(1500.0);
        assert_eq!(c.now_ms(), 1_700_000_001_500);
        assert_eq!(rfc3339(0), "1970-01-01T00:00:00.000Z");
    }
}
