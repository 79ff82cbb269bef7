//! Per-host request spacing.

use std::collections::HashMap;
use std::sync::Mutex;
use std::time::{Duration, Instant};

/// Hands out request slots so that two requests to the same host start at
/// least `delay` apart. Slots are reserved under the lock and slept on
/// outside it, so waiting on one host never blocks another.
pub struct HostGovernor {
    delay: Duration,
    next: Mutex<HashMap<String, Instant>>,
}

impl HostGovernor {
    pub fn new(delay: Duration) -> Self {
        HostGovernor { delay, next: Mutex::new(HashMap::new()) }
    }

    /// Instant at which the caller may issue its request to `host`.
    pub fn reserve(&self, host: &str) -> Instant {
        let host = host.to_ascii_lowercase();
        let now = Instant::now();
        let mut next = self.next.lock().expect("governor lock");
        let slot = next.get(&host).map_or(now, |t| (*t).max(now));
        next.insert(host, slot + self.delay);
        slot
    }

    /// Block until `host` may be contacted again.
    pub fn wait(&self, host: &str) {
        if self.delay.is_zero() {
            return;
        }
        let slot = self.reserve(host);
        let now = Instant::now();
        if slot > now {
            std::thread::sleep(slot - now);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slots_are_spaced_per_host() {
        let g = HostGovernor::new(Duration::from_millis(100));
        let a = g.reserve("a.test");
        let b = g.reserve("a.test");
        let c = g.reserve("b.test");
        assert!(b - a >= Duration::from_millis(100));
        assert!(c < b);
    }
}
