use std::collections::HashMap;
use std::sync::Mutex;

use super::{DpopError, FreshnessWindow};

/// Extra retention beyond the freshness window.
const TTL_MARGIN_SECS: i64 = 60;
const DEFAULT_CAPACITY: usize = 1 << 20;

/// Seen-`jti` set shared by every verification on one service instance.
///
/// `check_and_insert` is a single critical section, so two concurrent
/// presentations of the same `jti` cannot both succeed.
#[derive(Debug)]
pub struct ReplayCache {
    window: FreshnessWindow,
    capacity: usize,
    seen: Mutex<HashMap<String, i64>>,
}

impl Default for ReplayCache {
    fn default() -> Self {
        ReplayCache::new(FreshnessWindow::default(), DEFAULT_CAPACITY)
    }
}

impl ReplayCache {
    pub fn new(window: FreshnessWindow, capacity: usize) -> Self {
        ReplayCache {
            window,
            capacity: capacity.max(1),
            seen: Mutex::new(HashMap::new()),
        }
    }

    pub fn window(&self) -> FreshnessWindow {
        self.window
    }

    pub fn ttl_secs(&self) -> i64 {
        self.window.max_age_secs + TTL_MARGIN_SECS
    }

    pub fn len(&self) -> usize {
        self.seen.lock().expect("replay cache poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub(crate) fn check_and_insert(&self, jti: &str, now: i64) -> Result<(), DpopError> {
        let mut seen = self.seen.lock().expect("replay cache poisoned");
        if let Some(expiry) = seen.get(jti) {
            if *expiry > now {
                return Err(DpopError::ReplayedJti);
            }
        }
        if seen.len() >= self.capacity {
            // Expired entries would fail the freshness check anyway.
            seen.retain(|_, expiry| *expiry > now);
            if seen.len() >= self.capacity {
                return Err(DpopError::CacheFull);
            }
        }
        seen.insert(jti.to_string(), now + self.ttl_secs());
        Ok(())
    }
}
