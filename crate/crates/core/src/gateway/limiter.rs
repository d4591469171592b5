use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

/// Token-bucket settings for one backend.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateLimit {
    pub requests_per_second: f64,
    #[serde(default = "default_burst")]
    pub burst: u32,
}

fn default_burst() -> u32 {
    1
}

/// Shared token bucket. `acquire` blocks the calling thread until a token
/// is available.
#[derive(Debug)]
pub struct TokenBucket {
    rate: f64,
    capacity: f64,
    state: Mutex<(f64, Instant)>,
}

impl TokenBucket {
    pub fn new(limit: RateLimit) -> Self {
        let capacity = f64::from(limit.burst.max(1));
        Self {
            rate: limit.requests_per_second.max(f64::MIN_POSITIVE),
            capacity,
            state: Mutex::new((capacity, Instant::now())),
        }
    }

    pub fn acquire(&self) {
        loop {
            let wait = {
                let mut state = self.state.lock().expect("limiter lock");
                let (tokens, last) = &mut *state;
                let now = Instant::now();
                *tokens = (*tokens + now.duration_since(*last).as_secs_f64() * self.rate).min(self.capacity);
                *last = now;
                if *tokens >= 1.0 {
                    *tokens -= 1.0;
                    return;
                }
                Duration::from_secs_f64((1.0 - *tokens) / self.rate)
            };
            std::thread::sleep(wait);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn burst_is_free_then_throttled() {
        let bucket = TokenBucket::new(RateLimit {
            requests_per_second: 50.0,
            burst: 3,
        });
        let start = Instant::now();
        for _ in 0..3 {
            bucket.acquire();
        }
        assert!(start.elapsed() < Duration::from_millis(15));
        for _ in 0..5 {
            bucket.acquire();
        }
        // five more tokens at 50/s need roughly 100 ms
        assert!(start.elapsed() >= Duration::from_millis(80));
    }

    #[test]
    fn shared_across_threads() {
        let bucket = std::sync::Arc::new(TokenBucket::new(RateLimit {
            requests_per_second: 200.0,
            burst: 1,
        }));
        let start = Instant::now();
        std::thread::scope(|s| {
            for _ in 0..4 {
                let b = bucket.clone();
                s.spawn(move || {
                    for _ in 0..5 {
                        b.acquire();
                    }
                });
            }
        });
        // 20 acquisitions, one free, 19 at 5 ms each
        assert!(start.elapsed() >= Duration::from_millis(85));
    }
}
