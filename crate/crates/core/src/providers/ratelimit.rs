use std::sync::Mutex;
use std::time::{Duration, Instant};

/// Token bucket shared by all callers of one provider.
///
/// Reservations may drive the balance negative; each caller then waits until
/// its token would have been refilled, which queues callers in arrival order.
#[derive(Debug)]
pub struct RateLimiter {
    capacity: f64,
    refill_per_sec: f64,
    state: Mutex<Bucket>,
    origin: Instant,
}

#[derive(Debug)]
struct Bucket {
    tokens: f64,
    last: f64,
}

impl RateLimiter {
    /// Allows `per_minute` requests per minute with a burst of the same size.
    pub fn per_minute(per_minute: u32) -> Self {
        Self::with_burst(per_minute, per_minute.max(1))
    }

    pub fn with_burst(per_minute: u32, burst: u32) -> Self {
        let capacity = burst.max(1) as f64;
        RateLimiter {
            capacity,
            refill_per_sec: per_minute.max(1) as f64 / 60.0,
            state: Mutex::new(Bucket {
                tokens: capacity,
                last: 0.0,
            }),
            origin: Instant::now(),
        }
    }

    /// Takes one token at time `now` (seconds on the limiter's clock) and
    /// returns how long the caller must wait before sending.
    pub fn reserve_at(&self, now: f64) -> Duration {
        let mut b = self.state.lock().expect("rate limiter poisoned");
        let now = now.max(b.last);
        b.tokens = (b.tokens + (now - b.last) * self.refill_per_sec).min(self.capacity);
        b.last = now;
        b.tokens -= 1.0;
        if b.tokens >= 0.0 {
            Duration::ZERO
        } else {
            Duration::from_secs_f64(-b.tokens / self.refill_per_sec)
        }
    }

    /// Blocks until a request may be sent.
    pub fn acquire(&self) {
        let wait = self.reserve_at(self.origin.elapsed().as_secs_f64());
        if !wait.is_zero() {
            std::thread::sleep(wait);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sixty_per_minute_for_120_requests_spans_a_minute() {
        let limiter = RateLimiter::per_minute(60);
        let finish = (0..120).map(|_| limiter.reserve_at(0.0)).max().unwrap();
        assert!(finish >= Duration::from_secs_f64(59.9), "{finish:?}");
        assert!(finish <= Duration::from_secs_f64(60.1), "{finish:?}");
    }

    #[test]
    fn steady_callers_never_wait() {
        let limiter = RateLimiter::with_burst(60, 1);
        for i in 0..10 {
            assert_eq!(limiter.reserve_at(i as f64), Duration::ZERO);
        }
    }

    #[test]
    fn acquire_blocks_in_real_time() {
        let limiter = RateLimiter::with_burst(600, 1);
        let start = Instant::now();
        for _ in 0..5 {
            limiter.acquire();
        }
        assert!(start.elapsed() >= Duration::from_millis(390));
    }
}
