use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Request-level network emulation: every request waits `per_request_delay`
/// (one emulated round trip) before its status line, and bodies are paced at
/// `per_megabyte_delay` per MiB.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct LatencyModel {
    pub per_request_delay: Duration,
    pub per_megabyte_delay: Duration,
    /// Half-width of a uniform jitter added to `per_request_delay`.
    pub jitter: Duration,
    pub seed: u64,
}

impl LatencyModel {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn fixed(per_request: Duration) -> Self {
        LatencyModel {
            per_request_delay: per_request,
            ..Self::default()
        }
    }

    /// Delay before answering request number `request`. Depends only on
    /// `(seed, request)`, never on thread scheduling.
    pub fn request_delay(&self, request: u64) -> Duration {
        if self.jitter.is_zero() {
            return self.per_request_delay;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ request.wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let half = self.jitter.as_nanos() as i128;
        let offset = rng.gen_range(-half..=half);
        let base = self.per_request_delay.as_nanos() as i128;
        Duration::from_nanos((base + offset).max(0) as u64)
    }

    pub fn body_delay(&self, bytes: u64) -> Duration {
        if self.per_megabyte_delay.is_zero() {
            return Duration::ZERO;
        }
        let nanos = self.per_megabyte_delay.as_nanos() * bytes as u128 / (1 << 20);
        Duration::from_nanos(nanos as u64)
    }
}
