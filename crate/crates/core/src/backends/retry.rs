use std::time::Duration;

use rand::Rng;
use serde::{Deserialize, Serialize};
use tracing::debug;

use crate::error::BackendError;

/// Exponential backoff with jitter. Only transient failures are retried.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay_ms: u64,
    pub max_delay_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 3,
            base_delay_ms: 500,
            max_delay_ms: 8_000,
        }
    }
}

impl RetryPolicy {
    /// No sleeping between attempts; for mocks and tests.
    pub fn immediate(max_attempts: u32) -> Self {
        Self {
            max_attempts,
            base_delay_ms: 0,
            max_delay_ms: 0,
        }
    }

    fn delay(&self, attempt: u32) -> Duration {
        if self.base_delay_ms == 0 {
            return Duration::ZERO;
        }
        let exp = self.base_delay_ms.saturating_mul(1u64 << (attempt - 1).min(16));
        let capped = exp.min(self.max_delay_ms);
        let jitter = rand::rng().random_range(0..=capped / 4);
        Duration::from_millis(capped + jitter)
    }

    /// Runs `call` until it succeeds, fails permanently or runs out of
    /// attempts. Returns the value and the number of attempts used.
    pub fn run<T>(&self, mut call: impl FnMut() -> Result<T, BackendError>) -> Result<(T, u32), BackendError> {
        let max = self.max_attempts.max(1);
        let mut attempt = 0;
        loop {
            attempt += 1;
            match call() {
                Ok(v) => return Ok((v, attempt)),
                Err(BackendError::Config(c)) => return Err(BackendError::Config(c)),
                Err(e) if e.is_transient() && attempt < max => {
                    let d = self.delay(attempt);
                    debug!(attempt, delay_ms = d.as_millis() as u64, error = %e, "retrying backend call");
                    std::thread::sleep(d);
                }
                Err(e) => {
                    return Err(BackendError::Exhausted {
                        attempts: attempt,
                        last: e.to_string(),
                    })
                }
            }
        }
    }
}
