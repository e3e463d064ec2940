use std::sync::Arc;
use std::time::Duration;

use tracing::{debug, warn};

use super::{Narrator, NarratorError, NarratorRequest, NarratorResponse};

/// How the decorator waits between attempts. Tests swap in a recorder.
pub type Sleeper = Arc<dyn Fn(Duration) + Send + Sync>;

/// Delays between consecutive attempts: `base`, `2*base`, `4*base`, ...
pub fn backoff_schedule(base: Duration, max_attempts: u32) -> Vec<Duration> {
    (1..max_attempts)
        .map(|attempt| base.saturating_mul(1u32 << (attempt - 1).min(20)))
        .collect()
}

/// Retries retryable errors with exponential backoff.
pub struct Retrying<N> {
    inner: N,
    max_attempts: u32,
    base_backoff: Duration,
    sleeper: Sleeper,
}

pub fn with_retry<N: Narrator>(inner: N, max_attempts: u32, base_backoff: Duration) -> Retrying<N> {
    assert!(max_attempts >= 1, "max_attempts must be at least 1");
    Retrying {
        inner,
        max_attempts,
        base_backoff,
        sleeper: Arc::new(std::thread::sleep),
    }
}

impl<N> Retrying<N> {
    pub fn with_sleeper(mut self, sleeper: Sleeper) -> Self {
        self.sleeper = sleeper;
        self
    }

    pub fn inner(&self) -> &N {
        &self.inner
    }
}

impl<N: Narrator> Narrator for Retrying<N> {
    fn complete(&self, request: &NarratorRequest) -> Result<NarratorResponse, NarratorError> {
        let schedule = backoff_schedule(self.base_backoff, self.max_attempts);
        let mut attempt = 0;
        loop {
            attempt += 1;
            match self.inner.complete(request) {
                Ok(reply) => return Ok(reply),
                Err(err) if !err.is_retryable() => return Err(err),
                Err(err) if attempt >= self.max_attempts => {
                    warn!(kind = %request.kind, attempt, error = %err, "narrator retries exhausted");
                    return Err(NarratorError::Unavailable {
                        attempts: attempt,
                        last: err.to_string(),
                    });
                }
                Err(err) => {
                    let delay = schedule[(attempt - 1) as usize];
                    debug!(kind = %request.kind, attempt, delay_ms = delay.as_millis() as u64, error = %err, "retrying narrator call");
                    (self.sleeper)(delay);
                }
            }
        }
    }
}
