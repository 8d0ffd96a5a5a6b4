use std::time::Duration;

use parking_lot::Mutex;

/// Records internal operation timings (excluding any CLI or mount-layer
/// overhead). The benchmark harness attaches one of these to a store and
/// reads back raw samples, so medians stay recomputable from samples.
#[derive(Debug, Default)]
pub struct OpTimings {
    samples: Mutex<Vec<(String, Duration)>>,
}

impl OpTimings {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&self, op: &str, elapsed: Duration) {
        self.samples.lock().push((op.to_string(), elapsed));
    }

    /// Drains all samples recorded so far.
    pub fn take(&self) -> Vec<(String, Duration)> {
        std::mem::take(&mut *self.samples.lock())
    }
}
