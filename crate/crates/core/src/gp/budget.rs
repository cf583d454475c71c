use std::time::Instant;

use serde::{Deserialize, Serialize};

/// Row evaluations per second used to turn a time budget into a
/// deterministic amount of work; calibrated on a single core.
pub const NOMINAL_ROW_EVALS_PER_SECOND: f64 = 1.0e8;

/// Fixed per-evaluation cost, in rows, charged on top of the row count.
pub const EVAL_OVERHEAD_ROWS: u64 = 32;

/// Search budget. `Work` counts single-row expression evaluations and gives
/// results that do not depend on machine speed or thread count.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Budget {
    Work(u64),
    WallClock { seconds: f64 },
}

impl Budget {
    /// Deterministic budget equivalent to `seconds` at the nominal rate.
    pub fn nominal_seconds(seconds: f64) -> Budget {
        Budget::Work((seconds.max(0.0) * NOMINAL_ROW_EVALS_PER_SECOND).round() as u64)
    }

    pub fn is_positive(&self) -> bool {
        match *self {
            Budget::Work(w) => w > 0,
            Budget::WallClock { seconds } => seconds > 0.0,
        }
    }
}

/// Tracks consumption of a [`Budget`].
#[derive(Debug, Clone)]
pub struct WorkMeter {
    budget: Budget,
    used: u64,
    start: Instant,
}

impl WorkMeter {
    pub fn new(budget: Budget) -> Self {
        WorkMeter { budget, used: 0, start: Instant::now() }
    }

    pub fn charge(&mut self, units: u64) {
        self.used = self.used.saturating_add(units);
    }

    pub fn used(&self) -> u64 {
        self.used
    }

    pub fn exhausted(&self) -> bool {
        match self.budget {
            Budget::Work(w) => self.used >= w,
            Budget::WallClock { seconds } => self.start.elapsed().as_secs_f64() >= seconds,
        }
    }

    /// Whether `units` more work fits; wall-clock budgets only check expiry.
    pub fn affords(&self, units: u64) -> bool {
        match self.budget {
            Budget::Work(w) => self.used.saturating_add(units) <= w,
            Budget::WallClock { .. } => !self.exhausted(),
        }
    }
}
