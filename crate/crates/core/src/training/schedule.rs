use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Linear warmup over the first `warmup_iterations`, then constant.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub lr_base: f64,
    pub warmup_iterations: usize,
    pub horizon: usize,
}

impl LrSchedule {
    pub const WARMUP_ITERATIONS: usize = 10;

    pub fn new(lr_base: f64, horizon: usize) -> Self {
        Self {
            lr_base,
            warmup_iterations: Self::WARMUP_ITERATIONS,
            horizon,
        }
    }
}

/// Learning rate of iteration `t` (1-based).
pub fn learning_rate(t: usize, sched: &LrSchedule) -> Result<f64> {
    if t == 0 || t > sched.horizon {
        return Err(Error::Range {
            t,
            horizon: sched.horizon,
        });
    }
    if t <= sched.warmup_iterations {
        Ok(sched.lr_base * t as f64 / sched.warmup_iterations as f64)
    } else {
        Ok(sched.lr_base)
    }
}
