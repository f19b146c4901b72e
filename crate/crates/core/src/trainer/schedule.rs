use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Linear warmup, constant hold, exponential decay, then constant.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub warmup_start: f64,
    pub peak: f64,
    pub warmup_steps: u64,
    pub hold_steps: u64,
    pub decay_end_step: u64,
    pub final_lr: f64,
}

impl LrSchedule {
    /// 1e-7 → 5e-4 over 3K steps, hold for 35K, decay to 1e-5 at 75K.
    pub fn reference() -> Self {
        Self {
            warmup_start: 1e-7,
            peak: 5e-4,
            warmup_steps: 3_000,
            hold_steps: 35_000,
            decay_end_step: 75_000,
            final_lr: 1e-5,
        }
    }

    pub fn hold_end(&self) -> u64 {
        self.warmup_steps + self.hold_steps
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [self.warmup_start, self.peak, self.final_lr].iter().all(|v| *v > 0.0 && v.is_finite());
        if !positive {
            return Err(invalid!("learning rates must be positive and finite"));
        }
        if !(self.warmup_start < self.peak && self.final_lr < self.peak) {
            return Err(invalid!("warmup_start and final_lr must both lie below peak"));
        }
        if !(self.warmup_steps < self.hold_end() && self.hold_end() < self.decay_end_step) {
            return Err(invalid!("need warmup_steps < warmup_steps + hold_steps < decay_end_step"));
        }
        Ok(())
    }

    /// The schedule at a real-valued step.
    pub fn lr_at(&self, step: f64) -> f64 {
        let warm = self.warmup_steps as f64;
        let hold_end = self.hold_end() as f64;
        let end = self.decay_end_step as f64;
        if step < warm {
            self.warmup_start + (self.peak - self.warmup_start) * (step.max(0.0) / warm)
        } else if step <= hold_end {
            self.peak
        } else if step < end {
            self.peak * (self.final_lr / self.peak).powf((step - hold_end) / (end - hold_end))
        } else {
            self.final_lr
        }
    }
}

pub fn lr_at_step(schedule: &LrSchedule, step: u64) -> f64 {
    schedule.lr_at(step as f64)
}
