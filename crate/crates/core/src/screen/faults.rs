use serde::{Deserialize, Serialize};

use super::ScreenError;
use crate::mix_seed;

/// Seeded fault injection. Every decision is a pure function of the seed
/// and the thing being decided about, so runs replay exactly.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FaultPlan {
    /// Chance that a library record reads as corrupt.
    pub record_corruption_rate: f64,
    /// Chance per job attempt that one of its ranks dies mid-evaluation.
    pub rank_failure_rate: f64,
    /// Chance per job attempt that the job dies after gathering.
    pub job_failure_rate: f64,
    pub seed: u64,
}

fn unit(h: u64) -> f64 {
    (h >> 11) as f64 / (1u64 << 53) as f64
}

impl FaultPlan {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn validate(&self) -> Result<(), ScreenError> {
        for (name, p) in [("record corruption", self.record_corruption_rate), ("rank failure", self.rank_failure_rate), ("job failure", self.job_failure_rate)]
        {
            if !(0.0..=1.0).contains(&p) {
                return Err(ScreenError::Config(format!("{name} rate {p} outside [0, 1]")));
            }
        }
        Ok(())
    }

    pub fn record_corrupt(&self, index: usize) -> bool {
        self.record_corruption_rate > 0.0 && unit(mix_seed(mix_seed(self.seed, 1), index as u64)) < self.record_corruption_rate
    }

    /// The rank that dies on this attempt, if any.
    pub fn failing_rank(&self, job_id: usize, attempt: u32, ranks: usize) -> Option<usize> {
        let h = mix_seed(mix_seed(mix_seed(self.seed, 2), job_id as u64), attempt as u64);
        (self.rank_failure_rate > 0.0 && unit(h) < self.rank_failure_rate).then(|| (mix_seed(h, 7) % ranks as u64) as usize)
    }

    pub fn job_fails(&self, job_id: usize, attempt: u32) -> bool {
        let h = mix_seed(mix_seed(mix_seed(self.seed, 3), job_id as u64), attempt as u64);
        self.job_failure_rate > 0.0 && unit(h) < self.job_failure_rate
    }
}
