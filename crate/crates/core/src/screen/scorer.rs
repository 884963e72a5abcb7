use std::time::Duration;

use super::library::{PosePayload, PoseRecord};
use crate::data::{featurize, generate_complex, GenParams, Sample};
use crate::mix_seed;
use crate::models::FusionModel;

/// A frozen model shared read-only by all ranks. `prepare` runs in the
/// loader threads, `predict_batch` on the rank's own thread.
pub trait PoseScorer: Sync {
    type Item: Send;

    fn prepare(&self, record: &PoseRecord) -> Result<Self::Item, String>;

    /// One result per item, in order; an error affects only its item.
    fn predict_batch(&self, items: &[Self::Item]) -> Vec<Result<f64, String>>;
}

/// Scores poses with a trained model. Seed payloads are regenerated with
/// `gen`.
pub struct FusionScorer {
    pub model: FusionModel<f64>,
    pub gen: GenParams,
}

impl PoseScorer for FusionScorer {
    type Item = Sample;

    fn prepare(&self, record: &PoseRecord) -> Result<Sample, String> {
        let features = &self.model.config().features;
        let sample = match &record.payload {
            PosePayload::Seed(s) => featurize(&generate_complex(*s, &self.gen).map_err(|e| e.to_string())?, features),
            PosePayload::Complex(c) => featurize(c, features),
        }
        .map_err(|e| e.to_string())?;
        self.model.validate_sample(&sample).map_err(|e| e.to_string())?;
        Ok(sample)
    }

    fn predict_batch(&self, items: &[Sample]) -> Vec<Result<f64, String>> {
        self.model.predict_batch(items, items.len().max(1)).into_iter().map(|r| r.map_err(|e| e.to_string())).collect()
    }
}

/// Fixed-cost stand-in for an accelerator: each batch waits
/// `per_batch + n * per_pose` and returns a hash-derived pK in `[4, 10)`.
/// Waiting does not occupy a core, so concurrent ranks overlap the way
/// devices would.
#[derive(Clone, Debug)]
pub struct SyntheticCostScorer {
    pub per_pose: Duration,
    pub per_batch: Duration,
}

impl SyntheticCostScorer {
    pub fn per_pose(per_pose: Duration) -> Self {
        Self { per_pose, per_batch: Duration::ZERO }
    }
}

fn hash_str(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ b as u64).wrapping_mul(0x100_0000_01b3))
}

impl PoseScorer for SyntheticCostScorer {
    type Item = (String, String, u32);

    fn prepare(&self, r: &PoseRecord) -> Result<Self::Item, String> {
        Ok(r.key())
    }

    fn predict_batch(&self, items: &[Self::Item]) -> Vec<Result<f64, String>> {
        let wait = self.per_batch + self.per_pose * items.len() as u32;
        if !wait.is_zero() {
            std::thread::sleep(wait);
        }
        items
            .iter()
            .map(|(c, t, p)| {
                let h = mix_seed(mix_seed(hash_str(c), hash_str(t)), *p as u64);
                Ok(4.0 + 6.0 * ((h >> 11) as f64 / (1u64 << 53) as f64))
            })
            .collect()
    }
}
