//! Voxel and graph scoring heads and the three ways of fusing them.

pub mod config;
mod fusion;
mod heads;
mod layers;
mod model;
mod train;

pub use config::{presets, Activation, FusionConfig, FusionMode, GraphHeadConfig, ModelConfig, TrainConfig, VoxelHeadConfig};
pub use model::{FusionModel, Output, TrainedFlags};
pub use train::{train, EpochRecord, TrainMode, TrainReport, Trainer};

use crate::autodiff::AutodiffError;
use crate::data::DataError;
use crate::Scalar;

/// Unweighted mean of two head predictions. Symmetric in its arguments.
pub fn late_fusion_predict<T: Scalar>(p_voxel: T, p_graph: T) -> T {
    (p_voxel + p_graph) / T::lit(2.0)
}

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("latent mismatch for {name}: expected {expected:?}, got {got:?}")]
    LatentMismatch { name: String, expected: Vec<usize>, got: Vec<usize> },
    #[error("{0} requires trained voxel and graph heads")]
    MissingHeads(&'static str),
    #[error("late fusion has no trainable fusion block")]
    LateTraining,
    #[error("item {id}: {reason}")]
    Item { id: String, reason: String },
    #[error("empty {0} set")]
    Empty(&'static str),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[cfg(test)]
mod tests {
    use super::late_fusion_predict;

    #[test]
    fn late_fusion_is_the_mean() {
        assert_eq!(late_fusion_predict(7.0, 8.0), 7.5);
        assert_eq!(late_fusion_predict(6.25_f64, 6.25), 6.25);
        assert_eq!(late_fusion_predict(3.0_f32, 9.0), 6.0);
    }

    proptest::proptest! {
        #[test]
        fn late_fusion_symmetric(a in -20.0..20.0_f64, b in -20.0..20.0_f64) {
            proptest::prop_assert_eq!(late_fusion_predict(a, b), late_fusion_predict(b, a));
            proptest::prop_assert!((late_fusion_predict(a, b) - (a + b) / 2.0).abs() <= 1e-15);
        }
    }
}
