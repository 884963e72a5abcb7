//! Virtual-screening workbench: voxel and graph scoring heads with late,
//! mid-level and coherent fusion, population-based bandit tuning, a
//! fault-tolerant batch scoring harness and evaluation metrics.

pub mod autodiff;
pub mod data;
pub mod eval;
pub mod hpo;
pub mod models;
mod scalar;
pub mod screen;

pub use scalar::Scalar;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub type FusionModel64 = models::FusionModel<f64>;
pub type Trainer64 = models::Trainer<f64>;
pub type ParamStore64 = autodiff::ParamStore<f64>;
pub type Graph64 = autodiff::Graph<f64>;
pub type DenseArray64 = autodiff::DenseArray<f64>;
pub type Checkpoint64 = autodiff::checkpoint::Checkpoint<f64>;

/// Deterministic 64-bit mix of two values (SplitMix64 finalizer).
pub(crate) fn mix_seed(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_add(0x9E37_79B9_7F4A_7C15).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
