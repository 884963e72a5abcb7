//! Synthetic protein-ligand complexes, featurization, augmentation and splits.

mod complex;
mod graph;
pub mod manifest;
mod pk;
mod split;
mod voxel;

pub use complex::{generate_complex, generate_dataset, planted_affinity, Atom, GenParams, LabelParams, Role, SyntheticComplex};
pub use graph::{build_graph, ComplexGraph, Edge, COVALENT_RANGE};
pub use pk::{pk_from_k, AffinityKind, AffinityLabel};
pub use split::{quintile_split, quintile_split_complexes, Split};
pub use voxel::{rotate_augment, rotate_quarter, voxelize, GridConfig, VoxelGrid};

use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("invalid parameter: {0}")]
    InvalidParams(String),
    #[error("binding constant must be positive, got {0}")]
    NonPositiveConstant(f64),
    #[error("dataset too small: {0}")]
    TooSmall(String),
    #[error("manifest: {0}")]
    Manifest(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Everything needed to turn a complex into network inputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureConfig {
    pub grid: GridConfig,
    pub covalent_threshold: f64,
    pub noncovalent_threshold: f64,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self { grid: GridConfig::default(), covalent_threshold: 2.24, noncovalent_threshold: 5.22 }
    }
}

/// One featurized complex.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub id: String,
    pub grid: VoxelGrid,
    pub graph: ComplexGraph,
    pub label: f64,
}

pub fn featurize(c: &SyntheticComplex, cfg: &FeatureConfig) -> Result<Sample, DataError> {
    Ok(Sample {
        id: c.complex_id.clone(),
        grid: voxelize(c, &cfg.grid)?,
        graph: build_graph(c, cfg.covalent_threshold, cfg.noncovalent_threshold, cfg.grid.box_size)?,
        label: c.label_pk,
    })
}
