use serde::{Deserialize, Serialize};

use super::ModelError;
use crate::autodiff::{Op, OptimizerConfig, OptimizerKind};
use crate::data::FeatureConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    Relu,
    LeakyRelu,
    Selu,
}

impl Activation {
    pub fn op(self) -> Op {
        match self {
            Activation::Relu => Op::Relu,
            Activation::LeakyRelu => Op::LeakyRelu,
            Activation::Selu => Op::Selu,
        }
    }
}

/// Optimization settings for one training stage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub optimizer: OptimizerConfig,
    pub batch_size: usize,
    pub epochs: usize,
    /// Per-axis probability of a random quarter-turn of the voxel input.
    pub rotation_probability: f64,
}

impl TrainConfig {
    pub fn adam(learning_rate: f64, batch_size: usize, epochs: usize) -> Self {
        Self {
            optimizer: OptimizerConfig::new(OptimizerKind::Adam, learning_rate).expect("positive learning rate"),
            batch_size,
            epochs,
            rotation_probability: 0.1,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        self.optimizer.validate()?;
        if self.batch_size == 0 {
            return Err(ModelError::Config("batch size must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.rotation_probability) {
            return Err(ModelError::Config("rotation probability outside [0, 1]".into()));
        }
        Ok(())
    }
}

fn check_rate(name: &str, r: f64) -> Result<(), ModelError> {
    if !(0.0..1.0).contains(&r) {
        return Err(ModelError::Config(format!("{name} dropout {r} outside [0, 1)")));
    }
    Ok(())
}

/// Voxel head: two conv pairs (kernel_1 then kernel_2) with pooling, then
/// `dense_nodes -> dense_nodes / 2 -> 1`. The `dense_nodes / 2` activation
/// is the latent passed to fusion.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VoxelHeadConfig {
    pub conv_filters_1: usize,
    pub conv_filters_2: usize,
    pub kernel_1: usize,
    pub kernel_2: usize,
    pub dense_nodes: usize,
    /// Adds the first conv output to the second.
    pub residual_1: bool,
    /// Adds the third conv output to the fourth.
    pub residual_2: bool,
    pub batch_norm: bool,
    pub dropout_early: f64,
    pub dropout_mid: f64,
    pub train: TrainConfig,
}

impl VoxelHeadConfig {
    pub fn latent_width(&self) -> usize {
        (self.dense_nodes / 2).max(1)
    }

    pub fn validate(&self, features: &FeatureConfig) -> Result<(), ModelError> {
        if self.conv_filters_1 == 0 || self.conv_filters_2 == 0 || self.dense_nodes < 2 {
            return Err(ModelError::Config("voxel filter counts must be positive and dense nodes at least 2".into()));
        }
        for k in [self.kernel_1, self.kernel_2] {
            if k % 2 == 0 {
                return Err(ModelError::Config(format!("conv kernel {k} must be odd")));
            }
        }
        if features.grid.extent % 4 != 0 {
            return Err(ModelError::Config(format!("grid extent {} must be divisible by 4", features.grid.extent)));
        }
        check_rate("early", self.dropout_early)?;
        check_rate("mid", self.dropout_mid)?;
        self.train.validate()
    }
}

/// Graph head: `k_cov` gated steps over covalent edges at width
/// `gather_width_cov`, a gated projection to `gather_width_noncov`,
/// `k_noncov` steps over non-covalent edges, a gated sum over nodes (the
/// latent), then dense layers of width `w / 1.5` and `w / 1.5 / 2`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphHeadConfig {
    pub k_cov: usize,
    pub k_noncov: usize,
    pub gather_width_cov: usize,
    pub gather_width_noncov: usize,
    /// Radial basis functions per edge.
    pub rbf_size: usize,
    pub train: TrainConfig,
}

impl GraphHeadConfig {
    pub fn latent_width(&self) -> usize {
        self.gather_width_noncov
    }

    /// Widths of the dense tail after the gather, ending at 1.
    pub fn dense_widths(&self) -> Vec<usize> {
        let first = ((self.gather_width_noncov as f64 / 1.5).floor() as usize).max(1);
        vec![first, (first / 2).max(1), 1]
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.k_cov == 0 || self.k_noncov == 0 {
            return Err(ModelError::Config("message passing steps must be positive".into()));
        }
        if self.gather_width_cov == 0 || self.gather_width_noncov == 0 || self.rbf_size == 0 {
            return Err(ModelError::Config("graph widths must be positive".into()));
        }
        self.train.validate()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FusionMode {
    Late,
    Mid,
    Coherent,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FusionConfig {
    pub mode: FusionMode,
    pub n_fusion_layers: usize,
    /// Hidden width of the fusion stack.
    pub fusion_width: usize,
    pub model_specific_layers: bool,
    pub residual_fusion: bool,
    pub batch_norm: bool,
    pub activation: Activation,
    pub dropout_early: f64,
    pub dropout_mid: f64,
    pub dropout_late: f64,
    pub pre_trained: bool,
    pub train: TrainConfig,
}

impl FusionConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.n_fusion_layers < 2 {
            return Err(ModelError::Config("at least two fusion layers are needed".into()));
        }
        if self.fusion_width == 0 {
            return Err(ModelError::Config("fusion width must be positive".into()));
        }
        check_rate("early", self.dropout_early)?;
        check_rate("mid", self.dropout_mid)?;
        check_rate("late", self.dropout_late)?;
        self.train.validate()
    }
}

/// Full description of a model; saved next to its checkpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub features: FeatureConfig,
    pub voxel: VoxelHeadConfig,
    pub graph: GraphHeadConfig,
    pub fusion: FusionConfig,
    pub seed: u64,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        self.voxel.validate(&self.features)?;
        self.graph.validate()?;
        self.fusion.validate()
    }
}

pub mod presets {
    //! Reference final configurations and small desk-scale variants.

    use super::*;
    use crate::data::GridConfig;

    /// Graph head: K 6/3, thresholds 2.24/5.22 Å, gather widths 24/128.
    pub fn graph_head_final() -> (GraphHeadConfig, FeatureConfig) {
        (
            GraphHeadConfig { k_cov: 6, k_noncov: 3, gather_width_cov: 24, gather_width_noncov: 128, rbf_size: 8, train: TrainConfig::adam(2.66e-3, 16, 213) },
            FeatureConfig { grid: GridConfig::default(), covalent_threshold: 2.24, noncovalent_threshold: 5.22 },
        )
    }

    /// Voxel head: filters 32/64, dense 128, second residual only, no batch norm.
    pub fn voxel_head_final() -> VoxelHeadConfig {
        VoxelHeadConfig {
            conv_filters_1: 32,
            conv_filters_2: 64,
            kernel_1: 5,
            kernel_2: 3,
            dense_nodes: 128,
            residual_1: false,
            residual_2: true,
            batch_norm: false,
            dropout_early: 0.25,
            dropout_mid: 0.125,
            train: TrainConfig::adam(4.90e-5, 12, 75),
        }
    }

    /// Mid-level fusion: 5 SELU layers, residual and model-specific layers on, batch 1.
    pub fn mid_fusion_final() -> FusionConfig {
        FusionConfig {
            mode: FusionMode::Mid,
            n_fusion_layers: 5,
            fusion_width: 128,
            model_specific_layers: true,
            residual_fusion: true,
            batch_norm: false,
            activation: Activation::Selu,
            dropout_early: 0.251,
            dropout_mid: 0.125,
            dropout_late: 0.0,
            pre_trained: true,
            train: TrainConfig::adam(4.03e-4, 1, 64),
        }
    }

    /// Coherent fusion: 4 SELU layers, no residual, heavier dropout, batch 48.
    pub fn coherent_fusion_final() -> FusionConfig {
        FusionConfig {
            mode: FusionMode::Coherent,
            n_fusion_layers: 4,
            fusion_width: 128,
            model_specific_layers: false,
            residual_fusion: false,
            batch_norm: false,
            activation: Activation::Selu,
            dropout_early: 0.386,
            dropout_mid: 0.247,
            dropout_late: 0.055,
            pre_trained: true,
            train: TrainConfig::adam(1.08e-4, 48, 18),
        }
    }

    pub fn final_model(fusion: FusionConfig) -> ModelConfig {
        let (graph, features) = graph_head_final();
        ModelConfig { features, voxel: voxel_head_final(), graph, fusion, seed: 0 }
    }

    /// Small configuration that trains on one core in seconds: 8³ grid,
    /// 2/4 filters with 3³ kernels, narrow graph widths and a 4 Å
    /// non-covalent threshold matching the planted contact cutoff.
    pub fn desk(mode: FusionMode, seed: u64) -> ModelConfig {
        ModelConfig {
            features: FeatureConfig { grid: GridConfig { extent: 8, box_size: 16.0, elements: 4 }, covalent_threshold: 2.24, noncovalent_threshold: 4.0 },
            voxel: VoxelHeadConfig {
                conv_filters_1: 2,
                conv_filters_2: 4,
                kernel_1: 3,
                kernel_2: 3,
                dense_nodes: 16,
                residual_1: false,
                residual_2: true,
                batch_norm: false,
                dropout_early: 0.0,
                dropout_mid: 0.0,
                train: TrainConfig::adam(3e-3, 16, 10),
            },
            graph: GraphHeadConfig { k_cov: 2, k_noncov: 2, gather_width_cov: 8, gather_width_noncov: 16, rbf_size: 6, train: TrainConfig::adam(3e-3, 16, 10) },
            fusion: FusionConfig {
                mode,
                n_fusion_layers: 3,
                fusion_width: 16,
                model_specific_layers: false,
                residual_fusion: false,
                batch_norm: false,
                activation: Activation::LeakyRelu,
                dropout_early: 0.0,
                dropout_mid: 0.0,
                dropout_late: 0.0,
                pre_trained: false,
                train: TrainConfig::adam(3e-3, 16, 12),
            },
            seed,
        }
    }

    /// Tiny configuration for finite-difference checks.
    pub fn toy(mode: FusionMode, seed: u64) -> ModelConfig {
        let mut c = desk(mode, seed);
        c.voxel.conv_filters_1 = 2;
        c.voxel.conv_filters_2 = 2;
        c.voxel.dense_nodes = 4;
        c.graph.gather_width_cov = 4;
        c.graph.gather_width_noncov = 6;
        c.graph.rbf_size = 3;
        c.fusion.fusion_width = 4;
        c
    }
}
