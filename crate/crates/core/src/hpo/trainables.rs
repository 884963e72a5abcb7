use super::pb2::{Step, Trainable};
use super::space::{Config, ParamValue};
use super::HpoError;
use crate::autodiff::checkpoint::Checkpoint;
use crate::autodiff::{OptimizerConfig, OptimizerKind};
use crate::data::Sample;
use crate::models::{Activation, FusionModel, ModelConfig, TrainMode, Trainer};

/// Synthetic objective with a drifting optimum. Each epoch the state gains
/// progress `max(0, 1 - ((lr - lr*(t)) / width)²)` and reports
/// `(lr - lr*(t))² + 1 / (1 + progress)`, where `lr*(t) = lr_star + drift·t`
/// is clipped to `[0, 1]`. Progress accumulates, so good early choices pay
/// off later and cloning a strong trial matters.
#[derive(Clone, Debug, PartialEq)]
pub struct QuadraticTrainable {
    pub lr_star: f64,
    pub drift: f64,
    pub width: f64,
}

impl Default for QuadraticTrainable {
    fn default() -> Self {
        Self { lr_star: 0.3, drift: 0.004, width: 0.2 }
    }
}

impl QuadraticTrainable {
    pub fn optimum(&self, epoch: usize) -> f64 {
        (self.lr_star + self.drift * epoch as f64).clamp(0.0, 1.0)
    }

    fn decode(bytes: &[u8]) -> Result<(f64, u64), HpoError> {
        let arr: [u8; 16] = bytes.try_into().map_err(|_| HpoError::Checkpoint(format!("expected 16 bytes, got {}", bytes.len())))?;
        let progress = f64::from_le_bytes(arr[..8].try_into().expect("8 bytes"));
        let epoch = u64::from_le_bytes(arr[8..].try_into().expect("8 bytes"));
        Ok((progress, epoch))
    }

    fn encode(progress: f64, epoch: u64) -> Vec<u8> {
        let mut v = progress.to_le_bytes().to_vec();
        v.extend_from_slice(&epoch.to_le_bytes());
        v
    }
}

impl Trainable for QuadraticTrainable {
    fn init(&self, _: usize, _: &Config, _: u64) -> Result<Vec<u8>, HpoError> {
        Ok(Self::encode(0.0, 0))
    }

    fn train(&self, trial_id: usize, checkpoint: &[u8], config: &Config, epochs: usize, _: u64) -> Result<Step, HpoError> {
        let lr = config.get("lr").and_then(ParamValue::as_f64).ok_or(HpoError::Trial { trial: trial_id, reason: "config lacks lr".into() })?;
        let (mut progress, mut epoch) = Self::decode(checkpoint)?;
        let mut scores = Vec::with_capacity(epochs);
        for _ in 0..epochs {
            let gap = lr - self.optimum(epoch as usize);
            progress += (1.0 - (gap / self.width).powi(2)).max(0.0);
            epoch += 1;
            scores.push(gap * gap + 1.0 / (1.0 + progress));
        }
        Ok(Step { checkpoint: Self::encode(progress, epoch), scores })
    }
}

fn int(config: &Config, name: &str) -> Result<Option<usize>, HpoError> {
    config
        .get(name)
        .map(|v| match v {
            ParamValue::Int(i) if *i >= 0 => Ok(*i as usize),
            other => Err(HpoError::Space(format!("{name}: expected a non-negative integer, got {other}"))),
        })
        .transpose()
}

fn float(config: &Config, name: &str) -> Result<Option<f64>, HpoError> {
    config.get(name).map(|v| v.as_f64().ok_or_else(|| HpoError::Space(format!("{name}: expected a number, got {v}")))).transpose()
}

fn flag(config: &Config, name: &str) -> Result<Option<bool>, HpoError> {
    config.get(name).map(|v| v.as_bool().ok_or_else(|| HpoError::Space(format!("{name}: expected a boolean, got {v}")))).transpose()
}

fn text<'a>(config: &'a Config, name: &str) -> Result<Option<&'a str>, HpoError> {
    config.get(name).map(|v| v.as_str().ok_or_else(|| HpoError::Space(format!("{name}: expected text, got {v}")))).transpose()
}

/// Writes tuner hyperparameters into the fusion block of `model`. Names
/// follow the fusion search-space preset; unknown names are rejected.
pub fn apply_hyperparams(model: &mut ModelConfig, config: &Config) -> Result<(), HpoError> {
    const KNOWN: [&str; 22] = [
        "optimizer",
        "activation",
        "batch_size",
        "learning_rate",
        "model_specific_layers",
        "pre_trained",
        "batch_norm",
        "dropout_early",
        "dropout_mid",
        "dropout_late",
        "n_fusion_layers",
        "dense_nodes",
        "residual_1",
        "residual_2",
        "conv_filters_1",
        "conv_filters_2",
        "k_noncov",
        "k_cov",
        "noncov_threshold",
        "cov_threshold",
        "gather_width_noncov",
        "gather_width_cov",
    ];
    if let Some(k) = config.keys().find(|k| !KNOWN.contains(&k.as_str())) {
        return Err(HpoError::Space(format!("unknown hyperparameter {k}")));
    }
    let f = &mut model.fusion;
    if let Some(o) = text(config, "optimizer")? {
        let kind = match o {
            "adam" => OptimizerKind::Adam,
            "adamw" => OptimizerKind::AdamW,
            "rmsprop" => OptimizerKind::RmsProp,
            "adadelta" => OptimizerKind::Adadelta,
            other => return Err(HpoError::Space(format!("unknown optimizer {other}"))),
        };
        f.train.optimizer = OptimizerConfig::new(kind, f.train.optimizer.learning_rate).map_err(|e| HpoError::Space(e.to_string()))?;
    }
    if let Some(a) = text(config, "activation")? {
        f.activation = match a {
            "relu" => Activation::Relu,
            "leaky-relu" => Activation::LeakyRelu,
            "selu" => Activation::Selu,
            other => return Err(HpoError::Space(format!("unknown activation {other}"))),
        };
    }
    if let Some(b) = int(config, "batch_size")? {
        f.train.batch_size = b;
    }
    if let Some(lr) = float(config, "learning_rate")? {
        f.train.optimizer.learning_rate = lr;
    }
    if let Some(v) = flag(config, "model_specific_layers")? {
        f.model_specific_layers = v;
    }
    if let Some(v) = flag(config, "pre_trained")? {
        f.pre_trained = v;
    }
    if let Some(v) = flag(config, "batch_norm")? {
        f.batch_norm = v;
        model.voxel.batch_norm = v;
    }
    let f = &mut model.fusion;
    if let Some(v) = float(config, "dropout_early")? {
        f.dropout_early = v;
    }
    if let Some(v) = float(config, "dropout_mid")? {
        f.dropout_mid = v;
    }
    if let Some(v) = float(config, "dropout_late")? {
        f.dropout_late = v;
    }
    if let Some(v) = int(config, "n_fusion_layers")? {
        f.n_fusion_layers = v;
    }
    if let Some(v) = int(config, "dense_nodes")? {
        f.fusion_width = v;
        model.voxel.dense_nodes = v;
    }
    if let Some(v) = flag(config, "residual_1")? {
        model.voxel.residual_1 = v;
    }
    if let Some(v) = flag(config, "residual_2")? {
        model.voxel.residual_2 = v;
    }
    if let Some(v) = int(config, "conv_filters_1")? {
        model.voxel.conv_filters_1 = v;
    }
    if let Some(v) = int(config, "conv_filters_2")? {
        model.voxel.conv_filters_2 = v;
    }
    if let Some(v) = int(config, "k_noncov")? {
        model.graph.k_noncov = v;
    }
    if let Some(v) = int(config, "k_cov")? {
        model.graph.k_cov = v;
    }
    if let Some(v) = float(config, "noncov_threshold")? {
        model.features.noncovalent_threshold = v;
    }
    if let Some(v) = float(config, "cov_threshold")? {
        model.features.covalent_threshold = v;
    }
    if let Some(v) = int(config, "gather_width_noncov")? {
        model.graph.gather_width_noncov = v;
    }
    if let Some(v) = int(config, "gather_width_cov")? {
        model.graph.gather_width_cov = v;
    }
    model.validate()?;
    Ok(())
}

const CONFIG_KEY: &str = "model_config";

/// Trains the fusion stage of a [`FusionModel`] on fixed data, scoring by
/// validation MSE. With `heads`, each model starts from those trained
/// voxel and graph blocks, as mid-level fusion requires.
pub struct FusionTrainable<'a> {
    pub base: ModelConfig,
    pub mode: TrainMode,
    pub heads: Option<&'a FusionModel<f64>>,
    pub train: &'a [Sample],
    pub val: &'a [Sample],
}

impl FusionTrainable<'_> {
    fn model(&self, config: &ModelConfig) -> Result<FusionModel<f64>, HpoError> {
        let mut m = FusionModel::new(config.clone())?;
        if let Some(h) = self.heads {
            m.load_heads_from(h)?;
        }
        Ok(m)
    }

    fn config_for(&self, config: &Config) -> Result<ModelConfig, HpoError> {
        let mut c = self.base.clone();
        apply_hyperparams(&mut c, config)?;
        Ok(c)
    }

    fn encode(trainer: &Trainer<f64>) -> Result<Vec<u8>, HpoError> {
        let mut ck = trainer.checkpoint();
        ck.meta.insert(CONFIG_KEY.into(), serde_json::to_string(trainer.model().config())?);
        Ok(ck.to_bytes())
    }
}

impl Trainable for FusionTrainable<'_> {
    fn init(&self, _: usize, config: &Config, seed: u64) -> Result<Vec<u8>, HpoError> {
        let mut c = self.config_for(config)?;
        c.seed = seed;
        let trainer = Trainer::new(self.model(&c)?, self.mode, seed)?;
        Self::encode(&trainer)
    }

    fn train(&self, _: usize, checkpoint: &[u8], config: &Config, epochs: usize, _: u64) -> Result<Step, HpoError> {
        let ck = Checkpoint::<f64>::from_bytes(checkpoint).map_err(|e| HpoError::Checkpoint(e.to_string()))?;
        let stored: ModelConfig = serde_json::from_str(ck.meta.get(CONFIG_KEY).ok_or_else(|| HpoError::Checkpoint("missing model config".into()))?)?;
        // parameter shapes come from the checkpoint; the rest from `config`
        let mut c = self.config_for(config)?;
        c.seed = stored.seed;
        let mut trainer = Trainer::new(self.model(&c)?, self.mode, stored.seed)?;
        trainer.restore(&ck)?;
        let lr = trainer.config().optimizer.learning_rate;
        trainer.optimizer_mut().set_learning_rate(lr).map_err(|e| HpoError::Space(e.to_string()))?;
        let mut scores = Vec::with_capacity(epochs);
        for _ in 0..epochs {
            let rec = trainer.run_epoch(self.train, self.val)?;
            scores.push(rec.val_mse.ok_or(crate::models::ModelError::Empty("validation"))?);
        }
        Ok(Step { checkpoint: Self::encode(&trainer)?, scores })
    }
}
