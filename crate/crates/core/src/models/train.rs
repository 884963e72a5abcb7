use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{FusionMode, TrainConfig};
use super::layers::{update_running_stats, Fwd};
use super::model::{FusionModel, Output};
use super::ModelError;
use crate::autodiff::checkpoint::Checkpoint;
use crate::autodiff::{DenseArray, Mode, Optimizer, ParamGroup, ParamId, ParamStore};
use crate::data::Sample;
use crate::{mix_seed, Scalar};

/// What a training run optimizes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrainMode {
    /// Voxel head alone (`3d`).
    Voxel,
    /// Graph head alone (`sg`).
    Graph,
    /// Fusion stack on frozen, pre-trained heads.
    Mid,
    /// Heads and fusion stack jointly.
    Coherent,
}

impl TrainMode {
    pub fn name(self) -> &'static str {
        match self {
            TrainMode::Voxel => "3d",
            TrainMode::Graph => "sg",
            TrainMode::Mid => "mid",
            TrainMode::Coherent => "coherent",
        }
    }

    pub fn output(self) -> Output {
        match self {
            TrainMode::Voxel => Output::Voxel,
            TrainMode::Graph => Output::Graph,
            TrainMode::Mid | TrainMode::Coherent => Output::Fused,
        }
    }

    pub fn groups(self) -> &'static [ParamGroup] {
        match self {
            TrainMode::Voxel => &[ParamGroup::Voxel],
            TrainMode::Graph => &[ParamGroup::Graph],
            TrainMode::Mid => &[ParamGroup::Fusion],
            TrainMode::Coherent => &[ParamGroup::Voxel, ParamGroup::Graph, ParamGroup::Fusion],
        }
    }

    fn head_mode(self) -> Mode {
        if self == TrainMode::Mid {
            Mode::Eval
        } else {
            Mode::Train
        }
    }
}

impl fmt::Display for TrainMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TrainMode {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "3d" | "voxel" => Ok(TrainMode::Voxel),
            "sg" | "graph" => Ok(TrainMode::Graph),
            "mid" => Ok(TrainMode::Mid),
            "coherent" => Ok(TrainMode::Coherent),
            "late" => Err(ModelError::LateTraining),
            other => Err(ModelError::Config(format!("unknown training mode {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_mse: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub mode: TrainMode,
    pub history: Vec<EpochRecord>,
    pub initial_val_mse: Option<f64>,
    pub best_epoch: Option<usize>,
    pub best_val_mse: Option<f64>,
}

/// Epoch-at-a-time training with checkpoint and resume. Shuffling,
/// augmentation and dropout masks depend only on the seed and the epoch
/// index, so a resumed run repeats an uninterrupted one exactly.
#[derive(Clone, Debug)]
pub struct Trainer<T> {
    model: FusionModel<T>,
    mode: TrainMode,
    optimizer: Optimizer<T>,
    ids: Vec<ParamId>,
    seed: u64,
    epoch: usize,
    history: Vec<EpochRecord>,
    initial_val_mse: Option<f64>,
    best: Option<(usize, f64, ParamStore<T>)>,
}

impl<T: Scalar> Trainer<T> {
    pub fn new(model: FusionModel<T>, mode: TrainMode, seed: u64) -> Result<Self, ModelError> {
        let trained = model.trained();
        if matches!(mode, TrainMode::Mid | TrainMode::Coherent) && model.config().fusion.mode == FusionMode::Late {
            return Err(ModelError::LateTraining);
        }
        if mode == TrainMode::Mid && !(trained.voxel && trained.graph) {
            return Err(ModelError::MissingHeads("mid-level fusion"));
        }
        if mode == TrainMode::Coherent && model.config().fusion.pre_trained && !(trained.voxel && trained.graph) {
            return Err(ModelError::MissingHeads("coherent fusion from pre-trained heads"));
        }
        let cfg = Self::stage_config(&model, mode).clone();
        cfg.validate()?;
        let ids = model.store().trainable_in(mode.groups());
        Ok(Self { optimizer: Optimizer::new(cfg.optimizer)?, model, mode, ids, seed, epoch: 0, history: Vec::new(), initial_val_mse: None, best: None })
    }

    fn stage_config(model: &FusionModel<T>, mode: TrainMode) -> &TrainConfig {
        let c = model.config();
        match mode {
            TrainMode::Voxel => &c.voxel.train,
            TrainMode::Graph => &c.graph.train,
            TrainMode::Mid | TrainMode::Coherent => &c.fusion.train,
        }
    }

    pub fn config(&self) -> &TrainConfig {
        Self::stage_config(&self.model, self.mode)
    }

    pub fn model(&self) -> &FusionModel<T> {
        &self.model
    }

    pub fn model_mut(&mut self) -> &mut FusionModel<T> {
        &mut self.model
    }

    pub fn optimizer_mut(&mut self) -> &mut Optimizer<T> {
        &mut self.optimizer
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn history(&self) -> &[EpochRecord] {
        &self.history
    }

    fn block_trained(&self) -> bool {
        let t = self.model.trained();
        match self.mode {
            TrainMode::Voxel => t.voxel,
            TrainMode::Graph => t.graph,
            TrainMode::Mid | TrainMode::Coherent => t.fusion,
        }
    }

    /// Starts an untrained output layer at the mean training label.
    fn init_output_bias(&mut self, train: &[Sample]) {
        let mean = train.iter().map(|s| s.label).sum::<f64>() / train.len() as f64;
        let mut outs = vec![self.mode.output()];
        if self.mode == TrainMode::Coherent && !self.model.config().fusion.pre_trained {
            outs.extend([Output::Voxel, Output::Graph]);
        }
        for o in outs {
            if let Some(b) = self.model.output_bias(o) {
                *self.model.store_mut().value_mut(b) = DenseArray::filled(&[1], T::lit(mean));
            }
        }
    }

    /// Validation MSE of the stage's output; `None` without validation data.
    pub fn evaluate(&self, val: &[Sample]) -> Result<Option<f64>, ModelError> {
        if val.is_empty() {
            return Ok(None);
        }
        let preds = self.model.predict_output(val, self.mode.output(), 64);
        let mut sum = 0.0;
        for (p, s) in preds.into_iter().zip(val) {
            let p = p?;
            sum += (p - s.label).powi(2);
        }
        Ok(Some(sum / val.len() as f64))
    }

    fn batches(&self, n: usize, epoch_seed: u64) -> Vec<Vec<usize>> {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(epoch_seed));
        let bs = self.config().batch_size;
        let mut batches: Vec<Vec<usize>> = order.chunks(bs).map(|c| c.to_vec()).collect();
        // a lone trailing sample cannot be normalized over a batch
        if bs >= 2 && batches.len() >= 2 && batches.last().map_or(false, |b| b.len() == 1) {
            let tail = batches.pop().expect("non-empty");
            batches.last_mut().expect("non-empty").extend(tail);
        }
        batches
    }

    pub fn run_epoch(&mut self, train: &[Sample], val: &[Sample]) -> Result<EpochRecord, ModelError> {
        if train.is_empty() {
            return Err(ModelError::Empty("training"));
        }
        if self.epoch == 0 {
            if !self.block_trained() {
                self.init_output_bias(train);
            }
            self.initial_val_mse = self.evaluate(val)?;
        }
        let epoch_seed = mix_seed(self.seed, self.epoch as u64);
        let rotation = if self.mode == TrainMode::Graph { 0.0 } else { self.config().rotation_probability };
        let output = self.mode.output();
        let head_mode = self.mode.head_mode();
        let mut loss_sum = 0.0;
        for (bi, idx) in self.batches(train.len(), epoch_seed).into_iter().enumerate() {
            let batch_seed = mix_seed(epoch_seed, bi as u64 + 1);
            let refs: Vec<&Sample> = idx.iter().map(|&i| &train[i]).collect();
            let b = self.model.batch(&refs, Some((batch_seed, rotation)))?;
            let (graph, records, grads, loss) = {
                let mut f = Fwd::new(self.model.store(), batch_seed);
                let y = self.model.forward(&mut f, &b, output, head_mode, Mode::Train)?;
                let labels = DenseArray::new(vec![b.labels.len(), 1], b.labels.iter().map(|&l| T::lit(l)).collect())?;
                let t = f.g.input(labels);
                let loss = f.g.mse(y, t)?;
                let grads = f.g.backward(loss, &self.ids, self.model.store())?;
                let l = f.g.value(loss).data()[0].as_f64();
                (f.g, f.bn, grads, l)
            };
            self.optimizer.step(self.model.store_mut(), &grads, &self.ids)?;
            update_running_stats(&graph, &records, self.model.store_mut());
            loss_sum += loss * idx.len() as f64;
        }
        let val_mse = self.evaluate(val)?;
        let rec = EpochRecord { epoch: self.epoch, train_loss: loss_sum / train.len() as f64, val_mse };
        if let Some(v) = val_mse {
            if self.best.as_ref().map_or(true, |(_, b, _)| v < *b) {
                self.best = Some((self.epoch, v, self.model.store().clone()));
            }
        }
        log::debug!("{} epoch {}: train {:.4} val {:?}", self.mode, self.epoch, rec.train_loss, val_mse);
        self.history.push(rec.clone());
        self.epoch += 1;
        Ok(rec)
    }

    /// Runs epochs until the stage's configured count is reached.
    pub fn run(&mut self, train: &[Sample], val: &[Sample]) -> Result<(), ModelError> {
        while self.epoch < self.config().epochs {
            self.run_epoch(train, val)?;
        }
        Ok(())
    }

    /// Marks the stage trained and, if `restore_best`, reverts to the
    /// parameters with the lowest validation MSE.
    pub fn finish(mut self, restore_best: bool) -> (FusionModel<T>, TrainReport) {
        let (best_epoch, best_val_mse) = match &self.best {
            Some((e, v, _)) => (Some(*e), Some(*v)),
            None => (None, None),
        };
        if restore_best {
            if let Some((_, _, store)) = self.best.take() {
                *self.model.store_mut() = store;
            }
        }
        let mut t = self.model.trained();
        match self.mode {
            TrainMode::Voxel => t.voxel = true,
            TrainMode::Graph => t.graph = true,
            TrainMode::Mid => t.fusion = true,
            TrainMode::Coherent => {
                t.voxel = true;
                t.graph = true;
                t.fusion = true;
            }
        }
        self.model.set_trained(t);
        let report = TrainReport { mode: self.mode, history: self.history, initial_val_mse: self.initial_val_mse, best_epoch, best_val_mse };
        (self.model, report)
    }

    /// Parameters, optimizer state and the epoch counter.
    pub fn checkpoint(&self) -> Checkpoint<T> {
        let mut ck = Checkpoint::new(self.model.store().clone());
        ck.optimizer = Some(self.optimizer.clone());
        ck.meta.insert("epoch".into(), self.epoch.to_string());
        ck.meta.insert("mode".into(), self.mode.name().into());
        ck.meta.insert("seed".into(), self.seed.to_string());
        if let Some(v) = self.initial_val_mse {
            ck.meta.insert("initial_val_mse".into(), format!("{:?}", v));
        }
        ck
    }

    /// Restores a state written by [`Trainer::checkpoint`].
    pub fn restore(&mut self, ck: &Checkpoint<T>) -> Result<(), ModelError> {
        let meta = |k: &str| ck.meta.get(k).ok_or_else(|| ModelError::Config(format!("checkpoint lacks {k}")));
        if meta("mode")? != self.mode.name() {
            return Err(ModelError::Config(format!("checkpoint is for mode {}", meta("mode")?)));
        }
        let epoch = meta("epoch")?.parse().map_err(|_| ModelError::Config("bad epoch in checkpoint".into()))?;
        let seed = meta("seed")?.parse().map_err(|_| ModelError::Config("bad seed in checkpoint".into()))?;
        self.model.replace_params(ck.params.clone())?;
        if let Some(opt) = &ck.optimizer {
            self.optimizer = opt.clone();
        }
        self.epoch = epoch;
        self.seed = seed;
        self.initial_val_mse = ck.meta.get("initial_val_mse").and_then(|v| v.parse().ok());
        Ok(())
    }
}

/// Trains one stage for its configured epochs, keeping the best
/// validation state when validation data is given.
pub fn train<T: Scalar>(model: &mut FusionModel<T>, mode: TrainMode, train: &[Sample], val: &[Sample], seed: u64) -> Result<TrainReport, ModelError> {
    let mut t = Trainer::new(model.clone(), mode, seed)?;
    t.run(train, val)?;
    let (m, report) = t.finish(!val.is_empty());
    *model = m;
    Ok(report)
}
