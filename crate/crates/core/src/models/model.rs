use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::{FusionMode, ModelConfig};
use super::fusion::FusionStack;
use super::heads::{stack_grids, GraphBatch, GraphHead, VoxelHead};
use super::layers::{Fwd, Init};
use super::ModelError;
use crate::autodiff::checkpoint::Checkpoint;
use crate::autodiff::{gradient_check, AutodiffError, DenseArray, Graph, Mode, NodeId, ParamGroup, ParamId, ParamStore};
use crate::data::{rotate_augment, Sample, VoxelGrid};
use crate::{mix_seed, Scalar};

pub const CONFIG_FILE: &str = "model.config.json";
pub const CHECKPOINT_FILE: &str = "model.ckpt";

/// Which prediction to read from a forward pass.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Output {
    Voxel,
    Graph,
    /// Arithmetic mean of the two head predictions.
    Late,
    /// Output of the fusion stack.
    Fused,
}

impl Output {
    pub(crate) fn groups(self) -> &'static [ParamGroup] {
        match self {
            Output::Voxel => &[ParamGroup::Voxel],
            Output::Graph => &[ParamGroup::Graph],
            Output::Late => &[ParamGroup::Voxel, ParamGroup::Graph],
            Output::Fused => &[ParamGroup::Voxel, ParamGroup::Graph, ParamGroup::Fusion],
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainedFlags {
    pub voxel: bool,
    pub graph: bool,
    pub fusion: bool,
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    config: ModelConfig,
    trained: TrainedFlags,
}

/// Network inputs for one mini-batch.
pub(crate) struct Batch<T> {
    pub grids: DenseArray<T>,
    pub graphs: GraphBatch<T>,
    pub labels: Vec<f64>,
}

/// Voxel head, graph head and (except for late fusion) a fusion stack, all
/// held in one parameter store grouped by block.
#[derive(Clone, Debug)]
pub struct FusionModel<T> {
    config: ModelConfig,
    store: ParamStore<T>,
    voxel: VoxelHead,
    graph: GraphHead,
    fusion: Option<FusionStack>,
    trained: TrainedFlags,
}

fn norm_active(enabled: bool, batch_size: usize, block: &str) -> bool {
    if enabled && batch_size < 2 {
        log::warn!("{block}: batch normalization disabled at batch size {batch_size}");
        return false;
    }
    enabled
}

impl<T: Scalar> FusionModel<T> {
    pub fn new(config: ModelConfig) -> Result<Self, ModelError> {
        config.validate()?;
        let mut store = ParamStore::new();
        let v_bn = norm_active(config.voxel.batch_norm, config.voxel.train.batch_size, "voxel head");
        let voxel = VoxelHead::new(&config.voxel, &config.features, v_bn, &mut Init::new(&mut store, mix_seed(config.seed, 1), ParamGroup::Voxel, "voxel"));
        let node_width = config.features.grid.elements + 4;
        let graph = GraphHead::new(&config.graph, node_width, &mut Init::new(&mut store, mix_seed(config.seed, 2), ParamGroup::Graph, "graph"));
        let fusion = (config.fusion.mode != FusionMode::Late).then(|| {
            let bn = norm_active(config.fusion.batch_norm, config.fusion.train.batch_size, "fusion");
            let mut init = Init::new(&mut store, mix_seed(config.seed, 3), ParamGroup::Fusion, "fusion");
            FusionStack::new(&config.fusion, config.graph.latent_width(), config.voxel.latent_width(), bn, &mut init)
        });
        Ok(Self { config, store, voxel, graph, fusion, trained: TrainedFlags::default() })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    /// Mutable access for settings without parameters, such as dropout rates.
    pub fn config_mut(&mut self) -> &mut ModelConfig {
        &mut self.config
    }

    pub fn store(&self) -> &ParamStore<T> {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.store
    }

    pub fn trained(&self) -> TrainedFlags {
        self.trained
    }

    pub fn set_trained(&mut self, flags: TrainedFlags) {
        self.trained = flags;
    }

    pub fn default_output(&self) -> Output {
        match self.config.fusion.mode {
            FusionMode::Late => Output::Late,
            _ => Output::Fused,
        }
    }

    pub(crate) fn output_bias(&self, output: Output) -> Option<ParamId> {
        match output {
            Output::Voxel => Some(self.voxel.out.b),
            Output::Graph => Some(self.graph.out().b),
            Output::Fused => self.fusion.as_ref().map(|f| f.out.b),
            Output::Late => None,
        }
    }

    /// Checks that a sample matches this model's featurization.
    pub fn validate_sample(&self, s: &Sample) -> Result<(), ModelError> {
        let bad = |reason: String| Err(ModelError::Item { id: s.id.clone(), reason });
        let grid = &self.config.features.grid;
        let expect = [grid.channels(), grid.extent, grid.extent, grid.extent];
        if s.grid.occupancy.shape() != expect || s.grid.extent != grid.extent || s.grid.channels != grid.channels() {
            return bad(format!("grid shape {:?}, expected {expect:?}", s.grid.occupancy.shape()));
        }
        if s.grid.occupancy.data().iter().any(|v| !v.is_finite() || *v < 0.0) {
            return bad("grid holds negative or non-finite occupancy".into());
        }
        let g = &s.graph;
        if g.node_features.ndim() != 2 || g.n_nodes() == 0 {
            return bad("graph has no nodes".into());
        }
        if g.feature_width() != grid.elements + 4 {
            return bad(format!("node feature width {}, expected {}", g.feature_width(), grid.elements + 4));
        }
        if !g.node_features.is_finite() {
            return bad("non-finite node features".into());
        }
        let f = &self.config.features;
        if let Err(e) = g.validate(f.covalent_threshold, f.noncovalent_threshold) {
            return bad(e.to_string());
        }
        Ok(())
    }

    pub(crate) fn batch(&self, samples: &[&Sample], rotation: Option<(u64, f64)>) -> Result<Batch<T>, ModelError> {
        if samples.is_empty() {
            return Err(ModelError::Empty("batch"));
        }
        let rotated: Vec<VoxelGrid>;
        let grids: Vec<&VoxelGrid> = match rotation {
            Some((seed, p)) if p > 0.0 => {
                rotated = samples.iter().enumerate().map(|(i, s)| rotate_augment(&s.grid, mix_seed(seed, i as u64), p)).collect::<Result<_, _>>()?;
                rotated.iter().collect()
            }
            _ => samples.iter().map(|s| &s.grid).collect(),
        };
        let graphs: Vec<_> = samples.iter().map(|s| &s.graph).collect();
        Ok(Batch {
            grids: stack_grids(&grids),
            graphs: GraphBatch::new(&graphs, &self.config.features, self.config.graph.rbf_size),
            labels: samples.iter().map(|s| s.label).collect(),
        })
    }

    /// Builds the forward pass; returns the `[B, 1]` prediction node.
    pub(crate) fn forward(&self, f: &mut Fwd<'_, T>, b: &Batch<T>, output: Output, head_mode: Mode, fusion_mode: Mode) -> Result<NodeId, ModelError> {
        let voxel = |f: &mut Fwd<'_, T>| {
            let x = f.g.input(b.grids.clone());
            self.voxel.forward(f, x, head_mode)
        };
        match output {
            Output::Voxel => Ok(voxel(f)?.0),
            Output::Graph => Ok(self.graph.forward(f, &b.graphs)?.0),
            Output::Late => {
                let (v, _) = voxel(f)?;
                let (g, _) = self.graph.forward(f, &b.graphs)?;
                f.op(crate::autodiff::Op::Mean, &[v, g])
            }
            Output::Fused => {
                let stack = self.fusion.as_ref().ok_or_else(|| ModelError::Config("late fusion model has no fusion stack".into()))?;
                let (_, vl) = voxel(f)?;
                let (_, gl) = self.graph.forward(f, &b.graphs)?;
                stack.forward(f, &self.config.fusion, gl, vl, fusion_mode)
            }
        }
    }

    fn check_output(&self, output: Output) -> Result<(), ModelError> {
        if output == Output::Fused && self.fusion.is_none() {
            return Err(ModelError::Config("late fusion model has no fused output".into()));
        }
        Ok(())
    }

    /// Eval-mode predictions for `output`. Invalid items get their own error
    /// and do not affect the others; valid items are scored in chunks of
    /// `batch_size`.
    pub fn predict_output(&self, samples: &[Sample], output: Output, batch_size: usize) -> Vec<Result<f64, ModelError>> {
        let mut out: Vec<Option<Result<f64, ModelError>>> = samples.iter().map(|s| self.validate_sample(s).err().map(Err)).collect();
        if let Err(e) = self.check_output(output) {
            return samples.iter().map(|s| Err(ModelError::Item { id: s.id.clone(), reason: e.to_string() })).collect();
        }
        let valid: Vec<usize> = (0..samples.len()).filter(|&i| out[i].is_none()).collect();
        for chunk in valid.chunks(batch_size.max(1)) {
            let refs: Vec<&Sample> = chunk.iter().map(|&i| &samples[i]).collect();
            match self.batch(&refs, None).and_then(|b| {
                let mut f = Fwd::new(&self.store, 0);
                let y = self.forward(&mut f, &b, output, Mode::Eval, Mode::Eval)?;
                Ok(f.g.value(y).data().to_vec())
            }) {
                Ok(ys) => {
                    for (&i, y) in chunk.iter().zip(ys) {
                        out[i] = Some(Ok(y.as_f64()));
                    }
                }
                Err(e) => {
                    for &i in chunk {
                        out[i] = Some(Err(ModelError::Item { id: samples[i].id.clone(), reason: e.to_string() }));
                    }
                }
            }
        }
        out.into_iter().map(|r| r.expect("every item resolved")).collect()
    }

    /// Predictions from the model's own output (late mean or fused).
    pub fn predict_batch(&self, samples: &[Sample], batch_size: usize) -> Vec<Result<f64, ModelError>> {
        self.predict_output(samples, self.default_output(), batch_size)
    }

    /// Mean of the two head predictions, one per sample.
    pub fn late_fusion_predict(&self, samples: &[Sample], batch_size: usize) -> Vec<Result<f64, ModelError>> {
        self.predict_output(samples, Output::Late, batch_size)
    }

    /// Eval-mode MSE graph against `store`, for gradient checks.
    pub fn loss_graph(&self, store: &ParamStore<T>, samples: &[&Sample], output: Output) -> Result<(Graph<T>, NodeId), ModelError> {
        self.check_output(output)?;
        self.batch_loss_graph(store, &self.batch(samples, None)?, output)
    }

    fn batch_loss_graph(&self, store: &ParamStore<T>, b: &Batch<T>, output: Output) -> Result<(Graph<T>, NodeId), ModelError> {
        let mut f = Fwd::new(store, 0);
        let y = self.forward(&mut f, b, output, Mode::Eval, Mode::Eval)?;
        let labels = DenseArray::new(vec![b.labels.len(), 1], b.labels.iter().map(|&l| T::lit(l)).collect())?;
        let t = f.g.input(labels);
        let loss = f.g.mse(y, t)?;
        Ok((f.g, loss))
    }

    /// Largest relative gap between backward and central-difference
    /// gradients over every trainable parameter feeding `output`.
    pub fn gradient_check(&self, samples: &[&Sample], output: Output, eps: f64) -> Result<f64, ModelError> {
        self.check_output(output)?;
        let wrt = self.store.trainable_in(output.groups());
        let b = self.batch(samples, None)?;
        let build = |s: &ParamStore<T>| self.batch_loss_graph(s, &b, output).map_err(|e| AutodiffError::InvalidAttribute(e.to_string()));
        Ok(gradient_check(&self.store, &wrt, build, eps)?)
    }

    /// Copies the voxel and graph blocks from `donor`, which must share this
    /// model's head shapes.
    pub fn load_heads_from(&mut self, donor: &FusionModel<T>) -> Result<(), ModelError> {
        let mine: Vec<(ParamId, String, Vec<usize>)> = self
            .store
            .iter()
            .filter(|(_, p)| matches!(p.group, ParamGroup::Voxel | ParamGroup::Graph))
            .map(|(id, p)| (id, p.name.clone(), p.value.shape().to_vec()))
            .collect();
        let theirs: std::collections::BTreeMap<&str, &DenseArray<T>> = donor.store.iter().map(|(_, p)| (p.name.as_str(), &p.value)).collect();
        for (_, name, shape) in &mine {
            match theirs.get(name.as_str()) {
                Some(v) if v.shape() == shape.as_slice() => {}
                other => {
                    return Err(ModelError::LatentMismatch {
                        name: name.clone(),
                        expected: shape.clone(),
                        got: other.map(|v| v.shape().to_vec()).unwrap_or_default(),
                    })
                }
            }
        }
        for (id, name, _) in mine {
            *self.store.value_mut(id) = theirs[name.as_str()].clone();
        }
        self.trained.voxel = donor.trained.voxel;
        self.trained.graph = donor.trained.graph;
        Ok(())
    }

    /// Writes the configuration sidecar and the parameter checkpoint into `dir`.
    pub fn save(&self, dir: &Path) -> Result<(), ModelError> {
        std::fs::create_dir_all(dir)?;
        let file = ModelFile { config: self.config.clone(), trained: self.trained };
        std::fs::write(dir.join(CONFIG_FILE), serde_json::to_vec_pretty(&file)?)?;
        Checkpoint::new(self.store.clone()).save(&dir.join(CHECKPOINT_FILE))?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self, ModelError> {
        let file: ModelFile = serde_json::from_slice(&std::fs::read(dir.join(CONFIG_FILE))?)?;
        let mut model = Self::new(file.config)?;
        let ck = Checkpoint::<T>::load(&dir.join(CHECKPOINT_FILE))?;
        model.replace_params(ck.params)?;
        model.trained = file.trained;
        Ok(model)
    }

    /// Swaps in a parameter store with identical names and shapes.
    pub fn replace_params(&mut self, params: ParamStore<T>) -> Result<(), ModelError> {
        if params.len() != self.store.len() {
            return Err(ModelError::Config(format!("checkpoint has {} parameters, model has {}", params.len(), self.store.len())));
        }
        for ((_, a), (_, b)) in self.store.iter().zip(params.iter()) {
            if a.name != b.name || a.value.shape() != b.value.shape() || a.group != b.group {
                return Err(ModelError::LatentMismatch { name: a.name.clone(), expected: a.value.shape().to_vec(), got: b.value.shape().to_vec() });
            }
        }
        self.store = params;
        Ok(())
    }
}
