use super::config::FusionConfig;
use super::layers::{BnLayer, DenseLayer, Fwd, Init};
use super::ModelError;
use crate::autodiff::{Mode, NodeId, Op};
use crate::Scalar;

/// Dense stack over the concatenated head latents. With `n` fusion layers
/// there are `n - 1` hidden layers of `fusion_width` and a final scalar
/// output.
#[derive(Clone, Debug)]
pub(crate) struct FusionStack {
    proj: Option<(DenseLayer, DenseLayer)>,
    hidden: Vec<(DenseLayer, Option<BnLayer>)>,
    pub out: DenseLayer,
}

impl FusionStack {
    pub fn new<T: Scalar>(cfg: &FusionConfig, graph_latent: usize, voxel_latent: usize, bn_active: bool, init: &mut Init<'_, T>) -> Self {
        let proj =
            cfg.model_specific_layers.then(|| (init.dense("graph_proj", graph_latent, graph_latent), init.dense("voxel_proj", voxel_latent, voxel_latent)));
        let mut width = graph_latent + voxel_latent;
        if proj.is_some() {
            width *= 2;
        }
        let mut hidden = Vec::new();
        for i in 0..cfg.n_fusion_layers - 1 {
            let d = init.dense(&format!("fc{}", i + 1), width, cfg.fusion_width);
            let bn = bn_active.then(|| init.batch_norm(&format!("bn{}", i + 1), cfg.fusion_width));
            hidden.push((d, bn));
            width = cfg.fusion_width;
        }
        let out = init.dense("out", width, 1);
        Self { proj, hidden, out }
    }

    /// Dropout rates are read from `cfg` on every call so tuners may change
    /// them between steps.
    pub fn forward<T: Scalar>(&self, f: &mut Fwd<'_, T>, cfg: &FusionConfig, graph: NodeId, voxel: NodeId, mode: Mode) -> Result<NodeId, ModelError> {
        let act = cfg.activation.op();
        let mut parts = vec![graph, voxel];
        if let Some((pg, pv)) = self.proj {
            let g = f.dense(graph, pg)?;
            parts.push(f.op(act.clone(), &[g])?);
            let v = f.dense(voxel, pv)?;
            parts.push(f.op(act.clone(), &[v])?);
        }
        let mut h = f.op(Op::Concat, &parts)?;
        h = f.dropout(h, cfg.dropout_early, mode)?;
        let last = self.hidden.len() - 1;
        for (i, (d, bn)) in self.hidden.iter().enumerate() {
            let mut y = f.dense(h, *d)?;
            if let Some(bn) = bn {
                y = f.batch_norm(y, *bn, mode)?;
            }
            y = f.op(act.clone(), &[y])?;
            if cfg.residual_fusion && i > 0 {
                y = f.op(Op::Add, &[y, h])?;
            }
            let rate = if i == last { cfg.dropout_late } else { cfg.dropout_mid };
            h = f.dropout(y, rate, mode)?;
        }
        f.dense(h, self.out)
    }
}
