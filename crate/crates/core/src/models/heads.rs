use super::config::{GraphHeadConfig, VoxelHeadConfig};
use super::layers::{BnLayer, ConvLayer, DenseLayer, Fwd, Init};
use super::ModelError;
use crate::autodiff::{DenseArray, Mode, NodeId, Op};
use crate::data::{ComplexGraph, Edge, FeatureConfig, VoxelGrid};
use crate::Scalar;

#[derive(Clone, Debug)]
pub(crate) struct VoxelHead {
    pub cfg: VoxelHeadConfig,
    conv: [ConvLayer; 4],
    dense1: DenseLayer,
    bn: Option<BnLayer>,
    dense2: DenseLayer,
    pub out: DenseLayer,
    flat: usize,
}

impl VoxelHead {
    pub fn new<T: Scalar>(cfg: &VoxelHeadConfig, features: &FeatureConfig, bn_active: bool, init: &mut Init<'_, T>) -> Self {
        let c = features.grid.channels();
        let (f1, f2) = (cfg.conv_filters_1, cfg.conv_filters_2);
        let conv = [
            init.conv("conv1", c, f1, cfg.kernel_1),
            init.conv("conv2", f1, f1, cfg.kernel_1),
            init.conv("conv3", f1, f2, cfg.kernel_2),
            init.conv("conv4", f2, f2, cfg.kernel_2),
        ];
        let pooled = features.grid.extent / 4;
        let flat = f2 * pooled * pooled * pooled;
        let dense1 = init.dense("dense1", flat, cfg.dense_nodes);
        let bn = bn_active.then(|| init.batch_norm("bn1", cfg.dense_nodes));
        let dense2 = init.dense("dense2", cfg.dense_nodes, cfg.latent_width());
        let out = init.dense("out", cfg.latent_width(), 1);
        Self { cfg: cfg.clone(), conv, dense1, bn, dense2, out, flat }
    }

    /// Input `[B, C, G, G, G]`; returns `(prediction [B, 1], latent [B, L])`.
    pub fn forward<T: Scalar>(&self, f: &mut Fwd<'_, T>, x: NodeId, mode: Mode) -> Result<(NodeId, NodeId), ModelError> {
        let b = f.g.value(x).shape()[0];
        let c1 = f.conv(x, self.conv[0])?;
        let c1 = f.op(Op::Relu, &[c1])?;
        let mut c2 = f.conv(c1, self.conv[1])?;
        c2 = f.op(Op::Relu, &[c2])?;
        if self.cfg.residual_1 {
            c2 = f.op(Op::Add, &[c2, c1])?;
        }
        let p1 = f.op(Op::MaxPool3d { window: 2 }, &[c2])?;
        let c3 = f.conv(p1, self.conv[2])?;
        let c3 = f.op(Op::Relu, &[c3])?;
        let mut c4 = f.conv(c3, self.conv[3])?;
        c4 = f.op(Op::Relu, &[c4])?;
        if self.cfg.residual_2 {
            c4 = f.op(Op::Add, &[c4, c3])?;
        }
        let p2 = f.op(Op::MaxPool3d { window: 2 }, &[c4])?;
        let flat = f.op(Op::Reshape { shape: vec![b, self.flat] }, &[p2])?;
        let d = f.dropout(flat, self.cfg.dropout_early, mode)?;
        let mut h = f.dense(d, self.dense1)?;
        if let Some(bn) = self.bn {
            h = f.batch_norm(h, bn, mode)?;
        }
        let h = f.op(Op::Relu, &[h])?;
        let h = f.dropout(h, self.cfg.dropout_mid, mode)?;
        let latent = f.dense(h, self.dense2)?;
        let latent = f.op(Op::Relu, &[latent])?;
        let pred = f.dense(latent, self.out)?;
        Ok((pred, latent))
    }
}

/// Directed edge list with radial-basis edge features.
#[derive(Clone, Debug)]
pub(crate) struct EdgeSet<T> {
    pub src: Vec<usize>,
    pub dst: Vec<usize>,
    pub rbf: Option<DenseArray<T>>,
}

/// Disjoint union of several graphs.
#[derive(Clone, Debug)]
pub(crate) struct GraphBatch<T> {
    pub x: DenseArray<T>,
    pub cov: EdgeSet<T>,
    pub noncov: EdgeSet<T>,
    pub node_graph: Vec<usize>,
    pub n_graphs: usize,
}

fn rbf_row(d: f64, cutoff: f64, k: usize) -> impl Iterator<Item = f64> {
    let spacing = if k > 1 { cutoff / (k - 1) as f64 } else { cutoff };
    let gamma = 1.0 / (spacing * spacing);
    (0..k).map(move |i| {
        let mu = spacing * i as f64;
        (-gamma * (d - mu) * (d - mu)).exp()
    })
}

fn edge_set<T: Scalar>(parts: &[(usize, &[Edge])], cutoff: f64, k: usize) -> EdgeSet<T> {
    let (mut src, mut dst, mut feats) = (Vec::new(), Vec::new(), Vec::new());
    for &(offset, edges) in parts {
        for e in edges {
            let row: Vec<T> = rbf_row(e.dist, cutoff, k).map(T::lit).collect();
            for (s, t) in [(e.a, e.b), (e.b, e.a)] {
                src.push(offset + s);
                dst.push(offset + t);
                feats.extend_from_slice(&row);
            }
        }
    }
    let rbf = (!src.is_empty()).then(|| DenseArray::new(vec![src.len(), k], feats).expect("finite rbf"));
    EdgeSet { src, dst, rbf }
}

impl<T: Scalar> GraphBatch<T> {
    pub fn new(graphs: &[&ComplexGraph], features: &FeatureConfig, rbf_size: usize) -> Self {
        let width = graphs[0].feature_width();
        let mut x = Vec::new();
        let mut node_graph = Vec::new();
        let mut cov = Vec::new();
        let mut noncov = Vec::new();
        let mut offset = 0;
        for (gi, g) in graphs.iter().enumerate() {
            x.extend(g.node_features.data().iter().map(|&v| T::lit(v)));
            node_graph.extend(std::iter::repeat(gi).take(g.n_nodes()));
            cov.push((offset, g.covalent_edges.as_slice()));
            noncov.push((offset, g.noncovalent_edges.as_slice()));
            offset += g.n_nodes();
        }
        Self {
            x: DenseArray::new(vec![offset, width], x).expect("finite node features"),
            cov: edge_set(&cov, features.covalent_threshold, rbf_size),
            noncov: edge_set(&noncov, features.noncovalent_threshold, rbf_size),
            node_graph,
            n_graphs: graphs.len(),
        }
    }
}

#[derive(Clone, Debug)]
struct GatedStep {
    msg: DenseLayer,
    z: DenseLayer,
    r: DenseLayer,
    h: DenseLayer,
}

impl GatedStep {
    fn new<T: Scalar>(init: &mut Init<'_, T>, name: &str, width: usize, rbf: usize) -> Self {
        Self {
            msg: init.dense(&format!("{name}.msg"), width + rbf, width),
            z: init.dense(&format!("{name}.z"), 2 * width, width),
            r: init.dense(&format!("{name}.r"), 2 * width, width),
            h: init.dense(&format!("{name}.h"), 2 * width, width),
        }
    }

    /// `m_i = sum_j W[h_j, e_ij]`, then a GRU update
    /// `h' = h + z * (tanh(W_h [m, r * h]) - h)` with sigmoid gates
    /// `z, r = sigma(W [m, h])`.
    fn apply<T: Scalar>(&self, f: &mut Fwd<'_, T>, h: NodeId, edges: &EdgeSet<T>, n: usize) -> Result<NodeId, ModelError> {
        let width = f.g.value(h).shape()[1];
        let m = match &edges.rbf {
            None => f.g.input(DenseArray::zeros(&[n, width])),
            Some(rbf) => {
                let hs = f.op(Op::GatherRows { index: edges.src.clone().into() }, &[h])?;
                let e = f.g.input(rbf.clone());
                let cat = f.op(Op::Concat, &[hs, e])?;
                let msg = f.dense(cat, self.msg)?;
                f.op(Op::ScatterSum { index: edges.dst.clone().into(), rows: n }, &[msg])?
            }
        };
        let mh = f.op(Op::Concat, &[m, h])?;
        let z = f.dense(mh, self.z)?;
        let z = f.op(Op::Sigmoid, &[z])?;
        let r = f.dense(mh, self.r)?;
        let r = f.op(Op::Sigmoid, &[r])?;
        let rh = f.op(Op::Mul, &[r, h])?;
        let mrh = f.op(Op::Concat, &[m, rh])?;
        let cand = f.dense(mrh, self.h)?;
        let cand = f.op(Op::Tanh, &[cand])?;
        let delta = f.op(Op::Sub, &[cand, h])?;
        let upd = f.op(Op::Mul, &[z, delta])?;
        f.op(Op::Add, &[h, upd])
    }
}

#[derive(Clone, Debug)]
pub(crate) struct GraphHead {
    pub cfg: GraphHeadConfig,
    input: DenseLayer,
    cov: GatedStep,
    gate1: DenseLayer,
    proj1: DenseLayer,
    noncov: GatedStep,
    gate2: DenseLayer,
    proj2: DenseLayer,
    tail: Vec<DenseLayer>,
}

impl GraphHead {
    pub fn new<T: Scalar>(cfg: &GraphHeadConfig, node_width: usize, init: &mut Init<'_, T>) -> Self {
        let (wc, wn, r) = (cfg.gather_width_cov, cfg.gather_width_noncov, cfg.rbf_size);
        let input = init.dense("input", node_width, wc);
        let cov = GatedStep::new(init, "cov", wc, r);
        let gate1 = init.dense("gather1.gate", wc + node_width, wn);
        let proj1 = init.dense("gather1.proj", wc, wn);
        let noncov = GatedStep::new(init, "noncov", wn, r);
        let gate2 = init.dense("gather2.gate", wn + node_width, wn);
        let proj2 = init.dense("gather2.proj", wn, wn);
        let mut tail = Vec::new();
        let mut prev = wn;
        for (i, w) in cfg.dense_widths().into_iter().enumerate() {
            tail.push(init.dense(&format!("dense{}", i + 1), prev, w));
            prev = w;
        }
        Self { cfg: cfg.clone(), input, cov, gate1, proj1, noncov, gate2, proj2, tail }
    }

    pub fn out(&self) -> DenseLayer {
        *self.tail.last().expect("tail ends in the output layer")
    }

    /// Gated node-to-width projection `sigma(W_g [h, x]) * W_p h`.
    fn gather<T: Scalar>(f: &mut Fwd<'_, T>, h: NodeId, x: NodeId, gate: DenseLayer, proj: DenseLayer) -> Result<NodeId, ModelError> {
        let hx = f.op(Op::Concat, &[h, x])?;
        let gt = f.dense(hx, gate)?;
        let gt = f.op(Op::Sigmoid, &[gt])?;
        let p = f.dense(h, proj)?;
        f.op(Op::Mul, &[gt, p])
    }

    /// Returns `(prediction [B, 1], latent [B, gather_width_noncov])`.
    pub fn forward<T: Scalar>(&self, f: &mut Fwd<'_, T>, batch: &GraphBatch<T>) -> Result<(NodeId, NodeId), ModelError> {
        let n = batch.node_graph.len();
        let x = f.g.input(batch.x.clone());
        let mut h = f.dense(x, self.input)?;
        for _ in 0..self.cfg.k_cov {
            h = self.cov.apply(f, h, &batch.cov, n)?;
        }
        h = Self::gather(f, h, x, self.gate1, self.proj1)?;
        for _ in 0..self.cfg.k_noncov {
            h = self.noncov.apply(f, h, &batch.noncov, n)?;
        }
        let nodes = Self::gather(f, h, x, self.gate2, self.proj2)?;
        let latent = f.op(Op::ScatterSum { index: batch.node_graph.clone().into(), rows: batch.n_graphs }, &[nodes])?;
        let mut y = latent;
        let last = self.tail.len() - 1;
        for (i, l) in self.tail.iter().enumerate() {
            y = f.dense(y, *l)?;
            if i < last {
                y = f.op(Op::Relu, &[y])?;
            }
        }
        Ok((y, latent))
    }
}

/// Stacks voxel grids into `[B, C, G, G, G]`.
pub(crate) fn stack_grids<T: Scalar>(grids: &[&VoxelGrid]) -> DenseArray<T> {
    let first = &grids[0].occupancy;
    let mut shape = vec![grids.len()];
    shape.extend_from_slice(first.shape());
    let mut data = Vec::with_capacity(grids.len() * first.len());
    for g in grids {
        data.extend(g.occupancy.data().iter().map(|&v| T::lit(v)));
    }
    DenseArray::new(shape, data).expect("validated grids")
}
