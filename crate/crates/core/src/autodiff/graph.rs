//! Reverse-mode differentiation tape over [`DenseArray`] values.
//!
//! Forward values are computed eagerly when a node is appended, so node ids
//! are topologically ordered by construction. [`Graph::backward`] walks the
//! tape once in reverse and accumulates gradients only along paths that reach
//! one of the requested parameters.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{AutodiffError, DenseArray, ParamId, ParamStore};
use crate::Scalar;

pub const LEAKY_RELU_SLOPE: f64 = 0.01;
pub const SELU_ALPHA: f64 = 1.673_263_242_354_377_3;
pub const SELU_LAMBDA: f64 = 1.050_700_987_355_480_5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Train/eval switch for batch-norm and dropout.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum OpKind {
    Dense,
    MatMul,
    Conv3d,
    MaxPool3d,
    Relu,
    LeakyRelu,
    Selu,
    Sigmoid,
    Tanh,
    BatchNorm,
    Dropout,
    Concat,
    Add,
    Sub,
    Mul,
    Mean,
    MseLoss,
    Reshape,
    GatherRows,
    ScatterSum,
}

impl OpKind {
    pub const ALL: [OpKind; 20] = [
        OpKind::Dense,
        OpKind::MatMul,
        OpKind::Conv3d,
        OpKind::MaxPool3d,
        OpKind::Relu,
        OpKind::LeakyRelu,
        OpKind::Selu,
        OpKind::Sigmoid,
        OpKind::Tanh,
        OpKind::BatchNorm,
        OpKind::Dropout,
        OpKind::Concat,
        OpKind::Add,
        OpKind::Sub,
        OpKind::Mul,
        OpKind::Mean,
        OpKind::MseLoss,
        OpKind::Reshape,
        OpKind::GatherRows,
        OpKind::ScatterSum,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OpKind::Dense => "dense",
            OpKind::MatMul => "matmul",
            OpKind::Conv3d => "conv3d",
            OpKind::MaxPool3d => "max-pool3d",
            OpKind::Relu => "relu",
            OpKind::LeakyRelu => "leaky-relu",
            OpKind::Selu => "selu",
            OpKind::Sigmoid => "sigmoid",
            OpKind::Tanh => "tanh",
            OpKind::BatchNorm => "batch-norm",
            OpKind::Dropout => "dropout",
            OpKind::Concat => "concat",
            OpKind::Add => "elementwise-add",
            OpKind::Sub => "elementwise-sub",
            OpKind::Mul => "elementwise-mul",
            OpKind::Mean => "arithmetic-mean",
            OpKind::MseLoss => "mse-loss",
            OpKind::Reshape => "reshape",
            OpKind::GatherRows => "gather-rows",
            OpKind::ScatterSum => "scatter-sum",
        }
    }
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for OpKind {
    type Err = AutodiffError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        OpKind::ALL.into_iter().find(|k| k.name() == s).ok_or_else(|| AutodiffError::UnknownOp(s.to_string()))
    }
}

/// Operation with its attributes.
#[derive(Clone, Debug, PartialEq)]
pub enum Op {
    /// `x[N,I] · w[I,O] + b[O]`
    Dense,
    /// `x[N,I] · w[I,O]`
    MatMul,
    /// Cubic odd kernel, stride 1, zero padding that keeps the spatial extent.
    /// Inputs `x[N,Ci,D,H,W]`, `w[Co,Ci,k,k,k]`, `b[Co]`.
    Conv3d,
    /// Non-overlapping `window³` pooling; extents must be divisible.
    MaxPool3d {
        window: usize,
    },
    Relu,
    LeakyRelu,
    Selu,
    Sigmoid,
    Tanh,
    /// Normalizes axis 1. Train: inputs `[x, gamma, beta]`, batch statistics.
    /// Eval: inputs `[x, gamma, beta, running_mean, running_var]`.
    BatchNorm {
        mode: Mode,
        eps: f64,
    },
    /// Inverted dropout; eval mode is the identity.
    Dropout {
        rate: f64,
        mode: Mode,
        seed: u64,
    },
    /// Concatenation along the last axis.
    Concat,
    Add,
    Sub,
    Mul,
    /// Arithmetic mean of any number of equally shaped inputs.
    Mean,
    /// Mean squared error between two equally shaped inputs, shape `[1]`.
    MseLoss,
    Reshape {
        shape: Vec<usize>,
    },
    /// `x[N,F] -> out[E,F]`, `out[e] = x[index[e]]`.
    GatherRows {
        index: Arc<[usize]>,
    },
    /// `x[E,F] -> out[rows,F]`, `out[index[e]] += x[e]`.
    ScatterSum {
        index: Arc<[usize]>,
        rows: usize,
    },
}

impl Op {
    pub fn kind(&self) -> OpKind {
        match self {
            Op::Dense => OpKind::Dense,
            Op::MatMul => OpKind::MatMul,
            Op::Conv3d => OpKind::Conv3d,
            Op::MaxPool3d { .. } => OpKind::MaxPool3d,
            Op::Relu => OpKind::Relu,
            Op::LeakyRelu => OpKind::LeakyRelu,
            Op::Selu => OpKind::Selu,
            Op::Sigmoid => OpKind::Sigmoid,
            Op::Tanh => OpKind::Tanh,
            Op::BatchNorm { .. } => OpKind::BatchNorm,
            Op::Dropout { .. } => OpKind::Dropout,
            Op::Concat => OpKind::Concat,
            Op::Add => OpKind::Add,
            Op::Sub => OpKind::Sub,
            Op::Mul => OpKind::Mul,
            Op::Mean => OpKind::Mean,
            Op::MseLoss => OpKind::MseLoss,
            Op::Reshape { .. } => OpKind::Reshape,
            Op::GatherRows { .. } => OpKind::GatherRows,
            Op::ScatterSum { .. } => OpKind::ScatterSum,
        }
    }
}

/// Loosely typed attributes for building an [`Op`] from its kind name.
#[derive(Clone, Debug, Default)]
pub struct OpAttrs {
    pub window: Option<usize>,
    pub rate: Option<f64>,
    pub mode: Option<Mode>,
    pub seed: Option<u64>,
    pub eps: Option<f64>,
    pub shape: Option<Vec<usize>>,
    pub index: Option<Vec<usize>>,
    pub rows: Option<usize>,
}

impl OpAttrs {
    pub fn to_op(&self, kind: OpKind) -> Result<Op, AutodiffError> {
        let missing = |what: &str| AutodiffError::MissingAttribute { op: kind.name(), attr: what.to_string() };
        Ok(match kind {
            OpKind::Dense => Op::Dense,
            OpKind::MatMul => Op::MatMul,
            OpKind::Conv3d => Op::Conv3d,
            OpKind::MaxPool3d => Op::MaxPool3d { window: self.window.ok_or_else(|| missing("window"))? },
            OpKind::Relu => Op::Relu,
            OpKind::LeakyRelu => Op::LeakyRelu,
            OpKind::Selu => Op::Selu,
            OpKind::Sigmoid => Op::Sigmoid,
            OpKind::Tanh => Op::Tanh,
            OpKind::BatchNorm => Op::BatchNorm { mode: self.mode.unwrap_or(Mode::Eval), eps: self.eps.unwrap_or(1e-5) },
            OpKind::Dropout => {
                Op::Dropout { rate: self.rate.ok_or_else(|| missing("rate"))?, mode: self.mode.unwrap_or(Mode::Eval), seed: self.seed.unwrap_or(0) }
            }
            OpKind::Concat => Op::Concat,
            OpKind::Add => Op::Add,
            OpKind::Sub => Op::Sub,
            OpKind::Mul => Op::Mul,
            OpKind::Mean => Op::Mean,
            OpKind::MseLoss => Op::MseLoss,
            OpKind::Reshape => Op::Reshape { shape: self.shape.clone().ok_or_else(|| missing("shape"))? },
            OpKind::GatherRows => Op::GatherRows { index: self.index.clone().ok_or_else(|| missing("index"))?.into() },
            OpKind::ScatterSum => {
                Op::ScatterSum { index: self.index.clone().ok_or_else(|| missing("index"))?.into(), rows: self.rows.ok_or_else(|| missing("rows"))? }
            }
        })
    }
}

#[derive(Clone, Debug)]
enum NodeOp {
    Input,
    Param(ParamId),
    Op(Op),
}

#[derive(Clone, Debug)]
enum Aux<T> {
    None,
    Mask(Vec<T>),
    Indices(Vec<usize>),
    Norm { xhat: Vec<T>, inv_std: Vec<T>, mean: Vec<T>, var: Vec<T> },
}

#[derive(Clone, Debug)]
struct Node<T> {
    op: NodeOp,
    inputs: Vec<NodeId>,
    value: DenseArray<T>,
    aux: Aux<T>,
}

/// Gradient of a scalar loss with respect to a set of parameters.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Gradients<T> {
    grads: BTreeMap<ParamId, DenseArray<T>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn new() -> Self {
        Self { grads: BTreeMap::new() }
    }

    pub fn get(&self, id: ParamId) -> Option<&DenseArray<T>> {
        self.grads.get(&id)
    }

    pub fn insert(&mut self, id: ParamId, g: DenseArray<T>) {
        self.grads.insert(id, g);
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &DenseArray<T>)> {
        self.grads.iter().map(|(&k, v)| (k, v))
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    /// Elementwise sum; both sides must cover the same parameters.
    pub fn accumulate(&mut self, other: &Gradients<T>) {
        for (id, g) in other.iter() {
            match self.grads.get_mut(&id) {
                Some(mine) => mine.add_assign(g),
                None => {
                    self.grads.insert(id, g.clone());
                }
            }
        }
    }
}

/// The differentiation tape.
#[derive(Clone, Debug, Default)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    param_nodes: HashMap<ParamId, NodeId>,
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new(), param_nodes: HashMap::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: NodeOp, inputs: Vec<NodeId>, value: DenseArray<T>, aux: Aux<T>) -> NodeId {
        self.nodes.push(Node { op, inputs, value, aux });
        NodeId(self.nodes.len() - 1)
    }

    /// Constant leaf.
    pub fn input(&mut self, value: DenseArray<T>) -> NodeId {
        self.push(NodeOp::Input, Vec::new(), value, Aux::None)
    }

    /// Parameter leaf. Repeated calls for the same id return the same node.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> NodeId {
        if let Some(&node) = self.param_nodes.get(&id) {
            return node;
        }
        let node = self.push(NodeOp::Param(id), Vec::new(), store.value(id).clone(), Aux::None);
        self.param_nodes.insert(id, node);
        node
    }

    pub fn value(&self, id: NodeId) -> &DenseArray<T> {
        &self.nodes[id.0].value
    }

    /// Batch mean and biased variance of a train-mode batch-norm node.
    pub fn batch_stats(&self, id: NodeId) -> Option<(&[T], &[T])> {
        match &self.nodes[id.0].aux {
            Aux::Norm { mean, var, .. } => Some((mean, var)),
            _ => None,
        }
    }

    /// True when some dropout node draws a random mask.
    pub fn has_active_dropout(&self) -> bool {
        self.nodes.iter().any(|n| matches!(&n.op, NodeOp::Op(Op::Dropout { rate, mode: Mode::Train, .. }) if *rate > 0.0))
    }

    /// Builds an op from its kind name; unknown kinds are rejected.
    pub fn apply_named(&mut self, kind: &str, inputs: &[NodeId], attrs: &OpAttrs) -> Result<NodeId, AutodiffError> {
        let kind: OpKind = kind.parse()?;
        let op = attrs.to_op(kind)?;
        self.apply(op, inputs)
    }

    /// Appends `op` applied to `inputs` and computes its value.
    pub fn apply(&mut self, op: Op, inputs: &[NodeId]) -> Result<NodeId, AutodiffError> {
        if let Some(bad) = inputs.iter().find(|id| id.0 >= self.nodes.len()) {
            return Err(AutodiffError::UnknownNode(bad.0));
        }
        let vals: Vec<&DenseArray<T>> = inputs.iter().map(|id| &self.nodes[id.0].value).collect();
        let (value, aux) = forward(&op, &vals)?;
        if !value.is_finite() {
            return Err(AutodiffError::NonFinite(op.kind().name().to_string()));
        }
        Ok(self.push(NodeOp::Op(op), inputs.to_vec(), value, aux))
    }

    // Shorthands used by the model code.

    pub fn dense(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId, AutodiffError> {
        self.apply(Op::Dense, &[x, w, b])
    }

    pub fn unary(&mut self, op: Op, x: NodeId) -> Result<NodeId, AutodiffError> {
        self.apply(op, &[x])
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, AutodiffError> {
        self.apply(Op::Add, &[a, b])
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, AutodiffError> {
        self.apply(Op::Mul, &[a, b])
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, AutodiffError> {
        self.apply(Op::Sub, &[a, b])
    }

    pub fn mse(&mut self, pred: NodeId, target: NodeId) -> Result<NodeId, AutodiffError> {
        self.apply(Op::MseLoss, &[pred, target])
    }

    /// Gradients of the scalar `loss` with respect to `wrt`. Parameters not on
    /// any path to `loss` get zero gradients.
    pub fn backward(&self, loss: NodeId, wrt: &[ParamId], store: &ParamStore<T>) -> Result<Gradients<T>, AutodiffError> {
        let loss_node = self.nodes.get(loss.0).ok_or(AutodiffError::UnknownNode(loss.0))?;
        if loss_node.value.len() != 1 {
            return Err(AutodiffError::NonScalarLoss(loss_node.value.shape().to_vec()));
        }
        let wanted: std::collections::HashSet<ParamId> = wrt.iter().copied().collect();
        let mut needs = vec![false; loss.0 + 1];
        for (i, node) in self.nodes[..=loss.0].iter().enumerate() {
            needs[i] = match &node.op {
                NodeOp::Input => false,
                NodeOp::Param(p) => wanted.contains(p),
                NodeOp::Op(_) => node.inputs.iter().any(|inp| needs[inp.0]),
            };
        }

        let mut grads: Vec<Option<DenseArray<T>>> = vec![None; loss.0 + 1];
        if needs[loss.0] {
            grads[loss.0] = Some(DenseArray::filled(loss_node.value.shape(), T::one()));
        }
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            let NodeOp::Op(op) = &node.op else { continue };
            let Some(gout) = grads[i].take() else { continue };
            let flags: Vec<bool> = node.inputs.iter().map(|inp| needs[inp.0]).collect();
            let vals: Vec<&DenseArray<T>> = node.inputs.iter().map(|inp| &self.nodes[inp.0].value).collect();
            let input_grads = backward_op(op, &vals, &node.value, &node.aux, &gout, &flags);
            for ((inp, flag), g) in node.inputs.iter().zip(flags).zip(input_grads) {
                if !flag {
                    continue;
                }
                if let Some(g) = g {
                    match &mut grads[inp.0] {
                        Some(acc) => acc.add_assign(&g),
                        slot @ None => *slot = Some(g),
                    }
                }
            }
            // Keep parameter-leaf gradients; op-node gradients are consumed above.
        }

        let mut out = Gradients::new();
        for &p in wrt {
            let g = self
                .param_nodes
                .get(&p)
                .filter(|n| n.0 <= loss.0)
                .and_then(|n| grads[n.0].clone())
                .unwrap_or_else(|| DenseArray::zeros(store.value(p).shape()));
            out.insert(p, g);
        }
        Ok(out)
    }
}

fn mismatch(op: &'static str, detail: String) -> AutodiffError {
    AutodiffError::ShapeMismatch { op, detail }
}

fn expect_inputs<T>(op: &'static str, vals: &[&DenseArray<T>], n: usize) -> Result<(), AutodiffError> {
    if vals.len() != n {
        return Err(AutodiffError::ArityMismatch { op, expected: n, got: vals.len() });
    }
    Ok(())
}

fn same_shape<T: Scalar>(op: &'static str, a: &DenseArray<T>, b: &DenseArray<T>) -> Result<(), AutodiffError> {
    if a.shape() != b.shape() {
        return Err(mismatch(op, format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

fn forward<T: Scalar>(op: &Op, vals: &[&DenseArray<T>]) -> Result<(DenseArray<T>, Aux<T>), AutodiffError> {
    let name = op.kind().name();
    let plain = |v| Ok((v, Aux::None));
    match op {
        Op::Dense | Op::MatMul => {
            let with_bias = matches!(op, Op::Dense);
            expect_inputs(name, vals, if with_bias { 3 } else { 2 })?;
            let (x, w) = (vals[0], vals[1]);
            if x.ndim() != 2 || w.ndim() != 2 || x.shape()[1] != w.shape()[0] {
                return Err(mismatch(name, format!("x {:?}, w {:?}", x.shape(), w.shape())));
            }
            let (n, k, m) = (x.shape()[0], x.shape()[1], w.shape()[1]);
            let mut out = vec![T::zero(); n * m];
            if with_bias {
                let b = vals[2];
                if b.shape() != [m] {
                    return Err(mismatch(name, format!("bias {:?}, expected [{m}]", b.shape())));
                }
                for row in out.chunks_mut(m) {
                    row.copy_from_slice(b.data());
                }
            }
            matmul_acc(x.data(), w.data(), &mut out, n, k, m);
            plain(DenseArray::from_parts(vec![n, m], out))
        }
        Op::Conv3d => {
            expect_inputs(name, vals, 3)?;
            let (x, w, b) = (vals[0], vals[1], vals[2]);
            let geo = ConvGeometry::new(x.shape(), w.shape(), b.shape())?;
            let mut out = vec![T::zero(); geo.n * geo.co * geo.vol()];
            conv3d_forward(&geo, x.data(), w.data(), b.data(), &mut out);
            plain(DenseArray::from_parts(vec![geo.n, geo.co, geo.d, geo.h, geo.w], out))
        }
        Op::MaxPool3d { window } => {
            expect_inputs(name, vals, 1)?;
            let x = vals[0];
            let s = x.shape();
            let win = *window;
            if s.len() != 5 || win == 0 || s[2] % win != 0 || s[3] % win != 0 || s[4] % win != 0 {
                return Err(mismatch(name, format!("input {:?} with window {win}", s)));
            }
            let (n, c, d, h, w) = (s[0], s[1], s[2], s[3], s[4]);
            let (od, oh, ow) = (d / win, h / win, w / win);
            let mut out = Vec::with_capacity(n * c * od * oh * ow);
            let mut arg = Vec::with_capacity(out.capacity());
            let xd = x.data();
            for plane in 0..n * c {
                let base = plane * d * h * w;
                for z in 0..od {
                    for y in 0..oh {
                        for xx in 0..ow {
                            let mut best = base + (z * win * h + y * win) * w + xx * win;
                            for dz in 0..win {
                                for dy in 0..win {
                                    let row = base + ((z * win + dz) * h + y * win + dy) * w + xx * win;
                                    for dx in 0..win {
                                        if xd[row + dx] > xd[best] {
                                            best = row + dx;
                                        }
                                    }
                                }
                            }
                            out.push(xd[best]);
                            arg.push(best);
                        }
                    }
                }
            }
            Ok((DenseArray::from_parts(vec![n, c, od, oh, ow], out), Aux::Indices(arg)))
        }
        Op::Relu | Op::LeakyRelu | Op::Selu | Op::Sigmoid | Op::Tanh => {
            expect_inputs(name, vals, 1)?;
            let f = activation_fn::<T>(op);
            plain(vals[0].map(f))
        }
        Op::BatchNorm { mode, eps } => batch_norm_forward(*mode, T::lit(*eps), vals),
        Op::Dropout { rate, mode, seed } => {
            expect_inputs(name, vals, 1)?;
            if !(0.0..1.0).contains(rate) {
                return Err(AutodiffError::InvalidAttribute(format!("dropout rate {rate} outside [0, 1)")));
            }
            let x = vals[0];
            if *mode == Mode::Eval || *rate == 0.0 {
                return plain(x.clone());
            }
            let keep = 1.0 - rate;
            let scale = T::lit(1.0 / keep);
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            let mask: Vec<T> = (0..x.len()).map(|_| if rng.random::<f64>() < keep { scale } else { T::zero() }).collect();
            let data = x.data().iter().zip(&mask).map(|(&v, &m)| v * m).collect();
            Ok((DenseArray::from_parts(x.shape().to_vec(), data), Aux::Mask(mask)))
        }
        Op::Concat => {
            let first = vals.first().ok_or(AutodiffError::ArityMismatch { op: name, expected: 1, got: 0 })?;
            let lead = &first.shape()[..first.ndim() - 1];
            let rows: usize = lead.iter().product();
            let mut width = 0;
            for v in vals {
                if v.ndim() != first.ndim() || &v.shape()[..v.ndim() - 1] != lead {
                    return Err(mismatch(name, format!("{:?} vs {:?}", first.shape(), v.shape())));
                }
                width += v.shape()[v.ndim() - 1];
            }
            let mut out = Vec::with_capacity(rows * width);
            for r in 0..rows {
                for v in vals {
                    let f = v.shape()[v.ndim() - 1];
                    out.extend_from_slice(&v.data()[r * f..(r + 1) * f]);
                }
            }
            let mut shape = lead.to_vec();
            shape.push(width);
            plain(DenseArray::from_parts(shape, out))
        }
        Op::Add | Op::Sub | Op::Mul => {
            expect_inputs(name, vals, 2)?;
            same_shape(name, vals[0], vals[1])?;
            let (a, b) = (vals[0].data(), vals[1].data());
            let data = match op {
                Op::Add => a.iter().zip(b).map(|(&x, &y)| x + y).collect(),
                Op::Sub => a.iter().zip(b).map(|(&x, &y)| x - y).collect(),
                _ => a.iter().zip(b).map(|(&x, &y)| x * y).collect(),
            };
            plain(DenseArray::from_parts(vals[0].shape().to_vec(), data))
        }
        Op::Mean => {
            let first = vals.first().ok_or(AutodiffError::ArityMismatch { op: name, expected: 1, got: 0 })?;
            for v in vals {
                same_shape(name, first, v)?;
            }
            let k = T::from_usize_lossy(vals.len());
            let data = (0..first.len()).map(|i| vals.iter().map(|v| v.data()[i]).sum::<T>() / k).collect();
            plain(DenseArray::from_parts(first.shape().to_vec(), data))
        }
        Op::MseLoss => {
            expect_inputs(name, vals, 2)?;
            same_shape(name, vals[0], vals[1])?;
            let n = T::from_usize_lossy(vals[0].len());
            let s: T = vals[0].data().iter().zip(vals[1].data()).map(|(&p, &t)| (p - t) * (p - t)).sum();
            plain(DenseArray::scalar(s / n))
        }
        Op::Reshape { shape } => {
            expect_inputs(name, vals, 1)?;
            plain(vals[0].reshaped(shape.clone())?)
        }
        Op::GatherRows { index } => {
            expect_inputs(name, vals, 1)?;
            let x = vals[0];
            if x.ndim() != 2 || index.is_empty() || index.iter().any(|&i| i >= x.shape()[0]) {
                return Err(mismatch(name, format!("x {:?} with {} indices", x.shape(), index.len())));
            }
            let f = x.shape()[1];
            let mut out = Vec::with_capacity(index.len() * f);
            for &i in index.iter() {
                out.extend_from_slice(&x.data()[i * f..(i + 1) * f]);
            }
            plain(DenseArray::from_parts(vec![index.len(), f], out))
        }
        Op::ScatterSum { index, rows } => {
            expect_inputs(name, vals, 1)?;
            let x = vals[0];
            if x.ndim() != 2 || x.shape()[0] != index.len() || *rows == 0 || index.iter().any(|&i| i >= *rows) {
                return Err(mismatch(name, format!("x {:?}, {} indices into {rows} rows", x.shape(), index.len())));
            }
            let f = x.shape()[1];
            let mut out = vec![T::zero(); rows * f];
            for (e, &i) in index.iter().enumerate() {
                for (o, &v) in out[i * f..(i + 1) * f].iter_mut().zip(&x.data()[e * f..(e + 1) * f]) {
                    *o += v;
                }
            }
            plain(DenseArray::from_parts(vec![*rows, f], out))
        }
    }
}

fn activation_fn<T: Scalar>(op: &Op) -> fn(T) -> T {
    match op {
        Op::Relu => |v: T| if v > T::zero() { v } else { T::zero() },
        Op::LeakyRelu => |v: T| if v > T::zero() { v } else { v * T::lit(LEAKY_RELU_SLOPE) },
        Op::Selu => |v: T| {
            if v > T::zero() {
                T::lit(SELU_LAMBDA) * v
            } else {
                T::lit(SELU_LAMBDA * SELU_ALPHA) * (v.exp() - T::one())
            }
        },
        Op::Sigmoid => |v: T| T::one() / (T::one() + (-v).exp()),
        Op::Tanh => |v: T| v.tanh(),
        _ => unreachable!("not an activation"),
    }
}

/// Derivative expressed through input `x` and output `y`.
fn activation_grad<T: Scalar>(op: &Op, x: T, y: T) -> T {
    match op {
        Op::Relu => {
            if x > T::zero() {
                T::one()
            } else {
                T::zero()
            }
        }
        Op::LeakyRelu => {
            if x > T::zero() {
                T::one()
            } else {
                T::lit(LEAKY_RELU_SLOPE)
            }
        }
        Op::Selu => {
            if x > T::zero() {
                T::lit(SELU_LAMBDA)
            } else {
                y + T::lit(SELU_LAMBDA * SELU_ALPHA)
            }
        }
        Op::Sigmoid => y * (T::one() - y),
        Op::Tanh => T::one() - y * y,
        _ => unreachable!("not an activation"),
    }
}

/// `out[n,m] += x[n,k] · w[k,m]`
fn matmul_acc<T: Scalar>(x: &[T], w: &[T], out: &mut [T], n: usize, k: usize, m: usize) {
    for r in 0..n {
        let orow = &mut out[r * m..(r + 1) * m];
        for (i, &xv) in x[r * k..(r + 1) * k].iter().enumerate() {
            if xv == T::zero() {
                continue;
            }
            for (o, &wv) in orow.iter_mut().zip(&w[i * m..(i + 1) * m]) {
                *o += xv * wv;
            }
        }
    }
}

struct ConvGeometry {
    n: usize,
    ci: usize,
    co: usize,
    d: usize,
    h: usize,
    w: usize,
    k: usize,
}

impl ConvGeometry {
    fn new(xs: &[usize], ws: &[usize], bs: &[usize]) -> Result<Self, AutodiffError> {
        let bad = || mismatch("conv3d", format!("x {xs:?}, w {ws:?}, b {bs:?}"));
        if xs.len() != 5 || ws.len() != 5 || bs.len() != 1 {
            return Err(bad());
        }
        let k = ws[2];
        if ws[1] != xs[1] || ws[3] != k || ws[4] != k || k % 2 == 0 || bs[0] != ws[0] {
            return Err(bad());
        }
        Ok(Self { n: xs[0], ci: xs[1], co: ws[0], d: xs[2], h: xs[3], w: xs[4], k })
    }

    fn vol(&self) -> usize {
        self.d * self.h * self.w
    }

    /// Valid output range along one axis for kernel offset `o` (padding k/2).
    fn range(&self, extent: usize, o: usize) -> (usize, usize) {
        let p = self.k / 2;
        let lo = p.saturating_sub(o);
        let hi = (extent + p).saturating_sub(o).min(extent);
        (lo, hi.max(lo))
    }
}

/// Adds the contribution of the listed nonzero input voxels to one output
/// plane; cheaper than the dense sweep when the input is mostly empty.
fn conv3d_scatter<T: Scalar>(g: &ConvGeometry, nonzero: &[(usize, T)], w: &[T], oplane: &mut [T]) {
    let (k, p) = (g.k, g.k / 2);
    let hw = g.h * g.w;
    for &(i, v) in nonzero {
        let (zi, yi, xi) = (i / hw, (i / g.w) % g.h, i % g.w);
        for dz in 0..k {
            let Some(z) = (zi + p).checked_sub(dz).filter(|&z| z < g.d) else { continue };
            for dy in 0..k {
                let Some(y) = (yi + p).checked_sub(dy).filter(|&y| y < g.h) else { continue };
                for dx in 0..k {
                    let Some(x) = (xi + p).checked_sub(dx).filter(|&x| x < g.w) else { continue };
                    oplane[(z * g.h + y) * g.w + x] += w[(dz * k + dy) * k + dx] * v;
                }
            }
        }
    }
}

fn conv3d_forward<T: Scalar>(g: &ConvGeometry, x: &[T], w: &[T], b: &[T], out: &mut [T]) {
    let (vol, k, p) = (g.vol(), g.k, g.k / 2);
    let k3 = k * k * k;
    // planes under a quarter full take the scatter path
    let sparse: Vec<Option<Vec<(usize, T)>>> = x
        .chunks(vol)
        .map(|plane| {
            let nz: Vec<(usize, T)> = plane.iter().enumerate().filter(|(_, v)| **v != T::zero()).map(|(i, &v)| (i, v)).collect();
            (nz.len() * 4 < vol).then_some(nz)
        })
        .collect();
    for n in 0..g.n {
        for co in 0..g.co {
            let oplane = &mut out[(n * g.co + co) * vol..(n * g.co + co + 1) * vol];
            oplane.fill(b[co]);
            for ci in 0..g.ci {
                let wbase = (co * g.ci + ci) * k3;
                if let Some(nz) = &sparse[n * g.ci + ci] {
                    conv3d_scatter(g, nz, &w[wbase..wbase + k3], oplane);
                    continue;
                }
                let iplane = &x[(n * g.ci + ci) * vol..(n * g.ci + ci + 1) * vol];
                for dz in 0..k {
                    let (z0, z1) = g.range(g.d, dz);
                    for dy in 0..k {
                        let (y0, y1) = g.range(g.h, dy);
                        for dx in 0..k {
                            let wv = w[wbase + (dz * k + dy) * k + dx];
                            let (x0, x1) = g.range(g.w, dx);
                            for z in z0..z1 {
                                let zi = z + dz - p;
                                for y in y0..y1 {
                                    let yi = y + dy - p;
                                    let orow = &mut oplane[(z * g.h + y) * g.w + x0..(z * g.h + y) * g.w + x1];
                                    let start = (zi * g.h + yi) * g.w + x0 + dx - p;
                                    let irow = &iplane[start..start + (x1 - x0)];
                                    for (o, &iv) in orow.iter_mut().zip(irow) {
                                        *o += wv * iv;
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

fn conv3d_backward<T: Scalar>(g: &ConvGeometry, x: &[T], w: &[T], gout: &[T], flags: &[bool]) -> (Option<Vec<T>>, Option<Vec<T>>, Option<Vec<T>>) {
    let (vol, k, p) = (g.vol(), g.k, g.k / 2);
    let mut dx = flags[0].then(|| vec![T::zero(); x.len()]);
    let mut dw = flags[1].then(|| vec![T::zero(); w.len()]);
    let db = flags[2].then(|| {
        let mut db = vec![T::zero(); g.co];
        for n in 0..g.n {
            for (co, acc) in db.iter_mut().enumerate() {
                *acc += gout[(n * g.co + co) * vol..(n * g.co + co + 1) * vol].iter().copied().sum::<T>();
            }
        }
        db
    });
    if dx.is_none() && dw.is_none() {
        return (dx, dw, db);
    }
    for n in 0..g.n {
        for co in 0..g.co {
            let gplane = &gout[(n * g.co + co) * vol..(n * g.co + co + 1) * vol];
            for ci in 0..g.ci {
                let ioff = (n * g.ci + ci) * vol;
                let wbase = (co * g.ci + ci) * k * k * k;
                for dz in 0..k {
                    let (z0, z1) = g.range(g.d, dz);
                    for dy in 0..k {
                        let (y0, y1) = g.range(g.h, dy);
                        for dxk in 0..k {
                            let widx = wbase + (dz * k + dy) * k + dxk;
                            let wv = w[widx];
                            let (x0, x1) = g.range(g.w, dxk);
                            let mut wacc = T::zero();
                            for z in z0..z1 {
                                let zi = z + dz - p;
                                for y in y0..y1 {
                                    let yi = y + dy - p;
                                    let grow = &gplane[(z * g.h + y) * g.w + x0..(z * g.h + y) * g.w + x1];
                                    let start = ioff + (zi * g.h + yi) * g.w + x0 + dxk - p;
                                    if let Some(dx) = dx.as_mut() {
                                        for (d, &gv) in dx[start..start + (x1 - x0)].iter_mut().zip(grow) {
                                            *d += wv * gv;
                                        }
                                    }
                                    if dw.is_some() {
                                        wacc += grow.iter().zip(&x[start..start + (x1 - x0)]).map(|(&gv, &xv)| gv * xv).sum::<T>();
                                    }
                                }
                            }
                            if let Some(dw) = dw.as_mut() {
                                dw[widx] += wacc;
                            }
                        }
                    }
                }
            }
        }
    }
    (dx, dw, db)
}

fn channel_layout(shape: &[usize]) -> (usize, usize, usize) {
    let n = shape[0];
    let c = shape[1];
    let inner: usize = shape[2..].iter().product();
    (n, c, inner)
}

fn batch_norm_forward<T: Scalar>(mode: Mode, eps: T, vals: &[&DenseArray<T>]) -> Result<(DenseArray<T>, Aux<T>), AutodiffError> {
    let name = "batch-norm";
    expect_inputs(name, vals, if mode == Mode::Train { 3 } else { 5 })?;
    let x = vals[0];
    if x.ndim() < 2 {
        return Err(mismatch(name, format!("input {:?} has no channel axis", x.shape())));
    }
    let (n, c, inner) = channel_layout(x.shape());
    for v in &vals[1..] {
        if v.shape() != [c] {
            return Err(mismatch(name, format!("per-channel input {:?}, expected [{c}]", v.shape())));
        }
    }
    let count = n * inner;
    let (mean, var) = match mode {
        Mode::Train => {
            if count < 2 {
                return Err(mismatch(name, format!("train mode needs >= 2 values per channel, input {:?}", x.shape())));
            }
            let mut mean = vec![T::zero(); c];
            let mut var = vec![T::zero(); c];
            for ch in 0..c {
                let it = (0..n).flat_map(|b| x.data()[(b * c + ch) * inner..(b * c + ch + 1) * inner].iter().copied());
                let m = it.clone().sum::<T>() / T::from_usize_lossy(count);
                let v = it.map(|v| (v - m) * (v - m)).sum::<T>() / T::from_usize_lossy(count);
                mean[ch] = m;
                var[ch] = v;
            }
            (mean, var)
        }
        Mode::Eval => (vals[3].data().to_vec(), vals[4].data().to_vec()),
    };
    if var.iter().any(|&v| v < T::zero()) {
        return Err(AutodiffError::InvalidAttribute("negative running variance".into()));
    }
    let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
    let (gamma, beta) = (vals[1].data(), vals[2].data());
    let mut xhat = vec![T::zero(); x.len()];
    let mut out = vec![T::zero(); x.len()];
    for b in 0..n {
        for ch in 0..c {
            let off = (b * c + ch) * inner;
            for i in off..off + inner {
                xhat[i] = (x.data()[i] - mean[ch]) * inv_std[ch];
                out[i] = gamma[ch] * xhat[i] + beta[ch];
            }
        }
    }
    Ok((DenseArray::from_parts(x.shape().to_vec(), out), Aux::Norm { xhat, inv_std, mean, var }))
}

fn backward_op<T: Scalar>(
    op: &Op,
    vals: &[&DenseArray<T>],
    out: &DenseArray<T>,
    aux: &Aux<T>,
    gout: &DenseArray<T>,
    flags: &[bool],
) -> Vec<Option<DenseArray<T>>> {
    let g = gout.data();
    match op {
        Op::Dense | Op::MatMul => {
            let (x, w) = (vals[0], vals[1]);
            let (n, k, m) = (x.shape()[0], x.shape()[1], w.shape()[1]);
            let dx = flags[0].then(|| {
                let mut dx = vec![T::zero(); n * k];
                for r in 0..n {
                    let grow = &g[r * m..(r + 1) * m];
                    for i in 0..k {
                        dx[r * k + i] = grow.iter().zip(&w.data()[i * m..(i + 1) * m]).map(|(&a, &b)| a * b).sum();
                    }
                }
                DenseArray::from_parts(vec![n, k], dx)
            });
            let dw = flags[1].then(|| {
                let mut dw = vec![T::zero(); k * m];
                for r in 0..n {
                    let grow = &g[r * m..(r + 1) * m];
                    for i in 0..k {
                        let xv = x.data()[r * k + i];
                        if xv == T::zero() {
                            continue;
                        }
                        for (d, &gv) in dw[i * m..(i + 1) * m].iter_mut().zip(grow) {
                            *d += xv * gv;
                        }
                    }
                }
                DenseArray::from_parts(vec![k, m], dw)
            });
            let mut res = vec![dx, dw];
            if matches!(op, Op::Dense) {
                res.push(flags[2].then(|| {
                    let mut db = vec![T::zero(); m];
                    for row in g.chunks(m) {
                        for (d, &gv) in db.iter_mut().zip(row) {
                            *d += gv;
                        }
                    }
                    DenseArray::from_parts(vec![m], db)
                }));
            }
            res
        }
        Op::Conv3d => {
            let geo = ConvGeometry::new(vals[0].shape(), vals[1].shape(), vals[2].shape()).expect("validated in forward");
            let (dx, dw, db) = conv3d_backward(&geo, vals[0].data(), vals[1].data(), g, flags);
            vec![
                dx.map(|d| DenseArray::from_parts(vals[0].shape().to_vec(), d)),
                dw.map(|d| DenseArray::from_parts(vals[1].shape().to_vec(), d)),
                db.map(|d| DenseArray::from_parts(vals[2].shape().to_vec(), d)),
            ]
        }
        Op::MaxPool3d { .. } => {
            let Aux::Indices(arg) = aux else { unreachable!("pool without indices") };
            let mut dx = vec![T::zero(); vals[0].len()];
            for (&src, &gv) in arg.iter().zip(g) {
                dx[src] += gv;
            }
            vec![Some(DenseArray::from_parts(vals[0].shape().to_vec(), dx))]
        }
        Op::Relu | Op::LeakyRelu | Op::Selu | Op::Sigmoid | Op::Tanh => {
            let dx = vals[0].data().iter().zip(out.data()).zip(g).map(|((&x, &y), &gv)| gv * activation_grad(op, x, y)).collect();
            vec![Some(DenseArray::from_parts(vals[0].shape().to_vec(), dx))]
        }
        Op::BatchNorm { mode, .. } => {
            let Aux::Norm { xhat, inv_std, .. } = aux else { unreachable!("batch-norm without statistics") };
            let x = vals[0];
            let (n, c, inner) = channel_layout(x.shape());
            let gamma = vals[1].data();
            let mut dgamma = vec![T::zero(); c];
            let mut dbeta = vec![T::zero(); c];
            for b in 0..n {
                for ch in 0..c {
                    let off = (b * c + ch) * inner;
                    for i in off..off + inner {
                        dgamma[ch] += g[i] * xhat[i];
                        dbeta[ch] += g[i];
                    }
                }
            }
            let dx = flags[0].then(|| {
                let mut dx = vec![T::zero(); x.len()];
                match mode {
                    Mode::Eval => {
                        for b in 0..n {
                            for ch in 0..c {
                                let off = (b * c + ch) * inner;
                                for i in off..off + inner {
                                    dx[i] = g[i] * gamma[ch] * inv_std[ch];
                                }
                            }
                        }
                    }
                    Mode::Train => {
                        let m = T::from_usize_lossy(n * inner);
                        for ch in 0..c {
                            // sums of dxhat and dxhat·xhat over the channel
                            let sum_dxhat = dbeta[ch] * gamma[ch];
                            let sum_dxhat_xhat = dgamma[ch] * gamma[ch];
                            for b in 0..n {
                                let off = (b * c + ch) * inner;
                                for i in off..off + inner {
                                    let dxhat = g[i] * gamma[ch];
                                    dx[i] = inv_std[ch] / m * (m * dxhat - sum_dxhat - xhat[i] * sum_dxhat_xhat);
                                }
                            }
                        }
                    }
                }
                DenseArray::from_parts(x.shape().to_vec(), dx)
            });
            let mut res = vec![dx, Some(DenseArray::from_parts(vec![c], dgamma)), Some(DenseArray::from_parts(vec![c], dbeta))];
            if *mode == Mode::Eval {
                res.push(None);
                res.push(None);
            }
            res
        }
        Op::Dropout { .. } => match aux {
            Aux::Mask(mask) => {
                let dx = g.iter().zip(mask).map(|(&gv, &m)| gv * m).collect();
                vec![Some(DenseArray::from_parts(gout.shape().to_vec(), dx))]
            }
            _ => vec![Some(gout.clone())],
        },
        Op::Concat => {
            let rows = gout.len() / gout.shape()[gout.ndim() - 1];
            let width = gout.shape()[gout.ndim() - 1];
            let mut offset = 0;
            let mut res = Vec::with_capacity(vals.len());
            for (v, &flag) in vals.iter().zip(flags) {
                let f = v.shape()[v.ndim() - 1];
                if flag {
                    let mut d = Vec::with_capacity(v.len());
                    for r in 0..rows {
                        d.extend_from_slice(&g[r * width + offset..r * width + offset + f]);
                    }
                    res.push(Some(DenseArray::from_parts(v.shape().to_vec(), d)));
                } else {
                    res.push(None);
                }
                offset += f;
            }
            res
        }
        Op::Add => vec![flags[0].then(|| gout.clone()), flags[1].then(|| gout.clone())],
        Op::Sub => vec![flags[0].then(|| gout.clone()), flags[1].then(|| gout.map(|v| -v))],
        Op::Mul => {
            let (a, b) = (vals[0], vals[1]);
            let da = flags[0].then(|| DenseArray::from_parts(a.shape().to_vec(), g.iter().zip(b.data()).map(|(&gv, &bv)| gv * bv).collect()));
            let db = flags[1].then(|| DenseArray::from_parts(b.shape().to_vec(), g.iter().zip(a.data()).map(|(&gv, &av)| gv * av).collect()));
            vec![da, db]
        }
        Op::Mean => {
            let k = T::from_usize_lossy(vals.len());
            let d = gout.map(|v| v / k);
            flags.iter().map(|&f| f.then(|| d.clone())).collect()
        }
        Op::MseLoss => {
            let (p, t) = (vals[0], vals[1]);
            let scale = g[0] * T::lit(2.0) / T::from_usize_lossy(p.len());
            let diff: Vec<T> = p.data().iter().zip(t.data()).map(|(&a, &b)| (a - b) * scale).collect();
            let dp = flags[0].then(|| DenseArray::from_parts(p.shape().to_vec(), diff.clone()));
            let dt = flags[1].then(|| DenseArray::from_parts(t.shape().to_vec(), diff.iter().map(|&v| -v).collect()));
            vec![dp, dt]
        }
        Op::Reshape { .. } => vec![Some(DenseArray::from_parts(vals[0].shape().to_vec(), g.to_vec()))],
        Op::GatherRows { index } => {
            let x = vals[0];
            let f = x.shape()[1];
            let mut dx = vec![T::zero(); x.len()];
            for (e, &i) in index.iter().enumerate() {
                for (d, &gv) in dx[i * f..(i + 1) * f].iter_mut().zip(&g[e * f..(e + 1) * f]) {
                    *d += gv;
                }
            }
            vec![Some(DenseArray::from_parts(x.shape().to_vec(), dx))]
        }
        Op::ScatterSum { index, .. } => {
            let f = vals[0].shape()[1];
            let mut dx = Vec::with_capacity(vals[0].len());
            for &i in index.iter() {
                dx.extend_from_slice(&g[i * f..(i + 1) * f]);
            }
            vec![Some(DenseArray::from_parts(vals[0].shape().to_vec(), dx))]
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::ParamGroup;

    fn arr(shape: &[usize], data: &[f64]) -> DenseArray<f64> {
        DenseArray::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn activation_examples() {
        let mut g = Graph::new();
        let x = g.input(arr(&[3], &[-1.0, 0.0, 2.0]));
        let r = g.unary(Op::Relu, x).unwrap();
        assert_eq!(g.value(r).data(), &[0.0, 0.0, 2.0]);
        let z = g.input(arr(&[1], &[0.0]));
        let s = g.unary(Op::Selu, z).unwrap();
        assert_eq!(g.value(s).data(), &[0.0]);
        let l = g.unary(Op::LeakyRelu, x).unwrap();
        assert_eq!(g.value(l).data(), &[-0.01, 0.0, 2.0]);
    }

    #[test]
    fn mse_and_mean_examples() {
        let mut g = Graph::new();
        let p = g.input(arr(&[2], &[1.0, 2.0]));
        let t = g.input(arr(&[2], &[1.0, 2.0]));
        let l = g.mse(p, t).unwrap();
        assert_eq!(g.value(l).data(), &[0.0]);
        let a = g.input(DenseArray::scalar(7.0));
        let b = g.input(DenseArray::scalar(8.0));
        let m = g.apply(Op::Mean, &[a, b]).unwrap();
        assert_eq!(g.value(m).as_scalar(), Some(7.5));
    }

    #[test]
    fn unknown_kind_and_shape_errors() {
        let mut g = Graph::<f64>::new();
        let x = g.input(arr(&[2, 3], &[0.0; 6]));
        let w = g.input(arr(&[2, 2], &[0.0; 4]));
        let b = g.input(arr(&[2], &[0.0; 2]));
        let err = g.apply_named("softmax", &[x], &OpAttrs::default()).unwrap_err();
        assert!(matches!(err, AutodiffError::UnknownOp(_)));
        let err = g.dense(x, w, b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("dense") && msg.contains("[2, 3]") && msg.contains("[2, 2]"), "{msg}");
        let attrs = OpAttrs { rate: Some(1.0), mode: Some(Mode::Train), ..Default::default() };
        assert!(g.apply_named("dropout", &[x], &attrs).is_err());
        let relu = g.apply_named("relu", &[x], &OpAttrs::default()).unwrap();
        assert_eq!(g.value(relu).shape(), &[2, 3]);
    }

    #[test]
    fn square_and_mean_gradients() {
        let mut store = ParamStore::new();
        let w = store.add("w", ParamGroup::Other, DenseArray::scalar(3.0));
        let mut g = Graph::new();
        let wn = g.param(&store, w);
        let sq = g.mul(wn, wn).unwrap();
        let grads = g.backward(sq, &[w], &store).unwrap();
        assert_eq!(grads.get(w).unwrap().data(), &[6.0]);

        let mut store = ParamStore::new();
        let w1 = store.add("w1", ParamGroup::Other, DenseArray::scalar(1.0));
        let w2 = store.add("w2", ParamGroup::Other, DenseArray::scalar(-4.0));
        let unused = store.add("u", ParamGroup::Other, arr(&[2], &[1.0, 1.0]));
        let mut g = Graph::new();
        let a = g.param(&store, w1);
        let b = g.param(&store, w2);
        let m = g.apply(Op::Mean, &[a, b]).unwrap();
        let grads = g.backward(m, &[w1, w2, unused], &store).unwrap();
        assert_eq!(grads.get(w1).unwrap().data(), &[0.5]);
        assert_eq!(grads.get(w2).unwrap().data(), &[0.5]);
        assert_eq!(grads.get(unused).unwrap().data(), &[0.0, 0.0]);
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let store = ParamStore::<f64>::new();
        let mut g = Graph::new();
        let x = g.input(arr(&[2], &[1.0, 2.0]));
        assert!(matches!(g.backward(x, &[], &store), Err(AutodiffError::NonScalarLoss(_))));
    }

    #[test]
    fn eval_dropout_is_identity_and_train_scales() {
        let mut g = Graph::new();
        let x = g.input(arr(&[1000], &vec![1.0; 1000]));
        let e = g.unary(Op::Dropout { rate: 0.25, mode: Mode::Eval, seed: 1 }, x).unwrap();
        assert_eq!(g.value(e), g.value(x));
        assert!(!g.has_active_dropout());
        let t = g.unary(Op::Dropout { rate: 0.25, mode: Mode::Train, seed: 1 }, x).unwrap();
        assert!(g.has_active_dropout());
        for &v in g.value(t).data() {
            assert!(v == 0.0 || (v - 1.0 / 0.75).abs() < 1e-15);
        }
        let kept = g.value(t).data().iter().filter(|&&v| v > 0.0).count();
        assert!((650..850).contains(&kept), "{kept}");
    }

    #[test]
    fn conv_same_padding_preserves_extent_and_matches_direct_sum() {
        let xs = [1, 2, 4, 4, 4];
        let x: Vec<f64> = (0..128).map(|i| ((i * 37 % 11) as f64) / 7.0 - 0.6).collect();
        let w: Vec<f64> = (0..3 * 2 * 27).map(|i| ((i * 13 % 17) as f64) / 9.0 - 0.9).collect();
        let b = vec![0.1, -0.2, 0.3];
        let mut g = Graph::new();
        let xn = g.input(arr(&xs, &x));
        let wn = g.input(arr(&[3, 2, 3, 3, 3], &w));
        let bn = g.input(arr(&[3], &b));
        let y = g.apply(Op::Conv3d, &[xn, wn, bn]).unwrap();
        assert_eq!(g.value(y).shape(), &[1, 3, 4, 4, 4]);
        // direct sum
        let at = |c: usize, z: i64, yy: i64, xx: i64| -> f64 {
            if !(0..4).contains(&z) || !(0..4).contains(&yy) || !(0..4).contains(&xx) {
                0.0
            } else {
                x[((c * 4 + z as usize) * 4 + yy as usize) * 4 + xx as usize]
            }
        };
        for co in 0..3 {
            for z in 0..4i64 {
                for yy in 0..4i64 {
                    for xx in 0..4i64 {
                        let mut s = b[co];
                        for ci in 0..2 {
                            for dz in 0..3i64 {
                                for dy in 0..3i64 {
                                    for dx in 0..3i64 {
                                        let wi = ((co * 2 + ci) * 27) + ((dz * 3 + dy) * 3 + dx) as usize;
                                        s += w[wi] * at(ci, z + dz - 1, yy + dy - 1, xx + dx - 1);
                                    }
                                }
                            }
                        }
                        let got = g.value(y).data()[((co * 4 + z as usize) * 4 + yy as usize) * 4 + xx as usize];
                        assert!((got - s).abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn sparse_input_planes_match_direct_sum() {
        // channel 0 has three occupied voxels, channel 1 is dense
        let g5 = 5usize;
        let vol = g5 * g5 * g5;
        let mut x = vec![0.0; 2 * vol];
        for (i, v) in [(0, 1.0), (62, 2.0), (124, -1.5)] {
            x[i] = v;
        }
        for (i, v) in x[vol..].iter_mut().enumerate() {
            *v = ((i * 7 % 13) as f64) / 5.0 - 1.0;
        }
        let w: Vec<f64> = (0..2 * 2 * 27).map(|i| ((i * 13 % 17) as f64) / 9.0 - 0.9).collect();
        let b = vec![0.25, -0.5];
        let mut g = Graph::new();
        let xn = g.input(arr(&[1, 2, g5, g5, g5], &x));
        let wn = g.input(arr(&[2, 2, 3, 3, 3], &w));
        let bn = g.input(arr(&[2], &b));
        let y = g.apply(Op::Conv3d, &[xn, wn, bn]).unwrap();
        let e = g5 as i64;
        let at = |c: usize, z: i64, yy: i64, xx: i64| -> f64 {
            if [z, yy, xx].iter().all(|v| (0..e).contains(v)) {
                x[c * vol + ((z * e + yy) * e + xx) as usize]
            } else {
                0.0
            }
        };
        for co in 0..2 {
            for o in 0..vol {
                let (z, yy, xx) = ((o / 25) as i64, (o / 5 % 5) as i64, (o % 5) as i64);
                let mut s = b[co];
                for ci in 0..2 {
                    for k in 0..27i64 {
                        s += w[(co * 2 + ci) * 27 + k as usize] * at(ci, z + k / 9 - 1, yy + k / 3 % 3 - 1, xx + k % 3 - 1);
                    }
                }
                assert!((g.value(y).data()[co * vol + o] - s).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn maxpool_and_scatter_shapes() {
        let mut g = Graph::new();
        let x = g.input(arr(&[1, 1, 2, 2, 2], &[1.0, 5.0, 2.0, 0.0, -1.0, 3.0, 4.0, 2.0]));
        let p = g.apply(Op::MaxPool3d { window: 2 }, &[x]).unwrap();
        assert_eq!(g.value(p).data(), &[5.0]);
        assert!(g.apply(Op::MaxPool3d { window: 3 }, &[x]).is_err());

        let h = g.input(arr(&[3, 2], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
        let gathered = g.apply(Op::GatherRows { index: vec![2, 0, 2].into() }, &[h]).unwrap();
        assert_eq!(g.value(gathered).data(), &[5.0, 6.0, 1.0, 2.0, 5.0, 6.0]);
        let s = g.apply(Op::ScatterSum { index: vec![1, 1, 0].into(), rows: 2 }, &[gathered]).unwrap();
        assert_eq!(g.value(s).data(), &[5.0, 6.0, 6.0, 8.0]);
    }
}
