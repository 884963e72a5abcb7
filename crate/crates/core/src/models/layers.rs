use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::ModelError;
use crate::autodiff::{DenseArray, Graph, Mode, NodeId, Op, ParamGroup, ParamId, ParamStore};
use crate::Scalar;

pub(crate) const BN_EPS: f64 = 1e-5;
pub(crate) const BN_MOMENTUM: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) struct DenseLayer {
    pub w: ParamId,
    pub b: ParamId,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) struct ConvLayer {
    pub w: ParamId,
    pub b: ParamId,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) struct BnLayer {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub mean: ParamId,
    pub var: ParamId,
}

/// Adds freshly initialized parameters to a store. Weights and biases are
/// drawn from `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
pub(crate) struct Init<'a, T> {
    pub store: &'a mut ParamStore<T>,
    pub rng: ChaCha8Rng,
    pub group: ParamGroup,
    pub prefix: &'static str,
}

impl<'a, T: Scalar> Init<'a, T> {
    pub fn new(store: &'a mut ParamStore<T>, seed: u64, group: ParamGroup, prefix: &'static str) -> Self {
        Self { store, rng: ChaCha8Rng::seed_from_u64(seed), group, prefix }
    }

    fn uniform(&mut self, shape: &[usize], fan_in: usize) -> DenseArray<T> {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let n = shape.iter().product();
        let data = (0..n).map(|_| T::lit(self.rng.random_range(-bound..bound))).collect();
        DenseArray::new(shape.to_vec(), data).expect("positive shape")
    }

    pub fn dense(&mut self, name: &str, fan_in: usize, fan_out: usize) -> DenseLayer {
        let w = self.uniform(&[fan_in, fan_out], fan_in);
        let b = self.uniform(&[fan_out], fan_in);
        DenseLayer {
            w: self.store.add(format!("{}.{name}.w", self.prefix), self.group, w),
            b: self.store.add(format!("{}.{name}.b", self.prefix), self.group, b),
        }
    }

    pub fn conv(&mut self, name: &str, ci: usize, co: usize, k: usize) -> ConvLayer {
        let fan_in = ci * k * k * k;
        let w = self.uniform(&[co, ci, k, k, k], fan_in);
        let b = self.uniform(&[co], fan_in);
        ConvLayer {
            w: self.store.add(format!("{}.{name}.w", self.prefix), self.group, w),
            b: self.store.add(format!("{}.{name}.b", self.prefix), self.group, b),
        }
    }

    pub fn batch_norm(&mut self, name: &str, c: usize) -> BnLayer {
        let p = self.prefix;
        BnLayer {
            gamma: self.store.add(format!("{p}.{name}.gamma"), self.group, DenseArray::filled(&[c], T::one())),
            beta: self.store.add(format!("{p}.{name}.beta"), self.group, DenseArray::zeros(&[c])),
            mean: self.store.add_buffer(format!("{p}.{name}.running_mean"), self.group, DenseArray::zeros(&[c])),
            var: self.store.add_buffer(format!("{p}.{name}.running_var"), self.group, DenseArray::filled(&[c], T::one())),
        }
    }
}

/// Batch statistics of a train-mode normalization node, applied to the
/// running buffers after the optimizer step.
#[derive(Clone, Copy, Debug)]
pub(crate) struct BnRecord {
    pub node: NodeId,
    pub layer: BnLayer,
}

/// One forward pass under construction.
pub(crate) struct Fwd<'a, T> {
    pub g: Graph<T>,
    pub store: &'a ParamStore<T>,
    seed: u64,
    counter: u64,
    pub bn: Vec<BnRecord>,
}

impl<'a, T: Scalar> Fwd<'a, T> {
    pub fn new(store: &'a ParamStore<T>, seed: u64) -> Self {
        Self { g: Graph::new(), store, seed, counter: 0, bn: Vec::new() }
    }

    pub fn dense(&mut self, x: NodeId, l: DenseLayer) -> Result<NodeId, ModelError> {
        let w = self.g.param(self.store, l.w);
        let b = self.g.param(self.store, l.b);
        Ok(self.g.dense(x, w, b)?)
    }

    pub fn conv(&mut self, x: NodeId, l: ConvLayer) -> Result<NodeId, ModelError> {
        let w = self.g.param(self.store, l.w);
        let b = self.g.param(self.store, l.b);
        Ok(self.g.apply(Op::Conv3d, &[x, w, b])?)
    }

    pub fn op(&mut self, op: Op, inputs: &[NodeId]) -> Result<NodeId, ModelError> {
        Ok(self.g.apply(op, inputs)?)
    }

    /// Skipped entirely in eval mode or at rate 0, so eval graphs carry no
    /// dropout nodes.
    pub fn dropout(&mut self, x: NodeId, rate: f64, mode: Mode) -> Result<NodeId, ModelError> {
        if mode == Mode::Eval || rate == 0.0 {
            return Ok(x);
        }
        self.counter += 1;
        let seed = self.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(self.counter);
        Ok(self.g.apply(Op::Dropout { rate, mode, seed }, &[x])?)
    }

    pub fn batch_norm(&mut self, x: NodeId, l: BnLayer, mode: Mode) -> Result<NodeId, ModelError> {
        let mut ins = vec![x, self.g.param(self.store, l.gamma), self.g.param(self.store, l.beta)];
        if mode == Mode::Eval {
            ins.push(self.g.param(self.store, l.mean));
            ins.push(self.g.param(self.store, l.var));
        }
        let y = self.g.apply(Op::BatchNorm { mode, eps: BN_EPS }, &ins)?;
        if mode == Mode::Train {
            self.bn.push(BnRecord { node: y, layer: l });
        }
        Ok(y)
    }
}

/// Folds recorded batch statistics into the running buffers.
pub(crate) fn update_running_stats<T: Scalar>(g: &Graph<T>, records: &[BnRecord], store: &mut ParamStore<T>) {
    let m = T::lit(BN_MOMENTUM);
    for r in records {
        let Some((mean, var)) = g.batch_stats(r.node) else { continue };
        let shape = g.value(r.node).shape();
        let count = shape[0] * shape[2..].iter().product::<usize>();
        let unbias = if count > 1 { T::from_usize_lossy(count) / T::from_usize_lossy(count - 1) } else { T::one() };
        let (mean, var) = (mean.to_vec(), var.to_vec());
        for (dst, src) in store.value_mut(r.layer.mean).data_mut().iter_mut().zip(&mean) {
            *dst = (T::one() - m) * *dst + m * *src;
        }
        for (dst, src) in store.value_mut(r.layer.var).data_mut().iter_mut().zip(&var) {
            *dst = (T::one() - m) * *dst + m * *src * unbias;
        }
    }
}
