//! First-order optimizers with persistent per-parameter state.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{AutodiffError, Gradients, ParamId, ParamStore};
use crate::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Adam,
    AdamW,
    RmsProp,
    Adadelta,
}

impl OptimizerKind {
    pub const ALL: [OptimizerKind; 4] = [OptimizerKind::Adam, OptimizerKind::AdamW, OptimizerKind::RmsProp, OptimizerKind::Adadelta];

    pub fn name(self) -> &'static str {
        match self {
            OptimizerKind::Adam => "adam",
            OptimizerKind::AdamW => "adamw",
            OptimizerKind::RmsProp => "rmsprop",
            OptimizerKind::Adadelta => "adadelta",
        }
    }

    pub(crate) fn code(self) -> u8 {
        match self {
            OptimizerKind::Adam => 0,
            OptimizerKind::AdamW => 1,
            OptimizerKind::RmsProp => 2,
            OptimizerKind::Adadelta => 3,
        }
    }

    pub(crate) fn from_code(c: u8) -> Option<Self> {
        Self::ALL.get(c as usize).copied()
    }
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for OptimizerKind {
    type Err = AutodiffError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL.into_iter().find(|k| k.name().eq_ignore_ascii_case(s)).ok_or_else(|| AutodiffError::InvalidOptimizer(format!("unknown optimizer {s:?}")))
    }
}

/// Optimizer hyperparameters. `rho` is the squared-gradient decay for RMSprop
/// and Adadelta; `beta1`/`beta2` apply to the Adam family.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub rho: f64,
    pub weight_decay: f64,
}

impl OptimizerConfig {
    /// Per-kind defaults with the given learning rate.
    pub fn new(kind: OptimizerKind, learning_rate: f64) -> Result<Self, AutodiffError> {
        let (rho, eps, weight_decay) = match kind {
            OptimizerKind::Adam => (0.9, 1e-8, 0.0),
            OptimizerKind::AdamW => (0.9, 1e-8, 0.01),
            OptimizerKind::RmsProp => (0.99, 1e-8, 0.0),
            OptimizerKind::Adadelta => (0.9, 1e-6, 0.0),
        };
        let cfg = Self { kind, learning_rate, beta1: 0.9, beta2: 0.999, eps, rho, weight_decay };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn adam(learning_rate: f64) -> Result<Self, AutodiffError> {
        Self::new(OptimizerKind::Adam, learning_rate)
    }

    pub fn validate(&self) -> Result<(), AutodiffError> {
        let bad = |m: String| Err(AutodiffError::InvalidOptimizer(m));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning rate must be positive, got {}", self.learning_rate));
        }
        for (name, v) in [("beta1", self.beta1), ("beta2", self.beta2), ("rho", self.rho)] {
            if !(0.0..1.0).contains(&v) {
                return bad(format!("{name} must lie in [0, 1), got {v}"));
            }
        }
        if !(self.eps > 0.0) {
            return bad(format!("eps must be positive, got {}", self.eps));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad(format!("weight decay must be non-negative, got {}", self.weight_decay));
        }
        Ok(())
    }
}

/// Two moment buffers per parameter. Adam: first/second moments.
/// RMSprop: `second` only. Adadelta: `second` is the squared-gradient
/// average, `first` the squared-update average.
#[derive(Clone, Debug, PartialEq)]
pub struct Slots<T> {
    pub first: Vec<T>,
    pub second: Vec<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Optimizer<T> {
    pub(crate) config: OptimizerConfig,
    pub(crate) step: u64,
    pub(crate) slots: BTreeMap<ParamId, Slots<T>>,
}

impl<T: Scalar> Optimizer<T> {
    pub fn new(config: OptimizerConfig) -> Result<Self, AutodiffError> {
        config.validate()?;
        Ok(Self { config, step: 0, slots: BTreeMap::new() })
    }

    pub fn config(&self) -> &OptimizerConfig {
        &self.config
    }

    /// Number of completed steps.
    pub fn step_index(&self) -> u64 {
        self.step
    }

    /// Changes the learning rate while keeping accumulated state.
    pub fn set_learning_rate(&mut self, lr: f64) -> Result<(), AutodiffError> {
        let mut cfg = self.config;
        cfg.learning_rate = lr;
        cfg.validate()?;
        self.config = cfg;
        Ok(())
    }

    pub fn slots(&self, id: ParamId) -> Option<&Slots<T>> {
        self.slots.get(&id)
    }

    /// Applies one update to every id in `ids`. Each must have a gradient of
    /// matching shape; nothing is modified otherwise.
    pub fn step(&mut self, store: &mut ParamStore<T>, grads: &Gradients<T>, ids: &[ParamId]) -> Result<(), AutodiffError> {
        for &id in ids {
            let p = store.get(id);
            let g = grads.get(id).ok_or_else(|| AutodiffError::MissingGradient(p.name.clone()))?;
            if g.shape() != p.value.shape() {
                return Err(AutodiffError::GradientShape { name: p.name.clone(), expected: p.value.shape().to_vec(), got: g.shape().to_vec() });
            }
        }
        self.step += 1;
        let c = self.config;
        let lr = T::lit(c.learning_rate);
        let eps = T::lit(c.eps);
        let one = T::one();
        let t = self.step as i32;
        let bc1 = one - T::lit(c.beta1).powi(t);
        let bc2 = one - T::lit(c.beta2).powi(t);
        for &id in ids {
            let g = grads.get(id).expect("checked above").data();
            let w = store.value_mut(id).data_mut();
            let slots = self.slots.entry(id).or_insert_with(|| Slots { first: vec![T::zero(); w.len()], second: vec![T::zero(); w.len()] });
            match c.kind {
                OptimizerKind::Adam | OptimizerKind::AdamW => {
                    let (b1, b2) = (T::lit(c.beta1), T::lit(c.beta2));
                    let decay = if c.kind == OptimizerKind::AdamW { T::lit(c.learning_rate * c.weight_decay) } else { T::zero() };
                    for i in 0..w.len() {
                        slots.first[i] = b1 * slots.first[i] + (one - b1) * g[i];
                        slots.second[i] = b2 * slots.second[i] + (one - b2) * g[i] * g[i];
                        let mhat = slots.first[i] / bc1;
                        let vhat = slots.second[i] / bc2;
                        if decay != T::zero() {
                            w[i] -= decay * w[i];
                        }
                        w[i] -= lr * mhat / (vhat.sqrt() + eps);
                    }
                }
                OptimizerKind::RmsProp => {
                    let a = T::lit(c.rho);
                    for i in 0..w.len() {
                        slots.second[i] = a * slots.second[i] + (one - a) * g[i] * g[i];
                        w[i] -= lr * g[i] / (slots.second[i].sqrt() + eps);
                    }
                }
                OptimizerKind::Adadelta => {
                    let rho = T::lit(c.rho);
                    for i in 0..w.len() {
                        slots.second[i] = rho * slots.second[i] + (one - rho) * g[i] * g[i];
                        let delta = -((slots.first[i] + eps).sqrt() / (slots.second[i] + eps).sqrt()) * g[i];
                        slots.first[i] = rho * slots.first[i] + (one - rho) * delta * delta;
                        w[i] += lr * delta;
                    }
                }
            }
        }
        Ok(())
    }
}
