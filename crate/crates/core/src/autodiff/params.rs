use serde::{Deserialize, Serialize};

use super::DenseArray;
use crate::Scalar;

/// Index of a parameter inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ParamId(pub usize);

/// Which block of a fusion model a parameter belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ParamGroup {
    Voxel,
    Graph,
    Fusion,
    Other,
}

impl ParamGroup {
    pub(crate) fn code(self) -> u8 {
        match self {
            ParamGroup::Voxel => 0,
            ParamGroup::Graph => 1,
            ParamGroup::Fusion => 2,
            ParamGroup::Other => 3,
        }
    }

    pub(crate) fn from_code(code: u8) -> Option<Self> {
        Some(match code {
            0 => ParamGroup::Voxel,
            1 => ParamGroup::Graph,
            2 => ParamGroup::Fusion,
            3 => ParamGroup::Other,
            _ => return None,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Parameter<T> {
    pub name: String,
    pub group: ParamGroup,
    /// Buffers (batch-norm running statistics) are stored but never optimized.
    pub trainable: bool,
    pub value: DenseArray<T>,
}

/// Named, grouped parameter set. Order of insertion is the id order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore<T> {
    params: Vec<Parameter<T>>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self { params: Vec::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, group: ParamGroup, value: DenseArray<T>) -> ParamId {
        self.push(name.into(), group, true, value)
    }

    pub fn add_buffer(&mut self, name: impl Into<String>, group: ParamGroup, value: DenseArray<T>) -> ParamId {
        self.push(name.into(), group, false, value)
    }

    fn push(&mut self, name: String, group: ParamGroup, trainable: bool, value: DenseArray<T>) -> ParamId {
        self.params.push(Parameter { name, group, trainable, value });
        ParamId(self.params.len() - 1)
    }

    pub(crate) fn push_parameter(&mut self, p: Parameter<T>) {
        self.params.push(p);
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Parameter<T> {
        &self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &DenseArray<T> {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut DenseArray<T> {
        &mut self.params[id.0].value
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter<T>)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    /// Trainable parameter ids whose group is in `groups`.
    pub fn trainable_in(&self, groups: &[ParamGroup]) -> Vec<ParamId> {
        self.iter().filter(|(_, p)| p.trainable && groups.contains(&p.group)).map(|(id, _)| id).collect()
    }

    pub fn trainable_ids(&self) -> Vec<ParamId> {
        self.iter().filter(|(_, p)| p.trainable).map(|(id, _)| id).collect()
    }

    /// Total scalar count of trainable parameters.
    pub fn trainable_count(&self) -> usize {
        self.params.iter().filter(|p| p.trainable).map(|p| p.value.len()).sum()
    }

    /// Flattened copy of every value in `group`, for before/after comparisons.
    pub fn group_values(&self, group: ParamGroup) -> Vec<T> {
        self.params.iter().filter(|p| p.group == group).flat_map(|p| p.value.data().iter().copied()).collect()
    }
}
