use serde::{Deserialize, Serialize};

use super::DataError;

/// `-log10(k)` for a binding constant in molar units.
pub fn pk_from_k(k: f64) -> Result<f64, DataError> {
    if !(k > 0.0) || !k.is_finite() {
        return Err(DataError::NonPositiveConstant(k));
    }
    Ok(-k.log10())
}

/// Ki, Kd and IC50 are pooled as one label type.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum AffinityKind {
    Ki,
    Kd,
    Ic50,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AffinityLabel {
    pub k_value: f64,
    pub pk: f64,
    pub kind: AffinityKind,
}

impl AffinityLabel {
    pub fn from_k(k_value: f64, kind: AffinityKind) -> Result<Self, DataError> {
        Ok(Self { k_value, pk: pk_from_k(k_value)?, kind })
    }
}
