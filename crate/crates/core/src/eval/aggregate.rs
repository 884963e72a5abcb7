use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::Scalar;

/// Poses allowed per compound and target.
pub const MAX_POSES: usize = 10;

/// Which end of a score scale means tighter binding.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Direction {
    /// Predicted pK and similar.
    HigherIsStronger,
    /// Docking energies.
    LowerIsStronger,
}

impl Direction {
    /// Maps a score onto a higher-is-stronger scale.
    pub fn orient<T: Scalar>(self, s: T) -> T {
        match self {
            Direction::HigherIsStronger => s,
            Direction::LowerIsStronger => -s,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoseScore<T> {
    pub compound_id: String,
    pub target_id: String,
    pub pose_id: u32,
    pub score: T,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BestPose<T> {
    pub compound_id: String,
    pub target_id: String,
    pub pose_id: u32,
    pub score: T,
}

/// Strongest pose per (compound, target), sorted by key. Ties go to the
/// lowest pose id.
pub fn aggregate_best_pose<T: Scalar>(records: &[PoseScore<T>], direction: Direction) -> Result<Vec<BestPose<T>>, EvalError> {
    let mut groups: BTreeMap<(&str, &str), Vec<&PoseScore<T>>> = BTreeMap::new();
    for (i, r) in records.iter().enumerate() {
        if !r.score.is_finite() {
            return Err(EvalError::NonFinite(i));
        }
        groups.entry((&r.compound_id, &r.target_id)).or_default().push(r);
    }
    let mut out = Vec::with_capacity(groups.len());
    for ((c, t), mut poses) in groups {
        let group = || format!("{c}/{t}");
        if poses.len() > MAX_POSES {
            return Err(EvalError::InvalidGroup { group: group(), reason: format!("{} poses, at most {MAX_POSES} allowed", poses.len()) });
        }
        poses.sort_by_key(|p| p.pose_id);
        if poses.windows(2).any(|w| w[0].pose_id == w[1].pose_id) {
            return Err(EvalError::InvalidGroup { group: group(), reason: "duplicate pose id".into() });
        }
        let mut best = poses[0];
        for p in &poses[1..] {
            if direction.orient(p.score) > direction.orient(best.score) {
                best = p;
            }
        }
        out.push(BestPose { compound_id: c.to_string(), target_id: t.to_string(), pose_id: best.pose_id, score: best.score });
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoseRmsd<T> {
    pub compound_id: String,
    pub target_id: String,
    pub pose_id: u32,
    /// Deviation from the reference pose, Å.
    pub rmsd: T,
}

/// Poses with `rmsd < cutoff`; the comparison is strict.
pub fn filter_by_rmsd<T: Scalar>(poses: &[PoseRmsd<T>], cutoff: T) -> Vec<PoseRmsd<T>> {
    poses.iter().filter(|p| p.rmsd < cutoff).cloned().collect()
}
