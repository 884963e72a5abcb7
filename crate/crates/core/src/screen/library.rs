use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};

use super::ScreenError;
use crate::data::{generate_complex, GenParams, SyntheticComplex};
use crate::eval::{Direction, ExperimentalRow, ExperimentalTable, MethodScores, ValueKind, MAX_POSES};
use crate::mix_seed;

/// What a loader needs to build the pose: either the complex itself or the
/// seed that regenerates it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PosePayload {
    Seed(u64),
    Complex(Box<SyntheticComplex>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoseRecord {
    pub compound_id: String,
    pub target_id: String,
    pub pose_id: u32,
    pub payload: PosePayload,
}

impl PoseRecord {
    pub fn key(&self) -> (String, String, u32) {
        (self.compound_id.clone(), self.target_id.clone(), self.pose_id)
    }
}

pub fn parse_record(line: &str) -> Result<PoseRecord, String> {
    let r: PoseRecord = serde_json::from_str(line).map_err(|e| format!("unreadable record: {e}"))?;
    if r.pose_id as usize >= MAX_POSES {
        return Err(format!("pose id {} outside [0, {MAX_POSES})", r.pose_id));
    }
    Ok(r)
}

/// Seed-referenced library: `poses` poses for every compound and target,
/// compound-major, deterministic in `seed`.
pub fn generate_library(compounds: usize, targets: &[&str], poses: u32, seed: u64) -> Result<Vec<PoseRecord>, ScreenError> {
    if poses == 0 || poses as usize > MAX_POSES {
        return Err(ScreenError::Library(format!("poses per pair must be in 1..={MAX_POSES}")));
    }
    if targets.is_empty() || compounds == 0 {
        return Err(ScreenError::Library("library would be empty".into()));
    }
    let mut out = Vec::with_capacity(compounds * targets.len() * poses as usize);
    for c in 0..compounds {
        for t in targets {
            for p in 0..poses {
                let i = out.len() as u64;
                out.push(PoseRecord { compound_id: format!("cmp{c:07}"), target_id: t.to_string(), pose_id: p, payload: PosePayload::Seed(mix_seed(seed, i)) });
            }
        }
    }
    Ok(out)
}

pub fn write_library(path: &Path, records: &[PoseRecord]) -> Result<(), ScreenError> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Raw library lines; parsing happens in the loaders so a bad line only
/// costs its own record.
pub fn read_library(path: &Path) -> Result<Vec<String>, ScreenError> {
    let f = std::io::BufReader::new(std::fs::File::open(path)?);
    let lines: Vec<String> = f.lines().collect::<Result<_, _>>()?;
    if lines.is_empty() {
        return Err(ScreenError::Library(format!("{} is empty", path.display())));
    }
    Ok(lines)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LibraryStats {
    pub poses: usize,
    pub unreadable: usize,
    pub compounds: usize,
    /// Distinct (compound, target) pairs.
    pub pairs: usize,
    pub mean_poses_per_pair: f64,
}

/// Parses every line, rejecting duplicate ids and pairs with more than
/// ten poses. Unreadable lines are counted, not fatal.
pub fn library_stats(lines: &[String]) -> Result<LibraryStats, ScreenError> {
    let mut keys = BTreeSet::new();
    let mut pairs: BTreeMap<(String, String), usize> = BTreeMap::new();
    let mut compounds = BTreeSet::new();
    let mut unreadable = 0;
    for (i, line) in lines.iter().enumerate() {
        let Ok(r) = parse_record(line) else {
            unreadable += 1;
            continue;
        };
        if !keys.insert(r.key()) {
            return Err(ScreenError::Library(format!("line {}: duplicate pose {:?}", i + 1, r.key())));
        }
        let n = pairs.entry((r.compound_id.clone(), r.target_id.clone())).or_default();
        *n += 1;
        if *n > MAX_POSES {
            return Err(ScreenError::Library(format!("line {}: more than {MAX_POSES} poses for {}/{}", i + 1, r.compound_id, r.target_id)));
        }
        compounds.insert(r.compound_id);
    }
    let poses = keys.len();
    let mean = if pairs.is_empty() { 0.0 } else { poses as f64 / pairs.len() as f64 };
    Ok(LibraryStats { poses, unreadable, compounds: compounds.len(), pairs: pairs.len(), mean_poses_per_pair: mean })
}

/// Assay table for a generated library. A pair's pK is the strongest
/// planted label among its poses. A `docking` column (lower is stronger)
/// holds the negated pK plus Gaussian noise of `docking_noise`, and `rmsd`
/// is uniform on [0.5, 4).
pub fn synthetic_assay(records: &[PoseRecord], gen: &GenParams, docking_noise: f64, seed: u64) -> Result<ExperimentalTable, ScreenError> {
    let noise = Normal::new(0.0, docking_noise).map_err(|e| ScreenError::Config(format!("docking noise: {e}")))?;
    let rmsd = Uniform::new(0.5, 4.0).expect("valid range");
    let mut best: BTreeMap<(String, String), f64> = BTreeMap::new();
    for r in records {
        let label = match &r.payload {
            PosePayload::Seed(s) => generate_complex(*s, gen).map_err(|e| ScreenError::Library(e.to_string()))?.label_pk,
            PosePayload::Complex(c) => c.label_pk,
        };
        let e = best.entry((r.compound_id.clone(), r.target_id.clone())).or_insert(f64::NEG_INFINITY);
        *e = e.max(label);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut docking = MethodScores { name: "docking".into(), direction: Direction::LowerIsStronger, scores: BTreeMap::new() };
    let mut rows = Vec::with_capacity(best.len());
    for ((c, t), value) in best {
        docking.scores.insert((c.clone(), t.clone()), -value + noise.sample(&mut rng));
        rows.push(ExperimentalRow { compound_id: c, target_id: t, value, rmsd: Some(rmsd.sample(&mut rng)) });
    }
    Ok(ExperimentalTable { kind: ValueKind::Pk, rows, external: vec![docking] })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generated_ids_unique_and_bounded() {
        let lib = generate_library(7, &["protease1", "spike1"], 10, 3).unwrap();
        let lines: Vec<String> = lib.iter().map(|r| serde_json::to_string(r).unwrap()).collect();
        let s = library_stats(&lines).unwrap();
        assert_eq!((s.poses, s.pairs, s.compounds), (140, 14, 7));
        assert_eq!(s.mean_poses_per_pair, 10.0);
        assert!(generate_library(1, &["t"], 11, 0).is_err());
    }

    #[test]
    fn duplicates_and_bad_pose_ids_rejected() {
        let lib = generate_library(1, &["t"], 2, 0).unwrap();
        let mut lines: Vec<String> = lib.iter().map(|r| serde_json::to_string(r).unwrap()).collect();
        lines.push(lines[0].clone());
        assert!(library_stats(&lines).is_err());
        let mut r = lib[0].clone();
        r.pose_id = 10;
        assert!(parse_record(&serde_json::to_string(&r).unwrap()).is_err());
        assert!(parse_record("{not json").is_err());
    }

    #[test]
    fn assay_takes_strongest_pose() {
        let gen = GenParams::default();
        let lib = generate_library(3, &["a", "b"], 4, 9).unwrap();
        let t = synthetic_assay(&lib, &gen, 0.5, 1).unwrap();
        assert_eq!(t.rows.len(), 6);
        for row in &t.rows {
            let want = lib
                .iter()
                .filter(|r| r.compound_id == row.compound_id && r.target_id == row.target_id)
                .map(|r| match r.payload {
                    PosePayload::Seed(s) => generate_complex(s, &gen).unwrap().label_pk,
                    PosePayload::Complex(_) => unreachable!(),
                })
                .fold(f64::NEG_INFINITY, f64::max);
            assert_eq!(row.value, want);
        }
        assert_eq!(t.external[0].scores.len(), 6);
        assert_eq!(t, synthetic_assay(&lib, &gen, 0.5, 1).unwrap());
    }
}
