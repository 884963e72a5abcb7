//! Brute-force oracles shared by the oracle tests and the acceptance run.
#![allow(dead_code)]

use fusionscreen::eval::{BestPose, Direction, PoseScore};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn brute_pearson(x: &[f64], y: &[f64]) -> f64 {
    // textbook single-pass sums form
    let n = x.len() as f64;
    let (sx, sy): (f64, f64) = (x.iter().sum(), y.iter().sum());
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    let sxx: f64 = x.iter().map(|a| a * a).sum();
    let syy: f64 = y.iter().map(|b| b * b).sum();
    (n * sxy - sx * sy) / ((n * sxx - sx * sx).sqrt() * (n * syy - sy * sy).sqrt())
}

pub fn brute_rank(v: &[f64]) -> Vec<f64> {
    v.iter()
        .map(|&a| {
            let below = v.iter().filter(|&&b| b < a).count() as f64;
            let equal = v.iter().filter(|&&b| b == a).count() as f64;
            below + (equal + 1.0) / 2.0
        })
        .collect()
}

pub fn nested_loop_best(records: &[PoseScore<f64>], dir: Direction) -> Vec<BestPose<f64>> {
    let mut keys: Vec<(String, String)> = records.iter().map(|r| (r.compound_id.clone(), r.target_id.clone())).collect();
    keys.sort();
    keys.dedup();
    let mut out = Vec::new();
    for (c, t) in keys {
        let mut best: Option<&PoseScore<f64>> = None;
        for r in records {
            if r.compound_id != c || r.target_id != t {
                continue;
            }
            let better = match best {
                None => true,
                Some(b) => {
                    let stronger = match dir {
                        Direction::HigherIsStronger => r.score > b.score,
                        Direction::LowerIsStronger => r.score < b.score,
                    };
                    stronger || (r.score == b.score && r.pose_id < b.pose_id)
                }
            };
            if better {
                best = Some(r);
            }
        }
        let b = best.unwrap();
        out.push(BestPose { compound_id: c, target_id: t, pose_id: b.pose_id, score: b.score });
    }
    out
}

pub fn random_records(rng: &mut ChaCha8Rng) -> Vec<PoseScore<f64>> {
    let mut recs = Vec::new();
    for c in 0..rng.random_range(1..30) {
        for t in ["protease1", "protease2", "spike1", "spike2"] {
            if rng.random_bool(0.3) {
                continue;
            }
            let k = rng.random_range(1..=10u32);
            let mut ids: Vec<u32> = (0..10).collect();
            for i in 0..k as usize {
                let j = rng.random_range(i..10);
                ids.swap(i, j);
            }
            for &pose in &ids[..k as usize] {
                recs.push(PoseScore { compound_id: format!("c{c}"), target_id: t.into(), pose_id: pose, score: rng.random_range(-12..12) as f64 / 2.0 });
            }
        }
    }
    // shuffle
    for i in (1..recs.len()).rev() {
        let j = rng.random_range(0..=i);
        recs.swap(i, j);
    }
    recs
}
