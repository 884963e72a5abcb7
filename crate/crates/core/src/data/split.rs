use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{DataError, SyntheticComplex};

/// Index sets into the input list, each sorted ascending.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    /// Quintile of every input item.
    pub bucket: Vec<usize>,
}

/// Nearest integer, exact halves (within 1e-9) rounded down.
fn round_half_down(x: f64) -> usize {
    let f = x.floor();
    if x - f > 0.5 + 1e-9 {
        f as usize + 1
    } else {
        f as usize
    }
}

/// Stratified holdout: stable sort by `(label, id)`, five equal-count
/// contiguous buckets, then `fraction` of each bucket drawn uniformly.
pub fn quintile_split(items: &[(&str, f64)], fraction: f64, seed: u64) -> Result<Split, DataError> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(DataError::InvalidParams(format!("holdout fraction {fraction} outside (0, 1)")));
    }
    let n = items.len();
    if n < 10 {
        return Err(DataError::TooSmall(format!("{n} items cannot fill five quintiles")));
    }
    if items.iter().any(|(_, l)| !l.is_finite()) {
        return Err(DataError::InvalidParams("labels must be finite".into()));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| items[a].1.total_cmp(&items[b].1).then_with(|| items[a].0.cmp(items[b].0)));

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut bucket = vec![0; n];
    let mut held = vec![false; n];
    for q in 0..5 {
        let (lo, hi) = (q * n / 5, (q + 1) * n / 5);
        let members = &order[lo..hi];
        let take = round_half_down(fraction * members.len() as f64);
        for &i in members {
            bucket[i] = q;
        }
        for pick in index::sample(&mut rng, members.len(), take) {
            held[members[pick]] = true;
        }
    }
    let validation = (0..n).filter(|&i| held[i]).collect();
    let train = (0..n).filter(|&i| !held[i]).collect();
    Ok(Split { train, validation, bucket })
}

pub fn quintile_split_complexes(data: &[SyntheticComplex], fraction: f64, seed: u64) -> Result<Split, DataError> {
    let items: Vec<(&str, f64)> = data.iter().map(|c| (c.complex_id.as_str(), c.label_pk)).collect();
    quintile_split(&items, fraction, seed)
}
