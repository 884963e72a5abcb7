pub mod eval;
pub mod gen;
pub mod hpo;
pub mod report;
pub mod screen;
pub mod train;

use std::path::Path;

use fusionscreen::data::manifest::{read_dataset, SplitTag};
use fusionscreen::data::{featurize, FeatureConfig, Sample};

/// Featurized train, validation and test rows of a generated dataset.
pub struct Splits {
    pub train: Vec<Sample>,
    pub val: Vec<Sample>,
    pub test: Vec<Sample>,
}

pub fn load_splits(path: &Path, features: &FeatureConfig) -> anyhow::Result<Splits> {
    let (_, rows) = read_dataset(path).map_err(|e| anyhow::anyhow!("{}: {e}", path.display()))?;
    let mut s = Splits { train: Vec::new(), val: Vec::new(), test: Vec::new() };
    for (c, tag) in rows {
        let sample = featurize(&c, features)?;
        match tag {
            SplitTag::Train => s.train.push(sample),
            SplitTag::Validation => s.val.push(sample),
            SplitTag::Test => s.test.push(sample),
        }
    }
    if s.train.is_empty() {
        anyhow::bail!("{} has no training rows", path.display());
    }
    Ok(s)
}
