use std::path::PathBuf;

use anyhow::Context;
use clap::Args;
use fusionscreen::data::manifest::{write_dataset, DatasetHeader, SplitTag};
use fusionscreen::data::{generate_complex, generate_dataset, quintile_split_complexes, GenParams};
use fusionscreen::eval::write_experimental;
use fusionscreen::screen::{generate_library, synthetic_assay, write_library, PosePayload};
use serde::{Deserialize, Serialize};

use crate::run::{load_config, usage, RunStatus, Stage};

pub const DATASET_FILE: &str = "dataset.jsonl";
pub const LIBRARY_FILE: &str = "library.jsonl";
pub const ASSAY_FILE: &str = "assay.csv";

#[derive(Args)]
pub struct GenArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    count: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Fraction held out for each of validation and test.
    #[arg(long)]
    holdout: Option<f64>,
    /// Compounds in the pose library; 0 writes no library.
    #[arg(long)]
    library_compounds: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    targets: Option<Vec<String>>,
    #[arg(long)]
    poses: Option<u32>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LibraryConfig {
    pub compounds: usize,
    pub targets: Vec<String>,
    pub poses: u32,
    /// Noise of the stand-in docking score, pK units.
    pub docking_noise: f64,
}

impl Default for LibraryConfig {
    fn default() -> Self {
        Self { compounds: 0, targets: vec!["protease".into(), "spike".into()], poses: 5, docking_noise: 1.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenConfig {
    pub count: usize,
    pub seed: u64,
    pub holdout_fraction: f64,
    pub out: PathBuf,
    pub params: GenParams,
    pub library: LibraryConfig,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self { count: 1000, seed: 0, holdout_fraction: 0.1, out: "data".into(), params: GenParams::default(), library: LibraryConfig::default() }
    }
}

pub fn run(a: GenArgs) -> anyhow::Result<RunStatus> {
    let mut cfg: GenConfig = load_config(a.config.as_deref(), "gen")?;
    cfg.count = a.count.unwrap_or(cfg.count);
    cfg.seed = a.seed.unwrap_or(cfg.seed);
    cfg.holdout_fraction = a.holdout.unwrap_or(cfg.holdout_fraction);
    cfg.out = a.out.unwrap_or(cfg.out);
    cfg.library.compounds = a.library_compounds.unwrap_or(cfg.library.compounds);
    cfg.library.targets = a.targets.unwrap_or(cfg.library.targets);
    cfg.library.poses = a.poses.unwrap_or(cfg.library.poses);
    cfg.params.validate().map_err(|e| usage(e.to_string()))?;
    if cfg.count < 20 {
        return Err(usage("count must be at least 20 to fill validation and test quintiles"));
    }
    if !(cfg.holdout_fraction > 0.0 && cfg.holdout_fraction < 0.5) {
        return Err(usage("holdout fraction must be in (0, 0.5)"));
    }

    let mut stage = Stage::new("gen", &cfg.out, cfg.seed, &cfg, vec![])?;
    let out = stage.out().to_path_buf();
    let result = stage.time("generate", || -> anyhow::Result<RunStatus> {
        let data = generate_dataset(cfg.count, cfg.seed, &cfg.params)?;
        let mut tags = vec![SplitTag::Train; data.len()];
        let outer = quintile_split_complexes(&data, cfg.holdout_fraction, cfg.seed)?;
        for &i in &outer.validation {
            tags[i] = SplitTag::Test;
        }
        let rest: Vec<_> = outer.train.iter().map(|&i| data[i].clone()).collect();
        let inner = quintile_split_complexes(&rest, cfg.holdout_fraction, cfg.seed.wrapping_add(1))?;
        for &j in &inner.validation {
            tags[outer.train[j]] = SplitTag::Validation;
        }
        let header = DatasetHeader::new(data.len(), cfg.seed, cfg.holdout_fraction, cfg.params.clone());
        let rows: Vec<_> = data.into_iter().zip(tags).collect();
        write_dataset(&out.join(DATASET_FILE), &header, &rows)?;

        if cfg.library.compounds > 0 {
            let targets: Vec<&str> = cfg.library.targets.iter().map(String::as_str).collect();
            let mut lib = generate_library(cfg.library.compounds, &targets, cfg.library.poses, cfg.seed.wrapping_add(2))?;
            // embed the complexes so screening does not depend on generator settings
            for r in &mut lib {
                if let PosePayload::Seed(s) = r.payload {
                    r.payload = PosePayload::Complex(Box::new(generate_complex(s, &cfg.params)?));
                }
            }
            write_library(&out.join(LIBRARY_FILE), &lib)?;
            let assay = synthetic_assay(&lib, &cfg.params, cfg.library.docking_noise, cfg.seed.wrapping_add(3))?;
            write_experimental(&out.join(ASSAY_FILE), &assay).context("writing assay table")?;
        }
        Ok(RunStatus::Complete)
    });
    stage.finish(result)
}
