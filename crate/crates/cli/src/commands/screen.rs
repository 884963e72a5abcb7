use std::path::PathBuf;
use std::time::Duration;

use anyhow::Context;
use clap::Args;
use fusionscreen::data::GenParams;
use fusionscreen::models::FusionModel;
use fusionscreen::screen::{library_stats, read_library, run_campaign, CampaignConfig, FaultPlan, FusionScorer, SyntheticCostScorer};
use serde::{Deserialize, Serialize};

use crate::run::{load_config, usage, RunStatus, Stage};

#[derive(Args)]
pub struct ScreenArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Model directory written by `train`.
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    library: Option<PathBuf>,
    #[arg(long)]
    jobs: Option<usize>,
    /// Concurrent ranks per job.
    #[arg(long)]
    ranks: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    /// Loader threads per rank.
    #[arg(long)]
    loaders: Option<usize>,
    /// Jobs running at once.
    #[arg(long)]
    parallelism: Option<usize>,
    #[arg(long)]
    retries: Option<u32>,
    /// Fault-injection plan (TOML).
    #[arg(long)]
    faults: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScreenCmdConfig {
    pub model: Option<PathBuf>,
    /// Score with a fixed per-pose delay instead of a model.
    pub synthetic_ms_per_pose: Option<f64>,
    pub library: PathBuf,
    pub campaign: CampaignConfig,
    pub faults: FaultPlan,
    /// Regenerates seed-only library records.
    pub gen: GenParams,
    pub out: PathBuf,
}

impl Default for ScreenCmdConfig {
    fn default() -> Self {
        Self {
            model: None,
            synthetic_ms_per_pose: None,
            library: "data/library.jsonl".into(),
            campaign: CampaignConfig::default(),
            faults: FaultPlan::none(),
            gen: GenParams::default(),
            out: "screen".into(),
        }
    }
}

pub fn run(a: ScreenArgs) -> anyhow::Result<RunStatus> {
    let mut cfg: ScreenCmdConfig = load_config(a.config.as_deref(), "screen")?;
    cfg.model = a.model.or(cfg.model);
    cfg.library = a.library.unwrap_or(cfg.library);
    let c = &mut cfg.campaign;
    c.jobs = a.jobs.unwrap_or(c.jobs);
    c.layout.ranks = a.ranks.unwrap_or(c.layout.ranks);
    c.layout.batch_size = a.batch.unwrap_or(c.layout.batch_size);
    c.layout.loaders = a.loaders.unwrap_or(c.layout.loaders);
    c.parallelism = a.parallelism.unwrap_or(c.parallelism);
    c.retries = a.retries.unwrap_or(c.retries);
    if let Some(p) = a.faults {
        let text = std::fs::read_to_string(&p).map_err(|e| usage(format!("{}: {e}", p.display())))?;
        cfg.faults = toml::from_str(&text).map_err(|e| usage(format!("{}: {e}", p.display())))?;
    }
    cfg.out = a.out.unwrap_or(cfg.out);
    cfg.faults.validate().map_err(|e| usage(e.to_string()))?;
    if cfg.model.is_none() && cfg.synthetic_ms_per_pose.is_none() {
        return Err(usage("screening needs --model or synthetic_ms_per_pose"));
    }
    let c = &cfg.campaign;
    if c.jobs == 0 || c.parallelism == 0 || c.layout.ranks == 0 || c.layout.batch_size == 0 || c.layout.loaders == 0 {
        return Err(usage("jobs, parallelism, ranks, batch and loaders must all be at least 1"));
    }
    if c.layout.streaming_write {
        return Err(usage("streaming write is not implemented"));
    }
    cfg.campaign.layout.model_ref = cfg.model.clone();

    let mut inputs = vec![cfg.library.clone()];
    inputs.extend(cfg.model.clone());
    let mut stage = Stage::new("screen", &cfg.out, cfg.faults.seed, &cfg, inputs)?;
    let out = stage.out().to_path_buf();
    let result = stage.time("campaign", || -> anyhow::Result<RunStatus> {
        let lines = read_library(&cfg.library)?;
        let stats = library_stats(&lines)?;
        log::info!("{} poses over {} compound/target pairs, {} unreadable", stats.poses, stats.pairs, stats.unreadable);
        let mut campaign = cfg.campaign.clone();
        if stats.pairs > 0 {
            campaign.mean_poses_per_compound = stats.mean_poses_per_pair;
        }
        let (report, timings) = match (&cfg.model, cfg.synthetic_ms_per_pose) {
            (Some(m), _) => {
                let model = FusionModel::<f64>::load(m).with_context(|| format!("loading model from {}", m.display()))?;
                run_campaign(&lines, &campaign, &FusionScorer { model, gen: cfg.gen.clone() }, &cfg.faults, &out)?
            }
            (None, Some(ms)) => {
                let scorer = SyntheticCostScorer::per_pose(Duration::from_secs_f64(ms.max(0.0) / 1e3));
                run_campaign(&lines, &campaign, &scorer, &cfg.faults, &out)?
            }
            (None, None) => unreachable!("checked above"),
        };
        log::info!(
            "{} predictions, {} logged errors, {} missing ranges, {:.1} poses/s",
            report.predictions,
            report.errors,
            report.missing.len(),
            timings.per_job.poses_per_second
        );
        Ok(if report.missing.is_empty() { RunStatus::Complete } else { RunStatus::Incomplete })
    });
    stage.finish(result)
}
