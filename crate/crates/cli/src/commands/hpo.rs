use std::path::PathBuf;

use anyhow::Context;
use clap::{Args, ValueEnum};
use fusionscreen::hpo::{
    presets, random_search, run_hpo_logged, Config, FusionTrainable, HpoResult, HyperParamSpace, LineageEvent, Pb2Config, QuadraticTrainable, Trainable,
};
use fusionscreen::models::{presets as model_presets, FusionMode, FusionModel, TrainMode};
use serde::{Deserialize, Serialize};

use super::load_splits;
use crate::run::{load_config, usage, write_json, RunStatus, Stage};

pub const EVENTS_FILE: &str = "events.jsonl";
pub const RESULT_FILE: &str = "result.json";
pub const BEST_CONFIG_FILE: &str = "best-config.json";
pub const BEST_CHECKPOINT_FILE: &str = "best-checkpoint.bin";
pub const RANDOM_FILE: &str = "random-search.json";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Objective {
    /// Cheap analytic trainable with a drifting optimum over `lr`.
    Quadratic,
    /// Desk-size fusion model scored by validation MSE.
    Fusion,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum SpacePreset {
    Quadratic,
    DeskFusion,
    Fusion,
    Cnn3d,
    SgCnn,
}

#[derive(Args)]
pub struct HpoArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Search space file (TOML or JSON).
    #[arg(long)]
    space: Option<PathBuf>,
    #[arg(long, value_enum)]
    preset: Option<SpacePreset>,
    #[arg(long, value_enum)]
    objective: Option<Objective>,
    #[arg(long)]
    population: Option<usize>,
    /// Epochs each trial trains in total.
    #[arg(long)]
    budget: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    data: Option<PathBuf>,
    /// Also run random search at the same epoch budget.
    #[arg(long)]
    compare_random: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HpoCmdConfig {
    pub objective: Objective,
    pub space: Option<HyperParamSpace>,
    pub preset: Option<SpacePreset>,
    pub budget: usize,
    pub seed: u64,
    pub pb2: Pb2Config,
    pub data: PathBuf,
    /// Fusion objective only: `mid` or `coherent`.
    pub mode: FusionMode,
    pub heads: Option<PathBuf>,
    pub compare_random: bool,
    pub out: PathBuf,
}

impl Default for HpoCmdConfig {
    fn default() -> Self {
        Self {
            objective: Objective::Quadratic,
            space: None,
            preset: None,
            budget: 50,
            seed: 0,
            pb2: Pb2Config::default(),
            data: "data/dataset.jsonl".into(),
            mode: FusionMode::Coherent,
            heads: None,
            compare_random: false,
            out: "hpo".into(),
        }
    }
}

#[derive(Serialize)]
struct TrialSummary<'a> {
    trial_id: usize,
    epoch: usize,
    config: &'a Config,
    best_score: Option<f64>,
    failed: Option<&'a str>,
    lineage: &'a [LineageEvent],
}

#[derive(Serialize)]
struct Summary<'a> {
    best_trial: usize,
    best_score: f64,
    best_epoch: usize,
    best_config: &'a Config,
    total_epochs: usize,
    population: Vec<TrialSummary<'a>>,
}

fn summary(r: &HpoResult) -> Summary<'_> {
    Summary {
        best_trial: r.best.trial_id,
        best_score: r.best_score,
        best_epoch: r.best_epoch,
        best_config: &r.best.config,
        total_epochs: r.total_epochs,
        population: r
            .population
            .iter()
            .map(|t| TrialSummary {
                trial_id: t.trial_id,
                epoch: t.epoch,
                config: &t.config,
                best_score: t.best_score(),
                failed: t.failed.as_deref(),
                lineage: &t.lineage,
            })
            .collect(),
    }
}

fn space(cfg: &HpoCmdConfig) -> HyperParamSpace {
    if let Some(s) = &cfg.space {
        return s.clone();
    }
    let preset = cfg.preset.unwrap_or(match cfg.objective {
        Objective::Quadratic => SpacePreset::Quadratic,
        Objective::Fusion => SpacePreset::DeskFusion,
    });
    match preset {
        SpacePreset::Quadratic => presets::quadratic(),
        SpacePreset::DeskFusion => presets::desk_fusion(),
        SpacePreset::Fusion => presets::fusion(),
        SpacePreset::Cnn3d => presets::cnn3d(),
        SpacePreset::SgCnn => presets::sg_cnn(),
    }
}

pub fn run(a: HpoArgs) -> anyhow::Result<RunStatus> {
    let mut cfg: HpoCmdConfig = load_config(a.config.as_deref(), "hpo")?;
    if let Some(p) = a.space {
        let text = std::fs::read_to_string(&p).map_err(|e| usage(format!("{}: {e}", p.display())))?;
        cfg.space = Some(HyperParamSpace::from_toml_or_json(&text).map_err(|e| usage(format!("{}: {e}", p.display())))?);
    }
    cfg.preset = a.preset.or(cfg.preset);
    cfg.objective = a.objective.unwrap_or(cfg.objective);
    cfg.pb2.population = a.population.unwrap_or(cfg.pb2.population);
    cfg.budget = a.budget.unwrap_or(cfg.budget);
    cfg.seed = a.seed.unwrap_or(cfg.seed);
    cfg.data = a.data.unwrap_or(cfg.data);
    cfg.compare_random |= a.compare_random;
    cfg.out = a.out.unwrap_or(cfg.out);
    cfg.pb2.validate().map_err(|e| usage(e.to_string()))?;
    let space = space(&cfg);
    space.validate().map_err(|e| usage(e.to_string()))?;
    if cfg.budget == 0 {
        return Err(usage("budget must be at least one epoch"));
    }
    if cfg.objective == Objective::Fusion && cfg.mode == FusionMode::Late {
        return Err(usage("late fusion has nothing to tune"));
    }
    if cfg.mode == FusionMode::Mid && cfg.heads.is_none() {
        return Err(usage("mid fusion tuning needs `heads`"));
    }

    let mut inputs = Vec::new();
    if cfg.objective == Objective::Fusion {
        inputs.push(cfg.data.clone());
        inputs.extend(cfg.heads.clone());
    }
    let mut stage = Stage::new("hpo", &cfg.out, cfg.seed, &cfg, inputs)?;
    let out = stage.out().to_path_buf();
    let result = stage.time("search", || -> anyhow::Result<RunStatus> {
        let events = out.join(EVENTS_FILE);
        if events.exists() {
            std::fs::remove_file(&events)?;
        }
        let go = |t: &dyn Trainable| -> anyhow::Result<()> {
            let r = run_hpo_logged(&space, &cfg.pb2, cfg.budget, t, cfg.seed, &events)?;
            log::info!("best score {} (trial {}, epoch {})", r.best_score, r.best.trial_id, r.best_epoch);
            write_json(&out.join(RESULT_FILE), &summary(&r))?;
            write_json(&out.join(BEST_CONFIG_FILE), &r.best.config)?;
            std::fs::write(out.join(BEST_CHECKPOINT_FILE), &r.best.checkpoint)?;
            if cfg.compare_random {
                let rs = random_search(&space, cfg.pb2.population, cfg.budget, t, cfg.seed)?;
                log::info!("random search best score {}", rs.best_score);
                write_json(&out.join(RANDOM_FILE), &summary(&rs))?;
            }
            Ok(())
        };
        match cfg.objective {
            Objective::Quadratic => go(&QuadraticTrainable::default())?,
            Objective::Fusion => {
                let base = model_presets::desk(cfg.mode, cfg.seed);
                let splits = load_splits(&cfg.data, &base.features)?;
                if splits.val.is_empty() {
                    anyhow::bail!("{} has no validation rows", cfg.data.display());
                }
                let heads = match &cfg.heads {
                    Some(h) => Some(FusionModel::<f64>::load(h).with_context(|| format!("loading heads from {}", h.display()))?),
                    None => None,
                };
                let mode = if cfg.mode == FusionMode::Mid { TrainMode::Mid } else { TrainMode::Coherent };
                go(&FusionTrainable { base, mode, heads: heads.as_ref(), train: &splits.train, val: &splits.val })?;
            }
        }
        Ok(RunStatus::Complete)
    });
    stage.finish(result)
}
