use std::path::PathBuf;

use anyhow::Context;
use clap::{Args, ValueEnum};
use fusionscreen::data::Sample;
use fusionscreen::eval::{regression_metrics, RegressionReport};
use fusionscreen::hpo::{apply_hyperparams, Config};
use fusionscreen::models::{presets, train, FusionMode, FusionModel, ModelConfig, Output, TrainMode, TrainReport};
use serde::{Deserialize, Serialize};

use super::load_splits;
use crate::run::{load_config, usage, write_json, RunStatus, Stage};

pub const MODEL_DIR: &str = "model";
pub const REPORT_FILE: &str = "train-report.json";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
pub enum Mode {
    /// Voxel head alone.
    #[serde(rename = "3d")]
    #[value(name = "3d")]
    Voxel,
    /// Graph head alone.
    #[serde(rename = "sg")]
    #[value(name = "sg")]
    Graph,
    /// Both heads, averaged.
    #[serde(rename = "late")]
    Late,
    /// Fusion stack on frozen heads from `--heads`.
    #[serde(rename = "mid")]
    Mid,
    /// Heads and fusion stack together.
    #[serde(rename = "coherent")]
    Coherent,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Toy,
    Desk,
    /// Full-size tuned architectures; slow on a CPU.
    Final,
}

#[derive(Args)]
pub struct TrainArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, value_enum)]
    mode: Option<Mode>,
    #[arg(long, value_enum)]
    preset: Option<Preset>,
    /// Epochs for every stage this run trains.
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Model directory whose trained heads seed this one.
    #[arg(long)]
    heads: Option<PathBuf>,
    /// JSON map of tuned hyperparameters, as written by `hpo`.
    #[arg(long)]
    hyperparams: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainCmdConfig {
    pub data: PathBuf,
    pub mode: Mode,
    pub preset: Preset,
    pub epochs: Option<usize>,
    pub seed: u64,
    pub heads: Option<PathBuf>,
    pub hyperparams: Option<Config>,
    /// Replaces the preset entirely when given.
    pub model: Option<ModelConfig>,
    pub out: PathBuf,
}

impl Default for TrainCmdConfig {
    fn default() -> Self {
        Self {
            data: "data/dataset.jsonl".into(),
            mode: Mode::Coherent,
            preset: Preset::Desk,
            epochs: None,
            seed: 0,
            heads: None,
            hyperparams: None,
            model: None,
            out: "train".into(),
        }
    }
}

#[derive(Serialize)]
struct Report {
    stages: Vec<TrainReport>,
    /// Test-split metrics per model output.
    test: Vec<(Output, RegressionReport<f64>)>,
}

fn fusion_mode(m: Mode) -> FusionMode {
    match m {
        Mode::Mid => FusionMode::Mid,
        Mode::Coherent => FusionMode::Coherent,
        Mode::Voxel | Mode::Graph | Mode::Late => FusionMode::Late,
    }
}

fn model_config(cfg: &TrainCmdConfig) -> anyhow::Result<ModelConfig> {
    let mut m = match &cfg.model {
        Some(m) => m.clone(),
        None => match cfg.preset {
            Preset::Toy => presets::toy(fusion_mode(cfg.mode), cfg.seed),
            Preset::Desk => presets::desk(fusion_mode(cfg.mode), cfg.seed),
            Preset::Final => {
                let fusion = if cfg.mode == Mode::Mid { presets::mid_fusion_final() } else { presets::coherent_fusion_final() };
                let mut m = presets::final_model(fusion);
                m.fusion.mode = fusion_mode(cfg.mode);
                m.seed = cfg.seed;
                m
            }
        },
    };
    if let Some(h) = &cfg.hyperparams {
        apply_hyperparams(&mut m, h).map_err(|e| usage(format!("hyperparameters: {e}")))?;
    }
    if let Some(e) = cfg.epochs {
        m.voxel.train.epochs = e;
        m.graph.train.epochs = e;
        m.fusion.train.epochs = e;
    }
    m.validate().map_err(|e| usage(format!("model configuration: {e}")))?;
    Ok(m)
}

fn test_metrics(model: &FusionModel<f64>, outputs: &[Output], test: &[Sample]) -> anyhow::Result<Vec<(Output, RegressionReport<f64>)>> {
    if test.len() < 2 {
        return Ok(Vec::new());
    }
    let labels: Vec<f64> = test.iter().map(|s| s.label).collect();
    outputs
        .iter()
        .map(|&o| {
            let pred = model.predict_output(test, o, 64).into_iter().collect::<Result<Vec<f64>, _>>()?;
            Ok((o, regression_metrics(&pred, &labels)?))
        })
        .collect()
}

pub fn run(a: TrainArgs) -> anyhow::Result<RunStatus> {
    let mut cfg: TrainCmdConfig = load_config(a.config.as_deref(), "train")?;
    cfg.data = a.data.unwrap_or(cfg.data);
    cfg.mode = a.mode.unwrap_or(cfg.mode);
    cfg.preset = a.preset.unwrap_or(cfg.preset);
    cfg.epochs = a.epochs.or(cfg.epochs);
    cfg.seed = a.seed.unwrap_or(cfg.seed);
    cfg.heads = a.heads.or(cfg.heads);
    cfg.out = a.out.unwrap_or(cfg.out);
    if let Some(p) = a.hyperparams {
        let text = std::fs::read_to_string(&p).map_err(|e| usage(format!("{}: {e}", p.display())))?;
        cfg.hyperparams = Some(serde_json::from_str(&text).map_err(|e| usage(format!("{}: {e}", p.display())))?);
    }
    if cfg.mode == Mode::Mid && cfg.heads.is_none() {
        return Err(usage("mid fusion needs --heads with trained voxel and graph heads"));
    }
    let model_cfg = model_config(&cfg)?;

    let mut inputs = vec![cfg.data.clone()];
    inputs.extend(cfg.heads.clone());
    let mut stage = Stage::new("train", &cfg.out, cfg.seed, &cfg, inputs)?;
    let out = stage.out().to_path_buf();
    let splits = match stage.time("featurize", || load_splits(&cfg.data, &model_cfg.features)) {
        Ok(s) => s,
        Err(e) => return stage.finish(Err(e)),
    };
    let result = stage.time("train", || -> anyhow::Result<RunStatus> {
        let mut model = FusionModel::<f64>::new(model_cfg.clone())?;
        if let Some(h) = &cfg.heads {
            let donor = FusionModel::<f64>::load(h).with_context(|| format!("loading heads from {}", h.display()))?;
            model.load_heads_from(&donor)?;
        }
        let (stages, outputs): (Vec<TrainMode>, Vec<Output>) = match cfg.mode {
            Mode::Voxel => (vec![TrainMode::Voxel], vec![Output::Voxel]),
            Mode::Graph => (vec![TrainMode::Graph], vec![Output::Graph]),
            Mode::Late => (vec![TrainMode::Voxel, TrainMode::Graph], vec![Output::Voxel, Output::Graph, Output::Late]),
            Mode::Mid => (vec![TrainMode::Mid], vec![Output::Fused]),
            Mode::Coherent if model_cfg.fusion.pre_trained && cfg.heads.is_none() => {
                (vec![TrainMode::Voxel, TrainMode::Graph, TrainMode::Coherent], vec![Output::Voxel, Output::Graph, Output::Late, Output::Fused])
            }
            Mode::Coherent => (vec![TrainMode::Coherent], vec![Output::Fused]),
        };
        let mut reports = Vec::new();
        for m in stages {
            log::info!("training {} on {} complexes", m.name(), splits.train.len());
            reports.push(train(&mut model, m, &splits.train, &splits.val, cfg.seed)?);
        }
        model.save(&out.join(MODEL_DIR))?;
        let test = test_metrics(&model, &outputs, &splits.test)?;
        write_json(&out.join(REPORT_FILE), &Report { stages: reports, test })?;
        Ok(RunStatus::Complete)
    });
    stage.finish(result)
}
