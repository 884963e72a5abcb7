use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::PathBuf;

use clap::Args;
use fusionscreen::eval::{aggregate_best_pose, method_comparison_report, read_experimental, Direction, MethodScores, PoseScore, ReportConfig, Stat};
use fusionscreen::screen::collect_outputs;
use serde::{Deserialize, Serialize};

use crate::run::{load_config, usage, write_json, RunStatus, Stage};

pub const SUMMARY_FILE: &str = "summary.csv";
pub const CORRELATION_FILE: &str = "correlations.csv";
pub const REPORT_FILE: &str = "report.json";
pub const BEST_POSES_FILE: &str = "best-poses.csv";
pub const COVERAGE_FILE: &str = "coverage.json";
pub const SERIES_DIR: &str = "series";

#[derive(Args)]
pub struct EvalArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory of `screen`.
    #[arg(long)]
    predictions: Option<PathBuf>,
    /// Experimental values, comma- or tab-separated.
    #[arg(long)]
    table: Option<PathBuf>,
    /// Keep only rows whose pose RMSD is below this.
    #[arg(long)]
    rmsd_cutoff: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalCmdConfig {
    pub predictions: PathBuf,
    pub table: PathBuf,
    pub method_name: String,
    /// Defaults follow the table's value kind.
    pub report: Option<ReportConfig>,
    pub rmsd_cutoff: Option<f64>,
    pub out: PathBuf,
}

impl Default for EvalCmdConfig {
    fn default() -> Self {
        Self { predictions: "screen".into(), table: "data/assay.csv".into(), method_name: "fusion".into(), report: None, rmsd_cutoff: None, out: "eval".into() }
    }
}

#[derive(Serialize)]
struct Coverage {
    predictions: usize,
    logged_errors: usize,
    pairs_scored: usize,
    table_rows: usize,
    /// Pairs every method and the table share; only these are compared.
    pairs_compared: usize,
}

fn cell(s: Stat<f64>) -> String {
    s.value().map_or("undefined".into(), |v| v.to_string())
}

fn slug(s: &str) -> String {
    s.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' }).collect()
}

pub fn run(a: EvalArgs) -> anyhow::Result<RunStatus> {
    let mut cfg: EvalCmdConfig = load_config(a.config.as_deref(), "eval")?;
    cfg.predictions = a.predictions.unwrap_or(cfg.predictions);
    cfg.table = a.table.unwrap_or(cfg.table);
    cfg.rmsd_cutoff = a.rmsd_cutoff.or(cfg.rmsd_cutoff);
    cfg.out = a.out.unwrap_or(cfg.out);
    if !cfg.predictions.is_dir() {
        return Err(usage(format!("{} is not a screening output directory", cfg.predictions.display())));
    }

    let inputs = vec![cfg.predictions.clone(), cfg.table.clone()];
    let mut stage = Stage::new("eval", &cfg.out, 0, &cfg, inputs)?;
    let out = stage.out().to_path_buf();
    let result = stage.time("evaluate", || -> anyhow::Result<RunStatus> {
        let (records, errors) = collect_outputs(&cfg.predictions)?;
        let poses: Vec<PoseScore<f64>> = records
            .iter()
            .map(|r| PoseScore { compound_id: r.compound_id.clone(), target_id: r.target_id.clone(), pose_id: r.pose_id, score: r.predicted_pk })
            .collect();
        let best = aggregate_best_pose(&poses, Direction::HigherIsStronger)?;
        let mut best_csv = String::from("compound_id,target_id,pose_id,score\n");
        for b in &best {
            writeln!(best_csv, "{},{},{},{}", b.compound_id, b.target_id, b.pose_id, b.score)?;
        }
        std::fs::write(out.join(BEST_POSES_FILE), best_csv)?;

        let mut table = read_experimental(&cfg.table)?;
        let mut methods = vec![MethodScores::from_best(cfg.method_name.clone(), Direction::HigherIsStronger, &best)];
        methods.append(&mut table.external);
        if methods.len() < 2 {
            anyhow::bail!("{} has no external method columns to compare against", cfg.table.display());
        }
        // compare on pairs every method scored and the table covers
        let mut common: BTreeSet<(String, String)> = table.rows.iter().map(|r| (r.compound_id.clone(), r.target_id.clone())).collect();
        for m in &methods {
            common.retain(|k| m.scores.contains_key(k));
        }
        for m in &mut methods {
            m.scores.retain(|k, _| common.contains(k));
        }
        let coverage = Coverage {
            predictions: records.len(),
            logged_errors: errors.len(),
            pairs_scored: best.len(),
            table_rows: table.rows.len(),
            pairs_compared: common.len(),
        };
        if coverage.pairs_compared < coverage.table_rows {
            log::warn!("{} of {} table rows lack a score from some method", coverage.table_rows - coverage.pairs_compared, coverage.table_rows);
        }
        write_json(&out.join(COVERAGE_FILE), &coverage)?;

        let mut rc = cfg.report.clone().unwrap_or_else(|| ReportConfig::for_kind(table.kind));
        rc.rmsd_cutoff = cfg.rmsd_cutoff.or(rc.rmsd_cutoff);
        let report = method_comparison_report(&methods, &table, &rc)?;
        write_json(&out.join(REPORT_FILE), &report)?;
        std::fs::write(out.join(CORRELATION_FILE), report.correlation_table())?;

        let mut summary =
            String::from("method,target,n,n_correlation,pearson,spearman,positives,negatives,dropped,f1_best,f1_top_k,baseline_precision,kappa\n");
        let series = out.join(SERIES_DIR);
        std::fs::create_dir_all(&series)?;
        for r in &report.rows {
            writeln!(
                summary,
                "{},{},{},{},{},{},{},{},{},{},{},{},{}",
                r.method,
                r.target,
                r.n,
                r.n_correlation,
                cell(r.pearson),
                cell(r.spearman),
                r.positives,
                r.negatives,
                r.dropped,
                cell(r.f1_best),
                cell(r.f1_top_k),
                cell(r.baseline_precision),
                cell(r.kappa)
            )?;
            let name = format!("{}-{}", slug(&r.method), slug(&r.target));
            let mut pr = String::from("recall,precision\n");
            for (x, y) in &r.pr_series {
                writeln!(pr, "{x},{y}")?;
            }
            std::fs::write(series.join(format!("pr-{name}.csv")), pr)?;
            let mut sc = String::from("experimental,predicted\n");
            for (x, y) in &r.scatter {
                writeln!(sc, "{x},{y}")?;
            }
            std::fs::write(series.join(format!("scatter-{name}.csv")), sc)?;
        }
        std::fs::write(out.join(SUMMARY_FILE), summary)?;
        Ok(RunStatus::Complete)
    });
    stage.finish(result)
}
