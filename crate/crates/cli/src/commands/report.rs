use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::Args;
use fusionscreen::screen::{CampaignReport, CampaignTimings, ThroughputReport, CAMPAIGN_FILE, TIMINGS_FILE};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::eval::SUMMARY_FILE;
use crate::run::{load_config, usage, RunStatus, Stage};

pub const REPORT_MD: &str = "report.md";
pub const THROUGHPUT_MD: &str = "throughput-timings.md";

#[derive(Args)]
pub struct ReportArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory of `screen`.
    #[arg(long)]
    screen: Option<PathBuf>,
    /// Output directory of `eval`.
    #[arg(long)]
    eval: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReportCmdConfig {
    pub screen: Option<PathBuf>,
    pub eval: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

fn read_json<T: DeserializeOwned>(path: &Path) -> anyhow::Result<T> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_slice(&bytes).with_context(|| format!("parsing {}", path.display()))
}

fn campaign_section(md: &mut String, r: &CampaignReport) -> std::fmt::Result {
    writeln!(md, "## Screening campaign\n")?;
    writeln!(md, "| job | poses | status | attempts | predictions | errors |")?;
    writeln!(md, "|---|---|---|---|---|---|")?;
    for j in &r.jobs {
        writeln!(md, "| {} | {}..{} | {:?} | {} | {} | {} |", j.job_id, j.start, j.end, j.status, j.attempts, j.predictions, j.errors)?;
    }
    writeln!(md, "\n{} predictions, {} logged record errors, {} missing ranges.\n", r.predictions, r.errors, r.missing.len())?;
    for m in &r.missing {
        writeln!(md, "- missing poses {}..{} (job {}): {}", m.start, m.end, m.job_id, m.last_error)?;
    }
    Ok(())
}

fn throughput_row(md: &mut String, label: &str, t: &ThroughputReport) -> std::fmt::Result {
    writeln!(
        md,
        "| {label} | {:.3} | {:.3} | {:.3} | {} | {:.2} | {:.0} | {:.0} |",
        t.startup_seconds, t.evaluation_seconds, t.output_seconds, t.poses, t.poses_per_second, t.poses_per_hour, t.compounds_per_hour
    )
}

fn eval_section(md: &mut String, summary_csv: &str) -> std::fmt::Result {
    writeln!(md, "## Method comparison\n")?;
    let mut lines = summary_csv.lines();
    let Some(header) = lines.next() else { return Ok(()) };
    let cols: Vec<&str> = header.split(',').collect();
    writeln!(md, "| {} |", cols.join(" | "))?;
    writeln!(md, "|{}", "---|".repeat(cols.len()))?;
    for l in lines {
        writeln!(md, "| {} |", l.split(',').collect::<Vec<_>>().join(" | "))?;
    }
    writeln!(md)
}

/// Markdown summaries. Wall-clock figures go to their own file so the main
/// report compares byte for byte across reruns.
pub fn run(a: ReportArgs) -> anyhow::Result<RunStatus> {
    let mut cfg: ReportCmdConfig = load_config(a.config.as_deref(), "report")?;
    cfg.screen = a.screen.or(cfg.screen);
    cfg.eval = a.eval.or(cfg.eval);
    cfg.out = a.out.or(cfg.out);
    if cfg.screen.is_none() && cfg.eval.is_none() {
        return Err(usage("report needs --screen and/or --eval"));
    }
    let out = cfg.out.clone().unwrap_or_else(|| "report".into());
    let inputs: Vec<PathBuf> = cfg.screen.iter().chain(&cfg.eval).cloned().collect();
    let mut stage = Stage::new("report", &out, 0, &cfg, inputs)?;
    let result = stage.time("report", || -> anyhow::Result<RunStatus> {
        let mut md = String::from("# Screening report\n\n");
        let mut timing_md = String::from("# Throughput\n\n");
        if let Some(dir) = &cfg.screen {
            let r: CampaignReport = read_json(&dir.join(CAMPAIGN_FILE))?;
            campaign_section(&mut md, &r)?;
            let t: CampaignTimings = read_json(&dir.join(TIMINGS_FILE))?;
            writeln!(timing_md, "| scope | startup s | evaluation s | output s | poses | poses/s | poses/h | compounds/h |")?;
            writeln!(timing_md, "|---|---|---|---|---|---|---|---|")?;
            throughput_row(&mut timing_md, "mean job", &t.per_job)?;
            throughput_row(&mut timing_md, "campaign", &t.campaign)?;
            writeln!(timing_md, "\nCampaign wall time {:.3} s.", t.wall_seconds)?;
        }
        if let Some(dir) = &cfg.eval {
            let csv = std::fs::read_to_string(dir.join(SUMMARY_FILE)).with_context(|| format!("reading {}", dir.join(SUMMARY_FILE).display()))?;
            eval_section(&mut md, &csv)?;
        }
        std::fs::write(out.join(REPORT_MD), md)?;
        if cfg.screen.is_some() {
            std::fs::write(out.join(THROUGHPUT_MD), timing_md)?;
        }
        Ok(RunStatus::Complete)
    });
    stage.finish(result)
}
