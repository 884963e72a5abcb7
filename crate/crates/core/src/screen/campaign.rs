use std::collections::VecDeque;
use std::path::Path;
use std::sync::{Condvar, Mutex};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::faults::FaultPlan;
use super::job::{job_dir, plan_jobs, read_job, run_job, ErrorRecord, JobSpec, JobTemplate, PredictionRecord, JOB_MANIFEST};
use super::report::{average_report, throughput_report, JobTimings, ThroughputReport};
use super::scorer::PoseScorer;
use super::ScreenError;

pub const MISSING_FILE: &str = "missing.json";
pub const TIMINGS_FILE: &str = "timings.json";
pub const CAMPAIGN_FILE: &str = "campaign.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CampaignConfig {
    pub jobs: usize,
    /// Jobs running at once.
    pub parallelism: usize,
    /// Extra attempts after a job's first failure.
    pub retries: u32,
    pub layout: JobTemplate,
    /// Used for compounds per hour; poses per (compound, target) pair.
    pub mean_poses_per_compound: f64,
}

impl Default for CampaignConfig {
    fn default() -> Self {
        Self { jobs: 1, parallelism: 1, retries: 3, layout: JobTemplate::default(), mean_poses_per_compound: 10.0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobStatus {
    Completed,
    /// Output from an earlier run was already present.
    Skipped,
    Missing,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JobSummary {
    pub job_id: usize,
    pub start: usize,
    pub end: usize,
    pub status: JobStatus,
    pub attempts: u32,
    pub predictions: usize,
    pub errors: usize,
    pub failures: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MissingRange {
    pub job_id: usize,
    pub start: usize,
    pub end: usize,
    pub last_error: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CampaignReport {
    pub jobs: Vec<JobSummary>,
    pub missing: Vec<MissingRange>,
    pub predictions: usize,
    pub errors: usize,
}

/// Wall-clock figures, kept apart from the reproducible outputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CampaignTimings {
    pub wall_seconds: f64,
    pub jobs: Vec<(usize, JobTimings)>,
    /// Averages over jobs completed in this run.
    pub per_job: ThroughputReport,
    /// Everything scored in this run over the campaign's wall time.
    pub campaign: ThroughputReport,
}

struct Queue {
    pending: VecDeque<(usize, u32)>,
    running: usize,
}

/// Runs every job with at most `parallelism` in flight. A failed job goes
/// to the back of the queue until its retries run out; then its range is
/// listed in `missing.json`. Jobs whose output already exists are skipped,
/// so rerunning resumes.
pub fn run_campaign<S: PoseScorer>(
    lines: &[String],
    cfg: &CampaignConfig,
    scorer: &S,
    faults: &FaultPlan,
    out: &Path,
) -> Result<(CampaignReport, CampaignTimings), ScreenError> {
    if cfg.parallelism == 0 {
        return Err(ScreenError::Config("parallelism must be at least 1".into()));
    }
    faults.validate()?;
    let specs = plan_jobs(lines.len(), cfg.jobs, &cfg.layout)?;
    specs[0].validate()?;
    std::fs::create_dir_all(out)?;
    let t0 = Instant::now();

    let mut summaries: Vec<JobSummary> = specs
        .iter()
        .map(|s| JobSummary {
            job_id: s.job_id,
            start: s.start,
            end: s.end,
            status: JobStatus::Missing,
            attempts: 0,
            predictions: 0,
            errors: 0,
            failures: Vec::new(),
        })
        .collect();
    let mut queue = Queue { pending: VecDeque::new(), running: 0 };
    for s in &specs {
        if job_dir(out, s.job_id).join(JOB_MANIFEST).exists() {
            summaries[s.job_id].status = JobStatus::Skipped;
        } else {
            queue.pending.push_back((s.job_id, 0));
        }
    }
    let state = Mutex::new((queue, summaries, Vec::<(usize, JobTimings, usize)>::new()));
    let wake = Condvar::new();

    let worker = |specs: &[JobSpec]| loop {
        let (job, attempt) = {
            let mut g = state.lock().expect("scheduler lock");
            loop {
                if let Some(next) = g.0.pending.pop_front() {
                    g.0.running += 1;
                    break next;
                }
                if g.0.running == 0 {
                    return;
                }
                g = wake.wait(g).expect("scheduler lock");
            }
        };
        let result = run_job(&specs[job], lines, scorer, faults, attempt, Some(out));
        let mut g = state.lock().expect("scheduler lock");
        let (queue, summaries, timings) = &mut *g;
        queue.running -= 1;
        let s = &mut summaries[job];
        s.attempts = attempt + 1;
        match result {
            Ok(o) => {
                s.status = JobStatus::Completed;
                s.predictions = o.records.len();
                s.errors = o.errors.len();
                timings.push((job, o.timings, o.records.len()));
            }
            Err(e) => {
                log::warn!("job {job} attempt {attempt} failed: {e}");
                s.failures.push(e.to_string());
                if attempt < cfg.retries {
                    queue.pending.push_back((job, attempt + 1));
                }
            }
        }
        wake.notify_all();
    };
    std::thread::scope(|sc| {
        for _ in 0..cfg.parallelism.min(specs.len()) {
            sc.spawn(|| worker(&specs));
        }
    });

    let (_, mut summaries, mut job_timings) = state.into_inner().expect("scheduler lock");
    // skipped jobs contribute their stored counts
    for s in summaries.iter_mut().filter(|s| s.status == JobStatus::Skipped) {
        let (m, _, _) = read_job(&job_dir(out, s.job_id))?;
        s.predictions = m.predictions;
        s.errors = m.errors;
    }
    let missing: Vec<MissingRange> = summaries
        .iter()
        .filter(|s| s.status == JobStatus::Missing)
        .map(|s| MissingRange { job_id: s.job_id, start: s.start, end: s.end, last_error: s.failures.last().cloned().unwrap_or_default() })
        .collect();
    let report = CampaignReport {
        predictions: summaries.iter().map(|s| s.predictions).sum(),
        errors: summaries.iter().map(|s| s.errors).sum(),
        jobs: summaries,
        missing,
    };

    job_timings.sort_by_key(|t| t.0);
    let wall = t0.elapsed().as_secs_f64();
    let scored: usize = job_timings.iter().map(|t| t.2).sum();
    let per_job = average_report(&job_timings.iter().map(|t| (t.1, t.2)).collect::<Vec<_>>(), cfg.mean_poses_per_compound);
    let campaign = throughput_report(&JobTimings { startup: 0.0, evaluation: wall, output: 0.0 }, scored, cfg.mean_poses_per_compound);
    let timings = CampaignTimings { wall_seconds: wall, jobs: job_timings.into_iter().map(|t| (t.0, t.1)).collect(), per_job, campaign };

    std::fs::write(out.join(MISSING_FILE), serde_json::to_vec_pretty(&report.missing)?)?;
    std::fs::write(out.join(CAMPAIGN_FILE), serde_json::to_vec_pretty(&report)?)?;
    std::fs::write(out.join(TIMINGS_FILE), serde_json::to_vec_pretty(&timings)?)?;
    Ok((report, timings))
}

/// Every prediction and logged error under `out`, ordered by identifiers.
pub fn collect_outputs(out: &Path) -> Result<(Vec<PredictionRecord>, Vec<ErrorRecord>), ScreenError> {
    let mut dirs: Vec<_> = std::fs::read_dir(out)?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.is_dir() && p.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.starts_with("job-")))
        .collect();
    dirs.sort();
    let mut records = Vec::new();
    let mut errors = Vec::new();
    for d in dirs {
        let (_, r, e) = read_job(&d)?;
        records.extend(r);
        errors.extend(e);
    }
    records.sort_by(|a, b| (&a.compound_id, &a.target_id, a.pose_id).cmp(&(&b.compound_id, &b.target_id, b.pose_id)));
    errors.sort_by_key(|e| e.index);
    Ok((records, errors))
}
