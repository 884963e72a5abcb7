//! Batch scoring of pose libraries: jobs of concurrent ranks fed by
//! prefetching loaders, all-or-nothing sharded output, retrying campaigns,
//! throughput reports and strong-scaling runs.

mod campaign;
mod faults;
mod job;
mod library;
mod report;
mod scaling;
mod scorer;

pub use campaign::{
    collect_outputs, run_campaign, CampaignConfig, CampaignReport, CampaignTimings, JobStatus, JobSummary, MissingRange, CAMPAIGN_FILE, MISSING_FILE,
    TIMINGS_FILE,
};
pub use faults::FaultPlan;
pub use job::{
    job_dir, partition, plan_jobs, read_job, run_job, ErrorRecord, JobManifest, JobOutcome, JobSpec, JobTemplate, PredictionRecord, ShardInfo, ERROR_LOG,
    JOB_MANIFEST,
};
pub use library::{generate_library, library_stats, parse_record, read_library, synthetic_assay, write_library, LibraryStats, PosePayload, PoseRecord};
pub use report::{average_report, throughput_report, JobTimings, ThroughputReport};
pub use scaling::{scaling_experiment, ScalingRow};
pub use scorer::{FusionScorer, PoseScorer, SyntheticCostScorer};

#[derive(Debug, thiserror::Error)]
pub enum ScreenError {
    #[error("library: {0}")]
    Library(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{0} is not implemented")]
    Unsupported(&'static str),
    #[error("job {job}: rank {rank} failed")]
    RankFailed { job: usize, rank: usize },
    #[error("job {job} failed on attempt {attempt}")]
    JobFailed { job: usize, attempt: u32 },
    #[error("output for job {0} already exists")]
    JobExists(usize),
    #[error("corrupt output: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
