use serde::{Deserialize, Serialize};

/// Wall-clock phases of one job, in seconds.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct JobTimings {
    pub startup: f64,
    pub evaluation: f64,
    pub output: f64,
}

/// Throughput in the layout of a single-job benchmark table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThroughputReport {
    pub startup_seconds: f64,
    pub evaluation_seconds: f64,
    pub output_seconds: f64,
    pub poses: usize,
    pub poses_per_second: f64,
    /// Always exactly `3600 * poses_per_second`.
    pub poses_per_hour: f64,
    pub mean_poses_per_compound: f64,
    /// Always exactly `poses_per_hour / mean_poses_per_compound`.
    pub compounds_per_hour: f64,
}

impl ThroughputReport {
    /// Derives the hourly figures from a per-second rate.
    pub fn from_rate(poses_per_second: f64, mean_poses_per_compound: f64) -> Self {
        let poses_per_hour = 3600.0 * poses_per_second;
        Self {
            startup_seconds: 0.0,
            evaluation_seconds: 0.0,
            output_seconds: 0.0,
            poses: 0,
            poses_per_second,
            poses_per_hour,
            mean_poses_per_compound,
            compounds_per_hour: poses_per_hour / mean_poses_per_compound,
        }
    }
}

/// Rate over the evaluation phase; zero when nothing was evaluated.
pub fn throughput_report(timings: &JobTimings, poses: usize, mean_poses_per_compound: f64) -> ThroughputReport {
    let pps = if timings.evaluation > 0.0 { poses as f64 / timings.evaluation } else { 0.0 };
    ThroughputReport {
        startup_seconds: timings.startup,
        evaluation_seconds: timings.evaluation,
        output_seconds: timings.output,
        poses,
        ..ThroughputReport::from_rate(pps, mean_poses_per_compound)
    }
}

/// Per-job averages over several jobs, as a benchmark table reports them.
/// `poses` is the mean per job, rounded.
pub fn average_report(jobs: &[(JobTimings, usize)], mean_poses_per_compound: f64) -> ThroughputReport {
    if jobs.is_empty() {
        return throughput_report(&JobTimings::default(), 0, mean_poses_per_compound);
    }
    let n = jobs.len() as f64;
    let t = JobTimings {
        startup: jobs.iter().map(|j| j.0.startup).sum::<f64>() / n,
        evaluation: jobs.iter().map(|j| j.0.evaluation).sum::<f64>() / n,
        output: jobs.iter().map(|j| j.0.output).sum::<f64>() / n,
    };
    let poses = jobs.iter().map(|j| j.1).sum::<usize>();
    let pps = if t.evaluation > 0.0 { poses as f64 / n / t.evaluation } else { 0.0 };
    ThroughputReport {
        startup_seconds: t.startup,
        evaluation_seconds: t.evaluation,
        output_seconds: t.output,
        poses: (poses as f64 / n).round() as usize,
        ..ThroughputReport::from_rate(pps, mean_poses_per_compound)
    }
}
