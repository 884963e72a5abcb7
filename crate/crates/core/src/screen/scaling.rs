use serde::{Deserialize, Serialize};

use super::faults::FaultPlan;
use super::job::{run_job, JobSpec, JobTemplate};
use super::scorer::PoseScorer;
use super::ScreenError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingRow {
    pub workers: usize,
    pub batch_size: usize,
    /// Evaluation-phase seconds of each repeat.
    pub runs: Vec<f64>,
    pub mean_seconds: f64,
    pub std_seconds: f64,
}

/// Times the evaluation phase of one job over the whole library at every
/// (worker groups, batch size) pair, `repeats` times each, writing nothing.
pub fn scaling_experiment<S: PoseScorer>(
    lines: &[String],
    workers: &[usize],
    batch_sizes: &[usize],
    loaders: usize,
    repeats: usize,
    scorer: &S,
) -> Result<Vec<ScalingRow>, ScreenError> {
    if repeats == 0 || workers.is_empty() || batch_sizes.is_empty() {
        return Err(ScreenError::Config("need at least one worker count, batch size and repeat".into()));
    }
    let mut rows = Vec::new();
    for &w in workers {
        for &b in batch_sizes {
            let spec = JobSpec {
                job_id: 0,
                start: 0,
                end: lines.len(),
                layout: JobTemplate { ranks: w, batch_size: b, loaders, model_ref: None, streaming_write: false },
            };
            let runs = (0..repeats)
                .map(|_| run_job(&spec, lines, scorer, &FaultPlan::none(), 0, None).map(|o| o.timings.evaluation))
                .collect::<Result<Vec<f64>, _>>()?;
            let mean = runs.iter().sum::<f64>() / runs.len() as f64;
            let var = if runs.len() > 1 { runs.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (runs.len() - 1) as f64 } else { 0.0 };
            rows.push(ScalingRow { workers: w, batch_size: b, runs, mean_seconds: mean, std_seconds: var.sqrt() });
        }
    }
    Ok(rows)
}
