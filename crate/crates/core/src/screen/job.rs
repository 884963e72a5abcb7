use std::io::{BufWriter, Write};
use std::ops::Range;
use std::path::{Path, PathBuf};
use std::time::Instant;

use crossbeam::channel;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::faults::FaultPlan;
use super::library::parse_record;
use super::report::JobTimings;
use super::scorer::PoseScorer;
use super::ScreenError;

/// Per-job layout shared by every job of a campaign.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct JobTemplate {
    pub ranks: usize,
    pub batch_size: usize,
    pub loaders: usize,
    pub model_ref: Option<PathBuf>,
    /// Per-rank incremental output. Not implemented; must stay off.
    pub streaming_write: bool,
}

impl Default for JobTemplate {
    fn default() -> Self {
        Self { ranks: 16, batch_size: 56, loaders: 12, model_ref: None, streaming_write: false }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JobSpec {
    pub job_id: usize,
    /// Library line range `[start, end)`.
    pub start: usize,
    pub end: usize,
    #[serde(flatten)]
    pub layout: JobTemplate,
}

impl JobSpec {
    pub fn validate(&self) -> Result<(), ScreenError> {
        let l = &self.layout;
        if l.ranks == 0 || l.batch_size == 0 || l.loaders == 0 {
            return Err(ScreenError::Config("ranks, batch size and loaders must all be at least 1".into()));
        }
        if self.start >= self.end {
            return Err(ScreenError::Config(format!("job {} has an empty range", self.job_id)));
        }
        if l.streaming_write {
            return Err(ScreenError::Unsupported("streaming write"));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.start == self.end
    }

    /// Contiguous per-rank assignments; ranks beyond the pose count idle.
    pub fn rank_ranges(&self) -> Vec<Range<usize>> {
        let ranks = self.layout.ranks.min(self.len()).max(1);
        partition(self.len(), ranks).expect("non-empty range").into_iter().map(|r| r.start + self.start..r.end + self.start).collect()
    }
}

/// Splits `0..n` into `parts` contiguous ranges whose sizes differ by at
/// most one, larger ranges first.
pub fn partition(n: usize, parts: usize) -> Result<Vec<Range<usize>>, ScreenError> {
    if n == 0 {
        return Err(ScreenError::Library("nothing to partition".into()));
    }
    if parts == 0 {
        return Err(ScreenError::Config("at least one part is needed".into()));
    }
    let (q, r) = (n / parts, n % parts);
    let mut start = 0;
    Ok((0..parts)
        .map(|i| {
            let len = q + usize::from(i < r);
            let range = start..start + len;
            start += len;
            range
        })
        .collect())
}

/// One job per contiguous slice of an `n_poses` library.
pub fn plan_jobs(n_poses: usize, n_jobs: usize, layout: &JobTemplate) -> Result<Vec<JobSpec>, ScreenError> {
    if n_jobs > n_poses {
        return Err(ScreenError::Config(format!("{n_jobs} jobs for {n_poses} poses")));
    }
    Ok(partition(n_poses, n_jobs)?.into_iter().enumerate().map(|(job_id, r)| JobSpec { job_id, start: r.start, end: r.end, layout: layout.clone() }).collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub compound_id: String,
    pub target_id: String,
    pub pose_id: u32,
    pub predicted_pk: f64,
    pub job_id: usize,
    pub rank_id: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorRecord {
    /// Library line index.
    pub index: usize,
    pub compound_id: Option<String>,
    pub target_id: Option<String>,
    pub pose_id: Option<u32>,
    pub reason: String,
    pub job_id: usize,
    pub rank_id: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShardInfo {
    pub file: String,
    pub records: usize,
    pub sha256: String,
}

/// Written last into a job directory; its presence marks the job complete.
/// Timings live elsewhere so the directory's content is reproducible.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JobManifest {
    pub job_id: usize,
    pub start: usize,
    pub end: usize,
    pub attempt: u32,
    pub predictions: usize,
    pub errors: usize,
    pub shards: Vec<ShardInfo>,
}

pub const JOB_MANIFEST: &str = "manifest.json";
pub const ERROR_LOG: &str = "errors.jsonl";

pub fn job_dir(out: &Path, job_id: usize) -> PathBuf {
    out.join(format!("job-{job_id:06}"))
}

#[derive(Clone, Debug)]
pub struct JobOutcome {
    pub spec: JobSpec,
    pub records: Vec<PredictionRecord>,
    pub errors: Vec<ErrorRecord>,
    pub timings: JobTimings,
    /// Directory holding the shards, when output was requested.
    pub dir: Option<PathBuf>,
}

type Key = (String, String, u32);
type Loaded<I> = Vec<(usize, Result<(Key, I), (Option<Key>, String)>)>;

struct RankResult {
    records: Vec<(usize, PredictionRecord)>,
    errors: Vec<ErrorRecord>,
    first_batch: Option<Instant>,
}

fn load<S: PoseScorer>(i: usize, line: &str, scorer: &S, faults: &FaultPlan) -> Result<(Key, S::Item), (Option<Key>, String)> {
    let rec = parse_record(line);
    if faults.record_corrupt(i) {
        return Err((rec.ok().map(|r| r.key()), "injected corruption".into()));
    }
    let rec = rec.map_err(|e| (None, e))?;
    let item = scorer.prepare(&rec).map_err(|e| (Some(rec.key()), e))?;
    Ok((rec.key(), item))
}

fn error_record(index: usize, key: Option<Key>, reason: String, job_id: usize, rank_id: usize) -> ErrorRecord {
    let (c, t, p) = match key {
        Some((c, t, p)) => (Some(c), Some(t), Some(p)),
        None => (None, None, None),
    };
    ErrorRecord { index, compound_id: c, target_id: t, pose_id: p, reason, job_id, rank_id }
}

/// Loaders prepare batches round-robin into a bounded queue; the rank
/// scores them in arrival order. A doomed rank stops halfway.
fn run_rank<S: PoseScorer>(
    spec: &JobSpec,
    rank: usize,
    range: Range<usize>,
    lines: &[String],
    scorer: &S,
    faults: &FaultPlan,
    doomed: bool,
) -> Result<RankResult, ScreenError> {
    let bs = spec.layout.batch_size;
    let n_batches = range.len().div_ceil(bs);
    let loaders = spec.layout.loaders.min(n_batches).max(1);
    let (tx, rx) = channel::bounded::<(usize, Loaded<S::Item>)>(2 * loaders);
    let mut out = RankResult { records: Vec::with_capacity(range.len()), errors: Vec::new(), first_batch: None };
    let fail_after = if doomed { n_batches / 2 } else { usize::MAX };
    std::thread::scope(|s| {
        for l in 0..loaders {
            let tx = tx.clone();
            let range = range.clone();
            s.spawn(move || {
                for b in (l..n_batches).step_by(loaders) {
                    let lo = range.start + b * bs;
                    let hi = (lo + bs).min(range.end);
                    let batch: Loaded<S::Item> = (lo..hi).map(|i| (i, load(i, &lines[i], scorer, faults))).collect();
                    if tx.send((b, batch)).is_err() {
                        break;
                    }
                }
            });
        }
        drop(tx);
        let mut result = Ok(());
        for (done, (_, batch)) in rx.iter().enumerate() {
            out.first_batch.get_or_insert_with(Instant::now);
            if done >= fail_after {
                result = Err(ScreenError::RankFailed { job: spec.job_id, rank });
                break;
            }
            let mut ready = Vec::with_capacity(batch.len());
            let mut items = Vec::with_capacity(batch.len());
            for (i, r) in batch {
                match r {
                    Ok((key, item)) => {
                        ready.push((i, key));
                        items.push(item);
                    }
                    Err((key, reason)) => {
                        log::warn!("job {} rank {rank}: skipping line {i}: {reason}", spec.job_id);
                        out.errors.push(error_record(i, key, reason, spec.job_id, rank));
                    }
                }
            }
            if items.is_empty() {
                continue;
            }
            let preds = scorer.predict_batch(&items);
            for ((i, key), p) in ready.into_iter().zip(preds) {
                match p {
                    Ok(v) if v.is_finite() => {
                        let (compound_id, target_id, pose_id) = key;
                        out.records.push((i, PredictionRecord { compound_id, target_id, pose_id, predicted_pk: v, job_id: spec.job_id, rank_id: rank }));
                    }
                    Ok(v) => out.errors.push(error_record(i, Some(key), format!("non-finite prediction {v}"), spec.job_id, rank)),
                    Err(reason) => out.errors.push(error_record(i, Some(key), reason, spec.job_id, rank)),
                }
            }
        }
        // unblock any loader still waiting on a full queue
        drop(rx);
        if doomed && result.is_ok() {
            result = Err(ScreenError::RankFailed { job: spec.job_id, rank });
        }
        result
    })?;
    out.records.sort_by_key(|r| r.0);
    out.errors.sort_by_key(|e| e.index);
    Ok(out)
}

fn sha256_file(path: &Path) -> Result<String, ScreenError> {
    Ok(hex::encode(Sha256::digest(std::fs::read(path)?)))
}

fn write_shard(path: &Path, records: &[PredictionRecord]) -> Result<(), ScreenError> {
    let mut w = csv::Writer::from_writer(BufWriter::new(std::fs::File::create(path)?));
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Shards hold whole compounds; shard `k` goes to writer `k`.
fn shard_bounds(records: &[PredictionRecord], writers: usize) -> Vec<Range<usize>> {
    let mut runs: Vec<usize> = Vec::new();
    for (i, r) in records.iter().enumerate() {
        if i == 0 || records[i - 1].compound_id != r.compound_id {
            runs.push(i);
        }
    }
    if runs.is_empty() {
        return Vec::new();
    }
    let groups = partition(runs.len(), writers.min(runs.len())).expect("non-empty");
    groups.into_iter().map(|g| runs[g.start]..runs.get(g.end).copied().unwrap_or(records.len())).collect()
}

fn write_job(out: &Path, spec: &JobSpec, attempt: u32, records: &[PredictionRecord], errors: &[ErrorRecord]) -> Result<PathBuf, ScreenError> {
    let final_dir = job_dir(out, spec.job_id);
    if final_dir.exists() {
        return Err(ScreenError::JobExists(spec.job_id));
    }
    let tmp = out.join(format!(".job-{:06}.attempt-{attempt}.tmp", spec.job_id));
    if tmp.exists() {
        std::fs::remove_dir_all(&tmp)?;
    }
    std::fs::create_dir_all(&tmp)?;
    let result = (|| {
        let bounds = shard_bounds(records, spec.layout.ranks);
        let shards = std::thread::scope(|s| {
            let handles: Vec<_> = bounds
                .iter()
                .enumerate()
                .map(|(k, b)| {
                    let tmp = &tmp;
                    s.spawn(move || -> Result<ShardInfo, ScreenError> {
                        let file = format!("shard-{k:04}.csv");
                        let path = tmp.join(&file);
                        write_shard(&path, &records[b.clone()])?;
                        Ok(ShardInfo { sha256: sha256_file(&path)?, file, records: b.len() })
                    })
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("writer thread panicked")).collect::<Result<Vec<_>, _>>()
        })?;
        let mut w = BufWriter::new(std::fs::File::create(tmp.join(ERROR_LOG))?);
        for e in errors {
            serde_json::to_writer(&mut w, e)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        let manifest = JobManifest { job_id: spec.job_id, start: spec.start, end: spec.end, attempt, predictions: records.len(), errors: errors.len(), shards };
        std::fs::write(tmp.join(JOB_MANIFEST), serde_json::to_vec_pretty(&manifest)?)?;
        std::fs::rename(&tmp, &final_dir)?;
        Ok(final_dir.clone())
    })();
    if result.is_err() {
        let _ = std::fs::remove_dir_all(&tmp);
    }
    result
}

/// Scores one job: ranks run concurrently over contiguous slices, results
/// are gathered at a barrier, then written as compound-aligned shards in
/// parallel. Any rank or job failure aborts before anything becomes
/// visible in `out`.
pub fn run_job<S: PoseScorer>(
    spec: &JobSpec,
    lines: &[String],
    scorer: &S,
    faults: &FaultPlan,
    attempt: u32,
    out: Option<&Path>,
) -> Result<JobOutcome, ScreenError> {
    spec.validate()?;
    faults.validate()?;
    if spec.end > lines.len() {
        return Err(ScreenError::Config(format!("job {} ends at {} but the library has {} lines", spec.job_id, spec.end, lines.len())));
    }
    let t0 = Instant::now();
    let ranges = spec.rank_ranges();
    let doomed = faults.failing_rank(spec.job_id, attempt, ranges.len());
    let results: Vec<Result<RankResult, ScreenError>> = std::thread::scope(|s| {
        let handles: Vec<_> =
            ranges.iter().enumerate().map(|(rank, r)| s.spawn(move || run_rank(spec, rank, r.clone(), lines, scorer, faults, doomed == Some(rank)))).collect();
        handles.into_iter().map(|h| h.join().expect("rank thread panicked")).collect()
    });
    let gathered = Instant::now();
    let mut records = Vec::with_capacity(spec.len());
    let mut errors = Vec::new();
    let mut first = gathered;
    for r in results {
        let r = r?;
        first = first.min(r.first_batch.unwrap_or(gathered));
        records.extend(r.records.into_iter().map(|x| x.1));
        errors.extend(r.errors);
    }
    if faults.job_fails(spec.job_id, attempt) {
        return Err(ScreenError::JobFailed { job: spec.job_id, attempt });
    }
    let mut timings = JobTimings { startup: (first - t0).as_secs_f64(), evaluation: (gathered - first).as_secs_f64(), output: 0.0 };
    let dir = match out {
        Some(out) => {
            let w0 = Instant::now();
            let d = write_job(out, spec, attempt, &records, &errors)?;
            timings.output = w0.elapsed().as_secs_f64();
            Some(d)
        }
        None => None,
    };
    Ok(JobOutcome { spec: spec.clone(), records, errors, timings, dir })
}

/// Reads back every shard listed in a job directory's manifest, checking
/// digests.
pub fn read_job(dir: &Path) -> Result<(JobManifest, Vec<PredictionRecord>, Vec<ErrorRecord>), ScreenError> {
    let manifest: JobManifest = serde_json::from_slice(&std::fs::read(dir.join(JOB_MANIFEST))?)?;
    let mut records = Vec::with_capacity(manifest.predictions);
    for s in &manifest.shards {
        let path = dir.join(&s.file);
        if sha256_file(&path)? != s.sha256 {
            return Err(ScreenError::Corrupt(format!("{} does not match its digest", path.display())));
        }
        let mut rd = csv::Reader::from_path(&path)?;
        for r in rd.deserialize() {
            records.push(r?);
        }
    }
    let errors = std::fs::read_to_string(dir.join(ERROR_LOG))?.lines().map(serde_json::from_str).collect::<Result<Vec<ErrorRecord>, _>>()?;
    Ok((manifest, records, errors))
}
