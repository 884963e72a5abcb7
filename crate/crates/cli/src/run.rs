//! Config loading, run manifests and timing files shared by every command.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::Context;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const RUN_MANIFEST: &str = "run-manifest.json";
pub const RUN_TIMINGS: &str = "run-timings.json";

/// Bad flags or configuration; exits with status 1.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Complete,
    /// Finished, but some input ranges have no output.
    Incomplete,
    Failed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: PathBuf,
    pub sha256: String,
}

/// Everything needed to repeat a run: pass the manifest back as `--config`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub status: RunStatus,
    pub seed: u64,
    /// Digest of `config` without its `out` entry, so the same settings
    /// written to two places hash alike.
    pub config_sha256: String,
    pub config: serde_json::Value,
    pub output_dir: PathBuf,
    pub versions: BTreeMap<String, String>,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    pub error: Option<String>,
}

/// Reads a TOML config, or the `config` block of an earlier run manifest
/// (any `.json` file). Without a path the defaults apply.
pub fn load_config<C: DeserializeOwned + Default>(path: Option<&Path>, command: &str) -> anyhow::Result<C> {
    let Some(path) = path else { return Ok(C::default()) };
    let text = std::fs::read_to_string(path).map_err(|e| usage(format!("cannot read config {}: {e}", path.display())))?;
    if path.extension().is_some_and(|e| e == "json") {
        let m: RunManifest = serde_json::from_str(&text).map_err(|e| usage(format!("{}: not a run manifest: {e}", path.display())))?;
        if m.command != command {
            return Err(usage(format!("{} is a manifest for `{}`, not `{command}`", path.display(), m.command)));
        }
        return serde_json::from_value(m.config).map_err(|e| usage(format!("{}: {e}", path.display())));
    }
    toml::from_str(&text).map_err(|e| usage(format!("{}: {e}", path.display())))
}

pub fn sha256_file(path: &Path) -> anyhow::Result<String> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn is_bookkeeping(path: &Path) -> bool {
    path.file_name().and_then(|n| n.to_str()).is_some_and(|n| n == RUN_MANIFEST || n.contains("timings"))
}

/// Digests of a file, or of every file below a directory in path order.
/// Manifests and timing files are skipped.
pub fn digest_tree(path: &Path) -> anyhow::Result<Vec<FileDigest>> {
    let mut files = Vec::new();
    let mut stack = vec![path.to_path_buf()];
    while let Some(p) = stack.pop() {
        if p.is_dir() {
            for e in std::fs::read_dir(&p)? {
                stack.push(e?.path());
            }
        } else if p.exists() && !is_bookkeeping(&p) {
            files.push(p);
        }
    }
    files.sort();
    files.into_iter().map(|p| Ok(FileDigest { sha256: sha256_file(&p)?, path: p })).collect()
}

/// One invocation of a command. The manifest and the timing file are
/// written by [`Stage::finish`] whatever the outcome.
pub struct Stage {
    command: &'static str,
    out: PathBuf,
    seed: u64,
    config: serde_json::Value,
    config_sha256: String,
    inputs: Vec<PathBuf>,
    started: Instant,
    timings: BTreeMap<String, f64>,
}

impl Stage {
    pub fn new<C: Serialize>(command: &'static str, out: &Path, seed: u64, config: &C, inputs: Vec<PathBuf>) -> anyhow::Result<Self> {
        std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
        let config = serde_json::to_value(config)?;
        let mut hashed = config.clone();
        if let Some(m) = hashed.as_object_mut() {
            m.remove("out");
        }
        log::info!("{command}: writing to {}", out.display());
        Ok(Self {
            command,
            out: out.to_path_buf(),
            seed,
            config_sha256: hex::encode(Sha256::digest(serde_json::to_vec(&hashed)?)),
            config,
            inputs,
            started: Instant::now(),
            timings: BTreeMap::new(),
        })
    }

    pub fn out(&self) -> &Path {
        &self.out
    }

    pub fn time<R>(&mut self, name: &str, f: impl FnOnce() -> R) -> R {
        let t = Instant::now();
        let r = f();
        self.timings.insert(name.to_string(), t.elapsed().as_secs_f64());
        r
    }

    pub fn finish(mut self, result: anyhow::Result<RunStatus>) -> anyhow::Result<RunStatus> {
        self.timings.insert("total".into(), self.started.elapsed().as_secs_f64());
        let (status, error) = match &result {
            Ok(s) => (*s, None),
            Err(e) => (RunStatus::Failed, Some(format!("{e:#}"))),
        };
        let inputs = self.inputs.iter().map(|p| digest_tree(p)).collect::<anyhow::Result<Vec<_>>>()?.concat();
        let versions = [("fusionscreen", fusionscreen::VERSION), ("fusionscreen-cli", env!("CARGO_PKG_VERSION"))]
            .into_iter()
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect();
        let manifest = RunManifest {
            command: self.command.to_string(),
            status,
            seed: self.seed,
            config_sha256: self.config_sha256,
            config: self.config,
            output_dir: self.out.clone(),
            versions,
            inputs,
            outputs: digest_tree(&self.out)?,
            error,
        };
        std::fs::write(self.out.join(RUN_MANIFEST), serde_json::to_vec_pretty(&manifest)?)?;
        std::fs::write(self.out.join(RUN_TIMINGS), serde_json::to_vec_pretty(&self.timings)?)?;
        result
    }
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> anyhow::Result<()> {
    std::fs::write(path, serde_json::to_vec_pretty(value)?).with_context(|| format!("writing {}", path.display()))
}
