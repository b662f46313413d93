//! Output directory handling: naming, locking and run manifests.

use std::collections::BTreeMap;
use std::fs::{self, OpenOptions};
use std::io::ErrorKind;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use anyhow::{bail, Context as _, Result};
use serde::{Deserialize, Serialize};
use sgld_core::sgld::PreconditionFailure;
use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;

pub const LOCK_NAME: &str = ".sgld-lab.lock";

/// A loaded configuration together with the resolved seed and output directory.
#[derive(Debug, Clone)]
pub struct RunContext {
    pub config: ExperimentConfig,
    pub config_hash: String,
    pub seed: u64,
    pub out: PathBuf,
    pub allow_unsafe: bool,
}

impl RunContext {
    /// Applies the seed and output overrides; the hash covers the effective config.
    pub fn new(mut config: ExperimentConfig, seed: Option<u64>, out: Option<PathBuf>, allow_unsafe: bool) -> Self {
        if let Some(s) = seed {
            config.sgld.seed = s;
        }
        if let Some(dir) = &out {
            config.output.dir = dir.display().to_string();
        }
        let out = PathBuf::from(&config.output.dir);
        let config_hash = hash_config(&config);
        Self {
            seed: config.sgld.seed,
            config,
            config_hash,
            out,
            allow_unsafe,
        }
    }

    /// `s{seed}_{hash prefix}`, embedded in every output name.
    pub fn tag(&self) -> String {
        format!("s{}_{}", self.seed, &self.config_hash[..12])
    }

    pub fn artifact(&self, kind: &str, ext: &str) -> String {
        format!("{kind}_{}.{ext}", self.tag())
    }
}

/// SHA-256 of the canonical JSON form of the config, hex encoded. The output
/// directory is left out so relocated runs keep their names.
pub fn hash_config(config: &ExperimentConfig) -> String {
    let mut c = config.clone();
    c.output.dir.clear();
    let canonical = serde_json::to_string(&c).expect("config serializes");
    sha256_hex(canonical.as_bytes())
}

pub fn sha256_hex(data: &[u8]) -> String {
    hex(&Sha256::digest(data))
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Exclusive claim on an output directory, released on drop.
#[derive(Debug)]
pub struct OutputLock {
    path: PathBuf,
}

impl OutputLock {
    pub fn acquire(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let path = dir.join(LOCK_NAME);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(_) => Ok(Self { path }),
            Err(e) if e.kind() == ErrorKind::AlreadyExists => {
                bail!("{} is locked by another invocation ({})", dir.display(), path.display())
            }
            Err(e) => Err(e).with_context(|| format!("creating {}", path.display())),
        }
    }
}

impl Drop for OutputLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Running,
    Complete,
    Refused,
    Violations,
    Failed,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config_hash: String,
    pub seed: Option<u64>,
    pub artifact_version: String,
    pub normal_algorithm: String,
    pub started_unix: u64,
    pub status: RunStatus,
    pub outputs: Vec<String>,
    pub wall_clock_secs: BTreeMap<String, f64>,
    pub preconditions: Vec<PreconditionFailure>,
    pub notes: Vec<String>,
    /// Echo of the effective configuration.
    pub config: Option<ExperimentConfig>,
}

/// A manifest bound to its directory; written at creation and on finish.
pub struct ManifestWriter {
    dir: PathBuf,
    file: String,
    started: Instant,
    pub manifest: RunManifest,
    _lock: OutputLock,
}

impl ManifestWriter {
    pub fn begin(ctx: &RunContext, command: &str) -> Result<Self> {
        Self::begin_raw(
            &ctx.out,
            command,
            &ctx.tag(),
            &ctx.config_hash,
            Some(ctx.seed),
            Some(ctx.config.clone()),
        )
    }

    pub fn begin_raw(
        dir: &Path,
        command: &str,
        tag: &str,
        hash: &str,
        seed: Option<u64>,
        config: Option<ExperimentConfig>,
    ) -> Result<Self> {
        let lock = OutputLock::acquire(dir)?;
        let manifest = RunManifest {
            command: command.into(),
            config_hash: hash.into(),
            seed,
            artifact_version: env!("CARGO_PKG_VERSION").into(),
            normal_algorithm: sgld_core::rng::NORMAL_ALGORITHM.into(),
            started_unix: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
            status: RunStatus::Running,
            outputs: Vec::new(),
            wall_clock_secs: BTreeMap::new(),
            preconditions: Vec::new(),
            notes: Vec::new(),
            config,
        };
        let w = Self {
            dir: dir.to_path_buf(),
            file: format!("manifest_{command}_{tag}.json"),
            started: Instant::now(),
            manifest,
            _lock: lock,
        };
        w.flush()?;
        Ok(w)
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn flush(&self) -> Result<()> {
        let path = self.dir.join(&self.file);
        let text = serde_json::to_string_pretty(&self.manifest)?;
        fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
    }

    /// Writes one output file and records it.
    pub fn write(&mut self, name: &str, contents: &str) -> Result<PathBuf> {
        let path = self.dir.join(name);
        fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))?;
        self.manifest.outputs.push(name.to_string());
        Ok(path)
    }

    pub fn time<T>(&mut self, phase: &str, f: impl FnOnce() -> T) -> T {
        let start = Instant::now();
        let out = f();
        self.manifest
            .wall_clock_secs
            .insert(phase.to_string(), start.elapsed().as_secs_f64());
        out
    }

    pub fn note(&mut self, note: impl Into<String>) {
        self.manifest.notes.push(note.into());
    }

    pub fn finish(mut self, status: RunStatus) -> Result<PathBuf> {
        self.manifest.status = status;
        self.manifest
            .wall_clock_secs
            .insert("total".into(), self.started.elapsed().as_secs_f64());
        self.flush()?;
        Ok(self.dir.join(&self.file))
    }
}
