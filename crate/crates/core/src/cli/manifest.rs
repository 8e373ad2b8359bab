//! Run manifests: what a command read and wrote, with content hashes.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::Result;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Artifact {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

impl Artifact {
    pub fn from_bytes(path: impl Into<String>, data: &[u8]) -> Self {
        Self { path: path.into(), sha256: hex::encode(Sha256::digest(data)), bytes: data.len() as u64 }
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let data = fs::read(path).map_err(|source| crate::error::Error::File { path: path.to_path_buf(), source })?;
        Ok(Self::from_bytes(path.display().to_string(), &data))
    }
}

/// Timing fields are the only content that varies between identical runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WallClock {
    pub started_unix_seconds: u64,
    pub elapsed_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    /// Command options in canonical string form.
    pub options: BTreeMap<String, String>,
    pub config_digest: Option<String>,
    pub seed: Option<u64>,
    pub inputs: Vec<Artifact>,
    /// Output paths are relative to the output directory.
    pub outputs: Vec<Artifact>,
    pub versions: BTreeMap<String, String>,
    pub wall_clock: WallClock,
}

impl RunManifest {
    pub fn read(path: &Path) -> Result<Self> {
        Ok(serde_json::from_slice(&fs::read(path)?)?)
    }

    /// Copy with the timing fields zeroed, for comparing runs.
    pub fn without_wall_clock(&self) -> Self {
        Self { wall_clock: WallClock { started_unix_seconds: 0, elapsed_seconds: 0.0 }, ..self.clone() }
    }
}

/// Collects the artifacts of one command and writes them under `root`.
#[derive(Debug)]
pub struct RunRecorder {
    root: PathBuf,
    command: String,
    options: BTreeMap<String, String>,
    config_digest: Option<String>,
    seed: Option<u64>,
    inputs: Vec<Artifact>,
    outputs: Vec<Artifact>,
    started: SystemTime,
    clock: Instant,
}

impl RunRecorder {
    pub fn new(command: &str, root: &Path) -> Result<Self> {
        fs::create_dir_all(root)?;
        Ok(Self {
            root: root.to_path_buf(),
            command: command.to_string(),
            options: BTreeMap::new(),
            config_digest: None,
            seed: None,
            inputs: Vec::new(),
            outputs: Vec::new(),
            started: SystemTime::now(),
            clock: Instant::now(),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn option(&mut self, key: &str, value: impl ToString) -> &mut Self {
        self.options.insert(key.to_string(), value.to_string());
        self
    }

    pub fn config_digest(&mut self, digest: String) -> &mut Self {
        self.config_digest = Some(digest);
        self
    }

    pub fn seed(&mut self, seed: u64) -> &mut Self {
        self.seed = Some(seed);
        self
    }

    pub fn input(&mut self, path: &Path) -> Result<()> {
        self.inputs.push(Artifact::from_file(path)?);
        Ok(())
    }

    /// Writes `data` to `root/name` and records its hash.
    pub fn write(&mut self, name: &str, data: &[u8]) -> Result<PathBuf> {
        let path = self.root.join(name);
        fs::write(&path, data)?;
        self.outputs.push(Artifact::from_bytes(name, data));
        Ok(path)
    }

    /// Writes `manifest.json` and returns the manifest.
    pub fn finish(self) -> Result<RunManifest> {
        let versions =
            BTreeMap::from([("dmbpp".to_string(), env!("CARGO_PKG_VERSION").to_string())]);
        let manifest = RunManifest {
            command: self.command,
            options: self.options,
            config_digest: self.config_digest,
            seed: self.seed,
            inputs: self.inputs,
            outputs: self.outputs,
            versions,
            wall_clock: WallClock {
                started_unix_seconds: self.started.duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
                elapsed_seconds: self.clock.elapsed().as_secs_f64(),
            },
        };
        let mut text = serde_json::to_vec_pretty(&manifest)?;
        text.push(b'\n');
        fs::write(self.root.join(MANIFEST_FILE), text)?;
        Ok(manifest)
    }
}
