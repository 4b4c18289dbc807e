//! What a run directory needs to be reproduced.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{bail, Context};
use clozener::corpus::SchemaKind;
use clozener::eval::sha256_hex;
use clozener::pipeline::{write_atomic, PipelineConfig};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputFile {
    pub path: PathBuf,
    pub sha256: String,
}

impl InputFile {
    pub fn digest(path: &Path) -> anyhow::Result<Self> {
        let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
        Ok(InputFile {
            path: path.to_path_buf(),
            sha256: sha256_hex(&bytes),
        })
    }

    fn verify(&self) -> anyhow::Result<()> {
        let now = InputFile::digest(&self.path)?;
        if now.sha256 != self.sha256 {
            bail!("{} changed since the manifest was written", self.path.display());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool_version: String,
    pub entity_type: String,
    pub schema: SchemaKind,
    pub scorer: String,
    pub train: InputFile,
    pub unlabeled: Option<InputFile>,
    pub test: InputFile,
    pub config: PipelineConfig,
    pub started_unix: u64,
    pub finished_unix: u64,
    pub report_sha256: String,
}

impl Manifest {
    pub fn read(path: &Path) -> anyhow::Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let m: Manifest = serde_json::from_str(&text)
            .map_err(|e| clozener::Error::Config(format!("{}: {e}", path.display())))?;
        m.config.validate()?;
        Ok(m)
    }

    pub fn verify_inputs(&self) -> anyhow::Result<()> {
        self.train.verify()?;
        self.test.verify()?;
        if let Some(u) = &self.unlabeled {
            u.verify()?;
        }
        Ok(())
    }

    pub fn write(&self, path: &Path) -> anyhow::Result<()> {
        let mut json = serde_json::to_string_pretty(self)?;
        json.push('\n');
        write_atomic(path, json.as_bytes())?;
        Ok(())
    }
}

pub fn now_unix() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}
