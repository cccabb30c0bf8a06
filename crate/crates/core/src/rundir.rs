//! Run directories: every CLI stage writes into one directory and records
//! what it produced in `manifest.json`.
//!
//! Outputs are written to staging paths first and only renamed into place
//! when the stage commits, so a failed stage leaves nothing half-written.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";
const STAGING_PREFIX: &str = ".staging-";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FileEntry {
    pub sha256: String,
    pub bytes: u64,
    /// Stage that last wrote the file.
    pub stage: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: String,
    pub args: Vec<String>,
    pub seeds: BTreeMap<String, u64>,
    pub config_toml: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub stages: Vec<StageRecord>,
    pub files: BTreeMap<String, FileEntry>,
}

pub struct RunDir {
    root: PathBuf,
}

impl RunDir {
    pub fn open(root: &Path) -> Result<Self> {
        std::fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
        Ok(Self { root: root.to_path_buf() })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    pub fn manifest(&self) -> Result<Manifest> {
        let p = self.path(MANIFEST_FILE);
        if !p.exists() {
            return Ok(Manifest {
                tool: env!("CARGO_PKG_NAME").into(),
                version: env!("CARGO_PKG_VERSION").into(),
                ..Default::default()
            });
        }
        let bytes = std::fs::read(&p).map_err(|e| Error::io(&p, e))?;
        Ok(serde_json::from_slice(&bytes)?)
    }

    pub fn stage(&self, record: StageRecord) -> Stage<'_> {
        Stage {
            dir: self,
            record,
            staged: Vec::new(),
            committed: false,
        }
    }
}

pub fn sha256_file(path: &Path) -> Result<(String, u64)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok((hex::encode(Sha256::digest(&bytes)), bytes.len() as u64))
}

/// Outputs of one CLI stage, pending commit.
pub struct Stage<'a> {
    dir: &'a RunDir,
    record: StageRecord,
    staged: Vec<(String, PathBuf)>,
    committed: bool,
}

impl Stage<'_> {
    /// Staging path for the output `rel` (relative to the run directory).
    pub fn output(&mut self, rel: &str) -> Result<PathBuf> {
        let final_path = self.dir.path(rel);
        let parent = final_path.parent().unwrap_or(self.dir.root());
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        let name = final_path
            .file_name()
            .and_then(|n| n.to_str())
            .ok_or_else(|| Error::Config(format!("bad output name {rel:?}")))?;
        let tmp = parent.join(format!("{STAGING_PREFIX}{name}"));
        self.staged.push((rel.to_string(), tmp.clone()));
        Ok(tmp)
    }

    pub fn commit(mut self) -> Result<Vec<String>> {
        let mut manifest = self.dir.manifest()?;
        let mut written = Vec::new();
        for (rel, tmp) in &self.staged {
            let dest = self.dir.path(rel);
            std::fs::rename(tmp, &dest).map_err(|e| Error::io(&dest, e))?;
            let (sha256, bytes) = sha256_file(&dest)?;
            manifest.files.insert(
                rel.clone(),
                FileEntry {
                    sha256,
                    bytes,
                    stage: self.record.stage.clone(),
                },
            );
            written.push(rel.clone());
        }
        manifest.stages.push(self.record.clone());
        let mpath = self.dir.path(MANIFEST_FILE);
        let tmp = self.dir.path(&format!("{STAGING_PREFIX}{MANIFEST_FILE}"));
        std::fs::write(&tmp, serde_json::to_vec_pretty(&manifest)?).map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, &mpath).map_err(|e| Error::io(&mpath, e))?;
        self.committed = true;
        Ok(written)
    }
}

impl Drop for Stage<'_> {
    fn drop(&mut self) {
        if !self.committed {
            for (_, tmp) in &self.staged {
                let _ = std::fs::remove_file(tmp);
            }
        }
    }
}
