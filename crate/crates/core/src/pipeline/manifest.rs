use std::collections::BTreeMap;
use std::fs::File;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, IoContext, Result};
use crate::jsonl;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StageStatus {
    Pending,
    Running,
    Done,
    Failed,
}

/// Checkpoint record for one stage, stored as `manifests/<stage>.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageManifest {
    pub stage: String,
    pub status: StageStatus,
    /// Content hashes of everything the stage's outputs depend on.
    pub input_hashes: BTreeMap<String, String>,
    pub units_total: usize,
    pub completed_units: Vec<String>,
    /// Relative to the output directory.
    pub outputs: Vec<PathBuf>,
    #[serde(default)]
    pub counters: serde_json::Value,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl StageManifest {
    pub fn new(stage: &str, input_hashes: BTreeMap<String, String>) -> Self {
        Self {
            stage: stage.to_owned(),
            status: StageStatus::Pending,
            input_hashes,
            units_total: 0,
            completed_units: Vec::new(),
            outputs: Vec::new(),
            counters: serde_json::Value::Null,
            error: None,
        }
    }

    pub fn path(out_dir: &Path, stage: &str) -> PathBuf {
        out_dir.join("manifests").join(format!("{stage}.json"))
    }

    pub fn load(out_dir: &Path, stage: &str) -> Result<Option<Self>> {
        let path = Self::path(out_dir, stage);
        if !path.exists() {
            return Ok(None);
        }
        let m: Self = jsonl::read_json(&path)?;
        if m.stage != stage {
            return Err(Error::Integrity(format!("{} describes stage {:?}", path.display(), m.stage)));
        }
        Ok(Some(m))
    }

    pub fn save(&self, out_dir: &Path) -> Result<()> {
        jsonl::write_json(&Self::path(out_dir, &self.stage), self)
    }

    pub fn outputs_present(&self, out_dir: &Path) -> bool {
        self.outputs.iter().all(|p| out_dir.join(p).is_file())
    }

    /// Done means every unit ran and every output exists.
    pub fn is_complete(&self, out_dir: &Path) -> bool {
        self.status == StageStatus::Done
            && self.completed_units.len() == self.units_total
            && self.outputs_present(out_dir)
    }

    /// Names the inputs whose hashes differ from `current`.
    pub fn stale_inputs(&self, current: &BTreeMap<String, String>) -> Vec<String> {
        let mut keys: Vec<&String> = self.input_hashes.keys().chain(current.keys()).collect();
        keys.sort();
        keys.dedup();
        keys.into_iter()
            .filter(|k| self.input_hashes.get(*k) != current.get(*k))
            .cloned()
            .collect()
    }
}

/// Exclusive lock on an output directory, released on drop.
#[derive(Debug)]
pub struct DirLock {
    _file: File,
    path: PathBuf,
}

impl DirLock {
    pub fn acquire(out_dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(out_dir).at(out_dir)?;
        let path = out_dir.join(".lock");
        let file = File::options().create(true).truncate(false).write(true).open(&path).at(&path)?;
        match file.try_lock() {
            Ok(()) => Ok(Self { _file: file, path }),
            Err(std::fs::TryLockError::WouldBlock) => Err(Error::Config(format!(
                "{} is in use by another pipeline process",
                out_dir.display()
            ))),
            Err(std::fs::TryLockError::Error(e)) => Err(e).at(&path),
        }
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}
