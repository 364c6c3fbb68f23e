//! On-disk store layout.
//!
//! ```text
//! tasks/<task_id>.json            task definitions
//! snapshots/<snapshot_id>.json    base application snapshots
//! trees/<task_id>.jsonl           tree files (+ .rounds.jsonl, .done)
//! trajectories/<task_id>.jsonl    one line per root-to-leaf trajectory
//! observations/<hash>.json        content-addressed observations
//! datasets/<name>/                train.jsonl + manifest.json
//! cases/<case_id>.json            evaluation cases
//! reports/<run_id>/               CSV and markdown reports
//! runs/<run_id>/manifest.jsonl    append-only run manifests
//! ```

use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;

use super::OrchestratorError;
use crate::env::{DeskApp, SnapshotRegistry, TaskSpec};
use crate::tree::persist::write_atomic;
use crate::tree::ObservationStore;

#[derive(Debug, Clone)]
pub struct Store {
    root: PathBuf,
}

fn io_err(path: &Path, e: std::io::Error) -> OrchestratorError {
    OrchestratorError::Io(format!("{}: {e}", path.display()))
}

impl Store {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Store { root: root.into() }
    }

    /// Creates the directory skeleton.
    pub fn init(&self) -> Result<(), OrchestratorError> {
        for d in [
            "tasks",
            "snapshots",
            "trees",
            "trajectories",
            "observations",
            "datasets",
            "cases",
            "reports",
            "runs",
        ] {
            let p = self.root.join(d);
            fs::create_dir_all(&p).map_err(|e| io_err(&p, e))?;
        }
        Ok(())
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn tasks_dir(&self) -> PathBuf {
        self.root.join("tasks")
    }

    pub fn snapshots_dir(&self) -> PathBuf {
        self.root.join("snapshots")
    }

    pub fn tree_path(&self, task_id: &str) -> PathBuf {
        self.root.join("trees").join(format!("{task_id}.jsonl"))
    }

    pub fn rounds_path(&self, task_id: &str) -> PathBuf {
        self.root.join("trees").join(format!("{task_id}.rounds.jsonl"))
    }

    pub fn marker_path(&self, task_id: &str) -> PathBuf {
        self.root.join("trees").join(format!("{task_id}.done"))
    }

    pub fn trajectories_path(&self, task_id: &str) -> PathBuf {
        self.root.join("trajectories").join(format!("{task_id}.jsonl"))
    }

    pub fn observations(&self) -> ObservationStore {
        ObservationStore::new(self.root.join("observations"))
    }

    pub fn dataset_dir(&self, name: &str) -> PathBuf {
        self.root.join("datasets").join(name)
    }

    pub fn cases_dir(&self) -> PathBuf {
        self.root.join("cases")
    }

    pub fn report_dir(&self, run_id: &str) -> PathBuf {
        self.root.join("reports").join(run_id)
    }

    pub fn run_dir(&self, run_id: &str) -> PathBuf {
        self.root.join("runs").join(run_id)
    }

    pub fn manifest_path(&self, run_id: &str) -> PathBuf {
        self.run_dir(run_id).join("manifest.jsonl")
    }

    pub fn write_json<T: Serialize>(&self, path: &Path, value: &T) -> Result<(), OrchestratorError> {
        let mut bytes =
            serde_json::to_vec_pretty(value).map_err(|e| OrchestratorError::Integrity(e.to_string()))?;
        bytes.push(b'\n');
        write_atomic(path, &bytes).map_err(|e| io_err(path, e))
    }

    pub fn write_bytes(&self, path: &Path, bytes: &[u8]) -> Result<(), OrchestratorError> {
        write_atomic(path, bytes).map_err(|e| io_err(path, e))
    }

    pub fn read_json<T: DeserializeOwned>(&self, path: &Path) -> Result<T, OrchestratorError> {
        let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
        serde_json::from_str(&text).map_err(|e| OrchestratorError::Integrity(format!("{}: {e}", path.display())))
    }

    pub fn write_task(&self, task: &TaskSpec) -> Result<(), OrchestratorError> {
        self.write_json(&self.tasks_dir().join(format!("{}.json", task.task_id)), task)
    }

    pub fn write_snapshot(&self, app: &DeskApp) -> Result<(), OrchestratorError> {
        self.write_json(&self.snapshots_dir().join(format!("{}.json", app.id)), app)
    }

    /// Tasks whose id matches `pattern`, sorted by id.
    pub fn load_tasks(&self, pattern: &str) -> Result<Vec<TaskSpec>, OrchestratorError> {
        let pat = glob::Pattern::new(pattern).map_err(|e| OrchestratorError::Config(format!("task glob: {e}")))?;
        let dir = self.tasks_dir();
        if !dir.exists() {
            return Ok(Vec::new());
        }
        let mut paths: Vec<PathBuf> = fs::read_dir(&dir)
            .map_err(|e| io_err(&dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "json"))
            .collect();
        paths.sort();
        let mut tasks = Vec::new();
        for p in paths {
            let stem = p.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
            if !pat.matches(&stem) {
                continue;
            }
            let text = fs::read_to_string(&p).map_err(|e| io_err(&p, e))?;
            let task = TaskSpec::from_json(&text)
                .map_err(|e| OrchestratorError::Integrity(format!("{}: {e}", p.display())))?;
            if task.task_id != stem {
                return Err(OrchestratorError::Integrity(format!(
                    "{} holds task `{}`",
                    p.display(),
                    task.task_id
                )));
            }
            tasks.push(task);
        }
        Ok(tasks)
    }

    pub fn load_snapshots(&self) -> Result<SnapshotRegistry, OrchestratorError> {
        SnapshotRegistry::load_dir(&self.snapshots_dir()).map_err(|e| OrchestratorError::Integrity(e.to_string()))
    }

    /// Appends one JSON line to the run manifest.
    pub fn append_manifest<T: Serialize>(&self, run_id: &str, event: &T) -> Result<(), OrchestratorError> {
        let path = self.manifest_path(run_id);
        let dir = self.run_dir(run_id);
        fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
        let mut line = serde_json::to_vec(event).map_err(|e| OrchestratorError::Integrity(e.to_string()))?;
        line.push(b'\n');
        let mut f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| io_err(&path, e))?;
        f.write_all(&line).map_err(|e| io_err(&path, e))
    }

    pub fn read_manifest(&self, run_id: &str) -> Result<Vec<serde_json::Value>, OrchestratorError> {
        let path = self.manifest_path(run_id);
        if !path.exists() {
            return Err(OrchestratorError::NotFound(format!("run `{run_id}`")));
        }
        let text = fs::read_to_string(&path).map_err(|e| io_err(&path, e))?;
        text.lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| {
                serde_json::from_str(l)
                    .map_err(|e| OrchestratorError::Integrity(format!("{}: {e}", path.display())))
            })
            .collect()
    }
}
