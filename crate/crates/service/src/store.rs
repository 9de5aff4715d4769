//! Durable run store: one JSON file per finished run under a
//! content-addressed directory, plus an append-only `index.jsonl` of status
//! transitions. A single writer lock serializes mutations; readers share a
//! read lock.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock};

use mirror_core::canonical::to_canonical_json;
use mirror_core::AnalysisOptions;
use serde::{Deserialize, Serialize};
use serde_json::value::RawValue;
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Pending,
    Done,
    Failed,
}

/// A submitted analysis and, once finished, its result or error.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AnalysisRun {
    pub run_id: String,
    pub status: RunStatus,
    pub backend_id: String,
    pub created_at: String,
    pub error: Option<String>,
    /// Canonical analysis JSON, embedded byte for byte.
    pub result: Option<Box<RawValue>>,
}

#[derive(Serialize)]
struct RunKey<'a> {
    backend_id: &'a str,
    options: &'a AnalysisOptions,
    text: &'a str,
}

/// Hex SHA-256 of the canonical encoding of text, options and backend id.
pub fn run_id(text: &str, options: &AnalysisOptions, backend_id: &str) -> String {
    let key = to_canonical_json(&RunKey {
        backend_id,
        options,
        text,
    });
    hex::encode(Sha256::digest(key.as_bytes()))
}

#[derive(Debug, Serialize, Deserialize)]
struct IndexLine {
    run_id: String,
    status: RunStatus,
    backend_id: String,
    created_at: String,
}

/// Outcome of registering a submission.
#[derive(Debug)]
pub enum Begin {
    /// A new (or retried) run; the caller must execute it.
    Started(AnalysisRun),
    /// The run already exists and is pending or done.
    Existing(AnalysisRun),
}

pub struct RunStore {
    root: PathBuf,
    runs: RwLock<HashMap<String, AnalysisRun>>,
    index: Mutex<File>,
}

const INTERRUPTED: &str = "service stopped before the run finished";

impl RunStore {
    /// Opens or creates a store, reloading every run listed in the index.
    /// Runs still pending from a previous process are marked failed.
    pub fn open(root: &Path) -> io::Result<Self> {
        std::fs::create_dir_all(root.join("runs"))?;
        let index_path = root.join("index.jsonl");
        let mut latest: HashMap<String, IndexLine> = HashMap::new();
        let mut order = Vec::new();
        if index_path.exists() {
            for (i, line) in BufReader::new(File::open(&index_path)?).lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                match serde_json::from_str::<IndexLine>(&line) {
                    Ok(entry) => {
                        if !latest.contains_key(&entry.run_id) {
                            order.push(entry.run_id.clone());
                        }
                        latest.insert(entry.run_id.clone(), entry);
                    }
                    // a torn final line from a crash mid-append
                    Err(e) => log::warn!("{}:{}: skipping index line: {e}", index_path.display(), i + 1),
                }
            }
        }
        let mut index = OpenOptions::new().create(true).append(true).open(&index_path)?;
        let existing = std::fs::read(&index_path)?;
        if existing.last().is_some_and(|&b| b != b'\n') {
            index.write_all(b"\n")?;
        }
        let store = Self {
            root: root.to_path_buf(),
            runs: RwLock::new(HashMap::new()),
            index: Mutex::new(index),
        };
        for id in order {
            let entry = &latest[&id];
            let run = match entry.status {
                RunStatus::Pending => None,
                _ => match store.read_run(&id) {
                    Ok(run) => Some(run),
                    Err(e) => {
                        log::warn!("run {id}: {e}");
                        None
                    }
                },
            };
            match run {
                Some(run) => {
                    store.runs.write().expect("runs lock").insert(id, run);
                }
                None => {
                    let failed = AnalysisRun {
                        run_id: id.clone(),
                        status: RunStatus::Failed,
                        backend_id: entry.backend_id.clone(),
                        created_at: entry.created_at.clone(),
                        error: Some(INTERRUPTED.into()),
                        result: None,
                    };
                    store.persist(&failed)?;
                    store.runs.write().expect("runs lock").insert(id, failed);
                }
            }
        }
        Ok(store)
    }

    fn run_path(&self, id: &str) -> PathBuf {
        let shard = id.get(..2).unwrap_or("__");
        self.root.join("runs").join(shard).join(format!("{id}.json"))
    }

    fn read_run(&self, id: &str) -> io::Result<AnalysisRun> {
        let raw = std::fs::read_to_string(self.run_path(id))?;
        serde_json::from_str(&raw).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))
    }

    fn append_index(&self, run: &AnalysisRun) -> io::Result<()> {
        let line = serde_json::to_string(&IndexLine {
            run_id: run.run_id.clone(),
            status: run.status,
            backend_id: run.backend_id.clone(),
            created_at: run.created_at.clone(),
        })?;
        let mut index = self.index.lock().expect("index lock");
        writeln!(index, "{line}")?;
        index.sync_data()
    }

    /// Writes a finished run's file, then records it in the index.
    fn persist(&self, run: &AnalysisRun) -> io::Result<()> {
        let path = self.run_path(&run.run_id);
        std::fs::create_dir_all(path.parent().expect("run path has a parent"))?;
        let tmp = path.with_extension("json.tmp");
        std::fs::write(&tmp, serde_json::to_string(run)?)?;
        std::fs::rename(&tmp, &path)?;
        self.append_index(run)
    }

    pub fn get(&self, id: &str) -> Option<AnalysisRun> {
        self.runs.read().expect("runs lock").get(id).cloned()
    }

    pub fn len(&self) -> usize {
        self.runs.read().expect("runs lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Registers a submission. Done and pending runs are returned as they
    /// are; a failed run is retried under the same id.
    pub fn begin(&self, id: &str, backend_id: &str) -> io::Result<Begin> {
        let mut runs = self.runs.write().expect("runs lock");
        if let Some(run) = runs.get(id) {
            if run.status != RunStatus::Failed {
                return Ok(Begin::Existing(run.clone()));
            }
        }
        let run = AnalysisRun {
            run_id: id.to_string(),
            status: RunStatus::Pending,
            backend_id: backend_id.to_string(),
            created_at: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
            error: None,
            result: None,
        };
        self.append_index(&run)?;
        runs.insert(id.to_string(), run.clone());
        Ok(Begin::Started(run))
    }

    /// Records the outcome of a pending run. A done run is never replaced.
    pub fn finish(&self, id: &str, outcome: Result<String, String>) -> io::Result<AnalysisRun> {
        let mut runs = self.runs.write().expect("runs lock");
        let current = runs
            .get(id)
            .cloned()
            .ok_or_else(|| io::Error::new(io::ErrorKind::NotFound, format!("unknown run {id}")))?;
        if current.status == RunStatus::Done {
            return Ok(current);
        }
        let mut run = current;
        match outcome {
            Ok(json) => {
                run.status = RunStatus::Done;
                run.error = None;
                run.result = Some(RawValue::from_string(json).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))?);
            }
            Err(message) => {
                run.status = RunStatus::Failed;
                run.error = Some(message);
                run.result = None;
            }
        }
        self.persist(&run)?;
        runs.insert(id.to_string(), run.clone());
        Ok(run)
    }
}
