//! Durable per-trial storage.
//!
//! Each trial lives in its own directory with an append-only `log.jsonl`
//! (fsynced before a request is acknowledged) and an occasional
//! `snapshot.json` holding the state after the first `entries` log lines.
//! Recovery loads the snapshot and replays the rest of the log.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use tokio::sync::{Mutex, RwLock};

use crate::error::{ApiError, ApiResult};
use crate::trial::{ConductTrial, Enrollment, Recommendation, TrialConfig};
use dacrm_core::SnapshotPatient;

const SNAPSHOT_EVERY: usize = 25;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LogEntry {
    Created {
        at: String,
        config: TrialConfig,
    },
    Enrolled {
        at: String,
        enrollment: Enrollment,
    },
    Event {
        at: String,
        patient_id: usize,
        date: NaiveDate,
    },
    Decision {
        at: String,
        recommendation: Recommendation,
        snapshot: Vec<SnapshotPatient>,
    },
}

impl LogEntry {
    /// Applies the entry; the same code path serves live requests and recovery.
    pub fn apply(&self, id: &str, trial: Option<ConductTrial>) -> ApiResult<ConductTrial> {
        match (self, trial) {
            (LogEntry::Created { config, .. }, None) => ConductTrial::create(id.to_string(), config.clone()),
            (LogEntry::Created { .. }, Some(_)) => Err(ApiError::Internal(format!("trial {id} created twice"))),
            (_, None) => Err(ApiError::Internal(format!(
                "log for {id} does not start with its creation"
            ))),
            (LogEntry::Enrolled { enrollment, .. }, Some(mut t)) => {
                t.enroll(enrollment)?;
                Ok(t)
            }
            (LogEntry::Event { patient_id, date, .. }, Some(mut t)) => {
                t.record_event(*patient_id, *date)?;
                Ok(t)
            }
            (
                LogEntry::Decision {
                    at,
                    recommendation,
                    snapshot,
                },
                Some(mut t),
            ) => {
                t.push_decision(recommendation.clone(), snapshot.clone(), at.clone());
                Ok(t)
            }
        }
    }
}

#[derive(Serialize, Deserialize)]
struct Snapshot {
    entries: usize,
    trial: ConductTrial,
}

pub struct TrialSlot {
    pub trial: ConductTrial,
    entries: usize,
    dir: PathBuf,
}

impl TrialSlot {
    /// Validates `entry` against a copy of the state, makes it durable, then
    /// commits. A failed write leaves the trial untouched.
    pub fn commit(&mut self, entry: LogEntry) -> ApiResult<()> {
        let next = entry.apply(&self.trial.id, Some(self.trial.clone()))?;
        append_line(&self.dir.join("log.jsonl"), &entry)?;
        self.trial = next;
        self.entries += 1;
        if self.entries % SNAPSHOT_EVERY == 0 {
            write_snapshot(&self.dir, self.entries, &self.trial)?;
        }
        Ok(())
    }
}

pub struct Store {
    root: PathBuf,
    trials: RwLock<BTreeMap<String, Arc<Mutex<TrialSlot>>>>,
    create_lock: Mutex<()>,
}

impl Store {
    /// Opens (or creates) a data directory and recovers every trial in it.
    pub fn open(root: impl AsRef<Path>) -> ApiResult<Self> {
        let root = root.as_ref().join("trials");
        fs::create_dir_all(&root)?;
        let mut trials = BTreeMap::new();
        for entry in fs::read_dir(&root)? {
            let dir = entry?.path();
            if !dir.join("log.jsonl").exists() {
                continue;
            }
            let id = dir.file_name().and_then(|n| n.to_str()).unwrap_or_default().to_string();
            let slot = recover(&id, &dir)?;
            trials.insert(id, Arc::new(Mutex::new(slot)));
        }
        Ok(Store {
            root,
            trials: RwLock::new(trials),
            create_lock: Mutex::new(()),
        })
    }

    pub async fn create(&self, config: TrialConfig, at: String) -> ApiResult<String> {
        let _guard = self.create_lock.lock().await;
        let n = self.trials.read().await.len() + 1;
        let id = format!("trial-{n:04}");
        let entry = LogEntry::Created { at, config };
        let trial = entry.apply(&id, None)?;
        let dir = self.root.join(&id);
        fs::create_dir_all(&dir)?;
        append_line(&dir.join("log.jsonl"), &entry)?;
        sync_dir(&self.root)?;
        let slot = TrialSlot { trial, entries: 1, dir };
        self.trials.write().await.insert(id.clone(), Arc::new(Mutex::new(slot)));
        Ok(id)
    }

    pub async fn get(&self, id: &str) -> ApiResult<Arc<Mutex<TrialSlot>>> {
        self.trials
            .read()
            .await
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::NotFound(format!("no trial {id}")))
    }

    pub async fn ids(&self) -> Vec<String> {
        self.trials.read().await.keys().cloned().collect()
    }
}

fn recover(id: &str, dir: &Path) -> ApiResult<TrialSlot> {
    let (mut trial, skip) = match fs::read(dir.join("snapshot.json")) {
        Ok(bytes) => {
            let s: Snapshot = serde_json::from_slice(&bytes)?;
            (Some(s.trial), s.entries)
        }
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => (None, 0),
        Err(e) => return Err(e.into()),
    };
    let reader = BufReader::new(File::open(dir.join("log.jsonl"))?);
    let mut entries = 0;
    let mut lines = reader.split(b'\n').peekable();
    while let Some(line) = lines.next() {
        let line = line?;
        let last = lines.peek().is_none();
        if line.is_empty() && last {
            break;
        }
        entries += 1;
        if entries <= skip {
            continue;
        }
        let entry: LogEntry = match serde_json::from_slice(&line) {
            Ok(e) => e,
            // a torn final line was never acknowledged
            Err(_) if last => {
                entries -= 1;
                break;
            }
            Err(e) => return Err(ApiError::Internal(format!("{id}: log line {entries}: {e}"))),
        };
        trial = Some(entry.apply(id, trial)?);
    }
    let trial = trial.ok_or_else(|| ApiError::Internal(format!("{id}: empty log")))?;
    Ok(TrialSlot {
        trial,
        entries,
        dir: dir.to_path_buf(),
    })
}

fn append_line(path: &Path, entry: &LogEntry) -> ApiResult<()> {
    let mut line = serde_json::to_vec(entry)?;
    line.push(b'\n');
    let mut f = OpenOptions::new().create(true).append(true).open(path)?;
    f.write_all(&line)?;
    f.sync_data()?;
    Ok(())
}

fn write_snapshot(dir: &Path, entries: usize, trial: &ConductTrial) -> ApiResult<()> {
    let tmp = dir.join("snapshot.json.tmp");
    let mut f = File::create(&tmp)?;
    f.write_all(&serde_json::to_vec(&Snapshot {
        entries,
        trial: trial.clone(),
    })?)?;
    f.sync_all()?;
    fs::rename(&tmp, dir.join("snapshot.json"))?;
    sync_dir(dir)
}

fn sync_dir(dir: &Path) -> ApiResult<()> {
    File::open(dir)?.sync_all()?;
    Ok(())
}
