use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::artifacts::write_atomic;

pub const KINDS: [&str; 5] = ["instances", "plans", "simulations", "montecarlo", "jobs"];

/// Immutable JSON artifacts under `root/<kind>/<id>.json`.
#[derive(Debug)]
pub struct Store {
    root: PathBuf,
}

pub fn valid_id(id: &str) -> bool {
    !id.is_empty() && id.len() <= 80 && id.bytes().all(|b| b.is_ascii_alphanumeric() || b == b'-')
}

impl Store {
    pub fn open(root: &Path) -> anyhow::Result<Store> {
        for kind in KINDS {
            fs::create_dir_all(root.join(kind))?;
        }
        Ok(Store { root: root.to_path_buf() })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn surrogate_dir(&self) -> PathBuf {
        self.root.join("surrogates")
    }

    fn path(&self, kind: &str, id: &str) -> Option<PathBuf> {
        (KINDS.contains(&kind) && valid_id(id)).then(|| self.root.join(kind).join(format!("{id}.json")))
    }

    pub fn put<T: Serialize>(&self, kind: &str, id: &str, value: &T) -> anyhow::Result<()> {
        let path = self.path(kind, id).ok_or_else(|| anyhow::anyhow!("bad artifact key {kind}/{id}"))?;
        write_atomic(&path, &serde_json::to_vec_pretty(value)?)
    }

    pub fn bytes(&self, kind: &str, id: &str) -> Option<Vec<u8>> {
        fs::read(self.path(kind, id)?).ok()
    }

    pub fn get<T: DeserializeOwned>(&self, kind: &str, id: &str) -> anyhow::Result<Option<T>> {
        match self.bytes(kind, id) {
            Some(b) => Ok(Some(serde_json::from_slice(&b)?)),
            None => Ok(None),
        }
    }

    pub fn contains(&self, kind: &str, id: &str) -> bool {
        self.path(kind, id).is_some_and(|p| p.exists())
    }

    fn list<T: DeserializeOwned>(&self, kind: &str) -> Vec<T> {
        let Ok(dir) = fs::read_dir(self.root.join(kind)) else {
            return Vec::new();
        };
        dir.filter_map(|e| e.ok())
            .filter(|e| e.path().extension().is_some_and(|x| x == "json"))
            .filter_map(|e| fs::read(e.path()).ok())
            .filter_map(|b| serde_json::from_slice(&b).ok())
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JobKind {
    Plan,
    Simulate,
    Montecarlo,
    Surrogate,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JobStatus {
    Queued,
    Running,
    Done,
    Failed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JobRecord {
    pub id: String,
    pub kind: JobKind,
    pub request: serde_json::Value,
    pub status: JobStatus,
    /// Path of the result once done.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub result: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Job table mirrored to the store; finished records are never rewritten.
#[derive(Debug, Default)]
pub struct Jobs {
    table: Mutex<BTreeMap<String, JobRecord>>,
}

impl Jobs {
    /// Reloads persisted jobs; those cut short by a restart are marked failed.
    pub fn load(store: &Store) -> Jobs {
        let mut table = BTreeMap::new();
        for mut job in store.list::<JobRecord>("jobs") {
            if matches!(job.status, JobStatus::Queued | JobStatus::Running) {
                job.status = JobStatus::Failed;
                job.error = Some("interrupted by a restart".into());
            }
            table.insert(job.id.clone(), job);
        }
        Jobs { table: Mutex::new(table) }
    }

    pub fn get(&self, id: &str) -> Option<JobRecord> {
        self.table.lock().expect("job table").get(id).cloned()
    }

    /// Registers a queued job unless a live or finished one exists; returns
    /// the current record and whether it is new.
    pub fn submit(&self, store: &Store, job: JobRecord) -> anyhow::Result<(JobRecord, bool)> {
        let mut table = self.table.lock().expect("job table");
        if let Some(old) = table.get(&job.id) {
            if old.status != JobStatus::Failed {
                return Ok((old.clone(), false));
            }
        }
        store.put("jobs", &job.id, &job)?;
        table.insert(job.id.clone(), job.clone());
        Ok((job, true))
    }

    pub fn update(&self, store: &Store, id: &str, f: impl FnOnce(&mut JobRecord)) -> anyhow::Result<JobRecord> {
        let mut table = self.table.lock().expect("job table");
        let job = table.get_mut(id).ok_or_else(|| anyhow::anyhow!("unknown job {id}"))?;
        if matches!(job.status, JobStatus::Done | JobStatus::Failed) {
            return Ok(job.clone());
        }
        f(job);
        store.put("jobs", id, &*job)?;
        Ok(job.clone())
    }
}
