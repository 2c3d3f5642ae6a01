use std::collections::BTreeMap;
use std::sync::Mutex;

use revmine::collector::{RunManifest, RunStatus};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobKind {
    CollectionRun,
    DatasetBuild,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobState {
    Queued,
    Running,
    Done,
    Error,
    Partial,
}

impl JobState {
    pub fn finished(self) -> bool {
        !matches!(self, JobState::Queued | JobState::Running)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Progress {
    pub done_units: u64,
    pub total_units: u64,
}

/// Background work tracked by the service. `job_id` equals the run or
/// dataset id it produces.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JobHandle {
    pub job_id: String,
    pub kind: JobKind,
    pub state: JobState,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub progress: Option<Progress>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub result_ref: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error_message: Option<String>,
}

impl JobHandle {
    pub fn queued(job_id: &str, kind: JobKind) -> Self {
        Self {
            job_id: job_id.to_owned(),
            kind,
            state: JobState::Queued,
            progress: None,
            result_ref: None,
            error_message: None,
        }
    }

    pub fn done(job_id: &str, kind: JobKind) -> Self {
        Self {
            state: JobState::Done,
            result_ref: Some(job_id.to_owned()),
            ..Self::queued(job_id, kind)
        }
    }

    pub fn failed(job_id: &str, kind: JobKind, message: String) -> Self {
        Self {
            state: JobState::Error,
            error_message: Some(message),
            ..Self::queued(job_id, kind)
        }
    }

    /// Job view of a run manifest. `live` is the in-process job, if this
    /// service instance is executing the run.
    pub fn for_run(manifest: &RunManifest, live: Option<&JobHandle>) -> Self {
        let (done, total) = manifest.progress();
        let progress = Some(Progress {
            done_units: done.min(total),
            total_units: total,
        });
        let id = &manifest.run_id;
        let state = match manifest.status {
            RunStatus::Completed => JobState::Done,
            RunStatus::Partial => JobState::Partial,
            RunStatus::Failed => JobState::Error,
            RunStatus::Pending | RunStatus::Running => match live {
                Some(j) if !j.state.finished() => JobState::Running,
                Some(j) => j.state,
                None => {
                    return Self {
                        progress,
                        ..Self::failed(id, JobKind::CollectionRun, "run was interrupted; resume it from the command line".into())
                    }
                }
            },
        };
        let error_message = match state {
            JobState::Error => manifest
                .failure_reason
                .clone()
                .or_else(|| live.and_then(|j| j.error_message.clone())),
            _ => None,
        };
        Self {
            job_id: id.clone(),
            kind: JobKind::CollectionRun,
            state,
            progress,
            result_ref: matches!(state, JobState::Done | JobState::Partial).then(|| id.clone()),
            error_message,
        }
    }
}

#[derive(Default)]
pub struct JobTable {
    jobs: Mutex<BTreeMap<String, JobHandle>>,
}

impl JobTable {
    pub fn put(&self, job: JobHandle) {
        self.jobs.lock().unwrap().insert(job.job_id.clone(), job);
    }

    pub fn get(&self, id: &str) -> Option<JobHandle> {
        self.jobs.lock().unwrap().get(id).cloned()
    }

    pub fn set_state(&self, id: &str, state: JobState) {
        if let Some(j) = self.jobs.lock().unwrap().get_mut(id) {
            j.state = state;
        }
    }

    pub fn of_kind(&self, kind: JobKind) -> Vec<JobHandle> {
        self.jobs.lock().unwrap().values().filter(|j| j.kind == kind).cloned().collect()
    }
}
