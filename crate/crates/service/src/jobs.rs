//! Background jobs as seen by clients.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use tandem_core::orchestrator::TrainingProgress;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum JobKind {
    ProxyTrain,
    Select,
    MainTrain,
    Signal,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum JobState {
    Queued,
    Running,
    Done,
    Failed { message: String },
}

impl JobState {
    fn rank(&self) -> u8 {
        match self {
            JobState::Queued => 0,
            JobState::Running => 1,
            JobState::Done | JobState::Failed { .. } => 2,
        }
    }

    pub fn is_terminal(&self) -> bool {
        self.rank() == 2
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobStatus {
    pub job_id: String,
    pub project_id: String,
    pub kind: JobKind,
    #[serde(flatten)]
    pub state: JobState,
    pub started_at: Option<f64>,
    pub finished_at: Option<f64>,
    pub progress: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub result: Option<Value>,
}

enum Entry {
    Tracked(JobStatus),
    /// Main-model training owned by the project; read through its progress.
    Training(JobStatus, Arc<TrainingProgress>),
}

impl Entry {
    fn status(&self) -> JobStatus {
        match self {
            Entry::Tracked(s) => s.clone(),
            Entry::Training(base, progress) => {
                let mut s = base.clone();
                s.progress = progress.fraction();
                s.started_at = Some(progress.started_at);
                if progress.is_finished() {
                    s.finished_at = progress.finished_at();
                    s.state = if progress.failed() {
                        JobState::Failed { message: "main training failed".into() }
                    } else {
                        JobState::Done
                    };
                    s.progress = 1.0;
                }
                s
            }
        }
    }
}

#[derive(Default)]
pub struct JobRegistry {
    next: AtomicU64,
    jobs: Mutex<BTreeMap<String, Entry>>,
}

fn now() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0)
}

impl JobRegistry {
    fn new_id(&self) -> String {
        format!("job-{:06}", self.next.fetch_add(1, Ordering::Relaxed) + 1)
    }

    fn blank(&self, project_id: &str, kind: JobKind) -> JobStatus {
        JobStatus {
            job_id: self.new_id(),
            project_id: project_id.to_string(),
            kind,
            state: JobState::Queued,
            started_at: None,
            finished_at: None,
            progress: 0.0,
            result: None,
        }
    }

    pub fn create(&self, project_id: &str, kind: JobKind) -> String {
        let status = self.blank(project_id, kind);
        let id = status.job_id.clone();
        self.jobs.lock().expect("job registry lock").insert(id.clone(), Entry::Tracked(status));
        id
    }

    /// Registers a main-training job that reports through `progress`.
    pub fn track_training(&self, project_id: &str, progress: Arc<TrainingProgress>) -> String {
        let mut status = self.blank(project_id, JobKind::MainTrain);
        status.state = JobState::Running;
        status.result = Some(serde_json::json!({ "iteration": progress.iteration }));
        let id = status.job_id.clone();
        self.jobs.lock().expect("job registry lock").insert(id.clone(), Entry::Training(status, progress));
        id
    }

    fn transition(&self, id: &str, state: JobState, result: Option<Value>) {
        let mut jobs = self.jobs.lock().expect("job registry lock");
        if let Some(Entry::Tracked(s)) = jobs.get_mut(id) {
            if state.rank() <= s.state.rank() {
                return;
            }
            match state {
                JobState::Running => s.started_at = Some(now()),
                _ => {
                    s.finished_at = Some(now());
                    s.progress = 1.0;
                }
            }
            s.state = state;
            if result.is_some() {
                s.result = result;
            }
        }
    }

    pub fn start(&self, id: &str) {
        self.transition(id, JobState::Running, None);
    }

    pub fn finish(&self, id: &str, result: Value) {
        self.transition(id, JobState::Done, Some(result));
    }

    pub fn fail(&self, id: &str, message: String) {
        self.transition(id, JobState::Failed { message }, None);
    }

    pub fn get(&self, id: &str) -> Option<JobStatus> {
        self.jobs.lock().expect("job registry lock").get(id).map(Entry::status)
    }

    /// Jobs of a project that have not finished, plus the most recent main training.
    pub fn for_project(&self, project_id: &str) -> Vec<JobStatus> {
        let jobs = self.jobs.lock().expect("job registry lock");
        let all: Vec<JobStatus> =
            jobs.values().map(Entry::status).filter(|s| s.project_id == project_id).collect();
        let last_main = all.iter().filter(|s| s.kind == JobKind::MainTrain).map(|s| s.job_id.clone()).max();
        all.into_iter().filter(|s| !s.state.is_terminal() || Some(&s.job_id) == last_main.as_ref()).collect()
    }

    pub fn has_active(&self, project_id: &str, kind: JobKind) -> bool {
        self.jobs
            .lock()
            .expect("job registry lock")
            .values()
            .map(Entry::status)
            .any(|s| s.project_id == project_id && s.kind == kind && !s.state.is_terminal())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn states_only_move_forward() {
        let jobs = JobRegistry::default();
        let id = jobs.create("p", JobKind::Select);
        assert_eq!(jobs.get(&id).unwrap().state, JobState::Queued);
        jobs.start(&id);
        jobs.finish(&id, Value::Null);
        jobs.start(&id);
        jobs.fail(&id, "late".into());
        let s = jobs.get(&id).unwrap();
        assert_eq!(s.state, JobState::Done);
        assert!(s.started_at.unwrap() <= s.finished_at.unwrap());
    }

    #[test]
    fn ids_are_unique_and_serialize_flat() {
        let jobs = JobRegistry::default();
        let a = jobs.create("p", JobKind::Select);
        let b = jobs.create("p", JobKind::Signal);
        assert_ne!(a, b);
        jobs.fail(&b, "boom".into());
        let json = serde_json::to_value(jobs.get(&b).unwrap()).unwrap();
        assert_eq!(json["state"], "FAILED");
        assert_eq!(json["message"], "boom");
        assert_eq!(json["kind"], "SIGNAL");
        assert!(jobs.has_active("p", JobKind::Select));
        assert!(!jobs.has_active("p", JobKind::Signal));
    }
}
