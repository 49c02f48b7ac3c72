//! HTTP API over tandem projects.
//!
//! Every project lives in its own directory under a data root. Handlers never
//! wait for model training: proxy training and selection, applying a
//! submitted batch, and finalizing all run as background jobs that clients
//! poll through `/jobs/{id}`. Main-model training started by an iteration is
//! reported as a `MAIN_TRAIN` job.

pub mod api;
pub mod error;
pub mod jobs;
mod handlers;

use std::collections::{BTreeMap, HashMap};
use std::future::Future;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex as StdMutex, RwLock};
use std::time::Duration;

use axum::extract::DefaultBodyLimit;
use axum::http::StatusCode;
use axum::routing::{get, post};
use axum::Router;
use serde_json::Value;
use tandem_core::orchestrator::{AnnotationBatch, Phase, Project, STATE_FILE};
use tandem_core::{Error, Result};
use tokio::task::JoinSet;

use crate::api::StatusSnapshot;
use crate::jobs::JobRegistry;

pub const ENV_LISTEN: &str = "TANDEM_LISTEN";
pub const ENV_DATA_ROOT: &str = "TANDEM_DATA_ROOT";
pub const ENV_AUTH_TOKEN: &str = "TANDEM_AUTH_TOKEN";
pub const DEFAULT_PORT: u16 = 8750;

/// Largest accepted request body, sized for corpus uploads.
const BODY_LIMIT: usize = 256 * 1024 * 1024;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ServiceConfig {
    pub data_root: PathBuf,
    /// When set, every route except `/health` requires `Authorization: Bearer <token>`.
    pub auth_token: Option<String>,
}

impl ServiceConfig {
    pub fn new(data_root: impl Into<PathBuf>) -> Self {
        Self { data_root: data_root.into(), auth_token: None }
    }

    /// Reads the data root and token from the environment.
    pub fn from_env() -> Result<Self> {
        let data_root = std::env::var_os(ENV_DATA_ROOT)
            .ok_or_else(|| Error::Config(format!("{ENV_DATA_ROOT} is not set")))?;
        Ok(Self { data_root: data_root.into(), auth_token: auth_token_from_env() })
    }
}

/// The bearer token from the environment, if one is set and non-empty.
pub fn auth_token_from_env() -> Option<String> {
    std::env::var(ENV_AUTH_TOKEN).ok().filter(|t| !t.is_empty())
}

/// The listen address from the environment, else all interfaces on `default_port`.
pub fn listen_addr_from_env(default_port: u16) -> Result<SocketAddr> {
    match std::env::var(ENV_LISTEN) {
        Ok(s) if !s.is_empty() => s.parse().map_err(|_| Error::Config(format!("{ENV_LISTEN}={s} is not a socket address"))),
        _ => Ok(SocketAddr::from(([0, 0, 0, 0], default_port))),
    }
}

/// What handlers can read about a project without taking its lock.
#[derive(Default)]
struct View {
    status: Option<StatusSnapshot>,
    batch: Option<AnnotationBatch>,
    selecting: bool,
    submitting: bool,
    finalizing: bool,
    /// Responses to requests that carried an idempotency key.
    replays: HashMap<String, (StatusCode, Value)>,
}

pub(crate) struct ProjectHandle {
    id: String,
    /// The single writer. Background jobs hold it while they work.
    project: Arc<tokio::sync::Mutex<Project>>,
    view: StdMutex<View>,
}

impl ProjectHandle {
    fn new(id: String, project: Project) -> Self {
        Self { id, project: Arc::new(tokio::sync::Mutex::new(project)), view: StdMutex::default() }
    }

    fn view(&self) -> std::sync::MutexGuard<'_, View> {
        self.view.lock().expect("project view lock")
    }

    /// Copies what status and batch requests need out of the project.
    fn refresh(&self, project: &Project) {
        let state = project.state();
        let status = StatusSnapshot {
            project_id: self.id.clone(),
            phase: state.phase,
            iteration: state.iteration,
            labeled: state.labeled.len(),
            unlabeled: state.unlabeled.len(),
            batch_size: state.batch_size,
            pending_batch: state.pending_batch.len(),
            submission_pending: false,
            main_status: state.main_status.clone(),
            records: state.records.clone(),
            jobs: Vec::new(),
            warnings: state.warnings.clone(),
        };
        let mut view = self.view();
        view.status = Some(status);
        view.batch = project.pending_batch();
    }

    fn phase(&self) -> Phase {
        let view = self.view();
        if view.selecting {
            return Phase::Selecting;
        }
        view.status.as_ref().map(|s| s.phase).unwrap_or(Phase::Idle)
    }
}

pub struct AppState {
    config: ServiceConfig,
    projects: RwLock<BTreeMap<String, Arc<ProjectHandle>>>,
    jobs: JobRegistry,
    tasks: StdMutex<JoinSet<()>>,
}

impl AppState {
    /// Opens every project found under the data root.
    ///
    /// The data root must be an existing directory. Projects whose main
    /// training was interrupted resume it here.
    pub fn open(config: ServiceConfig) -> Result<Arc<Self>> {
        if !config.data_root.is_dir() {
            return Err(Error::Config(format!("data root {} is not a directory", config.data_root.display())));
        }
        let state = Arc::new(Self {
            config,
            projects: RwLock::default(),
            jobs: JobRegistry::default(),
            tasks: StdMutex::new(JoinSet::new()),
        });
        let mut entries: Vec<PathBuf> = std::fs::read_dir(&state.config.data_root)
            .map_err(|e| Error::io(&state.config.data_root, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.join(STATE_FILE).is_file())
            .collect();
        entries.sort();
        for dir in entries {
            let project = Project::open(&dir)?;
            let id = project.config().name.clone();
            if let Some(progress) = project.main_progress() {
                state.jobs.track_training(&id, progress);
            }
            tracing::info!(project = %id, "opened project");
            state.insert(id, project);
        }
        Ok(state)
    }

    pub fn config(&self) -> &ServiceConfig {
        &self.config
    }

    pub fn jobs(&self) -> &JobRegistry {
        &self.jobs
    }

    pub fn project_ids(&self) -> Vec<String> {
        self.projects.read().expect("project map lock").keys().cloned().collect()
    }

    fn project_dir(&self, id: &str) -> PathBuf {
        self.config.data_root.join(id)
    }

    fn handle(&self, id: &str) -> Option<Arc<ProjectHandle>> {
        self.projects.read().expect("project map lock").get(id).cloned()
    }

    fn insert(&self, id: String, project: Project) -> Arc<ProjectHandle> {
        let handle = Arc::new(ProjectHandle::new(id.clone(), project));
        {
            let project = handle.project.try_lock().expect("a new project is unshared");
            handle.refresh(&project);
        }
        self.projects.write().expect("project map lock").insert(id, handle.clone());
        handle
    }

    fn spawn<F>(&self, task: F)
    where
        F: Future<Output = ()> + Send + 'static,
    {
        let mut tasks = self.tasks.lock().expect("task set lock");
        while tasks.try_join_next().is_some() {}
        tasks.spawn(task);
    }

    /// Waits for every background job, then for main training still running.
    pub async fn drain(&self) {
        loop {
            let mut tasks = std::mem::take(&mut *self.tasks.lock().expect("task set lock"));
            if tasks.is_empty() {
                break;
            }
            while tasks.join_next().await.is_some() {}
        }
        let handles: Vec<Arc<ProjectHandle>> = self.projects.read().expect("project map lock").values().cloned().collect();
        for handle in handles {
            let project = handle.project.lock().await;
            if let Some(progress) = project.main_progress() {
                while !progress.is_finished() {
                    tokio::time::sleep(Duration::from_millis(50)).await;
                }
            }
        }
    }
}

/// The API routes.
pub fn router(state: Arc<AppState>) -> Router {
    let protected = Router::new()
        .route("/projects", post(handlers::create_project).get(handlers::list_projects))
        .route("/projects/{id}/unlabeled", post(handlers::upload))
        .route("/projects/{id}/iterations", post(handlers::start_iteration))
        .route("/projects/{id}/batch", get(handlers::batch))
        .route("/projects/{id}/annotations", post(handlers::submit_annotations))
        .route("/projects/{id}/status", get(handlers::status))
        .route("/projects/{id}/finalize", post(handlers::finalize))
        .route("/projects/{id}/export", get(handlers::export))
        .route("/jobs/{id}", get(handlers::job))
        .route_layer(axum::middleware::from_fn_with_state(state.clone(), handlers::require_token));
    Router::new()
        .route("/health", get(handlers::health))
        .merge(protected)
        .layer(DefaultBodyLimit::max(BODY_LIMIT))
        .with_state(state)
}

/// Serves until `shutdown` resolves, then waits for background work.
pub async fn serve<F>(listener: tokio::net::TcpListener, state: Arc<AppState>, shutdown: F) -> std::io::Result<()>
where
    F: Future<Output = ()> + Send + 'static,
{
    let app = router(state.clone());
    axum::serve(listener, app).with_graceful_shutdown(shutdown).await?;
    tracing::info!("draining background jobs");
    state.drain().await;
    Ok(())
}

/// Resolves on Ctrl-C or SIGTERM.
pub async fn shutdown_signal() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    let term = async {
        match tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            Ok(mut s) => {
                s.recv().await;
            }
            Err(_) => std::future::pending::<()>().await,
        }
    };
    #[cfg(not(unix))]
    let term = std::future::pending::<()>();
    tokio::select! {
        _ = ctrl_c => {}
        _ = term => {}
    }
}

pub(crate) fn project_exists(root: &Path) -> bool {
    root.join(STATE_FILE).exists()
}
