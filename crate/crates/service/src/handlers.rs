use std::collections::BTreeMap;
use std::sync::Arc;

use axum::body::Body;
use axum::extract::{Multipart, Path, Query, Request, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::middleware::Next;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde::Deserialize;
use serde_json::{json, Value};
use tandem_core::data::{parse_column_str, parse_jsonl_str, Corpus, ProjectConfig};
use tandem_core::error::SentenceIssue;
use tandem_core::orchestrator::{export_archive, Phase, Project};
use tandem_core::{Error, TagSequence};

use crate::api::{
    AnnotationAccepted, AnnotationRequest, BatchResponse, FinalizeResponse, Health, JobAccepted, ProjectCreated,
    StatusSnapshot, UploadAccepted,
};
use crate::error::{ApiError, ApiResult};
use crate::jobs::JobKind;
use crate::{project_exists, AppState, ProjectHandle};

const IDEMPOTENCY_KEY: &str = "idempotency-key";

pub async fn require_token(State(state): State<Arc<AppState>>, request: Request, next: Next) -> Response {
    if let Some(token) = &state.config.auth_token {
        let presented = request
            .headers()
            .get(header::AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "));
        if presented != Some(token.as_str()) {
            return ApiError::unauthorized().into_response();
        }
    }
    next.run(request).await
}

pub async fn health() -> Json<Health> {
    Json(Health { status: "ok".into(), version: env!("CARGO_PKG_VERSION").into() })
}

fn project(state: &AppState, id: &str) -> ApiResult<Arc<ProjectHandle>> {
    state.handle(id).ok_or_else(|| ApiError::not_found(format!("no project {id}")))
}

fn idempotency_key(headers: &HeaderMap) -> Option<String> {
    headers.get(IDEMPOTENCY_KEY).and_then(|v| v.to_str().ok()).map(str::to_string)
}

/// The stored response for a repeated idempotency key.
fn replay(handle: &ProjectHandle, key: Option<&String>) -> Option<Response> {
    let key = key?;
    let view = handle.view();
    view.replays.get(key).map(|(status, body)| (*status, Json(body.clone())).into_response())
}

fn remember(handle: &ProjectHandle, key: Option<String>, status: StatusCode, body: &impl serde::Serialize) -> Response {
    let body = serde_json::to_value(body).expect("response documents serialize");
    if let Some(key) = key {
        handle.view().replays.insert(key, (status, body.clone()));
    }
    (status, Json(body)).into_response()
}

pub async fn create_project(State(state): State<Arc<AppState>>, Json(body): Json<Value>) -> ApiResult<Response> {
    let config: ProjectConfig = serde_json::from_value(body).map_err(|e| {
        ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_config", e.to_string())
            .with("issues", json!([{ "field": "", "message": e.to_string() }]))
    })?;
    config.validate()?;
    let id = config.name.clone();
    let mut projects = state.projects.write().expect("project map lock");
    let root = state.project_dir(&id);
    if projects.contains_key(&id) || project_exists(&root) {
        return Err(ApiError::conflict(format!("project {id} already exists")));
    }
    let project = Project::create(Some(&root), config)?;
    let handle = Arc::new(ProjectHandle::new(id.clone(), project));
    {
        let project = handle.project.try_lock().expect("a new project is unshared");
        handle.refresh(&project);
    }
    projects.insert(id.clone(), handle);
    tracing::info!(project = %id, "created project");
    Ok((StatusCode::CREATED, Json(ProjectCreated { project_id: id })).into_response())
}

pub async fn list_projects(State(state): State<Arc<AppState>>) -> Json<Value> {
    Json(json!({ "projects": state.project_ids() }))
}

#[derive(Debug, Default, Deserialize)]
pub struct UploadQuery {
    /// Use sentences that carry labels as the initial labeled set.
    #[serde(default)]
    seed: bool,
}

/// Column files have a token and a tag per line; everything else is JSONL.
fn parse_upload(text: &str, file_name: Option<&str>, config: &ProjectConfig) -> tandem_core::Result<Corpus> {
    let first = text.lines().map(str::trim).find(|l| !l.is_empty());
    let jsonl = match file_name.and_then(|n| n.rsplit_once('.')).map(|(_, ext)| ext.to_ascii_lowercase()) {
        Some(ext) if ext == "jsonl" || ext == "json" => true,
        Some(ext) if ext == "conll" || ext == "txt" || ext == "bio" || ext == "tsv" => false,
        _ => first.is_some_and(|l| l.starts_with('{')),
    };
    if jsonl {
        parse_jsonl_str(text, Some(&config.labels))
    } else {
        let has_labels = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with("-DOCSTART-"))
            .any(|l| l.split_whitespace().count() >= 2);
        parse_column_str(text, has_labels, Some(&config.labels))
    }
}

pub async fn upload(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    Query(query): Query<UploadQuery>,
    mut multipart: Multipart,
) -> ApiResult<Response> {
    let handle = project(&state, &id)?;
    let mut file = None;
    while let Some(field) = multipart.next_field().await.map_err(|e| ApiError::unprocessable(e.to_string()))? {
        let name = field.file_name().map(str::to_string);
        let bytes = field.bytes().await.map_err(|e| ApiError::unprocessable(e.to_string()))?;
        file = Some((name, bytes));
        break;
    }
    let (file_name, bytes) = file.ok_or_else(|| ApiError::unprocessable("the request has no file part"))?;
    let text = String::from_utf8(bytes.to_vec()).map_err(|_| ApiError::unprocessable("the file is not UTF-8"))?;

    let mut project = handle
        .project
        .try_lock()
        .map_err(|_| ApiError::conflict("the project is busy with a background job"))?;
    let corpus = parse_upload(&text, file_name.as_deref(), project.config())?;
    let count = corpus.len();
    let (pool, seed) = match (&corpus.gold, query.seed) {
        (Some(gold), true) => {
            let mut pool = Vec::new();
            let mut seed = Vec::new();
            for s in corpus.sentences {
                match gold.get(&s.id) {
                    Some(tags) => seed.push((s, tags.clone())),
                    None => pool.push(s),
                }
            }
            (pool, seed)
        }
        _ => (corpus.sentences, Vec::new()),
    };
    let seed_count = seed.len();
    project.ingest(pool, seed)?;
    handle.refresh(&project);
    Ok((StatusCode::ACCEPTED, Json(UploadAccepted { count, seed_count })).into_response())
}

pub async fn start_iteration(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    headers: HeaderMap,
) -> ApiResult<Response> {
    let handle = project(&state, &id)?;
    let key = idempotency_key(&headers);
    if let Some(response) = replay(&handle, key.as_ref()) {
        return Ok(response);
    }
    {
        let view = handle.view();
        if view.selecting || view.finalizing {
            return Err(ApiError::conflict(format!("cannot start an iteration while {:?}", handle_phase(&view))));
        }
    }
    // A submission in flight holds the project until main training ends;
    // the iteration is queued behind it and reports problems through its job.
    let submitting = handle.view().submitting;
    if !submitting {
        let project = handle
            .project
            .try_lock()
            .map_err(|_| ApiError::conflict("the project is busy with a background job"))?;
        project.check_can_start()?;
    }

    let job_id = state.jobs.create(&id, JobKind::Select);
    handle.view().selecting = true;
    let task_state = state.clone();
    let task_handle = handle.clone();
    let task_job = job_id.clone();
    state.spawn(async move {
        let guard = task_handle.project.clone().lock_owned().await;
        task_state.jobs.start(&task_job);
        let joined = tokio::task::spawn_blocking(move || {
            let mut guard = guard;
            let result = guard.start_iteration();
            (guard, result)
        })
        .await;
        match joined {
            Ok((project, result)) => {
                task_handle.refresh(&project);
                match result {
                    Ok(batch) => {
                        if let Some(progress) = project.main_progress() {
                            if !progress.is_finished() {
                                task_state.jobs.track_training(&task_handle.id, progress);
                            }
                        }
                        let record = project.state().pending_record.clone();
                        task_state.jobs.finish(
                            &task_job,
                            json!({
                                "iteration": batch.iteration,
                                "strategy": batch.strategy,
                                "batch_size": batch.sentences.len(),
                                "record": record,
                            }),
                        );
                    }
                    Err(e) => task_state.jobs.fail(&task_job, e.to_string()),
                }
            }
            Err(e) => task_state.jobs.fail(&task_job, format!("selection task panicked: {e}")),
        }
        task_handle.view().selecting = false;
    });
    Ok(remember(&handle, key, StatusCode::ACCEPTED, &JobAccepted { job_id }))
}

fn handle_phase(view: &crate::View) -> Phase {
    if view.selecting {
        Phase::Selecting
    } else {
        view.status.as_ref().map(|s| s.phase).unwrap_or(Phase::Idle)
    }
}

pub async fn batch(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Json<BatchResponse>> {
    let handle = project(&state, &id)?;
    let view = handle.view();
    match (&view.batch, view.submitting, view.selecting) {
        (Some(batch), false, false) => Ok(Json(BatchResponse::from(batch))),
        _ => Err(ApiError::conflict(format!("no batch is awaiting annotation (phase {:?})", handle_phase(&view)))),
    }
}

pub async fn submit_annotations(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    headers: HeaderMap,
    Json(request): Json<Value>,
) -> ApiResult<Response> {
    let handle = project(&state, &id)?;
    let key = idempotency_key(&headers);
    if let Some(response) = replay(&handle, key.as_ref()) {
        return Ok(response);
    }
    let request: AnnotationRequest =
        serde_json::from_value(request).map_err(|e| ApiError::unprocessable(format!("malformed annotation document: {e}")))?;

    let batch = {
        let view = handle.view();
        if view.submitting {
            return Err(ApiError::conflict("annotations for this batch were already accepted"));
        }
        match (&view.batch, view.selecting) {
            (Some(batch), false) => batch.clone(),
            _ => return Err(ApiError::conflict(format!("no batch is awaiting annotation (phase {:?})", handle_phase(&view)))),
        }
    };

    let expected: BTreeMap<&str, usize> = batch.sentences.iter().map(|s| (s.id.as_str(), s.len())).collect();
    let missing: Vec<String> =
        expected.keys().filter(|id| !request.annotations.contains_key(**id)).map(|id| id.to_string()).collect();
    let extra: Vec<String> =
        request.annotations.keys().filter(|id| !expected.contains_key(id.as_str())).cloned().collect();
    if !missing.is_empty() || !extra.is_empty() {
        return Err(Error::BatchMismatch { missing, extra }.into());
    }
    let mut tags: BTreeMap<String, TagSequence> = BTreeMap::new();
    let mut issues: Vec<SentenceIssue> = Vec::new();
    for (sentence_id, annotation) in &request.annotations {
        match annotation.to_tags(&batch.labels, sentence_id, expected[sentence_id.as_str()]) {
            Ok(t) => {
                tags.insert(sentence_id.clone(), t);
            }
            Err(issue) => issues.push(issue),
        }
    }
    if !issues.is_empty() {
        return Err(Error::Validation(issues).into());
    }

    // Main training runs on its own thread, so the project lock is free here.
    let guard = handle
        .project
        .clone()
        .try_lock_owned()
        .map_err(|_| ApiError::conflict("the project is busy with a background job"))?;
    guard.validate_annotations(&tags)?;
    let main_training_finished = match guard.main_progress() {
        Some(progress) if matches!(guard.state().main_status, tandem_core::orchestrator::MainStatus::Running { .. }) => {
            Some(progress.is_finished())
        }
        _ => None,
    };
    let next_iteration = guard.state().iteration + 1;
    let job_id = state.jobs.create(&id, JobKind::Signal);
    handle.view().submitting = true;
    if let Some(status) = handle.view().status.as_mut() {
        status.submission_pending = true;
    }

    let task_state = state.clone();
    let task_handle = handle.clone();
    let task_job = job_id.clone();
    state.spawn(async move {
        task_state.jobs.start(&task_job);
        let joined = tokio::task::spawn_blocking(move || {
            let mut guard = guard;
            let result = guard.submit_annotations(tags);
            (guard, result)
        })
        .await;
        match joined {
            Ok((project, result)) => {
                task_handle.refresh(&project);
                match result {
                    Ok(outcome) => task_state.jobs.finish(&task_job, serde_json::to_value(outcome).unwrap_or(Value::Null)),
                    Err(e) => task_state.jobs.fail(&task_job, e.to_string()),
                }
            }
            Err(e) => task_state.jobs.fail(&task_job, format!("submission task panicked: {e}")),
        }
        task_handle.view().submitting = false;
    });

    let accepted = AnnotationAccepted { accepted: expected.len(), next_iteration, main_training_finished, job_id };
    Ok(remember(&handle, key, StatusCode::OK, &accepted))
}

pub async fn status(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Json<StatusSnapshot>> {
    let handle = project(&state, &id)?;
    let mut snapshot = {
        let view = handle.view();
        let mut s = view.status.clone().expect("views are filled on creation");
        s.phase = handle_phase(&view);
        s.submission_pending = view.submitting;
        s
    };
    snapshot.jobs = state.jobs.for_project(&id);
    Ok(Json(snapshot))
}

pub async fn finalize(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Response> {
    let handle = project(&state, &id)?;
    {
        let view = handle.view();
        if view.selecting || view.submitting || view.finalizing {
            return Err(ApiError::conflict(format!("cannot finalize while a background job runs (phase {:?})", handle_phase(&view))));
        }
    }
    let guard = handle
        .project
        .clone()
        .try_lock_owned()
        .map_err(|_| ApiError::conflict("the project is busy with a background job"))?;
    guard.check_can_finalize()?;
    if guard.state().phase == Phase::Finalized {
        return Ok((StatusCode::OK, Json(FinalizeResponse { phase: Phase::Finalized, job_id: None })).into_response());
    }
    let phase = guard.state().phase;
    let job_id = state.jobs.create(&id, JobKind::MainTrain);
    handle.view().finalizing = true;
    let task_state = state.clone();
    let task_handle = handle.clone();
    let task_job = job_id.clone();
    state.spawn(async move {
        task_state.jobs.start(&task_job);
        let joined = tokio::task::spawn_blocking(move || {
            let mut guard = guard;
            let result = guard.finalize();
            (guard, result)
        })
        .await;
        match joined {
            Ok((project, result)) => {
                task_handle.refresh(&project);
                match result {
                    Ok(summary) => task_state.jobs.finish(&task_job, serde_json::to_value(summary).unwrap_or(Value::Null)),
                    Err(e) => task_state.jobs.fail(&task_job, e.to_string()),
                }
            }
            Err(e) => task_state.jobs.fail(&task_job, format!("finalize task panicked: {e}")),
        }
        task_handle.view().finalizing = false;
    });
    Ok((StatusCode::ACCEPTED, Json(FinalizeResponse { phase, job_id: Some(job_id) })).into_response())
}

pub async fn export(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Response> {
    let handle = project(&state, &id)?;
    if handle.phase() != Phase::Finalized || handle.view().finalizing {
        return Err(ApiError::conflict("the project is not finalized"));
    }
    let dir = state.project_dir(&id).join(tandem_core::data::trained::EXPORT_DIR);
    let bytes = tokio::task::spawn_blocking(move || export_archive(&dir))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))??;
    let digest = tandem_core::checksum::sha256_hex(&bytes);
    Ok((
        StatusCode::OK,
        [
            (header::CONTENT_TYPE, "application/x-tar".to_string()),
            (header::CONTENT_DISPOSITION, format!("attachment; filename=\"{id}-export.tar\"")),
            (header::HeaderName::from_static("x-content-sha256"), digest),
        ],
        Body::from(bytes),
    )
        .into_response())
}

pub async fn job(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Response> {
    let status = state.jobs.get(&id).ok_or_else(|| ApiError::not_found(format!("no job {id}")))?;
    Ok(Json(status).into_response())
}
