//! The HTTP surface driven in-process, the way the annotation UI and scripts use it.

use std::sync::Arc;
use std::time::{Duration, Instant};

use axum::body::Body;
use axum::http::{header, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tandem_core::data::synth::bundled_desk_corpus;
use tandem_core::data::{load_trained, tokenize, write_jsonl, Corpus};
use tandem_service::{router, AppState, ServiceConfig};
use tower::ServiceExt;

const BOUNDARY: &str = "tandem-test-boundary";

struct Response {
    status: StatusCode,
    headers: axum::http::HeaderMap,
    bytes: Vec<u8>,
}

impl Response {
    fn json(&self) -> Value {
        serde_json::from_slice(&self.bytes).unwrap_or(Value::Null)
    }
}

async fn send(app: &Router, request: Request<Body>) -> Response {
    let response = app.clone().oneshot(request).await.unwrap();
    let status = response.status();
    let headers = response.headers().clone();
    let bytes = response.into_body().collect().await.unwrap().to_bytes().to_vec();
    Response { status, headers, bytes }
}

async fn get(app: &Router, uri: &str) -> Response {
    send(app, Request::get(uri).body(Body::empty()).unwrap()).await
}

async fn post_json(app: &Router, uri: &str, body: &Value) -> Response {
    let request = Request::post(uri)
        .header(header::CONTENT_TYPE, "application/json")
        .body(Body::from(body.to_string()))
        .unwrap();
    send(app, request).await
}

async fn post_empty(app: &Router, uri: &str) -> Response {
    send(app, Request::post(uri).body(Body::empty()).unwrap()).await
}

async fn upload(app: &Router, uri: &str, file_name: &str, content: &str) -> Response {
    let body = format!(
        "--{BOUNDARY}\r\nContent-Disposition: form-data; name=\"file\"; filename=\"{file_name}\"\r\n\
         Content-Type: application/octet-stream\r\n\r\n{content}\r\n--{BOUNDARY}--\r\n"
    );
    let request = Request::post(uri)
        .header(header::CONTENT_TYPE, format!("multipart/form-data; boundary={BOUNDARY}"))
        .body(Body::from(body))
        .unwrap();
    send(app, request).await
}

async fn wait_for_job(app: &Router, job_id: &str) -> Value {
    let deadline = Instant::now() + Duration::from_secs(300);
    loop {
        let job = get(app, &format!("/jobs/{job_id}")).await.json();
        if job["state"] == "DONE" || job["state"] == "FAILED" {
            return job;
        }
        assert!(Instant::now() < deadline, "job {job_id} did not finish: {job}");
        tokio::time::sleep(Duration::from_millis(20)).await;
    }
}

fn unlabeled(range: std::ops::Range<usize>) -> (Corpus, String) {
    let full = bundled_desk_corpus().unwrap();
    let sentences = full.sentences[range].to_vec();
    let gold = full.gold.as_ref().map(|g| sentences.iter().map(|s| (s.id.clone(), g[&s.id].clone())).collect());
    let with_gold = Corpus { sentences: sentences.clone(), gold, labels: full.labels.clone(), provenance: None };
    let bare = Corpus { sentences, gold: None, labels: full.labels, provenance: None };
    (with_gold, write_jsonl(&bare).unwrap())
}

fn config(name: &str, strategy: &str, cold_start: Option<&str>) -> Value {
    let labels = bundled_desk_corpus().unwrap().labels;
    let mut c = json!({
        "name": name,
        "labels": labels.types(),
        "strategy": { "name": strategy, "seed": 3 },
        "batch_size": 10,
        "model": { "main_backend": "small-trainable", "proxy_backend": "small-trainable" },
        "training": { "main_epochs": 8, "proxy_epochs": 2, "learning_rate": 0.01 },
    });
    if let Some(s) = cold_start {
        c["cold_start"] = json!(s);
    }
    c
}

fn app(dir: &std::path::Path) -> (Router, Arc<AppState>) {
    let state = AppState::open(ServiceConfig::new(dir)).unwrap();
    (router(state.clone()), state)
}

/// Spans as the UI sends them: inclusive token ranges.
fn spans_for(corpus: &Corpus, id: &str) -> Value {
    let tags = &corpus.gold.as_ref().unwrap()[id];
    let spans: Vec<Value> = corpus
        .labels
        .spans(tags.as_slice())
        .into_iter()
        .map(|s| json!({ "start": s.start, "end": s.end - 1, "label": s.label }))
        .collect();
    json!({ "spans": spans })
}

#[tokio::test]
async fn health_answers_without_a_token() {
    let dir = tempfile::tempdir().unwrap();
    let (app, _) = app(dir.path());
    let r = get(&app, "/health").await;
    assert_eq!(r.status, StatusCode::OK);
    assert_eq!(r.json()["status"], "ok");
}

#[tokio::test]
async fn project_creation_rejects_duplicates_and_bad_configs() {
    let dir = tempfile::tempdir().unwrap();
    let (app, _) = app(dir.path());
    let r = post_json(&app, "/projects", &config("news", "MNLP", Some("RANDOM"))).await;
    assert_eq!(r.status, StatusCode::CREATED);
    assert_eq!(r.json()["project_id"], "news");
    assert!(dir.path().join("news/project.json").is_file());

    let r = post_json(&app, "/projects", &config("news", "MNLP", None)).await;
    assert_eq!(r.status, StatusCode::CONFLICT);

    let r = post_json(&app, "/projects", &config("other", "UNCERTAINTY", None)).await;
    assert_eq!(r.status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(r.json()["error"], "invalid_config");

    let mut bad = config("bad name", "MNLP", None);
    bad["batch_fraction"] = json!(0.5);
    let r = post_json(&app, "/projects", &bad).await;
    assert_eq!(r.status, StatusCode::UNPROCESSABLE_ENTITY);
    let body = r.json();
    let fields: Vec<&str> = body["issues"].as_array().unwrap().iter().map(|i| i["field"].as_str().unwrap()).collect();
    assert!(fields.contains(&"name") && fields.contains(&"batch_fraction"), "{fields:?}");

    let r = get(&app, "/projects").await;
    assert_eq!(r.json()["projects"], json!(["news"]));
}

#[tokio::test]
async fn uploads_count_sentences_and_report_bad_lines() {
    let dir = tempfile::tempdir().unwrap();
    let (app, _) = app(dir.path());
    post_json(&app, "/projects", &config("a", "RANDOM", None)).await;
    post_json(&app, "/projects", &config("b", "RANDOM", None)).await;

    let (_, text) = unlabeled(0..100);
    let r = upload(&app, "/projects/a/unlabeled", "pool.jsonl", &text).await;
    assert_eq!(r.status, StatusCode::ACCEPTED, "{}", r.json());
    assert_eq!(r.json()["count"], 100);
    let r = upload(&app, "/projects/a/unlabeled", "pool.jsonl", &text).await;
    assert_eq!(r.status, StatusCode::CONFLICT);

    let mut lines: Vec<String> = text.lines().take(10).map(str::to_string).collect();
    lines[6] = "{\"text\": \"unterminated".into();
    let r = upload(&app, "/projects/b/unlabeled", "pool.jsonl", &lines.join("\n")).await;
    assert_eq!(r.status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(r.json()["line"], 7);

    let r = upload(&app, "/projects/missing/unlabeled", "pool.jsonl", &text).await;
    assert_eq!(r.status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn labeled_lines_can_seed_the_labeled_set() {
    let dir = tempfile::tempdir().unwrap();
    let (app, _) = app(dir.path());
    post_json(&app, "/projects", &config("seeded", "MNLP", None)).await;
    let (mut mixed, _) = unlabeled(0..30);
    mixed.gold.as_mut().unwrap().retain(|id, _| mixed.sentences[..10].iter().any(|s| &s.id == id));
    let text = write_jsonl(&mixed).unwrap();
    let r = upload(&app, "/projects/seeded/unlabeled?seed=true", "mixed.jsonl", &text).await;
    assert_eq!(r.status, StatusCode::ACCEPTED, "{}", r.json());
    assert_eq!(r.json()["count"], 30);
    assert_eq!(r.json()["seed_count"], 10);
    let status = get(&app, "/projects/seeded/status").await.json();
    assert_eq!(status["labeled"], 10);
    assert_eq!(status["unlabeled"], 20);
}

#[tokio::test]
async fn column_files_are_recognized() {
    let dir = tempfile::tempdir().unwrap();
    let (app, _) = app(dir.path());
    post_json(&app, "/projects", &config("col", "RANDOM", None)).await;
    let (gold, _) = unlabeled(0..25);
    let text = tandem_core::data::write_column(&gold);
    let r = upload(&app, "/projects/col/unlabeled", "pool.conll", &text).await;
    assert_eq!(r.status, StatusCode::ACCEPTED, "{}", r.json());
    assert_eq!(r.json()["count"], 25);
    assert_eq!(r.json()["seed_count"], 0, "labels are ignored unless seeding is asked for");
}

#[tokio::test]
async fn iterations_check_phase_and_cold_start() {
    let dir = tempfile::tempdir().unwrap();
    let (app, _) = app(dir.path());
    post_json(&app, "/projects", &config("cold", "MNLP", None)).await;
    let r = post_empty(&app, "/projects/cold/iterations").await;
    assert_eq!(r.status, StatusCode::CONFLICT, "no data yet");

    let (_, text) = unlabeled(0..40);
    upload(&app, "/projects/cold/unlabeled", "pool.jsonl", &text).await;
    let r = post_empty(&app, "/projects/cold/iterations").await;
    assert_eq!(r.status, StatusCode::UNPROCESSABLE_ENTITY);
    let message = r.json()["message"].as_str().unwrap().to_string();
    assert!(message.contains("ALPS or RANDOM"), "{message}");

    let r = get(&app, "/projects/cold/batch").await;
    assert_eq!(r.status, StatusCode::CONFLICT, "no batch before selection");
}

#[tokio::test]
async fn bearer_token_guards_everything_but_health() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = ServiceConfig::new(dir.path());
    config.auth_token = Some("s3cret".into());
    let app = router(AppState::open(config).unwrap());
    assert_eq!(get(&app, "/health").await.status, StatusCode::OK);
    assert_eq!(get(&app, "/projects").await.status, StatusCode::UNAUTHORIZED);
    let wrong = Request::get("/projects").header(header::AUTHORIZATION, "Bearer nope").body(Body::empty()).unwrap();
    assert_eq!(send(&app, wrong).await.status, StatusCode::UNAUTHORIZED);
    let right = Request::get("/projects").header(header::AUTHORIZATION, "Bearer s3cret").body(Body::empty()).unwrap();
    assert_eq!(send(&app, right).await.status, StatusCode::OK);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn full_round_trip_through_export() {
    let dir = tempfile::tempdir().unwrap();
    let (app, state) = app(dir.path());
    let (gold, text) = unlabeled(0..100);

    assert_eq!(post_json(&app, "/projects", &config("desk", "MNLP", Some("RANDOM"))).await.status, StatusCode::CREATED);
    let status = get(&app, "/projects/desk/status").await.json();
    assert_eq!(status["phase"], "IDLE");
    assert_eq!(status["iteration"], 0);
    assert_eq!(upload(&app, "/projects/desk/unlabeled", "pool.jsonl", &text).await.json()["count"], 100);
    assert_eq!(get(&app, "/projects/desk/export").await.status, StatusCode::CONFLICT, "not finalized");
    assert_eq!(post_empty(&app, "/projects/desk/finalize").await.status, StatusCode::CONFLICT, "nothing trained");

    for t in 0..3usize {
        let r = post_empty(&app, "/projects/desk/iterations").await;
        assert_eq!(r.status, StatusCode::ACCEPTED, "{}", r.json());
        let job = wait_for_job(&app, r.json()["job_id"].as_str().unwrap()).await;
        assert_eq!(job["state"], "DONE", "{job}");
        assert_eq!(job["kind"], "SELECT");
        assert_eq!(post_empty(&app, "/projects/desk/iterations").await.status, StatusCode::CONFLICT, "wrong phase");

        let status = get(&app, "/projects/desk/status").await.json();
        assert_eq!(status["phase"], "AWAITING_ANNOTATION");
        assert_eq!(status["labeled"].as_u64().unwrap() + status["unlabeled"].as_u64().unwrap(), 100);
        if t > 0 {
            let main: Vec<&Value> = status["jobs"].as_array().unwrap().iter().filter(|j| j["kind"] == "MAIN_TRAIN").collect();
            assert_eq!(main.len(), 1, "background main training is visible: {status}");
            // the project adopts the trained model only when the next batch is submitted
            assert_eq!(status["main_status"]["state"], "RUNNING", "{status}");
            assert!(main[0]["state"] == "RUNNING" || main[0]["state"] == "DONE", "{status}");
            if main[0]["state"] == "DONE" {
                assert_eq!(main[0]["progress"], 1.0);
            }
        }

        let batch = get(&app, "/projects/desk/batch").await;
        assert_eq!(batch.status, StatusCode::OK);
        let batch = batch.json();
        assert_eq!(batch["iteration"], t);
        let ids: Vec<String> =
            batch["sentences"].as_array().unwrap().iter().map(|s| s["id"].as_str().unwrap().to_string()).collect();
        assert_eq!(ids.len(), 10);
        for s in batch["sentences"].as_array().unwrap() {
            let pooled = gold.sentences.iter().find(|p| p.id == s["id"]).unwrap();
            assert_eq!(s["tokens"], json!(pooled.tokens), "tokens match the uploaded text");
        }

        let mut annotations = serde_json::Map::new();
        for id in &ids {
            annotations.insert(id.clone(), spans_for(&gold, id));
        }
        let mut partial = annotations.clone();
        partial.remove(&ids[0]);
        let r = post_json(&app, "/projects/desk/annotations", &json!({ "annotations": partial })).await;
        assert_eq!(r.status, StatusCode::UNPROCESSABLE_ENTITY);
        assert_eq!(r.json()["missing"], json!([ids[0]]));

        let mut broken = annotations.clone();
        let len = gold.sentences.iter().find(|p| p.id == ids[1]).unwrap().len();
        let mut tags = vec!["O".to_string(); len];
        tags[0] = format!("I-{}", gold.labels.types()[0]);
        broken.insert(ids[1].clone(), json!({ "tags": tags }));
        let r = post_json(&app, "/projects/desk/annotations", &json!({ "annotations": broken })).await;
        assert_eq!(r.status, StatusCode::UNPROCESSABLE_ENTITY);
        let issues = r.json()["issues"].as_array().unwrap().clone();
        assert_eq!(issues.len(), 1);
        assert_eq!(issues[0]["sentence_id"], ids[1]);

        let body = json!({ "annotations": annotations });
        let request = |key: &str| {
            Request::post("/projects/desk/annotations")
                .header(header::CONTENT_TYPE, "application/json")
                .header("idempotency-key", key)
                .body(Body::from(body.to_string()))
                .unwrap()
        };
        let key = format!("submit-{t}");
        let first = send(&app, request(&key)).await;
        assert_eq!(first.status, StatusCode::OK, "{}", first.json());
        let accepted = first.json();
        assert_eq!(accepted["accepted"], 10);
        assert_eq!(accepted["next_iteration"], t + 1);
        if t == 0 {
            assert!(accepted["main_training_finished"].is_null(), "no main training at a cold start");
        } else {
            assert!(accepted["main_training_finished"].is_boolean());
        }
        let retry = send(&app, request(&key)).await;
        assert_eq!(retry.status, StatusCode::OK);
        assert_eq!(retry.json(), accepted, "a retried key replays the first response");
        let unkeyed = post_json(&app, "/projects/desk/annotations", &body).await;
        assert_eq!(unkeyed.status, StatusCode::CONFLICT, "no double application");

        let job = wait_for_job(&app, accepted["job_id"].as_str().unwrap()).await;
        assert_eq!(job["state"], "DONE", "{job}");
        let status = get(&app, "/projects/desk/status").await.json();
        assert_eq!(status["phase"], "IDLE");
        assert_eq!(status["iteration"], t + 1);
        assert_eq!(status["labeled"], 10 * (t + 1));
        assert_eq!(status["labeled"].as_u64().unwrap() + status["unlabeled"].as_u64().unwrap(), 100);
        assert_eq!(status["records"].as_array().unwrap().len(), t + 1);
    }

    let r = post_empty(&app, "/projects/desk/finalize").await;
    assert_eq!(r.status, StatusCode::ACCEPTED, "{}", r.json());
    let job = wait_for_job(&app, r.json()["job_id"].as_str().unwrap()).await;
    assert_eq!(job["state"], "DONE", "{job}");
    assert_eq!(get(&app, "/projects/desk/status").await.json()["phase"], "FINALIZED");
    let again = post_empty(&app, "/projects/desk/finalize").await;
    assert_eq!(again.status, StatusCode::OK);
    assert_eq!(again.json()["phase"], "FINALIZED");

    let first = get(&app, "/projects/desk/export").await;
    assert_eq!(first.status, StatusCode::OK);
    assert_eq!(first.headers[header::CONTENT_TYPE], "application/x-tar");
    let second = get(&app, "/projects/desk/export").await;
    assert_eq!(first.bytes, second.bytes, "exports are byte-stable");
    assert_eq!(first.headers["x-content-sha256"], second.headers["x-content-sha256"]);

    let unpacked = tempfile::tempdir().unwrap();
    tar::Archive::new(first.bytes.as_slice()).unpack(unpacked.path()).unwrap();
    let trained = load_trained(unpacked.path()).unwrap();
    assert_eq!(trained.labeled.len(), 30);
    let (held_out, _) = unlabeled(150..170);
    for s in &held_out.sentences {
        let text = s.tokens.join(" ");
        let spans = trained.predict(&text).unwrap();
        let len = tokenize(&text).len();
        let token_spans: Vec<_> = spans
            .iter()
            .map(|p| tandem_core::TokenSpan::new(p.token_start, p.token_end, p.label.clone()))
            .collect();
        let tags = trained.labeled.labels.tags_from_spans(&s.id, len, &token_spans).unwrap();
        assert!(trained.labeled.labels.is_valid(&tags), "BIO-valid prediction for {text}");
        for p in &spans {
            assert_eq!(&text[p.start..p.end], p.text);
        }
    }

    // a restarted service finds the finalized project
    state.drain().await;
    let (reopened, _) = self::app(dir.path());
    assert_eq!(get(&reopened, "/projects/desk/status").await.json()["phase"], "FINALIZED");
    assert_eq!(get(&reopened, "/projects/desk/export").await.bytes, first.bytes);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn shutdown_waits_for_running_jobs() {
    use tokio::io::{AsyncReadExt, AsyncWriteExt};

    let dir = tempfile::tempdir().unwrap();
    let (app, state) = app(dir.path());
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    let (stop, stopped) = tokio::sync::oneshot::channel::<()>();
    let server = tokio::spawn(tandem_service::serve(listener, state.clone(), async {
        let _ = stopped.await;
    }));

    let mut stream = tokio::net::TcpStream::connect(addr).await.unwrap();
    stream.write_all(b"GET /health HTTP/1.1\r\nHost: test\r\nConnection: close\r\n\r\n").await.unwrap();
    let mut reply = String::new();
    stream.read_to_string(&mut reply).await.unwrap();
    assert!(reply.starts_with("HTTP/1.1 200"), "{reply}");

    post_json(&app, "/projects", &config("busy", "RANDOM", None)).await;
    let (_, text) = unlabeled(0..60);
    upload(&app, "/projects/busy/unlabeled", "pool.jsonl", &text).await;
    let job_id = post_empty(&app, "/projects/busy/iterations").await.json()["job_id"].as_str().unwrap().to_string();
    stop.send(()).unwrap();
    server.await.unwrap().unwrap();
    let job = state.jobs().get(&job_id).unwrap();
    assert_eq!(job.state, tandem_service::jobs::JobState::Done);
}
