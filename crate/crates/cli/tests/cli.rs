//! The `tandem` binary as a user runs it.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpStream;
use std::path::Path;
use std::process::{Command, Stdio};
use std::time::Duration;

fn tandem() -> Command {
    Command::new(env!("CARGO_BIN_EXE_tandem"))
}

fn small_corpus(dir: &Path) -> std::path::PathBuf {
    let path = dir.join("corpus.conll");
    let status = tandem()
        .args(["gen-corpus", "--size", "200", "--seed", "7", "--out"])
        .arg(&path)
        .stdout(Stdio::null())
        .status()
        .unwrap();
    assert!(status.success());
    path
}

fn simulate(corpus: &Path, out: &Path, strategy: &str, extra: &[&str]) -> std::process::Output {
    tandem()
        .args(["simulate", "--strategy", strategy, "--iterations", "3", "--batch-fraction", "0.05", "--seeds", "0,1"])
        .args(["--main-backend", "small-trainable", "--proxy-backend", "small-trainable"])
        .args(["--main-epochs", "3", "--proxy-epochs", "2"])
        .arg("--corpus")
        .arg(corpus)
        .arg("--out")
        .arg(out)
        .args(extra)
        .output()
        .unwrap()
}

#[test]
fn serve_rejects_a_missing_data_root_with_exit_code_2() {
    let out = tandem().args(["serve", "--data-root", "/definitely/not/here"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("not a directory"));
}

#[test]
fn budget_beyond_the_pool_is_a_configuration_error() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = small_corpus(dir.path());
    let out = tandem()
        .args(["simulate", "--iterations", "30", "--batch-fraction", "0.1", "--out"])
        .arg(dir.path().join("out"))
        .arg("--corpus")
        .arg(&corpus)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("exceed the pool"));
}

#[test]
fn untimed_reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = small_corpus(dir.path());
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert!(simulate(&corpus, &a, "MNLP", &["--no-timings"]).status.success());
    assert!(simulate(&corpus, &b, "MNLP", &["--no-timings"]).status.success());
    for name in ["MNLP.csv", "MNLP.summary.json"] {
        let first = std::fs::read(a.join(name)).unwrap();
        assert_eq!(first, std::fs::read(b.join(name)).unwrap(), "{name}");
    }
    let csv = std::fs::read_to_string(a.join("MNLP.csv")).unwrap();
    let header = csv.lines().find(|l| !l.starts_with('#')).unwrap();
    assert_eq!(header, "iteration,labeled_fraction,f1_mean,f1_per_seed,proxy_train_s,select_s,main_train_s,idle_s");
    assert!(csv.lines().next().unwrap().starts_with("# tandem "));
    assert!(csv.lines().any(|l| l.starts_with("# config: {")));
}

#[test]
fn all_strategies_write_one_csv_each_and_compare_tabulates_them() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = small_corpus(dir.path());
    let out = dir.path().join("all");
    let run = simulate(&corpus, &out, "all", &["--plot"]);
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    for s in ["MNLP", "BERT-KM", "BADGE", "ALPS", "RANDOM"] {
        assert!(out.join(format!("{s}.csv")).is_file(), "{s}");
    }
    assert!(std::fs::read_to_string(out.join("f1_curve.svg")).unwrap().starts_with("<svg"));

    let timed = dir.path().join("timed");
    assert!(simulate(&corpus, &timed, "RANDOM", &[]).status.success());
    let table = tandem()
        .args(["compare", "--runs"])
        .arg(out.join("MNLP.summary.json"))
        .arg(&timed)
        .output()
        .unwrap();
    assert!(table.status.success());
    let text = String::from_utf8(table.stdout).unwrap();
    let rows: Vec<&str> = text.lines().skip(2).collect();
    assert_eq!(rows.len(), 2, "{text}");
    assert!(rows[0].starts_with("all MNLP") && rows[1].starts_with("timed RANDOM"), "{text}");
    // 3 iterations of 5% never reach the 20% point or beyond
    for row in &rows {
        assert_eq!(row.split_whitespace().filter(|c| *c == "-").count(), 4, "{text}");
    }

    let json = tandem().args(["compare", "--json", "--runs"]).arg(&timed).output().unwrap();
    let rows: serde_json::Value = serde_json::from_slice(&json.stdout).unwrap();
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(timed.join("RANDOM.summary.json")).unwrap()).unwrap();
    let idle: Vec<f64> = summary["iterations"].as_array().unwrap().iter().map(|r| r["idle_s"].as_f64().unwrap()).collect();
    let mean = idle.iter().sum::<f64>() / idle.len() as f64;
    assert!((rows[0]["mean_idle_s"].as_f64().unwrap() - mean).abs() < 1e-12);
}

#[test]
fn serve_answers_health_and_stops_on_sigterm() {
    let dir = tempfile::tempdir().unwrap();
    let mut child = tandem()
        .args(["serve", "--host", "127.0.0.1", "--port", "0", "--data-root"])
        .arg(dir.path())
        .env_remove("TANDEM_LISTEN")
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    let mut stderr = BufReader::new(child.stderr.take().unwrap());
    let mut line = String::new();
    let addr = loop {
        line.clear();
        assert!(stderr.read_line(&mut line).unwrap() > 0, "server exited early");
        if let Some(rest) = line.trim().strip_prefix("listening on http://") {
            break rest.to_string();
        }
    };
    let mut stream = TcpStream::connect(&addr).unwrap();
    stream.set_read_timeout(Some(Duration::from_secs(10))).unwrap();
    stream.write_all(b"GET /health HTTP/1.1\r\nHost: t\r\nConnection: close\r\n\r\n").unwrap();
    let mut reply = String::new();
    stream.read_to_string(&mut reply).unwrap();
    assert!(reply.starts_with("HTTP/1.1 200"), "{reply}");
    assert!(reply.contains("\"status\":\"ok\""));

    let killed = Command::new("kill").args(["-TERM", &child.id().to_string()]).status().unwrap();
    assert!(killed.success());
    let status = child.wait().unwrap();
    assert!(status.success(), "graceful shutdown exits cleanly: {status:?}");
}

#[test]
fn busy_port_is_reported_clearly() {
    let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let port = listener.local_addr().unwrap().port();
    let dir = tempfile::tempdir().unwrap();
    let out = tandem()
        .args(["serve", "--host", "127.0.0.1", "--port", &port.to_string(), "--data-root"])
        .arg(dir.path())
        .env_remove("TANDEM_LISTEN")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("already in use"));
}
