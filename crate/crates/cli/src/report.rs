//! Simulation outputs: per-iteration rows, CSV and JSON summaries, and the
//! budget table that compares runs.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use tandem_core::data::LoopMode;
use tandem_core::orchestrator::{SimulationConfig, SimulationReport};
use tandem_core::selection::Strategy;

/// Labeled-pool fractions reported by `compare`.
pub const BUDGET_POINTS: [f64; 5] = [0.10, 0.20, 0.30, 0.40, 0.50];

/// CSV columns, in file order.
pub const CSV_COLUMNS: [&str; 8] =
    ["iteration", "labeled_fraction", "f1_mean", "f1_per_seed", "proxy_train_s", "select_s", "main_train_s", "idle_s"];

pub const SUMMARY_SUFFIX: &str = ".summary.json";

/// The version stamp embedded in every output file.
pub fn version_stamp() -> String {
    match option_env!("TANDEM_GIT_REV") {
        Some(rev) if !rev.is_empty() => format!("tandem {} ({rev})", env!("CARGO_PKG_VERSION")),
        _ => format!("tandem {}", env!("CARGO_PKG_VERSION")),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRow {
    pub iteration: usize,
    pub labeled_fraction: f64,
    pub f1_mean: f64,
    pub f1_per_seed: Vec<f64>,
    /// Timings are means over seeds; absent when timings are not recorded.
    pub proxy_train_s: Option<f64>,
    pub select_s: Option<f64>,
    pub main_train_s: Option<f64>,
    pub idle_s: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub version: String,
    pub corpus: String,
    pub strategy: Strategy,
    pub loop_mode: LoopMode,
    pub config: SimulationConfig,
    pub pool_size: usize,
    pub test_size: usize,
    pub batch_size: usize,
    pub iterations: Vec<IterationRow>,
}

impl RunSummary {
    pub fn from_report(report: &SimulationReport, corpus: &str, timings: bool) -> Self {
        let n = report.runs.first().map(|r| r.f1.len()).unwrap_or(0);
        let iterations = (0..n)
            .map(|t| {
                let timing = |f: &dyn Fn(&tandem_core::orchestrator::IterationRecord) -> Option<f64>| {
                    if !timings {
                        return None;
                    }
                    let values: Vec<f64> = report.runs.iter().filter_map(|r| f(&r.records[t])).collect();
                    (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
                };
                IterationRow {
                    iteration: t,
                    labeled_fraction: report.labeled_fraction(t),
                    f1_mean: report.f1_mean(t),
                    f1_per_seed: report.runs.iter().map(|r| r.f1[t]).collect(),
                    proxy_train_s: timing(&|r| Some(r.proxy_train_seconds)),
                    select_s: timing(&|r| Some(r.selection_seconds)),
                    main_train_s: timing(&|r| r.main_train_seconds),
                    idle_s: timing(&|r| Some(r.idle_seconds)),
                }
            })
            .collect();
        Self {
            version: version_stamp(),
            corpus: corpus.to_string(),
            strategy: report.strategy,
            loop_mode: report.loop_mode,
            config: report.config.clone(),
            pool_size: report.pool_size,
            test_size: report.test_size,
            batch_size: report.batch_size,
            iterations,
        }
    }

    /// File stem for this run's outputs, such as `MNLP` or `BERT-KM-standard`.
    pub fn stem(&self) -> String {
        match self.loop_mode {
            LoopMode::Proxy => self.strategy.to_string(),
            LoopMode::Standard => format!("{}-standard", self.strategy),
        }
    }

    /// Mean F1 at the first iteration whose labeled fraction reaches `fraction`.
    pub fn f1_at(&self, fraction: f64) -> Option<f64> {
        self.iterations.iter().find(|r| r.labeled_fraction + 1e-9 >= fraction).map(|r| r.f1_mean)
    }

    /// Mean of the per-iteration idle times, when they were recorded.
    pub fn mean_idle(&self) -> Option<f64> {
        let idle: Vec<f64> = self.iterations.iter().filter_map(|r| r.idle_s).collect();
        (!idle.is_empty()).then(|| idle.iter().sum::<f64>() / idle.len() as f64)
    }

    pub fn to_csv(&self) -> csv::Result<String> {
        let mut out = String::new();
        writeln!(out, "# {}", self.version).unwrap();
        writeln!(out, "# corpus: {}", self.corpus).unwrap();
        writeln!(out, "# config: {}", serde_json::to_string(&self.config).expect("configs serialize")).unwrap();
        let mut writer = csv::Writer::from_writer(Vec::new());
        writer.write_record(CSV_COLUMNS)?;
        let opt = |v: Option<f64>| v.map(|v| format!("{v:.6}")).unwrap_or_default();
        for r in &self.iterations {
            let per_seed: Vec<String> = r.f1_per_seed.iter().map(|f| format!("{f:.6}")).collect();
            writer.write_record([
                r.iteration.to_string(),
                format!("{:.6}", r.labeled_fraction),
                format!("{:.6}", r.f1_mean),
                per_seed.join(";"),
                opt(r.proxy_train_s),
                opt(r.select_s),
                opt(r.main_train_s),
                opt(r.idle_s),
            ])?;
        }
        let body = writer.into_inner().map_err(|e| e.into_error())?;
        out.push_str(std::str::from_utf8(&body).expect("CSV output is UTF-8"));
        Ok(out)
    }
}

/// One row of the comparison table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonRow {
    pub configuration: String,
    pub f1_at: BTreeMap<String, Option<f64>>,
    pub mean_idle_s: Option<f64>,
}

pub fn budget_label(fraction: f64) -> String {
    format!("{}%", (fraction * 100.0).round() as u32)
}

pub fn comparison_row(configuration: String, summary: &RunSummary) -> ComparisonRow {
    ComparisonRow {
        configuration,
        f1_at: BUDGET_POINTS.iter().map(|&f| (budget_label(f), summary.f1_at(f))).collect(),
        mean_idle_s: summary.mean_idle(),
    }
}

/// Summaries in a directory, or the file itself when given a summary path.
pub fn summary_files(path: &Path) -> std::io::Result<Vec<PathBuf>> {
    if path.is_file() {
        return Ok(vec![path.to_path_buf()]);
    }
    let mut files: Vec<PathBuf> = std::fs::read_dir(path)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.ends_with(SUMMARY_SUFFIX)))
        .collect();
    files.sort();
    Ok(files)
}

/// A plain-text table: configurations by budget points plus mean idle time.
pub fn render_table(rows: &[ComparisonRow]) -> String {
    let mut header = vec!["configuration".to_string()];
    header.extend(BUDGET_POINTS.iter().map(|&f| format!("F1@{}", budget_label(f))));
    header.push("idle s/iter".into());
    let cells: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            let mut line = vec![r.configuration.clone()];
            line.extend(r.f1_at.values().map(|v| v.map(|f| format!("{:.2}", f * 100.0)).unwrap_or_else(|| "-".into())));
            line.push(r.mean_idle_s.map(|s| format!("{s:.3}")).unwrap_or_else(|| "-".into()));
            line
        })
        .collect();
    let widths: Vec<usize> = (0..header.len())
        .map(|i| cells.iter().map(|c| c[i].len()).chain([header[i].len()]).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    let mut push = |line: &[String]| {
        let padded: Vec<String> = line
            .iter()
            .enumerate()
            .map(|(i, c)| if i == 0 { format!("{c:<w$}", w = widths[i]) } else { format!("{c:>w$}", w = widths[i]) })
            .collect();
        writeln!(out, "{}", padded.join("  ").trim_end()).unwrap();
    };
    push(&header);
    push(&widths.iter().map(|&w| "-".repeat(w)).collect::<Vec<_>>());
    for line in &cells {
        push(line);
    }
    out
}
