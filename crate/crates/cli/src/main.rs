use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use tandem_core::data::synth::{bundled_desk_corpus, desk_corpus, DESK_SEED, DESK_SIZE};
use tandem_core::data::{
    load_trained, parse_column_corpus, parse_jsonl_corpus, write_column, write_jsonl, Corpus, LoopMode, ProjectConfig,
};
use tandem_core::orchestrator::{export_archive, run_simulation, Project, SimulationConfig, DESK_LEARNING_RATE};
use tandem_core::selection::{Strategy, StrategyConfig};
use tandem_cli::plot::f1_curve_svg;
use tandem_cli::report::{comparison_row, render_table, summary_files, RunSummary, SUMMARY_SUFFIX};

#[derive(Parser)]
#[command(name = "tandem", version, about = "Active-learning annotation projects for sequence labeling")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Serve the HTTP API over a data directory.
    Serve(ServeArgs),
    /// Run simulated active learning with an oracle annotator.
    Simulate(SimulateArgs),
    /// Tabulate F1 at fixed budgets and idle time across simulation runs.
    Compare(CompareArgs),
    /// Write the synthetic desk corpus.
    GenCorpus(GenCorpusArgs),
    /// Print the state of a project directory.
    Inspect { project: PathBuf },
    /// Pack a finalized project's export into a tar archive.
    Export {
        project: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Tag raw text with a finalized project's model.
    Predict {
        /// Project directory, export directory or unpacked export archive.
        model: PathBuf,
        text: Vec<String>,
    },
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, env = tandem_service::ENV_DATA_ROOT)]
    data_root: PathBuf,
    #[arg(long, default_value_t = tandem_service::DEFAULT_PORT)]
    port: u16,
    #[arg(long, default_value = "0.0.0.0")]
    host: String,
    /// Full listen address; overrides --host and --port.
    #[arg(long, env = tandem_service::ENV_LISTEN)]
    listen: Option<SocketAddr>,
}

#[derive(Clone, Copy, ValueEnum)]
enum LoopArg {
    Proxy,
    Standard,
}

#[derive(Args)]
struct SimulateArgs {
    /// Gold corpus in column or JSONL format; the bundled desk corpus by default.
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// A strategy name, or `all`.
    #[arg(long, default_value = "MNLP")]
    strategy: String,
    #[arg(long, default_value_t = 25)]
    iterations: usize,
    #[arg(long, default_value_t = 0.02)]
    batch_fraction: f64,
    #[arg(long, value_delimiter = ',', default_value = "0,1,2")]
    seeds: Vec<u64>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "proxy")]
    loop_mode: LoopArg,
    #[arg(long, default_value = "RANDOM")]
    cold_start: Strategy,
    #[arg(long, default_value_t = 5)]
    test_every: usize,
    #[arg(long, default_value_t = 2.0)]
    seconds_per_token: f64,
    /// Model and training settings as a project configuration document.
    #[arg(long)]
    project_config: Option<PathBuf>,
    #[arg(long)]
    main_backend: Option<String>,
    #[arg(long)]
    proxy_backend: Option<String>,
    #[arg(long)]
    main_epochs: Option<usize>,
    #[arg(long)]
    proxy_epochs: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    /// Write an SVG of F1 against labeled fraction.
    #[arg(long)]
    plot: bool,
    /// Leave timing columns empty so reruns produce identical files.
    #[arg(long)]
    no_timings: bool,
    /// Run seeds concurrently.
    #[arg(long)]
    parallel_seeds: bool,
}

#[derive(Args)]
struct CompareArgs {
    /// Directories written by `simulate`, or individual summary files.
    #[arg(long, num_args = 1.., required = true)]
    runs: Vec<PathBuf>,
    /// Print the table as JSON.
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct GenCorpusArgs {
    #[arg(long, default_value_t = DESK_SEED)]
    seed: u64,
    #[arg(long, default_value_t = DESK_SIZE)]
    size: usize,
    /// Output path; `.jsonl` selects JSONL, anything else the column format.
    #[arg(long)]
    out: PathBuf,
}

/// A failed command: configuration problems exit with 2, everything else with 1.
enum Failure {
    Config(String),
    Runtime(String),
}

impl From<tandem_core::Error> for Failure {
    fn from(e: tandem_core::Error) -> Self {
        use tandem_core::Error::*;
        match e {
            Config(_) | InvalidConfig(_) | Usage(_) | Version { .. } => Failure::Config(e.to_string()),
            _ => Failure::Runtime(e.to_string()),
        }
    }
}

fn io_failure(path: &Path) -> impl Fn(std::io::Error) -> Failure + '_ {
    move |e| Failure::Runtime(format!("{}: {e}", path.display()))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let default_level = if matches!(cli.command, Command::Serve(_)) { "info" } else { "warn" };
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env()
                .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new(default_level)),
        )
        .with_writer(std::io::stderr)
        .init();
    let result = match cli.command {
        Command::Serve(args) => serve(args),
        Command::Simulate(args) => simulate(args),
        Command::Compare(args) => compare(args),
        Command::GenCorpus(args) => gen_corpus(args),
        Command::Inspect { project } => inspect(&project),
        Command::Export { project, out } => export(&project, &out),
        Command::Predict { model, text } => predict(&model, &text.join(" ")),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(message)) => {
            eprintln!("error: {message}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(message)) => {
            eprintln!("error: {message}");
            ExitCode::from(1)
        }
    }
}

fn serve(args: ServeArgs) -> Result<(), Failure> {
    let config = tandem_service::ServiceConfig {
        data_root: args.data_root.clone(),
        auth_token: tandem_service::auth_token_from_env(),
    };
    let state = tandem_service::AppState::open(config)?;
    let addr = match args.listen {
        Some(addr) => addr,
        None => format!("{}:{}", args.host, args.port)
            .parse()
            .map_err(|_| Failure::Config(format!("{}:{} is not a socket address", args.host, args.port)))?,
    };
    let runtime = tokio::runtime::Runtime::new().map_err(|e| Failure::Runtime(e.to_string()))?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind(addr).await.map_err(|e| match e.kind() {
            std::io::ErrorKind::AddrInUse => Failure::Runtime(format!("port {} is already in use", addr.port())),
            _ => Failure::Runtime(format!("cannot listen on {addr}: {e}")),
        })?;
        let bound = listener.local_addr().map_err(|e| Failure::Runtime(e.to_string()))?;
        tracing::info!(address = %bound, data_root = %args.data_root.display(), "serving");
        eprintln!("listening on http://{bound}");
        tandem_service::serve(listener, state, tandem_service::shutdown_signal())
            .await
            .map_err(|e| Failure::Runtime(e.to_string()))
    })
}

fn read_corpus(path: &Path) -> tandem_core::Result<Corpus> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("jsonl" | "json") => parse_jsonl_corpus(path, None),
        _ => parse_column_corpus(path, true),
    }
}

fn simulate(args: SimulateArgs) -> Result<(), Failure> {
    let strategies: Vec<Strategy> = if args.strategy.eq_ignore_ascii_case("all") {
        Strategy::ALL.to_vec()
    } else {
        vec![args.strategy.parse().map_err(|e: tandem_core::Error| Failure::Config(e.to_string()))?]
    };
    let (corpus, corpus_name) = match &args.corpus {
        Some(path) => (read_corpus(path)?, path.display().to_string()),
        None => (bundled_desk_corpus()?, "bundled desk corpus".to_string()),
    };

    let mut project = match &args.project_config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(io_failure(path))?;
            serde_json::from_str::<ProjectConfig>(&text)
                .map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?
        }
        None => {
            let mut c = ProjectConfig::new("simulation", corpus.labels.clone(), StrategyConfig::default());
            c.training.learning_rate = DESK_LEARNING_RATE;
            c
        }
    };
    if let Some(b) = &args.main_backend {
        project.model.main_backend = b.clone();
    }
    if let Some(b) = &args.proxy_backend {
        project.model.proxy_backend = b.clone();
    }
    if let Some(e) = args.main_epochs {
        project.training.main_epochs = e;
    }
    if let Some(e) = args.proxy_epochs {
        project.training.proxy_epochs = e;
    }
    if let Some(lr) = args.learning_rate {
        project.training.learning_rate = lr;
    }

    std::fs::create_dir_all(&args.out).map_err(io_failure(&args.out))?;
    let mut summaries = Vec::new();
    for strategy in strategies {
        let config = SimulationConfig {
            strategy,
            iterations: args.iterations,
            batch_fraction: args.batch_fraction,
            seeds: args.seeds.clone(),
            test_every: args.test_every,
            seconds_per_token: args.seconds_per_token,
            loop_mode: match args.loop_mode {
                LoopArg::Proxy => LoopMode::Proxy,
                LoopArg::Standard => LoopMode::Standard,
            },
            cold_start: args.cold_start,
            parallel_seeds: args.parallel_seeds,
            project: Some(project.clone()),
        };
        eprintln!("simulating {strategy} over {} seed(s)", config.seeds.len());
        let report = run_simulation(&corpus, &config)?;
        let summary = RunSummary::from_report(&report, &corpus_name, !args.no_timings);
        let stem = summary.stem();
        let csv_path = args.out.join(format!("{stem}.csv"));
        let csv = summary.to_csv().map_err(|e| Failure::Runtime(e.to_string()))?;
        std::fs::write(&csv_path, csv).map_err(io_failure(&csv_path))?;
        let json_path = args.out.join(format!("{stem}{SUMMARY_SUFFIX}"));
        let json = serde_json::to_string_pretty(&summary).expect("summaries serialize");
        std::fs::write(&json_path, json + "\n").map_err(io_failure(&json_path))?;
        let last = summary.iterations.last().map(|r| r.f1_mean).unwrap_or(0.0);
        println!("{stem}: final F1 {:.4} -> {}", last, csv_path.display());
        summaries.push(summary);
    }
    if args.plot {
        let path = args.out.join("f1_curve.svg");
        std::fs::write(&path, f1_curve_svg(&summaries)).map_err(io_failure(&path))?;
        println!("plot -> {}", path.display());
    }
    Ok(())
}

fn compare(args: CompareArgs) -> Result<(), Failure> {
    let mut rows = Vec::new();
    for dir in &args.runs {
        let files = summary_files(dir).map_err(io_failure(dir))?;
        let run_dir = if dir.is_file() { dir.parent().unwrap_or(dir) } else { dir.as_path() };
        if files.is_empty() {
            return Err(Failure::Config(format!("no {SUMMARY_SUFFIX} files in {}", dir.display())));
        }
        for file in files {
            let text = std::fs::read_to_string(&file).map_err(io_failure(&file))?;
            let summary: RunSummary =
                serde_json::from_str(&text).map_err(|e| Failure::Runtime(format!("{}: {e}", file.display())))?;
            let name = if args.runs.len() > 1 {
                format!("{} {}", run_dir.file_name().and_then(|n| n.to_str()).unwrap_or("run"), summary.stem())
            } else {
                summary.stem()
            };
            rows.push(comparison_row(name, &summary));
        }
    }
    if args.json {
        println!("{}", serde_json::to_string_pretty(&rows).expect("rows serialize"));
    } else {
        print!("{}", render_table(&rows));
    }
    Ok(())
}

fn gen_corpus(args: GenCorpusArgs) -> Result<(), Failure> {
    let corpus = desk_corpus(args.seed, args.size)?;
    let text = match args.out.extension().and_then(|e| e.to_str()) {
        Some("jsonl") => write_jsonl(&corpus)?,
        _ => write_column(&corpus),
    };
    std::fs::write(&args.out, text).map_err(io_failure(&args.out))?;
    println!("{} sentences -> {}", corpus.len(), args.out.display());
    Ok(())
}

fn inspect(path: &Path) -> Result<(), Failure> {
    let project = Project::open(path)?;
    let state = project.state();
    println!("project     {}", state.config.name);
    println!("phase       {:?}", state.phase);
    println!("iteration   {}", state.iteration);
    println!("labeled     {}", state.labeled.len());
    println!("unlabeled   {}", state.unlabeled.len());
    println!("batch size  {}", state.batch_size);
    println!("strategy    {}", state.config.strategy.name);
    if let Some(main) = state.latest_main() {
        println!("main model  iteration {} on {} sentences ({})", main.iteration, main.labeled_count, main.fingerprint);
    }
    for r in &state.records {
        println!(
            "  t={:<3} {:<8} selected {:>4}  proxy {:>8.3}s  select {:>7.3}s  idle {:>8.3}s",
            r.t,
            r.strategy.to_string(),
            r.selected_ids.len(),
            r.proxy_train_seconds,
            r.selection_seconds,
            r.idle_seconds
        );
    }
    for w in &state.warnings {
        println!("warning: {w}");
    }
    Ok(())
}

fn export(project: &Path, out: &Path) -> Result<(), Failure> {
    let project = Project::open(project)?;
    if project.state().phase != tandem_core::orchestrator::Phase::Finalized {
        return Err(Failure::Runtime("the project is not finalized".into()));
    }
    let dir = project.root().expect("opened projects have a root").join(tandem_core::data::trained::EXPORT_DIR);
    let bytes = export_archive(&dir)?;
    std::fs::write(out, &bytes).map_err(io_failure(out))?;
    println!("{} bytes -> {}", bytes.len(), out.display());
    Ok(())
}

fn predict(model: &Path, text: &str) -> Result<(), Failure> {
    let trained = load_trained(model)?;
    for span in trained.predict(text)? {
        println!("{}", serde_json::to_string(&span).expect("spans serialize"));
    }
    Ok(())
}
