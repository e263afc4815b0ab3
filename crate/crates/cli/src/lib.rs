//! The `tracefold` command line.
//!
//! Every subcommand works on a local trace file. `graph`, `stats`, `curve`,
//! `extract` and `estimate` can instead query a running server with
//! `--server URL`; `serve` starts one.

use std::ffi::OsString;
use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};
use tracefold_client::{ClientError, ExtractParams, HttpAnalyst, TracefoldClient};
use tracefold_core::extract::{extract_from_view, metatools_from_json, metatools_to_json, ExtractionConfig};
use tracefold_core::graph::{build_from_normalized, from_json, to_dot, to_json, truncated_json_value, GraphMode};
use tracefold_core::metrics::{
    curve_csv, duplication_curve, estimate_savings, graph_stats, max_depth, savings_json, savings_table, stats_json,
    stats_table, DuplicationPoint, GraphStats, SavingsReport,
};
use tracefold_core::normalize::{NormalizedExecution, Normalizer, RuleSet};
use tracefold_core::optimize::{
    apply_actions, parse_proposal, records_to_jsonl, run_loop, Analyst, LoopConfig, ScriptedAnalyst, StubAnalyst,
};
use tracefold_core::trace::{corpus_to_jsonl, ingest_corpus, TraceCorpus};

const EXIT_CODES: &str = "Exit status: 0 on success, 1 on a usage or configuration error, \
2 when input data, the server or the analyst fails.";

#[derive(Debug, Parser)]
#[command(
    name = "tracefold",
    version,
    about = "Build state graphs from tool-call traces and extract meta-tools"
)]
#[command(after_help = EXIT_CODES)]
pub struct Cli {
    /// Log progress to stderr; repeat for more detail.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Validate a trace file and print its summary.
    #[command(after_help = EXIT_CODES)]
    Ingest(IngestArgs),
    /// Print the state graph.
    #[command(after_help = EXIT_CODES)]
    Graph(GraphArgs),
    /// Print graph statistics, one row per rule set.
    #[command(after_help = EXIT_CODES)]
    Stats(StatsArgs),
    /// Print the duplication curve.
    #[command(after_help = EXIT_CODES)]
    Curve(CurveArgs),
    /// Extract meta-tools and print them as JSON.
    #[command(after_help = EXIT_CODES)]
    Extract(ExtractArgs),
    /// Estimate the model calls meta-tools would save.
    #[command(after_help = EXIT_CODES)]
    Estimate(EstimateArgs),
    /// Run the rule-proposal loop and print one record per iteration.
    #[command(name = "loop", after_help = EXIT_CODES)]
    Loop(LoopArgs),
    /// Write every artifact for one configuration into a directory.
    #[command(after_help = EXIT_CODES)]
    Export(ExportArgs),
    /// Serve the HTTP API.
    #[command(after_help = EXIT_CODES)]
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
struct Source {
    /// Trace corpus, one execution per JSON line.
    #[arg(long, value_name = "FILE")]
    traces: Option<PathBuf>,
    /// Ask a running server instead of reading traces locally.
    #[arg(long, value_name = "URL", conflicts_with = "traces")]
    server: Option<String>,
    /// Corpus label on the server; may be omitted when it serves just one.
    #[arg(long, value_name = "LABEL", requires = "server")]
    corpus: Option<String>,
}

impl Source {
    fn traces(&self) -> Result<&Path, Failure> {
        self.traces
            .as_deref()
            .ok_or_else(|| Failure::Usage("one of --traces or --server is required".into()))
    }
}

#[derive(Debug, Args)]
struct Output {
    /// Write the artifact here instead of stdout.
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Mode {
    Merged,
    Disjoint,
}

impl From<Mode> for GraphMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Merged => GraphMode::Merged,
            Mode::Disjoint => GraphMode::Disjoint,
        }
    }
}

#[derive(Debug, Args)]
struct ExtractOpts {
    /// Minimum support; defaults to 5% of the executions, at least 2.
    #[arg(long)]
    threshold: Option<u64>,
    /// Stop after this many meta-tools.
    #[arg(long, value_name = "N")]
    max_tools: Option<usize>,
    /// Shortest chain worth a meta-tool.
    #[arg(long, value_name = "N")]
    min_chain: Option<usize>,
    /// Only chains whose tools all match; glob or `re:` pattern, repeatable.
    #[arg(long, value_name = "MATCHER")]
    allow: Vec<String>,
}

impl ExtractOpts {
    fn config(&self, executions: usize) -> Result<ExtractionConfig, Failure> {
        let mut cfg = match self.threshold {
            Some(t) => ExtractionConfig::new(t),
            None => ExtractionConfig::for_corpus(executions),
        };
        cfg.max_meta_tools = self.max_tools;
        if let Some(m) = self.min_chain {
            cfg.min_chain_calls = m;
        }
        cfg.allow = self.allow.clone();
        cfg.validate()?;
        Ok(cfg)
    }

    fn params(&self) -> Result<ExtractParams, Failure> {
        // threshold-independent checks happen here, before any request
        self.config(0)?;
        Ok(ExtractParams {
            threshold: self.threshold,
            max_meta_tools: self.max_tools,
            min_chain_calls: self.min_chain,
            allow: self.allow.clone(),
        })
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum IngestFormat {
    Json,
    Jsonl,
}

#[derive(Debug, Args)]
struct IngestArgs {
    #[arg(long, value_name = "FILE")]
    traces: PathBuf,
    /// `json` prints a summary, `jsonl` re-emits the corpus canonically.
    #[arg(long, value_enum, default_value = "json")]
    format: IngestFormat,
    #[command(flatten)]
    output: Output,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum GraphFormat {
    Json,
    Dot,
}

#[derive(Debug, Args)]
struct GraphArgs {
    #[command(flatten)]
    source: Source,
    /// Rule set to normalize with; identity when omitted.
    #[arg(long, value_name = "FILE")]
    rules: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "merged")]
    mode: Mode,
    #[arg(long, value_enum, default_value = "json")]
    format: GraphFormat,
    /// Keep at most this many nodes, breadth-first from the root (JSON only).
    #[arg(long, value_name = "K")]
    limit_nodes: Option<usize>,
    #[command(flatten)]
    output: Output,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum StatsFormat {
    Table,
    Json,
}

#[derive(Debug, Args)]
struct StatsArgs {
    #[command(flatten)]
    source: Source,
    /// Rule set for one row; repeat for several rows, labelled by file stem.
    #[arg(long, value_name = "FILE", conflicts_with = "graph")]
    rules: Vec<PathBuf>,
    /// Start with a "Base" row: disjoint graph, identity rules.
    #[arg(long, conflicts_with = "graph")]
    base: bool,
    /// Proposal file whose actions are applied on top of every rule set.
    #[arg(long, value_name = "FILE", conflicts_with = "graph")]
    actions: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "merged")]
    mode: Mode,
    /// Report on an exported graph JSON file instead of traces.
    #[arg(long, value_name = "FILE", conflicts_with_all = ["traces", "server"])]
    graph: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "table")]
    format: StatsFormat,
    #[command(flatten)]
    output: Output,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum CurveFormat {
    Csv,
    Json,
}

#[derive(Debug, Args)]
struct CurveArgs {
    #[command(flatten)]
    source: Source,
    #[arg(long, value_name = "FILE")]
    rules: Option<PathBuf>,
    /// Last step to report; defaults to the deepest node.
    #[arg(long, value_name = "N")]
    max_step: Option<usize>,
    #[arg(long, value_enum, default_value = "csv")]
    format: CurveFormat,
    #[command(flatten)]
    output: Output,
}

#[derive(Debug, Args)]
struct ExtractArgs {
    #[command(flatten)]
    source: Source,
    #[arg(long, value_name = "FILE")]
    rules: Option<PathBuf>,
    #[command(flatten)]
    opts: ExtractOpts,
    #[command(flatten)]
    output: Output,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SavingsFormat {
    Json,
    Table,
}

#[derive(Debug, Args)]
struct EstimateArgs {
    #[command(flatten)]
    source: Source,
    #[arg(long, value_name = "FILE")]
    rules: Option<PathBuf>,
    /// Meta-tool file from `extract`; extraction runs when omitted.
    #[arg(long, value_name = "FILE", conflicts_with_all = ["threshold", "max_tools", "min_chain", "allow", "server"])]
    tools: Option<PathBuf>,
    #[command(flatten)]
    opts: ExtractOpts,
    #[arg(long, value_enum, default_value = "json")]
    format: SavingsFormat,
    #[command(flatten)]
    output: Output,
}

#[derive(Debug, Args)]
struct LoopArgs {
    #[arg(long, value_name = "FILE")]
    traces: PathBuf,
    /// Starting rule set; identity when omitted.
    #[arg(long, value_name = "FILE")]
    rules: Option<PathBuf>,
    /// `stub`, `script:FILE` (one reply per line) or `http` (configured by
    /// ANALYST_ENDPOINT, ANALYST_TOKEN, ANALYST_TIMEOUT_SECS).
    #[arg(long, default_value = "stub")]
    analyst: String,
    #[arg(long, default_value_t = LoopConfig::default().max_iterations)]
    iterations: usize,
    #[arg(long, default_value_t = LoopConfig::default().sample_size)]
    sample_size: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Keep iterating after a proposal with no accepted action.
    #[arg(long)]
    keep_going: bool,
    /// Write the final rule set here.
    #[arg(long, value_name = "FILE")]
    rules_out: Option<PathBuf>,
    #[command(flatten)]
    output: Output,
}

#[derive(Debug, Args)]
struct ExportArgs {
    #[arg(long, value_name = "FILE")]
    traces: PathBuf,
    #[arg(long, value_name = "FILE")]
    rules: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "merged")]
    mode: Mode,
    #[command(flatten)]
    opts: ExtractOpts,
    /// Directory to write into; created if missing.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct ServeArgs {
    /// Corpus to serve, labelled by file stem; repeatable.
    #[arg(long, value_name = "FILE", required = true)]
    traces: Vec<PathBuf>,
    #[arg(long, default_value = "127.0.0.1:8080")]
    addr: SocketAddr,
    /// Allowed browser origin; repeatable. Any origin when omitted.
    #[arg(long, value_name = "ORIGIN")]
    cors_origin: Vec<String>,
    /// Directory of static files served outside the API routes.
    #[arg(long = "static", value_name = "DIR")]
    static_dir: Option<PathBuf>,
}

#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Data(String),
}

impl Failure {
    pub fn code(&self) -> i32 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Data(_) => 2,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Usage(m) | Failure::Data(m) => m,
        }
    }
}

impl From<tracefold_core::Error> for Failure {
    fn from(e: tracefold_core::Error) -> Self {
        if e.is_data_error() {
            Failure::Data(e.to_string())
        } else {
            Failure::Usage(e.to_string())
        }
    }
}

impl From<ClientError> for Failure {
    fn from(e: ClientError) -> Self {
        let mut msg = e.to_string();
        if let ClientError::Status { diagnostics, .. } = &e {
            for d in diagnostics {
                msg.push_str(&format!("\n  {d}"));
            }
        }
        Failure::Data(msg)
    }
}

type Outcome = Result<(), Failure>;

fn io_failure(path: &Path, e: std::io::Error) -> Failure {
    Failure::Data(format!("cannot write {}: {e}", path.display()))
}

fn emit(output: &Output, text: &str, stdout: &mut dyn Write) -> Outcome {
    match &output.out {
        Some(path) => std::fs::write(path, text).map_err(|e| io_failure(path, e)),
        None => stdout
            .write_all(text.as_bytes())
            .map_err(|e| Failure::Data(format!("cannot write output: {e}"))),
    }
}

fn read_text(path: &Path) -> Result<String, Failure> {
    std::fs::read_to_string(path).map_err(|e| Failure::Data(format!("cannot read {}: {e}", path.display())))
}

fn pretty(v: &impl serde::Serialize) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("value serializes");
    s.push('\n');
    s
}

fn stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

fn load_rules(path: Option<&Path>) -> Result<RuleSet, Failure> {
    Ok(match path {
        Some(p) => RuleSet::load(p)?,
        None => RuleSet::identity(),
    })
}

/// Validated actions text from a proposal file.
fn load_actions(path: &Path) -> Result<String, Failure> {
    let text = read_text(path)?;
    let parsed = parse_proposal(&text);
    if parsed.diagnostics.is_empty() {
        return Ok(text);
    }
    let mut msg = format!("invalid actions in {}", path.display());
    for d in &parsed.diagnostics {
        msg.push_str(&format!("\n  {d}"));
    }
    Err(Failure::Data(msg))
}

fn with_actions(rules: &RuleSet, actions: Option<&str>) -> RuleSet {
    match actions {
        Some(text) => apply_actions(rules, &parse_proposal(text).proposal.actions),
        None => rules.clone(),
    }
}

fn view_of(corpus: &TraceCorpus, rules: &RuleSet) -> Result<Vec<NormalizedExecution>, Failure> {
    Ok(Normalizer::new(rules)?.normalize_corpus(corpus)?)
}

/// One server session, deleted again when dropped.
struct Remote {
    rt: tokio::runtime::Runtime,
    client: TracefoldClient,
    session: String,
}

impl Remote {
    fn open(url: &str, corpus: Option<&str>, rules: &RuleSet) -> Result<Remote, Failure> {
        let rt = tokio::runtime::Runtime::new().map_err(|e| Failure::Data(format!("runtime: {e}")))?;
        let client = TracefoldClient::new(url);
        let created = rt.block_on(client.create_session(corpus, Some(rules)))?;
        Ok(Remote {
            rt,
            client,
            session: created.session_id,
        })
    }

    fn block<F: std::future::Future>(&self, f: F) -> F::Output {
        self.rt.block_on(f)
    }
}

impl Drop for Remote {
    fn drop(&mut self) {
        if let Err(e) = self.rt.block_on(self.client.delete_session(&self.session)) {
            log::warn!("could not delete session {}: {e}", self.session);
        }
    }
}

fn ingest(a: IngestArgs, stdout: &mut dyn Write) -> Outcome {
    let corpus = ingest_corpus(&a.traces)?;
    let text = match a.format {
        IngestFormat::Json => pretty(&corpus.summary()),
        IngestFormat::Jsonl => corpus_to_jsonl(&corpus),
    };
    emit(&a.output, &text, stdout)
}

fn graph(a: GraphArgs, stdout: &mut dyn Write) -> Outcome {
    if a.limit_nodes.is_some() && a.format == GraphFormat::Dot {
        return Err(Failure::Usage("--limit-nodes applies to JSON output only".into()));
    }
    let rules = load_rules(a.rules.as_deref())?;
    let text = if let Some(url) = &a.source.server {
        if a.mode != Mode::Merged {
            return Err(Failure::Usage("the server only builds merged graphs".into()));
        }
        let remote = Remote::open(url, a.source.corpus.as_deref(), &rules)?;
        let value = remote.block(remote.client.graph(&remote.session, a.limit_nodes))?;
        match a.format {
            GraphFormat::Json => pretty(&value),
            GraphFormat::Dot => to_dot(&from_json(&value.to_string())?),
        }
    } else {
        let corpus = ingest_corpus(a.source.traces()?)?;
        let g = build_from_normalized(&view_of(&corpus, &rules)?, a.mode.into())?;
        match (a.format, a.limit_nodes) {
            (GraphFormat::Json, Some(k)) => pretty(&truncated_json_value(&g, k)),
            (GraphFormat::Json, None) => to_json(&g),
            (GraphFormat::Dot, _) => to_dot(&g),
        }
    };
    emit(&a.output, &text, stdout)
}

fn stats(a: StatsArgs, stdout: &mut dyn Write) -> Outcome {
    let actions = a.actions.as_deref().map(load_actions).transpose()?;
    let mut rows: Vec<(String, GraphStats)> = Vec::new();
    if let Some(path) = &a.graph {
        rows.push((stem(path), graph_stats(&from_json(&read_text(path)?)?)));
    } else {
        let mut sets: Vec<(String, RuleSet)> = Vec::new();
        for path in &a.rules {
            sets.push((stem(path), RuleSet::load(path)?));
        }
        if sets.is_empty() {
            let label = match a.mode {
                Mode::Merged => "merged",
                Mode::Disjoint => "disjoint",
            };
            sets.push((label.to_string(), RuleSet::identity()));
        }
        if let Some(url) = &a.source.server {
            if a.base || a.mode != Mode::Merged {
                return Err(Failure::Usage(
                    "the server only builds merged graphs; drop --base/--mode".into(),
                ));
            }
            for (label, rules) in sets {
                let remote = Remote::open(url, a.source.corpus.as_deref(), &rules)?;
                let s = match &actions {
                    Some(text) => remote.block(remote.client.apply(&remote.session, text))?.stats_after,
                    None => remote.block(remote.client.stats(&remote.session))?,
                };
                rows.push((label, s));
            }
        } else {
            let corpus = ingest_corpus(a.source.traces()?)?;
            if a.base {
                let g = build_from_normalized(&view_of(&corpus, &RuleSet::identity())?, GraphMode::Disjoint)?;
                rows.push(("Base".into(), graph_stats(&g)));
            }
            for (label, rules) in sets {
                let rules = with_actions(&rules, actions.as_deref());
                let g = build_from_normalized(&view_of(&corpus, &rules)?, a.mode.into())?;
                rows.push((label, graph_stats(&g)));
            }
        }
    }
    let text = match (a.format, rows.as_slice()) {
        (StatsFormat::Table, _) => stats_table(&rows),
        (StatsFormat::Json, [(_, only)]) => stats_json(only),
        (StatsFormat::Json, _) => pretty(
            &rows
                .iter()
                .map(|(label, s)| json!({ "strategy": label, "stats": s }))
                .collect::<Vec<Value>>(),
        ),
    };
    emit(&a.output, &text, stdout)
}

fn render_curve(points: &[DuplicationPoint], format: CurveFormat) -> String {
    match format {
        CurveFormat::Csv => curve_csv(points),
        CurveFormat::Json => pretty(&points),
    }
}

fn curve(a: CurveArgs, stdout: &mut dyn Write) -> Outcome {
    let rules = load_rules(a.rules.as_deref())?;
    let points = if let Some(url) = &a.source.server {
        let remote = Remote::open(url, a.source.corpus.as_deref(), &rules)?;
        remote.block(remote.client.curve(&remote.session, a.max_step))?
    } else {
        let corpus = ingest_corpus(a.source.traces()?)?;
        let g = build_from_normalized(&view_of(&corpus, &rules)?, GraphMode::Merged)?;
        duplication_curve(&g, a.max_step.unwrap_or_else(|| max_depth(&g)))
    };
    emit(&a.output, &render_curve(&points, a.format), stdout)
}

fn extract(a: ExtractArgs, stdout: &mut dyn Write) -> Outcome {
    let rules = load_rules(a.rules.as_deref())?;
    let text = if let Some(url) = &a.source.server {
        let params = a.opts.params()?;
        let remote = Remote::open(url, a.source.corpus.as_deref(), &rules)?;
        remote.block(remote.client.extract(&remote.session, &params))?
    } else {
        let corpus = ingest_corpus(a.source.traces()?)?;
        let view = view_of(&corpus, &rules)?;
        let cfg = a.opts.config(view.len())?;
        metatools_to_json(&extract_from_view(&view, &cfg)?.tools)
    };
    emit(&a.output, &text, stdout)
}

fn estimate(a: EstimateArgs, stdout: &mut dyn Write) -> Outcome {
    let rules = load_rules(a.rules.as_deref())?;
    let report: SavingsReport = if let Some(url) = &a.source.server {
        let params = a.opts.params()?;
        let remote = Remote::open(url, a.source.corpus.as_deref(), &rules)?;
        let text = remote.block(remote.client.estimate(&remote.session, &params))?;
        serde_json::from_str(&text).map_err(|e| Failure::Data(format!("unexpected savings report: {e}")))?
    } else {
        let corpus = ingest_corpus(a.source.traces()?)?;
        let view = view_of(&corpus, &rules)?;
        let tools = match &a.tools {
            Some(path) => metatools_from_json(&read_text(path)?, &Normalizer::new(&rules)?)?,
            None => extract_from_view(&view, &a.opts.config(view.len())?)?.tools,
        };
        estimate_savings(&tools, &view)
    };
    let text = match a.format {
        SavingsFormat::Json => savings_json(&report),
        SavingsFormat::Table => savings_table(&report),
    };
    emit(&a.output, &text, stdout)
}

fn analyst_from(spec: &str) -> Result<Box<dyn Analyst>, Failure> {
    if spec == "stub" {
        return Ok(Box::new(StubAnalyst));
    }
    if spec == "http" {
        return Ok(Box::new(HttpAnalyst::from_env()?));
    }
    if let Some(path) = spec.strip_prefix("script:") {
        let text = read_text(Path::new(path))?;
        let replies: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
        return Ok(Box::new(ScriptedAnalyst::new(replies)));
    }
    Err(Failure::Usage(format!(
        "unknown analyst {spec:?}; expected stub, script:FILE or http"
    )))
}

fn run_loop_cmd(a: LoopArgs, stdout: &mut dyn Write) -> Outcome {
    let config = LoopConfig {
        max_iterations: a.iterations,
        sample_size: a.sample_size,
        stop_on_empty: !a.keep_going,
        seed: a.seed,
    };
    config.validate()?;
    let mut analyst = analyst_from(&a.analyst)?;
    let corpus = ingest_corpus(&a.traces)?;
    let initial = load_rules(a.rules.as_deref())?;
    let outcome = run_loop(&corpus, &initial, analyst.as_mut(), &config)?;
    // partial records are still written when the analyst fails
    emit(&a.output, &records_to_jsonl(&outcome.records), stdout)?;
    if let Some(path) = &a.rules_out {
        std::fs::write(path, outcome.rules.to_json() + "\n").map_err(|e| io_failure(path, e))?;
    }
    match outcome.error {
        Some(e) => Err(Failure::Data(format!(
            "{e} (after {} completed iterations)",
            outcome.records.len()
        ))),
        None => Ok(()),
    }
}

/// Names of the files `export` writes, in writing order.
pub const BUNDLE_FILES: [&str; 7] = [
    "graph.json",
    "graph.dot",
    "stats.json",
    "curve.csv",
    "metatools.json",
    "savings.json",
    "rules.json",
];

fn export(a: ExportArgs) -> Outcome {
    let corpus = ingest_corpus(&a.traces)?;
    let rules = load_rules(a.rules.as_deref())?;
    let view = view_of(&corpus, &rules)?;
    let cfg = a.opts.config(view.len())?;
    let g = build_from_normalized(&view, a.mode.into())?;
    let extraction = extract_from_view(&view, &cfg)?;
    let contents = [
        to_json(&g),
        to_dot(&g),
        stats_json(&graph_stats(&g)),
        curve_csv(&duplication_curve(&g, max_depth(&g))),
        metatools_to_json(&extraction.tools),
        savings_json(&estimate_savings(&extraction.tools, &view)),
        rules.to_json() + "\n",
    ];
    std::fs::create_dir_all(&a.out).map_err(|e| io_failure(&a.out, e))?;
    for (name, text) in BUNDLE_FILES.iter().zip(contents) {
        let path = a.out.join(name);
        std::fs::write(&path, text).map_err(|e| io_failure(&path, e))?;
        log::info!("wrote {}", path.display());
    }
    Ok(())
}

fn serve(a: ServeArgs) -> Outcome {
    let corpora = tracefold_server::load_corpora(&a.traces)?;
    let state = Arc::new(tracefold_server::AppState::new(corpora));
    let config = tracefold_server::ServerConfig {
        cors_origins: a.cors_origin,
        static_dir: a.static_dir,
    };
    let app = tracefold_server::router(state, &config)?;
    let rt = tokio::runtime::Runtime::new().map_err(|e| Failure::Data(format!("runtime: {e}")))?;
    rt.block_on(async {
        let listener = tokio::net::TcpListener::bind(a.addr).await?;
        eprintln!("listening on http://{}", listener.local_addr()?);
        tracefold_server::serve_on(listener, app).await
    })
    .map_err(|e| Failure::Data(format!("server on {}: {e}", a.addr)))
}

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .target(env_logger::Target::Stderr)
        .try_init();
}

/// Parses `args` (including the program name) and runs the command,
/// returning the process exit status.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind::{DisplayHelp, DisplayVersion};
            return if matches!(e.kind(), DisplayHelp | DisplayVersion) {
                let _ = write!(stdout, "{e}");
                0
            } else {
                let _ = write!(stderr, "{e}");
                1
            };
        }
    };
    init_logging(cli.verbose);
    let result = match cli.command {
        Command::Ingest(a) => ingest(a, stdout),
        Command::Graph(a) => graph(a, stdout),
        Command::Stats(a) => stats(a, stdout),
        Command::Curve(a) => curve(a, stdout),
        Command::Extract(a) => extract(a, stdout),
        Command::Estimate(a) => estimate(a, stdout),
        Command::Loop(a) => run_loop_cmd(a, stdout),
        Command::Export(a) => export(a),
        Command::Serve(a) => serve(a),
    };
    match result {
        Ok(()) => 0,
        Err(f) => {
            let _ = writeln!(stderr, "error: {}", f.message());
            f.code()
        }
    }
}
