use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use erarag::bench::{run_bench, Baseline, Protocol};
use erarag::embed::{EmbedderConfig, EmbedderKind};
use erarag::persist::{encode_node, load_snapshot, load_unverified, save_snapshot};
use erarag::remote::API_KEY_ENV;
use erarag::retrieve::{answer, generator_for, retrieve, Mode, QueryConfig};
use erarag::synth::{synthetic_corpus, SynthConfig};
use erarag::update::{affected_closure, insert_chunks, UpdateReport};
use erarag::verify::verify_graph;
use erarag::{
    build_graph, layer_stats, read_corpus_file, BuildConfig, CostLedger, Error, LayeredGraph, LlmConfig, Providers,
    ReportFormat, SizeBounds, StopRule,
};

#[derive(Parser)]
#[command(name = "erarag", version, about = "Incremental hierarchical retrieval index")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a graph from a JSONL corpus and write a snapshot.
    Build(BuildArgs),
    /// Insert new documents into an existing snapshot.
    Insert(InsertArgs),
    /// Retrieve context for a question.
    Query(QueryArgs),
    /// Print per-layer statistics.
    Stats(GraphArg),
    /// Check every structural invariant of a snapshot.
    Verify(GraphArg),
    /// Compare incremental updates with rebuilding from scratch.
    Bench(BenchArgs),
    /// Write a seeded synthetic corpus as JSONL.
    Synth(SynthArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum ProviderKind {
    Mock,
    Remote,
}

#[derive(Clone, Copy, ValueEnum)]
enum StopArg {
    Smax,
    Dim,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Collapsed,
    Detailed,
    Summarized,
}

#[derive(Clone, Copy, ValueEnum)]
enum ProtocolArg {
    HalfPlusTen,
    OneEntry,
}

#[derive(Clone, Copy, ValueEnum)]
enum BaselineArg {
    Rebuild,
    Incremental,
    Both,
}

#[derive(Args)]
struct ConfigArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 8)]
    hyperplanes: usize,
    #[arg(long, default_value_t = 4)]
    smin: usize,
    #[arg(long, default_value_t = 8)]
    smax: usize,
    #[arg(long, default_value_t = 128)]
    chunk_tokens: usize,
    #[arg(long, default_value_t = 96)]
    summary_tokens: usize,
    #[arg(long, default_value_t = 5)]
    max_depth: usize,
    #[arg(long, value_enum, default_value = "mock")]
    embedder: ProviderKind,
    #[arg(long, value_enum, default_value = "mock")]
    summarizer: ProviderKind,
    #[arg(long, default_value_t = 64)]
    dim: usize,
    #[arg(long, value_enum, default_value = "smax")]
    stop_rule: StopArg,
    /// Endpoint root for remote providers; defaults to ERA_API_BASE.
    #[arg(long, default_value = "")]
    endpoint: String,
    #[arg(long, default_value = "")]
    embed_model: String,
    #[arg(long, default_value = "")]
    llm_model: String,
}

impl ConfigArgs {
    fn config(&self) -> erarag::Result<BuildConfig> {
        let embedder = match self.embedder {
            ProviderKind::Mock => EmbedderConfig::mock(self.seed, self.dim),
            ProviderKind::Remote => EmbedderConfig {
                kind: EmbedderKind::Remote {
                    endpoint: self.endpoint.clone(),
                    model: self.embed_model.clone(),
                    api_key_env: API_KEY_ENV.into(),
                },
                dim: self.dim,
            },
        };
        let summarizer = match self.summarizer {
            ProviderKind::Mock => LlmConfig::Mock,
            ProviderKind::Remote => LlmConfig::Remote {
                endpoint: self.endpoint.clone(),
                model: self.llm_model.clone(),
                api_key_env: API_KEY_ENV.into(),
            },
        };
        let config = BuildConfig {
            bounds: SizeBounds::new(self.smin, self.smax)?,
            hyperplanes: self.hyperplanes,
            chunk_tokens: self.chunk_tokens,
            summary_tokens: self.summary_tokens,
            max_depth: self.max_depth,
            seed: self.seed,
            stop_rule: match self.stop_rule {
                StopArg::Smax => StopRule::Smax,
                StopArg::Dim => StopRule::Dim,
            },
            embedder,
            summarizer,
        };
        config.validate()?;
        Ok(config)
    }
}

#[derive(Args)]
struct BuildArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    config: ConfigArgs,
    /// Write the cost ledger CSV here instead of stdout.
    #[arg(long)]
    metrics: Option<PathBuf>,
    /// Replace an existing snapshot.
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct InsertArgs {
    #[arg(long)]
    graph: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Check that every node outside the affected closure is byte-identical.
    #[arg(long)]
    verify_locality: bool,
    #[arg(long)]
    metrics: Option<PathBuf>,
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct QueryArgs {
    #[arg(long)]
    graph: PathBuf,
    #[arg(long)]
    q: String,
    #[arg(long, default_value_t = 5, value_parser = clap::value_parser!(u64).range(1..))]
    k: u64,
    #[arg(long, default_value_t = 1024, value_parser = clap::value_parser!(u64).range(1..))]
    budget: u64,
    #[arg(long, value_enum, default_value = "collapsed")]
    mode: ModeArg,
    #[arg(long)]
    p: Option<f64>,
    /// Generate an answer from the retrieved context.
    #[arg(long)]
    answer: bool,
    #[arg(long)]
    metrics: Option<PathBuf>,
}

#[derive(Args)]
struct GraphArg {
    #[arg(long)]
    graph: PathBuf,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long, value_enum)]
    protocol: ProtocolArg,
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long, value_enum, default_value = "both")]
    baseline: BaselineArg,
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 250)]
    docs: usize,
    #[arg(long, default_value_t = 4)]
    chunks_per_doc: usize,
    #[arg(long, default_value_t = 128)]
    chunk_tokens: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

/// Failure with the exit code it maps to.
struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Config(_) | Error::Usage(_) => 2,
            _ => 1,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e).into()
    }
}

fn usage(message: impl Into<String>) -> Failure {
    Failure {
        code: 2,
        message: message.into(),
    }
}

type CmdResult = Result<(), Failure>;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Build(a) => cmd_build(a),
        Command::Insert(a) => cmd_insert(a),
        Command::Query(a) => cmd_query(a),
        Command::Stats(a) => cmd_stats(a),
        Command::Verify(a) => cmd_verify(a),
        Command::Bench(a) => cmd_bench(a),
        Command::Synth(a) => cmd_synth(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message.replace('\n', " "));
            ExitCode::from(f.code)
        }
    }
}

fn require_path(p: &Path, flag: &str) -> CmdResult {
    if p.as_os_str().is_empty() {
        return Err(usage(format!("--{flag} must not be empty")));
    }
    Ok(())
}

/// Exclusive advisory lock held for the life of the returned handle.
fn lock(path: &Path) -> Result<File, Failure> {
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".lock");
    let f = OpenOptions::new()
        .create(true)
        .truncate(false)
        .write(true)
        .open(path.with_file_name(name))?;
    f.lock()?;
    Ok(f)
}

fn cache_path(snapshot: &Path) -> PathBuf {
    let mut name = snapshot.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".embcache");
    snapshot.with_file_name(name)
}

fn emit_metrics(ledger: &CostLedger, path: Option<&Path>) -> CmdResult {
    let csv = ledger.report_detailed(ReportFormat::Csv);
    match path {
        Some(p) => fs::write(p, csv)?,
        None => print!("{csv}"),
    }
    Ok(())
}

fn cmd_build(a: BuildArgs) -> CmdResult {
    require_path(&a.corpus, "corpus")?;
    require_path(&a.out, "out")?;
    let config = a.config.config()?;
    let docs = read_corpus_file(&a.corpus)?;
    let _lock = lock(&a.out)?;
    if a.out.exists() && !a.force {
        return Err(Error::Exists(a.out.clone()).into());
    }
    let providers = Providers::from_config(&config, Some(&cache_path(&a.out)))?;
    let ledger = CostLedger::new();
    let graph = build_graph(&docs, config, &providers, &ledger)?;
    save_snapshot(&graph, &a.out, a.force)?;
    eprintln!("layers: {}", join(&graph.layer_sizes()));
    emit_metrics(&ledger, a.metrics.as_deref())
}

fn join(xs: &[usize]) -> String {
    xs.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ")
}

fn print_report(r: &UpdateReport) {
    println!("inserted chunks: {}", r.inserted_chunk_ids.len());
    println!("layer,affected_buckets,segments_resummarized,nodes_deleted,nodes_created");
    for (l, c) in r.layers.iter().enumerate() {
        println!(
            "{l},{},{},{},{}",
            c.affected_buckets, c.segments_resummarized, c.nodes_deleted, c.nodes_created
        );
    }
    println!("resummarized: {}", r.total_resummarized());
    println!(
        "llm_calls: {} prompt_tokens: {} completion_tokens: {} embed_calls: {}",
        r.llm_calls, r.usage.prompt_tokens, r.usage.completion_tokens, r.embed_calls
    );
    println!("new layer: {}", r.new_layer_created);
}

/// Byte-compares every node outside the affected closure before and after.
fn check_locality(before: &LayeredGraph, after: &LayeredGraph, report: &UpdateReport) -> CmdResult {
    let seeds: Vec<_> = report.touched.iter().copied().collect();
    let closure = affected_closure(after, &seeds)?;
    let old: BTreeMap<_, _> = before.nodes().map(|n| (n.id, encode_node(n))).collect();
    let (mut same, mut bad) = (0usize, 0usize);
    for (id, bytes) in &old {
        if closure.contains(id) || report.deleted.contains(id) {
            continue;
        }
        match after.node(*id) {
            Some(n) if encode_node(n) == *bytes => same += 1,
            _ => bad += 1,
        }
    }
    if bad > 0 {
        return Err(Failure {
            code: 1,
            message: format!("locality violated: {bad} node(s) outside the affected closure changed"),
        });
    }
    println!("locality: ok ({same} unaffected nodes byte-identical)");
    Ok(())
}

fn cmd_insert(a: InsertArgs) -> CmdResult {
    require_path(&a.graph, "graph")?;
    require_path(&a.out, "out")?;
    let _lock = lock(&a.out)?;
    if a.out.exists() && !a.force {
        return Err(Error::Exists(a.out.clone()).into());
    }
    let mut graph = load_snapshot(&a.graph)?;
    let docs = read_corpus_file(&a.corpus)?;
    if docs.is_empty() {
        return Err(Error::Input("corpus has no documents to insert".into()).into());
    }
    let providers = Providers::from_config(graph.config(), Some(&cache_path(&a.graph)))?;
    let ledger = CostLedger::new();
    let before = a.verify_locality.then(|| graph.clone());
    let report = insert_chunks(&mut graph, &docs, &providers, &ledger)?;
    print_report(&report);
    if let Some(before) = before {
        check_locality(&before, &graph, &report)?;
    }
    save_snapshot(&graph, &a.out, a.force)?;
    eprintln!("layers: {}", join(&graph.layer_sizes()));
    match &a.metrics {
        Some(p) => emit_metrics(&ledger, Some(p)),
        None => Ok(()),
    }
}

fn cmd_query(a: QueryArgs) -> CmdResult {
    require_path(&a.graph, "graph")?;
    let mode = match a.mode {
        ModeArg::Collapsed => Mode::Collapsed,
        ModeArg::Detailed => Mode::Detailed,
        ModeArg::Summarized => Mode::Summarized,
    };
    let cfg = match (mode, a.p) {
        (Mode::Collapsed, Some(_)) => return Err(usage("--p requires --mode detailed or summarized")),
        (Mode::Collapsed, None) => QueryConfig::collapsed(a.k as usize, a.budget as usize),
        (_, None) => return Err(usage("--mode detailed/summarized requires --p")),
        (m, Some(p)) if (0.0..=1.0).contains(&p) => QueryConfig::biased(m, a.k as usize, a.budget as usize, p),
        (_, Some(p)) => return Err(usage(format!("--p must lie in [0, 1] (got {p})"))),
    };
    let graph = load_snapshot(&a.graph)?;
    let providers = Providers::from_config(graph.config(), Some(&cache_path(&a.graph)))?;
    let ledger = CostLedger::new();
    let result = if a.answer {
        let generator = generator_for(&graph.config().summarizer)?;
        answer(
            &graph,
            &a.q,
            &cfg,
            providers.embedder.as_ref(),
            generator.as_ref(),
            &ledger,
        )?
    } else {
        retrieve(&graph, &a.q, &cfg, providers.embedder.as_ref(), &ledger)?
    };
    println!("rank,id,layer,score");
    for (i, h) in result.hits.iter().enumerate() {
        println!("{},{},{},{:.6}", i + 1, h.id, h.layer, h.score);
    }
    println!("--- context ---");
    println!("{}", result.context);
    if a.answer {
        println!("--- answer ---");
        match (&result.answer, &result.answer_error) {
            (Some(text), _) => println!("{text}"),
            (None, Some(err)) => {
                return Err(Failure {
                    code: 1,
                    message: format!("answer generation failed: {err}"),
                })
            }
            (None, None) => {}
        }
    }
    if let Some(p) = &a.metrics {
        emit_metrics(&ledger, Some(p))?;
    }
    Ok(())
}

fn cmd_stats(a: GraphArg) -> CmdResult {
    require_path(&a.graph, "graph")?;
    let graph = load_snapshot(&a.graph)?;
    println!("layer,nodes,mean_segment_size,tokens");
    for s in layer_stats(&graph)? {
        let mean = s.mean_segment_size.map(|m| format!("{m:.3}")).unwrap_or_default();
        println!("{},{},{},{}", s.layer, s.nodes, mean, s.tokens);
    }
    Ok(())
}

fn cmd_verify(a: GraphArg) -> CmdResult {
    require_path(&a.graph, "graph")?;
    let graph = load_unverified(&a.graph)?;
    let violations = verify_graph(&graph);
    if violations.is_empty() {
        println!("ok: {} nodes in {} layers", graph.node_count(), graph.layers().len());
        return Ok(());
    }
    for v in &violations {
        println!("violation: {v}");
    }
    Err(Failure {
        code: 1,
        message: format!(
            "{} invariant violation(s), first: {}",
            violations.len(),
            violations[0].invariant
        ),
    })
}

fn cmd_bench(a: BenchArgs) -> CmdResult {
    require_path(&a.corpus, "corpus")?;
    let config = a.config.config()?;
    let docs = read_corpus_file(&a.corpus)?;
    let providers = Providers::from_config(&config, None)?;
    let protocol = match a.protocol {
        ProtocolArg::HalfPlusTen => Protocol::HalfPlusTen,
        ProtocolArg::OneEntry => Protocol::OneEntry,
    };
    let baseline = match a.baseline {
        BaselineArg::Rebuild => Baseline::Rebuild,
        BaselineArg::Incremental => Baseline::Incremental,
        BaselineArg::Both => Baseline::Both,
    };
    let result = run_bench(&docs, protocol, baseline, &config, &providers)?;
    if protocol == Protocol::OneEntry {
        if let Some(r) = result.updates.first() {
            print_report(r);
        }
    }
    let csv = result.to_csv();
    match &a.out {
        Some(p) => fs::write(p, csv)?,
        None => print!("{csv}"),
    }
    Ok(())
}

fn cmd_synth(a: SynthArgs) -> CmdResult {
    require_path(&a.out, "out")?;
    let corpus = synthetic_corpus(&SynthConfig {
        seed: a.seed,
        docs: a.docs,
        chunks_per_doc: a.chunks_per_doc,
        chunk_tokens: a.chunk_tokens,
        ..SynthConfig::default()
    })?;
    let mut f = std::io::BufWriter::new(File::create(&a.out)?);
    for d in &corpus.docs {
        writeln!(
            f,
            "{}",
            serde_json::to_string(d).map_err(|e| Error::Input(e.to_string()))?
        )?;
    }
    f.flush()?;
    Ok(())
}
