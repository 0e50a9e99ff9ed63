//! `hfaug` command-line interface.

use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use hfaug::augment::{augment_matrix, AugmentMode, AugmentationConfig};
use hfaug::embed::{self, SkipGramConfig, WalkConfig, WalkStrategy};
use hfaug::features::{all_node_features, feature_matrix};
use hfaug::graph::io::{
    load_dataset, parse_labels, write_accounts_csv, write_edges_csv, write_labels_csv,
    DatasetPaths, IngestReport, ParseOptions, RecordFormat,
};
use hfaug::graph::{AccountId, AccountKind, BuildOptions, GraphStats, HetGraph, Label};
use hfaug::matrix::FeatureMatrix;
use hfaug::metapath::{compile_pattern, match_many, InstanceRecord, MatchLimits, MetapathPattern};
use hfaug::mlkit::{self, CvConfig, CvReport, Dataset, Hyper, ModelKind};
use hfaug::pipeline::{run_pipeline, PipelineConfig};
use hfaug::seed::derive_seed;
use hfaug::synth::{generate_synthetic, SyntheticSpec};

/// Like `print!`, but a closed pipe becomes an error instead of a panic.
macro_rules! out {
    ($($t:tt)*) => { write!(io::stdout().lock(), $($t)*)? };
}

macro_rules! outln {
    ($($t:tt)*) => { writeln!(io::stdout().lock(), $($t)*)? };
}

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_INTERNAL: u8 = 3;

#[derive(Parser)]
#[command(name = "hfaug", version, about = "Metapath feature augmentation for account classification")]
struct Cli {
    /// Global random seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (defaults to the number of cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Only print errors.
    #[arg(long, short, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Load and validate a dataset, report graph statistics.
    Ingest(IngestArgs),
    /// Compute the 15 manual transaction features.
    Features(FeaturesArgs),
    /// Metapath operations.
    Metapath {
        #[command(subcommand)]
        command: MetapathCommand,
    },
    /// Update feature rows with metapath neighbourhood sums.
    Augment(AugmentArgs),
    /// Random-walk embeddings of the transaction graph.
    Embed(EmbedArgs),
    /// Repeated stratified cross-validation of a linear classifier.
    Evaluate(EvaluateArgs),
    /// Relative gain between two cross-validation reports.
    Compare(CompareArgs),
    /// Generate a synthetic dataset with planted schemes.
    Synth(SynthArgs),
    /// Run every stage from one config file.
    Pipeline(PipelineArgs),
}

#[derive(Subcommand)]
enum MetapathCommand {
    /// Enumerate instances of a pattern, one JSON object per line.
    Match(MatchArgs),
}

#[derive(Args)]
struct GraphArgs {
    #[arg(long)]
    accounts: PathBuf,
    #[arg(long)]
    edges: PathBuf,
    #[arg(long)]
    labels: Option<PathBuf>,
    /// Record format; inferred from file extensions by default.
    #[arg(long, value_enum)]
    format: Option<FormatArg>,
    /// Skip malformed rows instead of failing.
    #[arg(long)]
    lenient: bool,
    /// Drop call edges into EOAs instead of failing.
    #[arg(long)]
    drop_call_into_eoa: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Csv,
    Jsonl,
}

impl GraphArgs {
    fn load(&self) -> Result<(HetGraph, IngestReport)> {
        let paths = DatasetPaths {
            accounts: &self.accounts,
            edges: &self.edges,
            labels: self.labels.as_deref(),
        };
        let format = self.format.map(|f| match f {
            FormatArg::Csv => RecordFormat::Csv,
            FormatArg::Jsonl => RecordFormat::Jsonl,
        });
        let (g, report) = load_dataset(
            &paths,
            format,
            ParseOptions {
                lenient: self.lenient,
            },
            BuildOptions {
                drop_call_into_eoa: self.drop_call_into_eoa,
            },
        )?;
        for e in &report.skipped {
            log::warn!("skipped: {e}");
        }
        Ok((g, report))
    }
}

#[derive(Args)]
struct IngestArgs {
    #[command(flatten)]
    graph: GraphArgs,
    /// Require the reference dataset's node, edge and label counts.
    #[arg(long)]
    expect_reference: bool,
    /// Write normalized accounts/edges/labels CSVs and stats.json here.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Args)]
struct FeaturesArgs {
    #[command(flatten)]
    graph: GraphArgs,
    /// File with one address per line; all accounts when omitted.
    #[arg(long)]
    nodes: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct MatchArgs {
    #[command(flatten)]
    graph: GraphArgs,
    /// `P1`, `P2` or an expression such as `EOA -call-> CA_t -trans-> EOA`.
    #[arg(long)]
    pattern: String,
    #[arg(long, group = "starts")]
    start: Vec<String>,
    #[arg(long, group = "starts")]
    all_ca: bool,
    #[arg(long, group = "starts")]
    all_eoa: bool,
    /// Pattern position of the start nodes. Defaults to the target position
    /// when its kind fits the start nodes, else the first position that does.
    #[arg(long)]
    anchor: Option<usize>,
    #[arg(long, default_value_t = 1000)]
    max_instances: usize,
    /// Output file; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    TargetCa,
    HeadNode,
}

#[derive(Clone, Copy, ValueEnum)]
enum AggArg {
    Sum,
    Mean,
}

#[derive(Args)]
struct AugmentArgs {
    #[command(flatten)]
    graph: GraphArgs,
    #[arg(long, value_enum, default_value = "target-ca")]
    mode: ModeArg,
    #[arg(long, value_delimiter = ',', default_value = "P1,P2")]
    patterns: Vec<String>,
    #[arg(long)]
    features: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, overrides_with = "no_dedupe")]
    dedupe: bool,
    #[arg(long)]
    no_dedupe: bool,
    #[arg(long, value_enum, default_value = "sum")]
    agg: AggArg,
    #[arg(long, default_value_t = 1000)]
    max_instances: usize,
    /// File with one address per line; every compatible row when omitted.
    #[arg(long)]
    targets: Option<PathBuf>,
    /// Diagnostics path; defaults to `<out>.diagnostics.json`.
    #[arg(long)]
    diagnostics: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum StrategyArg {
    Deepwalk,
    Node2vec,
}

#[derive(Args)]
struct EmbedArgs {
    #[command(flatten)]
    graph: GraphArgs,
    #[arg(long, value_enum, default_value = "deepwalk")]
    strategy: StrategyArg,
    #[arg(long, default_value_t = 1.0)]
    p: f64,
    #[arg(long, default_value_t = 1.0)]
    q: f64,
    #[arg(long, default_value_t = 5)]
    walks: usize,
    #[arg(long, default_value_t = 50)]
    length: usize,
    #[arg(long, default_value_t = 128)]
    dim: usize,
    #[arg(long, default_value_t = 10)]
    window: usize,
    #[arg(long, default_value_t = 5)]
    negatives: usize,
    #[arg(long, default_value_t = 5)]
    epochs: usize,
    #[arg(long, default_value_t = 0.025)]
    lr: f64,
    /// Skip-gram workers; 1 is reproducible.
    #[arg(long, default_value_t = 1)]
    workers: usize,
    /// Walk edges in both directions.
    #[arg(long)]
    undirected: bool,
    /// L2-normalize embedding rows.
    #[arg(long)]
    normalize: bool,
    /// Dump the walk corpus, one walk per line.
    #[arg(long)]
    corpus_out: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    features: PathBuf,
    /// `address,label` file; every listed account is a sample.
    #[arg(long)]
    labels: PathBuf,
    #[arg(long, default_value = "lr")]
    model: String,
    #[arg(long, default_value_t = 5)]
    k: usize,
    #[arg(long, default_value_t = 10)]
    repeats: usize,
    #[arg(long, default_value_t = 1e-4)]
    l2: f64,
    #[arg(long, default_value_t = 200)]
    epochs: usize,
    #[arg(long, default_value_t = 0.1)]
    lr: f64,
    #[arg(long)]
    no_standardize: bool,
    /// JSON report path; only the table is printed when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CompareArgs {
    #[arg(long)]
    raw: PathBuf,
    #[arg(long)]
    aug: PathBuf,
    /// Feature family shown in the table.
    #[arg(long, default_value = "features")]
    name: String,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 50)]
    n_ponzi: usize,
    #[arg(long, default_value_t = 500)]
    n_background: usize,
    #[arg(long, default_value_t = 8)]
    investors: usize,
    #[arg(long, default_value_t = 0.6)]
    payback: f64,
    #[arg(long, default_value_t = 2000)]
    noise_edges: usize,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct PipelineArgs {
    #[arg(long)]
    config: PathBuf,
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(f))
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

fn read_matrix(path: &Path) -> Result<FeatureMatrix> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    FeatureMatrix::read_csv(BufReader::new(f)).with_context(|| format!("reading {}", path.display()))
}

fn write_matrix(path: &Path, m: &FeatureMatrix) -> Result<()> {
    let mut w = create(path)?;
    m.write_csv(&mut w)?;
    w.flush()?;
    Ok(())
}

/// One address per non-empty line.
fn read_id_list(path: &Path) -> Result<Vec<AccountId>> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut ids = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        ids.push(AccountId::new(line).with_context(|| format!("{}:{}", path.display(), i + 1))?);
    }
    Ok(ids)
}

fn ingest(args: &IngestArgs) -> Result<()> {
    let (g, report) = args.graph.load()?;
    let stats = g.stats();
    if args.expect_reference {
        let diffs = stats.mismatches(&GraphStats::REFERENCE_DATASET);
        if !diffs.is_empty() {
            let text: Vec<String> = diffs
                .iter()
                .map(|(n, got, want)| format!("{n}: found {got}, expected {want}"))
                .collect();
            bail!("dataset does not match the reference counts ({})", text.join("; "));
        }
    }
    let summary = serde_json::json!({ "stats": stats, "ingest": report });
    if let Some(dir) = &args.out_dir {
        write_accounts_csv(create(&dir.join("accounts.csv"))?, g.accounts())?;
        write_edges_csv(create(&dir.join("edges.csv"))?, g.interaction_edges())?;
        write_labels_csv(create(&dir.join("labels.csv"))?, g.labels().iter())?;
        write_json(&dir.join("stats.json"), &summary)?;
    }
    outln!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(())
}

fn features(args: &FeaturesArgs) -> Result<()> {
    let (g, _) = args.graph.load()?;
    let hom = g.project_hom();
    let m = match &args.nodes {
        Some(path) => feature_matrix(&hom, &read_id_list(path)?)?,
        None => all_node_features(&hom),
    };
    write_matrix(&args.out, &m)?;
    log::info!("wrote {} rows to {}", m.rows(), args.out.display());
    Ok(())
}

fn metapath_match(args: &MatchArgs) -> Result<()> {
    let (g, _) = args.graph.load()?;
    let p = compile_pattern(&args.pattern)?;
    let starts: Vec<_> = if args.all_ca || args.all_eoa {
        let kind = if args.all_ca { AccountKind::Ca } else { AccountKind::Eoa };
        g.nodes_of_kind(kind).collect()
    } else if !args.start.is_empty() {
        args.start
            .iter()
            .map(|s| Ok(g.nodes().require(&AccountId::new(s)?)?))
            .collect::<Result<_>>()?
    } else {
        bail!("give --start, --all-ca or --all-eoa");
    };
    let anchor = match args.anchor {
        Some(a) => a,
        None => {
            let kind = starts.first().map(|v| g.kind(*v)).unwrap_or(p.head_kind);
            default_anchor(&p, kind)
        }
    };
    let limits = MatchLimits {
        max_instances: args.max_instances,
    };
    let outcomes = match_many(&g, &starts, &p, anchor, limits);
    let mut out: Box<dyn Write> = match &args.out {
        Some(path) => Box::new(create(path)?),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    };
    let mut truncated = 0usize;
    for (v, outcome) in starts.iter().zip(outcomes) {
        let outcome = match outcome {
            Ok(o) => o,
            // bulk selections may include nodes of the wrong kind for the anchor
            Err(e) if args.all_ca || args.all_eoa => {
                log::debug!("{}: {e}", g.nodes().id(*v));
                continue;
            }
            Err(e) => return Err(e.into()),
        };
        if outcome.truncated() {
            truncated += 1;
            log::debug!(
                "{}: {} instances beyond the limit were dropped",
                g.nodes().id(*v),
                outcome.overflow()
            );
        }
        for inst in &outcome.instances {
            serde_json::to_writer(&mut out, &InstanceRecord::new(&g, *v, &p, inst))?;
            out.write_all(b"\n")?;
        }
    }
    out.flush()?;
    if truncated > 0 {
        log::warn!("{truncated} start nodes hit the instance limit of {}", args.max_instances);
    }
    Ok(())
}

fn default_anchor(p: &MetapathPattern, kind: AccountKind) -> usize {
    match p.target_position() {
        Some(t) if p.kind_at(t) == kind => t,
        _ => (0..p.positions()).find(|i| p.kind_at(*i) == kind).unwrap_or(0),
    }
}

fn augment(args: &AugmentArgs) -> Result<()> {
    let (g, _) = args.graph.load()?;
    let feats = read_matrix(&args.features)?;
    let patterns = args
        .patterns
        .iter()
        .map(|p| compile_pattern(p).with_context(|| format!("pattern `{p}`")))
        .collect::<Result<Vec<_>>>()?;
    let mode = match args.mode {
        ModeArg::TargetCa => AugmentMode::TargetCa,
        ModeArg::HeadNode => AugmentMode::HeadNode,
    };
    let cfg = AugmentationConfig {
        mode,
        patterns,
        limits: MatchLimits {
            max_instances: args.max_instances,
        },
        dedupe: !args.no_dedupe,
        aggregator: match args.agg {
            AggArg::Sum => hfaug::augment::Aggregator::Sum,
            AggArg::Mean => hfaug::augment::Aggregator::Mean,
        },
    };
    let targets = match &args.targets {
        Some(path) => read_id_list(path)?,
        None => feats
            .ids()
            .iter()
            .filter(|id| {
                mode == AugmentMode::HeadNode
                    || g.nodes().lookup(id).is_some_and(|v| g.kind(v) == AccountKind::Ca)
            })
            .cloned()
            .collect(),
    };
    let (out, report) = augment_matrix(&g, &feats, &targets, &cfg)?;
    write_matrix(&args.out, &out)?;
    let diag_path = args.diagnostics.clone().unwrap_or_else(|| {
        let mut p = args.out.clone().into_os_string();
        p.push(".diagnostics.json");
        PathBuf::from(p)
    });
    write_json(&diag_path, &report)?;
    log::info!(
        "updated {} rows ({} without instances, {} truncated)",
        report.targets,
        report.unmatched_targets,
        report.truncated_targets
    );
    Ok(())
}

fn embed_cmd(args: &EmbedArgs, seed: u64) -> Result<()> {
    let (g, _) = args.graph.load()?;
    let hom = g.project_hom();
    let walk = WalkConfig {
        walks_per_node: args.walks,
        walk_length: args.length,
        strategy: match args.strategy {
            StrategyArg::Deepwalk => WalkStrategy::Uniform,
            StrategyArg::Node2vec => WalkStrategy::Node2Vec {
                p: args.p,
                q: args.q,
            },
        },
        seed: derive_seed(seed, "walks"),
        undirected: args.undirected,
    };
    let sg = SkipGramConfig {
        dim: args.dim,
        window: args.window,
        negatives: args.negatives,
        epochs: args.epochs,
        learning_rate: args.lr,
        seed: derive_seed(seed, "skipgram"),
        workers: args.workers,
        normalize: args.normalize,
    };
    sg.validate()?;
    let corpus = embed::generate_walks(&hom, &walk)?;
    if let Some(path) = &args.corpus_out {
        let mut w = create(path)?;
        corpus.write_text(&mut w)?;
        w.flush()?;
    }
    let emb = embed::train_skipgram(&corpus, &sg)?;
    if !emb.absent.is_empty() {
        log::warn!("{} nodes never appear in a walk; their rows are zero", emb.absent.len());
    }
    log::info!("final skip-gram loss {:.4}", emb.final_loss());
    write_matrix(&args.out, &emb.matrix)?;
    Ok(())
}

fn evaluate(args: &EvaluateArgs, seed: u64) -> Result<()> {
    let feats = read_matrix(&args.features)?;
    let f = File::open(&args.labels).with_context(|| format!("opening {}", args.labels.display()))?;
    let labels = parse_labels(
        BufReader::new(f),
        RecordFormat::from_path(&args.labels),
        ParseOptions::default(),
    )?;
    let samples: Vec<(AccountId, u8)> = labels
        .rows
        .into_iter()
        .map(|(id, l)| (id, u8::from(l == Label::Ponzi)))
        .collect();
    let model: ModelKind = args.model.parse().map_err(anyhow::Error::msg)?;
    let ds = Dataset::from_samples(&feats, &samples)?;
    let hyper = Hyper {
        l2: args.l2,
        epochs: args.epochs,
        learning_rate: args.lr,
        batch_size: None,
        seed: derive_seed(seed, "fit"),
    };
    let cv = CvConfig {
        k: args.k,
        repeats: args.repeats,
        seed: derive_seed(seed, "cv"),
        standardize: !args.no_standardize,
    };
    let report = mlkit::cross_validate(&ds, model, &hyper, &cv)?;
    if let Some(out) = &args.out {
        write_json(out, &report)?;
    }
    outln!(
        "{:<6} {:>8} {:>9} {:>9} {:>7}",
        "model", "samples", "mean F1", "std", "folds"
    );
    outln!(
        "{:<6} {:>8} {:>9.4} {:>9.4} {:>7}",
        model.short(),
        report.samples,
        report.mean,
        report.std,
        report.per_fold_scores.len()
    );
    Ok(())
}

fn read_report(path: &Path) -> Result<CvReport> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    serde_json::from_reader(BufReader::new(f)).with_context(|| format!("reading {}", path.display()))
}

fn compare(args: &CompareArgs) -> Result<()> {
    let raw = read_report(&args.raw)?;
    let aug = read_report(&args.aug)?;
    if raw.model != aug.model {
        log::warn!("comparing different models: {} vs {}", raw.model, aug.model);
    }
    let row = mlkit::compare_reports(&args.name, &raw, &aug)?;
    if let Some(out) = &args.out {
        write_json(out, &[&row])?;
    }
    out!("{}", mlkit::render_gain_table(std::slice::from_ref(&row)));
    Ok(())
}

fn synth(args: &SynthArgs, seed: u64) -> Result<()> {
    let spec = SyntheticSpec {
        n_ponzi: args.n_ponzi,
        n_background: args.n_background,
        investors_per_ponzi: args.investors,
        payback_fraction: args.payback,
        noise_edges: args.noise_edges,
        seed,
    };
    let data = generate_synthetic(&spec)?;
    let files = data.write_to_dir(&args.out_dir)?;
    log::info!(
        "wrote {} accounts and {} edges to {}",
        data.accounts.len(),
        data.edges.len(),
        args.out_dir.display()
    );
    outln!("{}", files.accounts.display());
    outln!("{}", files.edges.display());
    outln!("{}", files.labels.display());
    Ok(())
}

fn pipeline(args: &PipelineArgs, seed: Option<u64>) -> Result<()> {
    let mut cfg = PipelineConfig::load(&args.config)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let summary = run_pipeline(&cfg)?;
    out!("{}", mlkit::render_gain_table(&summary.gains));
    log::info!(
        "{} artifacts in {}",
        summary.artifacts.len(),
        summary.output_dir.display()
    );
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    let seed = cli.seed.unwrap_or(0);
    match &cli.command {
        Command::Ingest(a) => ingest(a),
        Command::Features(a) => features(a),
        Command::Metapath {
            command: MetapathCommand::Match(a),
        } => metapath_match(a),
        Command::Augment(a) => augment(a),
        Command::Embed(a) => embed_cmd(a, seed),
        Command::Evaluate(a) => evaluate(a, seed),
        Command::Compare(a) => compare(a),
        Command::Synth(a) => synth(a, seed),
        Command::Pipeline(a) => pipeline(a, cli.seed),
    }
}

fn is_broken_pipe(e: &anyhow::Error) -> bool {
    e.chain().any(|c| {
        let kind = match c.downcast_ref::<serde_json::Error>() {
            Some(j) => j.io_error_kind(),
            None => c.downcast_ref::<io::Error>().map(io::Error::kind),
        };
        kind == Some(io::ErrorKind::BrokenPipe)
    })
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let level = if cli.quiet { "error" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            log::error!("cannot configure {n} threads: {e}");
            return ExitCode::from(EXIT_USAGE);
        }
    }
    match std::panic::catch_unwind(|| run(&cli)) {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(e)) if is_broken_pipe(&e) => ExitCode::SUCCESS,
        Ok(Err(e)) => {
            log::error!("{e:#}");
            ExitCode::from(EXIT_DATA)
        }
        Err(_) => ExitCode::from(EXIT_INTERNAL),
    }
}
