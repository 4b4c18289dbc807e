mod manifest;

use std::fs;
use std::io::{self, BufReader, Write};
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};
use clozener::corpus::{self, Corpus, KShotSpec, SchemaKind, TagSchema};
use clozener::eval::{self, error_chain};
use clozener::pipeline::{write_atomic, BridgeFactory, BuiltinFactory, Inputs, ModelFactory, PipelineConfig};
use clozener::pvp::{expand_limited, resolve_pvp};
use clozener::scoring::bridge::{serve_lines, serve_tcp, BuiltinBackend};
use clozener::synth::{self, SynthConfig};

use manifest::{InputFile, Manifest};

const BRIDGE_ENV: &str = "CLOZENER_BRIDGE";

#[derive(Parser)]
#[command(name = "clozener", version, about = "Few-shot NER with cloze questions")]
struct Cli {
    /// More log output (repeat for more).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write one cloze example per token as JSON lines.
    Expand(ExpandArgs),
    /// Run the k-shot protocol and write a run directory.
    RunExperiment(Box<RunArgs>),
    /// Score predicted tags against gold tags.
    Eval(EvalArgs),
    /// Sentence, token, mention and label counts.
    Stats(StatsArgs),
    /// Draw a k-shot sample from a tagged corpus.
    Sample(SampleArgs),
    /// Generate a synthetic gazetteer corpus.
    Synth(SynthArgs),
    /// Serve the built-in models over the scorer protocol.
    ServeScorer(ServeArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Table,
}

#[derive(Args, Clone)]
struct CorpusOpts {
    #[arg(long, default_value = "disease")]
    entity_type: String,
    /// Tag schema: iob2 or io.
    #[arg(long, default_value = "iob2")]
    schema: SchemaKind,
}

#[derive(Args)]
struct ExpandArgs {
    #[arg(long)]
    corpus: PathBuf,
    /// The corpus has one token per line and no tags.
    #[arg(long)]
    untagged: bool,
    /// p1, p2 or a pattern file.
    #[arg(long, default_value = "p1")]
    pattern: String,
    #[arg(long)]
    max_sequence_tokens: Option<usize>,
    /// Output file; standard output if omitted.
    #[arg(short, long)]
    output: Option<PathBuf>,
    #[command(flatten)]
    corpus_opts: CorpusOpts,
}

#[derive(Args)]
struct RunArgs {
    /// Rerun exactly what a previous run's manifest describes.
    #[arg(long, conflicts_with_all = ["train", "test", "unlabeled", "config"])]
    manifest: Option<PathBuf>,
    #[arg(long, required_unless_present = "manifest")]
    train: Option<PathBuf>,
    /// Untagged text for soft labeling; defaults to the unsampled training sentences.
    #[arg(long)]
    unlabeled: Option<PathBuf>,
    #[arg(long, required_unless_present = "manifest")]
    test: Option<PathBuf>,
    /// Shot counts, comma-separated.
    #[arg(long, value_delimiter = ',')]
    k: Vec<usize>,
    #[arg(long, value_delimiter = ',')]
    seeds: Vec<u64>,
    /// p1, p2 or a pattern file; repeatable. Defaults to p1 and p2.
    #[arg(long)]
    pattern: Vec<String>,
    /// builtin, bridge:<address>, or bridge to use $CLOZENER_BRIDGE.
    #[arg(long, default_value = "builtin")]
    scorer: String,
    /// Base configuration (JSON); flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Scorer epochs for every k instead of the schedule.
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    unlabeled_cap: Option<usize>,
    #[arg(long)]
    distill_epochs: Option<usize>,
    #[arg(long)]
    max_sequence_tokens: Option<usize>,
    #[arg(long)]
    run_dir: PathBuf,
    #[arg(long, default_value_t = default_workers())]
    workers: usize,
    /// Exit 0 even if some cells failed.
    #[arg(long)]
    keep_going: bool,
    #[arg(long, value_enum, default_value = "table")]
    format: Format,
    #[command(flatten)]
    corpus_opts: CorpusOpts,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    gold: PathBuf,
    #[arg(long)]
    pred: PathBuf,
    #[arg(long, value_enum, default_value = "table")]
    format: Format,
    #[command(flatten)]
    corpus_opts: CorpusOpts,
}

#[derive(Args)]
struct StatsArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long, value_enum, default_value = "json")]
    format: Format,
    #[command(flatten)]
    corpus_opts: CorpusOpts,
}

#[derive(Args)]
struct SampleArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    k: usize,
    #[arg(long)]
    seed: u64,
    #[arg(short, long)]
    output: PathBuf,
    /// Also write the unselected sentences here.
    #[arg(long)]
    rest: Option<PathBuf>,
    #[command(flatten)]
    corpus_opts: CorpusOpts,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out_dir: PathBuf,
    /// Total sentences, the test split included.
    #[arg(long, default_value_t = SynthConfig::default().sentences)]
    sentences: usize,
    #[arg(long, default_value_t = SynthConfig::default().test_sentences)]
    test_sentences: usize,
    #[arg(long, default_value_t = SynthConfig::default().lexicon_size)]
    lexicon_size: usize,
    #[arg(long, default_value_t = SynthConfig::default().seed)]
    seed: u64,
}

#[derive(Args)]
struct ServeArgs {
    /// host:port to listen on; speaks on stdin/stdout if omitted.
    #[arg(long)]
    listen: Option<String>,
    #[arg(long, default_value_t = clozener::scoring::baseline::DEFAULT_WINDOW)]
    window: usize,
}

fn default_workers() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {}", error_chain(e.as_ref()));
            ExitCode::from(exit_code(&e))
        }
    }
}

/// 2 for bad configuration or usage, 1 for everything else.
fn exit_code(e: &anyhow::Error) -> u8 {
    let usage = e.chain().any(|cause| {
        cause.is::<UsageError>()
            || matches!(
                cause.downcast_ref::<clozener::Error>(),
                Some(clozener::Error::Config(_) | clozener::Error::Pattern(_) | clozener::Error::Verbalizer(_))
            )
    });
    if usage {
        2
    } else {
        1
    }
}

#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn run(command: Command) -> anyhow::Result<ExitCode> {
    match command {
        Command::Expand(a) => expand(a),
        Command::RunExperiment(a) => run_experiment(*a),
        Command::Eval(a) => evaluate(a),
        Command::Stats(a) => stats(a),
        Command::Sample(a) => sample(a),
        Command::Synth(a) => synthesize(a),
        Command::ServeScorer(a) => serve(a),
    }
}

fn read_tagged(path: &Path, opts: &CorpusOpts) -> clozener::Result<Corpus> {
    corpus::read_conll(path, TagSchema::new(opts.schema), &opts.entity_type)
}

fn emit(output: Option<&Path>, text: &str) -> anyhow::Result<()> {
    match output {
        Some(path) => write_atomic(path, text.as_bytes())?,
        None => io::stdout().lock().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn expand(a: ExpandArgs) -> anyhow::Result<ExitCode> {
    let schema = TagSchema::new(a.corpus_opts.schema);
    let etype = &a.corpus_opts.entity_type;
    let pvp = resolve_pvp(&a.pattern, etype, &schema)?;
    let corpus = if a.untagged {
        corpus::read_tokens(&a.corpus, schema, etype)?
    } else {
        corpus::read_conll(&a.corpus, schema, etype)?
    };
    let mut out = String::new();
    for s in &corpus.sentences {
        for ex in expand_limited(&pvp.pattern, s, etype, a.max_sequence_tokens) {
            out.push_str(&serde_json::to_string(&ex)?);
            out.push('\n');
        }
    }
    emit(a.output.as_deref(), &out)?;
    Ok(ExitCode::SUCCESS)
}

fn resolve_scorer(spec: &str) -> anyhow::Result<Option<String>> {
    match spec {
        "builtin" => Ok(None),
        "bridge" => match std::env::var(BRIDGE_ENV) {
            Ok(addr) if !addr.is_empty() => Ok(Some(addr)),
            _ => Err(UsageError(format!("--scorer bridge needs an address or ${BRIDGE_ENV}")).into()),
        },
        s => match s.strip_prefix("bridge:") {
            Some(addr) if !addr.is_empty() => Ok(Some(addr.to_string())),
            _ => Err(UsageError(format!("unknown scorer {s:?}; use builtin or bridge:<address>")).into()),
        },
    }
}

fn build_manifest(a: &RunArgs) -> anyhow::Result<Manifest> {
    let schema = TagSchema::new(a.corpus_opts.schema);
    let etype = &a.corpus_opts.entity_type;
    let mut config = match &a.config {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            serde_json::from_str::<PipelineConfig>(&text)
                .map_err(|e| clozener::Error::Config(format!("{}: {e}", p.display())))?
        }
        None => PipelineConfig::default(),
    };
    if !a.pattern.is_empty() {
        config.pvps = a
            .pattern
            .iter()
            .map(|p| resolve_pvp(p, etype, &schema))
            .collect::<clozener::Result<_>>()?;
    } else if config.pvps.is_empty() {
        config.pvps = clozener::pvp::builtin_pvps(etype, &schema);
    }
    if !a.k.is_empty() {
        config.shots = a.k.clone();
    }
    if !a.seeds.is_empty() {
        config.seeds = a.seeds.clone();
    }
    if a.epochs.is_some() {
        config.epochs_override = a.epochs;
    }
    if let Some(c) = a.unlabeled_cap {
        config.unlabeled_cap = c;
    }
    if let Some(e) = a.distill_epochs {
        config.distill_epochs = e;
    }
    if a.max_sequence_tokens.is_some() {
        config.max_sequence_tokens = a.max_sequence_tokens;
    }
    config.validate()?;
    let train = a.train.as_ref().expect("required by clap");
    let test = a.test.as_ref().expect("required by clap");
    Ok(Manifest {
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        entity_type: etype.clone(),
        schema: a.corpus_opts.schema,
        scorer: a.scorer.clone(),
        train: InputFile::digest(train)?,
        unlabeled: a.unlabeled.as_deref().map(InputFile::digest).transpose()?,
        test: InputFile::digest(test)?,
        config,
        started_unix: 0,
        finished_unix: 0,
        report_sha256: String::new(),
    })
}

fn run_experiment(a: RunArgs) -> anyhow::Result<ExitCode> {
    let mut manifest = match &a.manifest {
        Some(path) => {
            let m = Manifest::read(path)?;
            m.verify_inputs()?;
            m
        }
        None => build_manifest(&a)?,
    };
    let schema = TagSchema::new(manifest.schema);
    let etype = manifest.entity_type.clone();
    let read = |f: &InputFile| corpus::read_conll(&f.path, schema.clone(), &etype);
    let train = read(&manifest.train)?;
    let test = read(&manifest.test)?;
    let unlabeled = manifest
        .unlabeled
        .as_ref()
        .map(|f| corpus::read_tokens(&f.path, schema.clone(), &etype))
        .transpose()?;

    let scorer = if a.manifest.is_some() && a.scorer == "builtin" {
        manifest.scorer.clone()
    } else {
        a.scorer.clone()
    };
    manifest.scorer = scorer.clone();
    let factory: Box<dyn ModelFactory> = match resolve_scorer(&scorer)? {
        None => Box::new(BuiltinFactory {
            window: manifest.config.window,
        }),
        Some(addr) => {
            let candidates = manifest.config.pvps[0].verbalizer.candidates(&schema);
            Box::new(BridgeFactory::probe(&addr, &candidates)?)
        }
    };

    manifest.started_unix = manifest::now_unix();
    let inputs = Inputs {
        train: &train,
        unlabeled: unlabeled.as_ref(),
        test: &test,
    };
    let report = eval::run_protocol(inputs, &manifest.config, factory.as_ref(), Some(&a.run_dir), a.workers)?;
    manifest.finished_unix = manifest::now_unix();
    manifest.report_sha256 = eval::sha256_hex(report.to_json().as_bytes());
    manifest.write(&a.run_dir.join("manifest.json"))?;

    match a.format {
        Format::Json => print!("{}", report.to_json()),
        Format::Table => print!("{}", report.table()),
    }
    if report.has_failures() && !a.keep_going {
        eprintln!("error: {} of the cells failed", report.failures.len());
        return Ok(ExitCode::from(1));
    }
    Ok(ExitCode::SUCCESS)
}

fn evaluate(a: EvalArgs) -> anyhow::Result<ExitCode> {
    let gold = read_tagged(&a.gold, &a.corpus_opts)?;
    let pred = read_tagged(&a.pred, &a.corpus_opts)?;
    let prf = eval::span_prf(&gold, &pred)?;
    match a.format {
        Format::Json => println!("{}", serde_json::to_string_pretty(&prf)?),
        Format::Table => {
            println!("precision  {:.4}", prf.precision);
            println!("recall     {:.4}", prf.recall);
            println!("f1         {:.4}", prf.f1);
            println!("support    {}", prf.support);
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn stats(a: StatsArgs) -> anyhow::Result<ExitCode> {
    let c = read_tagged(&a.corpus, &a.corpus_opts)?;
    let s = corpus::corpus_stats(&c);
    match a.format {
        Format::Json => println!("{}", serde_json::to_string_pretty(&s)?),
        Format::Table => {
            println!("sentences  {}", s.sentences);
            println!("tokens     {}", s.tokens);
            println!("mentions   {}", s.entity_mentions);
            for (label, n) in &s.label_counts {
                println!("{label:<10} {n}");
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn sample(a: SampleArgs) -> anyhow::Result<ExitCode> {
    let c = read_tagged(&a.corpus, &a.corpus_opts)?;
    let s = corpus::sample_k_shot(&c, KShotSpec { k: a.k, seed: a.seed });
    write_atomic(&a.output, corpus::to_conll_string(&s.selected).as_bytes())?;
    if let Some(rest) = &a.rest {
        write_atomic(rest, corpus::to_conll_string(&s.rest).as_bytes())?;
    }
    eprintln!(
        "{} sentences, {} entity mentions",
        s.selected.len(),
        corpus::corpus_stats(&s.selected).entity_mentions
    );
    Ok(ExitCode::SUCCESS)
}

fn synthesize(a: SynthArgs) -> anyhow::Result<ExitCode> {
    let config = SynthConfig {
        sentences: a.sentences,
        test_sentences: a.test_sentences,
        lexicon_size: a.lexicon_size,
        seed: a.seed,
        ..SynthConfig::default()
    };
    let c = synth::generate(&config)?;
    write_atomic(&a.out_dir.join("train.conll"), corpus::to_conll_string(&c.train).as_bytes())?;
    write_atomic(&a.out_dir.join("test.conll"), corpus::to_conll_string(&c.test).as_bytes())?;
    let lexicon: String = c.lexicon.iter().map(|t| t.join(" ") + "\n").collect();
    write_atomic(&a.out_dir.join("lexicon.txt"), lexicon.as_bytes())?;
    Ok(ExitCode::SUCCESS)
}

fn serve(a: ServeArgs) -> anyhow::Result<ExitCode> {
    let window = a.window;
    match a.listen {
        Some(addr) => {
            let listener = TcpListener::bind(&addr).with_context(|| format!("binding {addr}"))?;
            eprintln!("listening on {}", listener.local_addr()?);
            serve_tcp(listener, move || BuiltinBackend::new(window))?;
        }
        None => {
            let stdin = io::stdin();
            serve_lines(BufReader::new(stdin.lock()), io::stdout().lock(), &mut BuiltinBackend::new(window))?;
        }
    }
    Ok(ExitCode::SUCCESS)
}
