use std::collections::BTreeMap;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use causal_rag::corpus::{self, DatasetFormat};
use causal_rag::evaluation::{MatchingMode, MetricsReport};
use causal_rag::repository::{self, BuildConfig, Repository, RepositoryStats};
use causal_rag::retrieval::{KnnIndex, StrategyKind};
use causal_rag::runner::{self, ExperimentConfig, PredictionWriter, RunContext, RunError, Task};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "causal-rag",
    version,
    args_override_self = true,
    about = "Fewshot example retrieval for LLM causality detection and extraction"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Extract connectives from causal training sentences and write the example DB.
    BuildDb(BuildDbArgs),
    /// Predict every instance of a dataset and print metrics.
    Run(RunArgs),
    /// Run once per strategy and k, writing `strategy,k,metric,value` CSV.
    Sweep(SweepArgs),
    /// Print example DB statistics.
    Stats(StatsArgs),
    /// Re-score an existing predictions file.
    Eval(EvalArgs),
    /// Convert a dataset in a native layout to canonical JSONL.
    Import(ImportArgs),
}

/// Options shared by every model-backed command. Values are strings so a
/// config file and flags go through the same parser.
#[derive(Args)]
struct ExperimentFlags {
    /// `key = value` file applied before flags.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    db: Option<String>,
    #[arg(long)]
    dataset: Option<String>,
    /// canonical, semeval, ade or li
    #[arg(long)]
    format: Option<String>,
    /// detect or extract
    #[arg(long)]
    task: Option<String>,
    /// zeroshot, random, knn, pattern or knn-pattern
    #[arg(long)]
    strategy: Option<String>,
    #[arg(long)]
    k: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    /// live, replay or record
    #[arg(long)]
    backend: Option<String>,
    #[arg(long)]
    transcript: Option<String>,
    #[arg(long)]
    base_url: Option<String>,
    #[arg(long)]
    model: Option<String>,
    /// edit-ratio or token-containment
    #[arg(long)]
    matcher: Option<String>,
    #[arg(long)]
    threshold: Option<String>,
    /// greedy or optimal triplet matching
    #[arg(long)]
    matching: Option<String>,
    #[arg(long)]
    single_pair: bool,
    #[arg(long)]
    concurrency: Option<String>,
    /// local (hashing) or remote (provider embeddings)
    #[arg(long)]
    embedder: Option<String>,
    #[arg(long)]
    embed_model: Option<String>,
    #[arg(long)]
    embed_dim: Option<String>,
    /// Embedding cache file.
    #[arg(long)]
    cache: Option<String>,
    /// Prompt catalog file replacing the bundled one.
    #[arg(long)]
    catalog: Option<String>,
}

impl ExperimentFlags {
    fn resolve(&self) -> Result<ExperimentConfig, RunError> {
        let mut cfg = ExperimentConfig::default();
        if let Some(path) = &self.config {
            cfg.apply_file(path)?;
        }
        let flags = [
            ("db", &self.db),
            ("dataset", &self.dataset),
            ("format", &self.format),
            ("task", &self.task),
            ("strategy", &self.strategy),
            ("k", &self.k),
            ("seed", &self.seed),
            ("backend", &self.backend),
            ("transcript", &self.transcript),
            ("base-url", &self.base_url),
            ("model", &self.model),
            ("matcher", &self.matcher),
            ("threshold", &self.threshold),
            ("matching", &self.matching),
            ("concurrency", &self.concurrency),
            ("embedder", &self.embedder),
            ("embed-model", &self.embed_model),
            ("embed-dim", &self.embed_dim),
            ("cache", &self.cache),
            ("catalog", &self.catalog),
        ];
        for (key, value) in flags {
            if let Some(value) = value {
                cfg.set(key, value)?;
            }
        }
        if self.single_pair {
            cfg.single_pair = true;
        }
        Ok(cfg)
    }
}

#[derive(Args)]
struct BuildDbArgs {
    /// Training datasets; causal sentences from all of them are merged.
    #[arg(long = "input", required = true)]
    inputs: Vec<PathBuf>,
    /// Examples kept per connective.
    #[arg(long, default_value_t = repository::DEFAULT_CAP)]
    cap: usize,
    #[command(flatten)]
    exp: ExperimentFlags,
}

#[derive(Args)]
struct RunArgs {
    /// Predictions JSONL; existing ids are skipped unless --force.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    force: bool,
    /// Print the metrics report as JSON.
    #[arg(long)]
    json: bool,
    #[command(flatten)]
    exp: ExperimentFlags,
}

#[derive(Args)]
struct SweepArgs {
    /// Comma-separated fewshot counts.
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    ks: Vec<usize>,
    /// Comma-separated strategies; defaults to --strategy.
    #[arg(long, value_delimiter = ',')]
    strategies: Vec<String>,
    /// CSV destination; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    exp: ExperimentFlags,
}

#[derive(Args)]
struct StatsArgs {
    #[arg(long)]
    db: PathBuf,
    /// List this many random connectives per frequency category.
    #[arg(long)]
    sample: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct EvalArgs {
    /// Predictions JSONL written by `run`.
    #[arg(long)]
    predictions: PathBuf,
    #[arg(long)]
    single_pair: bool,
    #[arg(long, default_value = "greedy")]
    matching: MatchingMode,
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct ImportArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    format: DatasetFormat,
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("CAUSAL_RAG_LOG", "warn"))
        .format_timestamp(None)
        .init();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn dispatch(command: Command) -> Result<(), RunError> {
    match command {
        Command::BuildDb(args) => build_db(args),
        Command::Run(args) => run(args),
        Command::Sweep(args) => sweep(args),
        Command::Stats(args) => stats(args),
        Command::Eval(args) => eval(args),
        Command::Import(args) => import(args),
    }
}

fn print_stats(stats: &RepositoryStats, out: &mut impl Write) -> io::Result<()> {
    writeln!(out, "records              {}", stats.total_records)?;
    writeln!(out, "connectives          {}", stats.unique_connectives)?;
    writeln!(out, "index entries        {}", stats.total_entries)?;
    writeln!(
        out,
        "connectives with 5+  {}",
        stats.connectives_with_at_least_5
    )?;
    writeln!(out, "examples per connective:")?;
    for (freq, count) in &stats.frequency_histogram {
        writeln!(out, "  {freq:>3}  {count}")?;
    }
    Ok(())
}

fn build_db(args: BuildDbArgs) -> Result<(), RunError> {
    let cfg = args.exp.resolve()?;
    cfg.validate()?;
    let db = cfg
        .db
        .clone()
        .ok_or_else(|| RunError::Usage("build-db needs --db".into()))?;
    let inputs = args
        .inputs
        .iter()
        .map(|p| runner::load_split(p, cfg.format))
        .collect::<Result<Vec<_>, _>>()?;
    let llm = runner::open_llm(&cfg)?;
    let build = BuildConfig {
        cap: args.cap,
        seed: cfg.seed,
        concurrency: cfg.concurrency,
    };
    let outcome = runner::build_db(&inputs, &llm, &build)?;
    repository::save_repository(&outcome.repository, &db)?;
    let mut out = io::stdout().lock();
    print_stats(&repository::repository_stats(&outcome.repository), &mut out)?;
    writeln!(out, "skipped (no connective)  {}", outcome.skipped.len())?;
    writeln!(out, "not sampled              {}", outcome.unsampled)?;
    Ok(())
}

fn load_repo(cfg: &ExperimentConfig) -> Result<Repository, RunError> {
    match &cfg.db {
        Some(path) => {
            Ok(repository::load_repository(path).map_err(|e| RunError::from(e).prefixed(path))?)
        }
        None if cfg.strategy == StrategyKind::Zeroshot => Ok(Repository::from_records(
            Vec::new(),
            repository::DEFAULT_CAP,
            0,
        )),
        None => Err(RunError::Usage(format!(
            "--strategy {} needs --db",
            cfg.strategy
        ))),
    }
}

trait Prefixed {
    fn prefixed(self, path: &Path) -> Self;
}

impl Prefixed for RunError {
    fn prefixed(self, path: &Path) -> Self {
        let p = path.display();
        match self {
            RunError::Usage(m) => RunError::Usage(format!("{p}: {m}")),
            RunError::Data(m) => RunError::Data(format!("{p}: {m}")),
            RunError::Provider(m) => RunError::Provider(format!("{p}: {m}")),
        }
    }
}

struct Prepared {
    cfg: ExperimentConfig,
    split: corpus::DatasetSplit,
    repo: Repository,
    llm: causal_rag::LlmHandle,
}

fn prepare(
    exp: &ExperimentFlags,
    strategies: &[StrategyKind],
) -> Result<(Prepared, Option<KnnIndex>), RunError> {
    let cfg = exp.resolve()?;
    cfg.validate()?;
    let dataset = cfg
        .dataset
        .clone()
        .ok_or_else(|| RunError::Usage("--dataset is required".into()))?;
    let split = runner::load_split(&dataset, cfg.format)?;
    let probe = ExperimentConfig {
        strategy: *strategies
            .iter()
            .find(|s| **s != StrategyKind::Zeroshot)
            .unwrap_or(&StrategyKind::Zeroshot),
        ..cfg.clone()
    };
    let repo = load_repo(&probe)?;
    let llm = runner::open_llm(&cfg)?;
    let knn = if strategies.iter().any(|s| s.needs_embeddings()) {
        let (provider, cache) = runner::open_embedder(&cfg)?;
        Some(KnnIndex::build(&repo, provider, cache)?)
    } else {
        None
    };
    Ok((
        Prepared {
            cfg,
            split,
            repo,
            llm,
        },
        knn,
    ))
}

fn run(args: RunArgs) -> Result<(), RunError> {
    let strategy = args.exp.resolve()?.strategy;
    let (p, knn) = prepare(&args.exp, &[strategy])?;
    let ctx = RunContext {
        repo: &p.repo,
        llm: &p.llm,
        knn: knn.as_ref(),
    };
    let mut cfg = p.cfg.clone();
    cfg.out = args.out.clone().or(cfg.out);
    cfg.force |= args.force;

    let outcome = match &cfg.out {
        Some(path) => {
            let existing = if !cfg.force && path.exists() {
                runner::read_predictions(path)?
            } else {
                BTreeMap::new()
            };
            let mut writer = PredictionWriter::open(path, cfg.force)?;
            let outcome =
                runner::run_experiment(&cfg, &p.split, &ctx, &existing, |r| writer.write(r))?;
            let metrics_path = path.with_extension("metrics.json");
            fs::write(&metrics_path, report_json(&outcome.report)? + "\n")?;
            outcome
        }
        None => runner::run_experiment(&cfg, &p.split, &ctx, &BTreeMap::new(), |_| Ok(()))?,
    };
    print_report(&outcome.report, args.json)
}

fn report_json(report: &MetricsReport) -> Result<String, RunError> {
    serde_json::to_string_pretty(report).map_err(|e| RunError::Data(e.to_string()))
}

fn print_report(report: &MetricsReport, json: bool) -> Result<(), RunError> {
    let text = if json {
        report_json(report)? + "\n"
    } else {
        report.to_table()
    };
    io::stdout().lock().write_all(text.as_bytes())?;
    Ok(())
}

fn sweep(args: SweepArgs) -> Result<(), RunError> {
    if args.ks.is_empty() {
        return Err(RunError::Usage("sweep needs --ks".into()));
    }
    let strategies = if args.strategies.is_empty() {
        vec![args.exp.resolve()?.strategy]
    } else {
        args.strategies
            .iter()
            .map(|s| s.parse().map_err(RunError::Usage))
            .collect::<Result<Vec<StrategyKind>, _>>()?
    };
    let (p, knn) = prepare(&args.exp, &strategies)?;
    let ctx = RunContext {
        repo: &p.repo,
        llm: &p.llm,
        knn: knn.as_ref(),
    };
    let rows = runner::run_sweep(&p.cfg, &strategies, &args.ks, &p.split, &ctx)?;
    let csv = runner::sweep_csv(&rows);
    match &args.out {
        Some(path) => fs::write(path, csv)?,
        None => io::stdout().lock().write_all(csv.as_bytes())?,
    }
    Ok(())
}

fn stats(args: StatsArgs) -> Result<(), RunError> {
    let repo =
        repository::load_repository(&args.db).map_err(|e| RunError::from(e).prefixed(&args.db))?;
    let stats = repository::repository_stats(&repo);
    let samples = args
        .sample
        .map(|n| repository::sample_connectives_by_frequency(&repo, n, args.seed));
    let mut out = io::stdout().lock();
    if args.json {
        let value = serde_json::json!({ "stats": stats, "samples": samples });
        writeln!(
            out,
            "{}",
            serde_json::to_string_pretty(&value).map_err(|e| RunError::Data(e.to_string()))?
        )?;
        return Ok(());
    }
    print_stats(&stats, &mut out)?;
    if let Some(samples) = samples {
        writeln!(out, "sampled connectives:")?;
        for (freq, keys) in samples {
            writeln!(out, "  {freq:>3}  {}", keys.join("; "))?;
        }
    }
    Ok(())
}

fn eval(args: EvalArgs) -> Result<(), RunError> {
    let records: Vec<_> = runner::read_predictions(&args.predictions)?
        .into_values()
        .collect();
    let first = records.first().ok_or_else(|| {
        RunError::Data(format!(
            "{} holds no predictions",
            args.predictions.display()
        ))
    })?;
    let task = first.task;
    let mut config = BTreeMap::new();
    config.insert(
        "predictions".to_string(),
        args.predictions.display().to_string(),
    );
    config.insert("task".to_string(), task.to_string());
    config.insert("strategy".to_string(), first.strategy.to_string());
    if task == Task::Extract {
        config.insert("single_pair".to_string(), args.single_pair.to_string());
        if !args.single_pair {
            config.insert("matching".to_string(), args.matching.to_string());
        }
    }
    let report =
        runner::score_predictions(&records, task, args.single_pair, args.matching, config)?;
    print_report(&report, args.json)
}

fn import(args: ImportArgs) -> Result<(), RunError> {
    let split = runner::load_split(&args.input, args.format)?;
    let mut buf = Vec::new();
    corpus::write_canonical(&split, &mut buf)?;
    fs::write(&args.out, buf)?;
    let stats = corpus::dataset_stats(&split);
    println!(
        "{} instances ({} causal, {} non-causal, {} triplets) written to {}",
        stats.total,
        stats.causal,
        stats.non_causal,
        stats.triplets,
        args.out.display()
    );
    Ok(())
}
