//! Experiment orchestration: configuration, per-instance prediction,
//! resumable prediction files, sweeps and re-scoring.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{
    self, CauseEffectPair, CorpusError, DatasetFormat, DatasetSplit, LabeledInstance,
    TaggedSentence, Triplet,
};
use crate::embedding::{
    EmbeddingCache, EmbeddingError, EmbeddingProvider, HashingEmbedder, HttpEmbedder,
};
use crate::evaluation::{
    detection_metrics, single_pair_metrics, triplet_metrics, EvalError, ExampleCountSummary,
    MatchingMode, MetricsReport, SinglePairCase,
};
use crate::llm::{BackendMode, Gateway, HttpChatBackend, LlmError, ModelSettings, Transcript};
use crate::pool;
use crate::prompting::{
    detection_prompt, extraction_prompt, parse_detection, parse_extraction, LlmHandle,
    PromptCatalog, PromptError,
};
use crate::repository::{build_repository, BuildConfig, BuildOutcome, Repository, RepositoryError};
use crate::retrieval::{
    KnnIndex, Matcher, ProvenanceEntry, RetrievalConfig, RetrievalError, Retriever, StrategyKind,
};

#[derive(Debug, Error)]
pub enum RunError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Provider(String),
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Usage(_) => 1,
            RunError::Data(_) => 2,
            RunError::Provider(_) => 3,
        }
    }
}

impl From<LlmError> for RunError {
    fn from(e: LlmError) -> Self {
        if e.is_provider_failure() || matches!(e, LlmError::BadResponse(_)) {
            RunError::Provider(e.to_string())
        } else {
            RunError::Data(e.to_string())
        }
    }
}

impl From<CorpusError> for RunError {
    fn from(e: CorpusError) -> Self {
        RunError::Data(e.to_string())
    }
}

impl From<RepositoryError> for RunError {
    fn from(e: RepositoryError) -> Self {
        match e {
            RepositoryError::Provider(e) => e.into(),
            other => RunError::Data(other.to_string()),
        }
    }
}

impl From<EmbeddingError> for RunError {
    fn from(e: EmbeddingError) -> Self {
        match e {
            EmbeddingError::Provider(e) => e.into(),
            other => RunError::Data(other.to_string()),
        }
    }
}

impl From<RetrievalError> for RunError {
    fn from(e: RetrievalError) -> Self {
        match e {
            RetrievalError::Provider(e) => e.into(),
            RetrievalError::Embedding(e) => e.into(),
            RetrievalError::EmptyConnective => RunError::Data(e.to_string()),
            other => RunError::Usage(other.to_string()),
        }
    }
}

impl From<PromptError> for RunError {
    fn from(e: PromptError) -> Self {
        RunError::Data(e.to_string())
    }
}

impl From<EvalError> for RunError {
    fn from(e: EvalError) -> Self {
        RunError::Data(e.to_string())
    }
}

impl From<std::io::Error> for RunError {
    fn from(e: std::io::Error) -> Self {
        RunError::Data(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Detect,
    Extract,
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Task::Detect => "detect",
            Task::Extract => "extract",
        })
    }
}

impl FromStr for Task {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "detect" | "detection" => Ok(Task::Detect),
            "extract" | "extraction" => Ok(Task::Extract),
            other => Err(format!(
                "unknown task {other:?} (expected detect or extract)"
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbedderKind {
    Local,
    Remote,
}

impl fmt::Display for EmbedderKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EmbedderKind::Local => "local",
            EmbedderKind::Remote => "remote",
        })
    }
}

impl FromStr for EmbedderKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "local" => Ok(EmbedderKind::Local),
            "remote" => Ok(EmbedderKind::Remote),
            other => Err(format!(
                "unknown embedder {other:?} (expected local or remote)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub task: Task,
    pub strategy: StrategyKind,
    pub k: usize,
    pub seed: u64,
    pub single_pair: bool,
    pub model_id: String,
    pub temperature: f64,
    pub max_output_tokens: u32,
    pub backend: BackendMode,
    pub base_url: String,
    pub concurrency: usize,
    pub matcher: Matcher,
    pub threshold: f64,
    pub matching: MatchingMode,
    pub fallback_to_random: bool,
    pub embedder: EmbedderKind,
    pub embed_model: String,
    pub embed_dim: usize,
    pub db: Option<PathBuf>,
    pub dataset: Option<PathBuf>,
    pub format: DatasetFormat,
    pub transcript: Option<PathBuf>,
    pub cache: Option<PathBuf>,
    pub catalog: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub force: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let retrieval = RetrievalConfig::default();
        ExperimentConfig {
            task: Task::Detect,
            strategy: StrategyKind::Zeroshot,
            k: retrieval.k,
            seed: retrieval.seed,
            single_pair: false,
            model_id: "gpt-4o".into(),
            temperature: 0.0,
            max_output_tokens: 512,
            backend: BackendMode::Replay,
            base_url: "https://api.openai.com/v1".into(),
            concurrency: 4,
            matcher: retrieval.matcher,
            threshold: retrieval.similarity_threshold,
            matching: MatchingMode::Greedy,
            fallback_to_random: retrieval.fallback_to_random,
            embedder: EmbedderKind::Local,
            embed_model: "text-embedding-3-small".into(),
            embed_dim: 256,
            db: None,
            dataset: None,
            format: DatasetFormat::Canonical,
            transcript: None,
            cache: None,
            catalog: None,
            out: None,
            force: false,
        }
    }
}

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T, RunError>
where
    T::Err: fmt::Display,
{
    value
        .parse()
        .map_err(|e| RunError::Usage(format!("bad value {value:?} for {key}: {e}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool, RunError> {
    match value.to_ascii_lowercase().as_str() {
        "true" | "yes" | "1" | "on" => Ok(true),
        "false" | "no" | "0" | "off" => Ok(false),
        _ => Err(RunError::Usage(format!(
            "bad value {value:?} for {key}: expected true or false"
        ))),
    }
}

impl ExperimentConfig {
    /// Sets one option by its flag name (`k`, `single-pair`, `base_url`, ...).
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), RunError> {
        let value = value.trim();
        let path = || match value {
            "" => Err(RunError::Usage(format!("{key} needs a path"))),
            v => Ok(Some(PathBuf::from(v))),
        };
        match key.trim().replace('_', "-").as_str() {
            "task" => self.task = parse_value(key, value)?,
            "strategy" => self.strategy = parse_value(key, value)?,
            "k" => self.k = parse_value(key, value)?,
            "seed" => self.seed = parse_value(key, value)?,
            "single-pair" => self.single_pair = parse_bool(key, value)?,
            "model" | "model-id" => self.model_id = value.to_string(),
            "temperature" => self.temperature = parse_value(key, value)?,
            "max-output-tokens" => self.max_output_tokens = parse_value(key, value)?,
            "backend" => self.backend = parse_value(key, value)?,
            "base-url" => self.base_url = value.to_string(),
            "concurrency" => self.concurrency = parse_value(key, value)?,
            "matcher" => self.matcher = parse_value(key, value)?,
            "threshold" => self.threshold = parse_value(key, value)?,
            "matching" => self.matching = parse_value(key, value)?,
            "fallback" | "fallback-to-random" => self.fallback_to_random = parse_bool(key, value)?,
            "embedder" => self.embedder = parse_value(key, value)?,
            "embed-model" => self.embed_model = value.to_string(),
            "embed-dim" => self.embed_dim = parse_value(key, value)?,
            "db" => self.db = path()?,
            "dataset" => self.dataset = path()?,
            "format" => self.format = parse_value(key, value)?,
            "transcript" => self.transcript = path()?,
            "cache" => self.cache = path()?,
            "catalog" => self.catalog = path()?,
            "out" => self.out = path()?,
            "force" => self.force = parse_bool(key, value)?,
            other => return Err(RunError::Usage(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }

    /// Applies a `key = value` file; `#` starts a comment.
    pub fn apply_file_text(&mut self, text: &str) -> Result<(), RunError> {
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                RunError::Usage(format!("config line {}: expected key = value", n + 1))
            })?;
            self.set(key, value)?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<(), RunError> {
        let text = fs::read_to_string(path)
            .map_err(|e| RunError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        self.apply_file_text(&text)
    }

    pub fn validate(&self) -> Result<(), RunError> {
        if self.backend != BackendMode::Live && self.transcript.is_none() {
            return Err(RunError::Usage(format!(
                "--backend {} needs --transcript",
                self.backend
            )));
        }
        if self.concurrency == 0 {
            return Err(RunError::Usage("concurrency must be at least 1".into()));
        }
        if self.embed_dim == 0 {
            return Err(RunError::Usage("embed-dim must be at least 1".into()));
        }
        self.retrieval().validate()?;
        Ok(())
    }

    pub fn retrieval(&self) -> RetrievalConfig {
        RetrievalConfig {
            k: self.k,
            similarity_threshold: self.threshold,
            matcher: self.matcher,
            seed: self.seed,
            fallback_to_random: self.fallback_to_random,
        }
    }

    pub fn model_settings(&self) -> ModelSettings {
        ModelSettings {
            model_id: self.model_id.clone(),
            temperature: self.temperature,
            max_output_tokens: self.max_output_tokens,
        }
    }

    /// The settings that shape results, echoed into every report.
    pub fn echo(&self, catalog_version: &str) -> BTreeMap<String, String> {
        let mut m = BTreeMap::new();
        m.insert("task".into(), self.task.to_string());
        m.insert("strategy".into(), self.strategy.to_string());
        m.insert("k".into(), self.k.to_string());
        m.insert("seed".into(), self.seed.to_string());
        m.insert("matcher".into(), self.matcher.to_string());
        m.insert("threshold".into(), self.threshold.to_string());
        m.insert("catalog_version".into(), catalog_version.to_string());
        m.insert("model".into(), self.model_id.clone());
        m.insert("backend".into(), self.backend.to_string());
        if self.task == Task::Extract {
            m.insert("single_pair".into(), self.single_pair.to_string());
            if !self.single_pair {
                m.insert("matching".into(), self.matching.to_string());
            }
        }
        if self.strategy.needs_embeddings() {
            m.insert("embedder".into(), self.embedder.to_string());
        }
        m
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Prediction {
    Detection {
        label: Option<u8>,
    },
    Extraction {
        pairs: Vec<CauseEffectPair>,
        overlap_flag: bool,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub sentence_id: String,
    pub task: Task,
    pub strategy: StrategyKind,
    pub prompt_hash: String,
    pub raw_response: Option<String>,
    pub prediction: Prediction,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub parse_error: Option<String>,
    pub gold_label: u8,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub gold_pairs: Vec<CauseEffectPair>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub input_connectives: Option<Vec<String>>,
    pub example_count: usize,
    pub fallback_used: bool,
    pub provenance: Vec<ProvenanceEntry>,
    /// Wall-clock milliseconds; left out when replaying so outputs repeat exactly.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub elapsed_ms: Option<u64>,
}

impl PredictionRecord {
    pub fn is_parsed(&self) -> bool {
        self.parse_error.is_none()
    }

    pub fn predicted_triplets(&self) -> Vec<Triplet> {
        match &self.prediction {
            Prediction::Extraction { pairs, .. } => pairs
                .iter()
                .map(|p| Triplet {
                    sentence_id: self.sentence_id.clone(),
                    cause: p.cause.clone(),
                    effect: p.effect.clone(),
                })
                .collect(),
            Prediction::Detection { .. } => Vec::new(),
        }
    }

    pub fn gold_triplets(&self) -> Vec<Triplet> {
        self.gold_pairs
            .iter()
            .map(|p| Triplet {
                sentence_id: self.sentence_id.clone(),
                cause: p.cause.clone(),
                effect: p.effect.clone(),
            })
            .collect()
    }
}

/// Shared, read-only resources for a run.
pub struct RunContext<'a> {
    pub repo: &'a Repository,
    pub llm: &'a LlmHandle,
    pub knn: Option<&'a KnnIndex>,
}

pub struct RunOutcome {
    /// Earlier and new records together, ordered by sentence id.
    pub records: Vec<PredictionRecord>,
    pub new_records: usize,
    pub report: MetricsReport,
}

/// Instances the task applies to, ordered by id.
pub fn task_instances(split: &DatasetSplit, task: Task) -> Vec<&LabeledInstance> {
    let mut out: Vec<&LabeledInstance> = split
        .instances
        .iter()
        .filter(|i| task == Task::Detect || i.sentence.is_causal())
        .collect();
    out.sort_by(|a, b| a.id().cmp(b.id()));
    out
}

fn predict_one(
    cfg: &ExperimentConfig,
    retriever: &Retriever<'_>,
    llm: &LlmHandle,
    inst: &LabeledInstance,
) -> Result<PredictionRecord, RunError> {
    let started = Instant::now();
    let sentence = &inst.sentence;
    let examples = retriever.retrieve(cfg.strategy, &sentence.id, &sentence.raw_text)?;
    let prompt = match cfg.task {
        Task::Detect => detection_prompt(&sentence.raw_text, &examples, &llm.catalog),
        Task::Extract => {
            extraction_prompt(&sentence.raw_text, &examples, cfg.single_pair, &llm.catalog)
        }
    };
    let (prompt_hash, answer) = llm.ask(&prompt);
    let (raw_response, parse_input) = match answer {
        Ok(text) => (Some(text.clone()), Ok(text)),
        Err(LlmError::EmptyCompletion) => {
            (Some(String::new()), Err("empty completion".to_string()))
        }
        Err(e) => return Err(e.into()),
    };

    let (prediction, parse_error) = match cfg.task {
        Task::Detect => {
            match parse_input.and_then(|t| parse_detection(&t).map_err(|e| e.to_string())) {
                Ok(p) => (
                    Prediction::Detection {
                        label: Some(p.label),
                    },
                    None,
                ),
                Err(e) => (Prediction::Detection { label: None }, Some(e)),
            }
        }
        Task::Extract => {
            match parse_input.and_then(|t| parse_extraction(&t).map_err(|e| e.to_string())) {
                Ok(p) => (
                    Prediction::Extraction {
                        pairs: p.pairs,
                        overlap_flag: p.overlap_flag,
                    },
                    None,
                ),
                Err(e) => (
                    Prediction::Extraction {
                        pairs: Vec::new(),
                        overlap_flag: false,
                    },
                    Some(e),
                ),
            }
        }
    };

    Ok(PredictionRecord {
        sentence_id: sentence.id.clone(),
        task: cfg.task,
        strategy: cfg.strategy,
        prompt_hash,
        raw_response,
        prediction,
        parse_error,
        gold_label: inst.label.as_u8(),
        gold_pairs: sentence.pairs.clone(),
        input_connectives: cfg
            .strategy
            .needs_connectives()
            .then(|| retriever.connective_cache.get(&sentence.id))
            .flatten(),
        example_count: examples.len(),
        fallback_used: examples.fallback_used,
        provenance: examples.provenance(),
        elapsed_ms: (cfg.backend != BackendMode::Replay)
            .then(|| started.elapsed().as_millis() as u64),
    })
}

/// Predicts every instance not already in `existing`, handing each new
/// record to `on_record` in id order, then scores everything.
pub fn run_experiment(
    cfg: &ExperimentConfig,
    split: &DatasetSplit,
    ctx: &RunContext<'_>,
    existing: &BTreeMap<String, PredictionRecord>,
    mut on_record: impl FnMut(&PredictionRecord) -> Result<(), RunError>,
) -> Result<RunOutcome, RunError> {
    let retrieval = cfg.retrieval();
    retrieval.validate()?;
    if cfg.concurrency == 0 {
        return Err(RunError::Usage("concurrency must be at least 1".into()));
    }
    let mut retriever = Retriever::new(ctx.repo, retrieval).with_llm(ctx.llm);
    if let Some(knn) = ctx.knn {
        retriever = retriever.with_knn(knn);
    }

    let instances = task_instances(split, cfg.task);
    if instances.is_empty() {
        return Err(RunError::Data(format!(
            "{} has no instances for task {}",
            split.name, cfg.task
        )));
    }
    let pending: Vec<&LabeledInstance> = instances
        .iter()
        .copied()
        .filter(|i| !existing.contains_key(i.id()))
        .collect();

    let mut fresh = Vec::with_capacity(pending.len());
    let mut failure = None;
    pool::for_each_ordered(
        &pending,
        cfg.concurrency,
        |inst| predict_one(cfg, &retriever, ctx.llm, inst),
        |_, result| {
            match result.and_then(|rec| on_record(&rec).map(|_| rec)) {
                Ok(rec) => fresh.push(rec),
                Err(e) => {
                    failure = Some(e);
                    return false;
                }
            }
            true
        },
    );
    if let Some(e) = failure {
        return Err(match e {
            RunError::Provider(msg) => RunError::Provider(format!(
                "{msg}\n{} of {} instance(s) finished; rerun the same command with the same transcript \
                 and output file to resume",
                existing.len() + fresh.len(),
                instances.len()
            )),
            other => other,
        });
    }

    let new_records = fresh.len();
    let mut all: BTreeMap<String, PredictionRecord> = existing
        .iter()
        .filter(|(id, _)| instances.iter().any(|i| i.id() == id.as_str()))
        .map(|(id, r)| (id.clone(), r.clone()))
        .collect();
    all.extend(fresh.into_iter().map(|r| (r.sentence_id.clone(), r)));
    let records: Vec<PredictionRecord> = all.into_values().collect();
    let report = score_predictions(
        &records,
        cfg.task,
        cfg.single_pair,
        cfg.matching,
        cfg.echo(&ctx.llm.catalog.version),
    )?;
    Ok(RunOutcome {
        records,
        new_records,
        report,
    })
}

/// Scores prediction records; also used to re-score saved files.
pub fn score_predictions(
    records: &[PredictionRecord],
    task: Task,
    single_pair: bool,
    matching: MatchingMode,
    config: BTreeMap<String, String>,
) -> Result<MetricsReport, RunError> {
    if records.is_empty() {
        return Err(EvalError::EmptyInput.into());
    }
    if let Some(r) = records.iter().find(|r| r.task != task) {
        return Err(RunError::Data(format!(
            "{} was predicted for task {}, not {task}",
            r.sentence_id, r.task
        )));
    }
    let counts: Vec<usize> = records.iter().map(|r| r.example_count).collect();
    let fallbacks = records.iter().filter(|r| r.fallback_used).count();
    let mut report = MetricsReport {
        config,
        instances: records.len(),
        detection: None,
        single_pair: None,
        triplets: None,
        examples: ExampleCountSummary::from_counts(&counts, fallbacks),
    };
    match task {
        Task::Detect => {
            let pairs: Vec<(Option<u8>, u8)> = records
                .iter()
                .map(|r| match r.prediction {
                    Prediction::Detection { label } => (label, r.gold_label),
                    Prediction::Extraction { .. } => (None, r.gold_label),
                })
                .collect();
            report.detection = Some(detection_metrics(&pairs)?);
        }
        Task::Extract if single_pair => {
            let cases = records
                .iter()
                .map(|r| {
                    let [gold] = r.gold_pairs.as_slice() else {
                        return Err(RunError::Data(format!(
                            "{} has {} gold pairs; single-pair scoring needs exactly one",
                            r.sentence_id,
                            r.gold_pairs.len()
                        )));
                    };
                    let (predicted, overlap_flag) = match &r.prediction {
                        Prediction::Extraction {
                            pairs,
                            overlap_flag,
                        } if r.is_parsed() => (pairs.first().cloned(), *overlap_flag),
                        _ => (None, false),
                    };
                    Ok(SinglePairCase {
                        sentence_id: r.sentence_id.clone(),
                        gold: gold.clone(),
                        predicted,
                        overlap_flag,
                    })
                })
                .collect::<Result<Vec<_>, RunError>>()?;
            report.single_pair = Some(single_pair_metrics(&cases)?);
        }
        Task::Extract => {
            let gold: Vec<Triplet> = records.iter().flat_map(|r| r.gold_triplets()).collect();
            let predicted: Vec<Triplet> = records
                .iter()
                .flat_map(|r| r.predicted_triplets())
                .collect();
            report.triplets = Some(triplet_metrics(&gold, &predicted, matching));
        }
    }
    Ok(report)
}

pub fn read_predictions(path: &Path) -> Result<BTreeMap<String, PredictionRecord>, RunError> {
    let file = File::open(path)
        .map_err(|e| RunError::Data(format!("cannot read {}: {e}", path.display())))?;
    let mut out = BTreeMap::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: PredictionRecord = serde_json::from_str(&line)
            .map_err(|e| RunError::Data(format!("{} line {}: {e}", path.display(), n + 1)))?;
        out.insert(rec.sentence_id.clone(), rec);
    }
    Ok(out)
}

/// Append-only JSONL writer for prediction records.
pub struct PredictionWriter {
    out: BufWriter<File>,
}

impl PredictionWriter {
    /// Opens for appending; `truncate` starts the file over.
    pub fn open(path: &Path, truncate: bool) -> Result<Self, RunError> {
        let file = OpenOptions::new()
            .create(true)
            .append(!truncate)
            .write(true)
            .truncate(truncate)
            .open(path)
            .map_err(|e| RunError::Data(format!("cannot open {}: {e}", path.display())))?;
        Ok(PredictionWriter {
            out: BufWriter::new(file),
        })
    }

    pub fn write(&mut self, rec: &PredictionRecord) -> Result<(), RunError> {
        let line = serde_json::to_string(rec).map_err(|e| RunError::Data(e.to_string()))?;
        writeln!(self.out, "{line}")?;
        self.out.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SweepRow {
    pub strategy: StrategyKind,
    pub k: usize,
    pub report: MetricsReport,
}

/// One run per (strategy, k), in the order given.
pub fn run_sweep(
    base: &ExperimentConfig,
    strategies: &[StrategyKind],
    ks: &[usize],
    split: &DatasetSplit,
    ctx: &RunContext<'_>,
) -> Result<Vec<SweepRow>, RunError> {
    if ks.is_empty() {
        return Err(RunError::Usage("sweep needs at least one k value".into()));
    }
    if strategies.is_empty() {
        return Err(RunError::Usage("sweep needs at least one strategy".into()));
    }
    let mut rows = Vec::new();
    for &strategy in strategies {
        for &k in ks {
            let cfg = ExperimentConfig {
                strategy,
                k,
                ..base.clone()
            };
            let outcome = run_experiment(&cfg, split, ctx, &BTreeMap::new(), |_| Ok(()))?;
            rows.push(SweepRow {
                strategy,
                k,
                report: outcome.report,
            });
        }
    }
    Ok(rows)
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("strategy,k,metric,value\n");
    for row in rows {
        for (metric, value) in row.report.metric_values() {
            out.push_str(&format!("{},{},{metric},{value}\n", row.strategy, row.k));
        }
    }
    out
}

/// Causal sentences from every input, ids checked for clashes.
pub fn merge_causal_sentences(inputs: &[DatasetSplit]) -> Result<Vec<TaggedSentence>, RunError> {
    let mut seen = std::collections::HashSet::new();
    let mut out = Vec::new();
    for split in inputs {
        for s in split.causal_sentences() {
            if !seen.insert(s.id.clone()) {
                return Err(RunError::Data(format!(
                    "sentence id {} appears in more than one input",
                    s.id
                )));
            }
            out.push(s.clone());
        }
    }
    Ok(out)
}

pub fn build_db(
    inputs: &[DatasetSplit],
    llm: &LlmHandle,
    cfg: &BuildConfig,
) -> Result<BuildOutcome, RunError> {
    let sentences = merge_causal_sentences(inputs)?;
    Ok(build_repository(&sentences, llm, cfg)?)
}

pub fn load_split(path: &Path, format: DatasetFormat) -> Result<DatasetSplit, RunError> {
    corpus::load_dataset(path, format)
        .map_err(|e| RunError::Data(format!("{}: {e}", path.display())))
}

pub fn load_catalog(cfg: &ExperimentConfig) -> Result<PromptCatalog, RunError> {
    match &cfg.catalog {
        Some(path) => Ok(PromptCatalog::load(path)?),
        None => Ok(PromptCatalog::default()),
    }
}

pub fn open_gateway(cfg: &ExperimentConfig) -> Result<Gateway, RunError> {
    let transcript_path = || {
        cfg.transcript
            .as_deref()
            .ok_or_else(|| RunError::Usage(format!("--backend {} needs --transcript", cfg.backend)))
    };
    let backend = || Arc::new(HttpChatBackend::from_env(&cfg.base_url));
    Ok(match cfg.backend {
        BackendMode::Live => Gateway::live(backend()),
        BackendMode::Replay => {
            Gateway::replay(Arc::new(Transcript::open_read_only(transcript_path()?)?))
        }
        BackendMode::Record => Gateway::record(
            backend(),
            Arc::new(Transcript::open_append(transcript_path()?)?),
        ),
    })
}

pub fn open_llm(cfg: &ExperimentConfig) -> Result<LlmHandle, RunError> {
    Ok(LlmHandle::new(
        open_gateway(cfg)?,
        load_catalog(cfg)?,
        cfg.model_settings(),
    ))
}

pub fn open_embedder(
    cfg: &ExperimentConfig,
) -> Result<(Arc<dyn EmbeddingProvider>, Arc<EmbeddingCache>), RunError> {
    let provider: Arc<dyn EmbeddingProvider> = match cfg.embedder {
        EmbedderKind::Local => Arc::new(HashingEmbedder::new(cfg.embed_dim)),
        EmbedderKind::Remote => Arc::new(HttpEmbedder::from_env(&cfg.base_url, &cfg.embed_model)),
    };
    let cache = match &cfg.cache {
        Some(path) => EmbeddingCache::open(path)?,
        None => EmbeddingCache::in_memory(),
    };
    Ok((provider, Arc::new(cache)))
}
