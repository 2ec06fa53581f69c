//! The fewshot example repository: causal sentences indexed by the causal
//! connectives an LLM extracted from them, with at most `cap` examples per
//! connective.
//!
//! Only sentences that survive the per-connective sampling are stored, and a
//! stored record lists exactly the connectives it is indexed under. That makes
//! the on-disk form self-describing: the index is rebuilt at load time from
//! the records alone and comes out identical to the one built.

use std::collections::{BTreeMap, HashSet};
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{collapse_whitespace, CauseEffectPair, TaggedSentence};
use crate::llm::LlmError;
use crate::pool;
use crate::prompting::{connective_prompt, LlmHandle};
use crate::sampling;

pub const SCHEMA_VERSION: u32 = 1;
pub const DEFAULT_CAP: usize = 10;

#[derive(Debug, Error)]
pub enum RepositoryError {
    #[error("provider error: {0}")]
    Provider(#[from] LlmError),
    #[error("no connective could be parsed from response {0:?}")]
    UnparseableResponse(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("unsupported schema_version {found} (expected {SCHEMA_VERSION})")]
    SchemaVersionMismatch { found: u64 },
    #[error("line {line}: {message}")]
    CorruptRecord { line: usize, message: String },
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("sentence {0} has no cause/effect pairs")]
    NonCausalSentence(String),
    #[error("duplicate sentence id {0}")]
    DuplicateId(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExampleRecord {
    pub id: String,
    #[serde(rename = "text")]
    pub raw_text: String,
    pub tagged_text: String,
    pub pairs: Vec<CauseEffectPair>,
    pub connectives: Vec<String>,
    pub source: String,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub connective_unverified: bool,
}

impl ExampleRecord {
    fn from_sentence(s: &TaggedSentence, connectives: Vec<String>) -> Self {
        let connective_unverified = !connectives_verified(&s.raw_text, &connectives);
        ExampleRecord {
            id: s.id.clone(),
            raw_text: s.raw_text.clone(),
            tagged_text: s.tagged_text.clone(),
            pairs: s.pairs.clone(),
            connectives,
            source: s.source.clone(),
            connective_unverified,
        }
    }
}

/// Lowercased, whitespace-collapsed, trimmed. Leading hyphens are kept.
pub fn normalize_connective(s: &str) -> String {
    collapse_whitespace(&s.to_lowercase())
}

fn connectives_verified(raw_text: &str, connectives: &[String]) -> bool {
    let haystack = normalize_connective(raw_text);
    connectives.iter().all(|c| haystack.contains(c.as_str()))
}

const EDGE_NOISE: &[char] = &[
    '"', '\'', '`', '“', '”', '‘', '’', '.', ',', ';', ':', '!', '?', '(', ')', '[', ']', '{', '}',
    '*',
];

fn strip_list_marker(item: &str) -> &str {
    let t = item.trim_start();
    for bullet in ["- ", "* ", "• "] {
        if let Some(rest) = t.strip_prefix(bullet) {
            return rest;
        }
    }
    let digits = t.chars().take_while(char::is_ascii_digit).count();
    if digits > 0 {
        let rest = &t[digits..];
        if let Some(rest) = rest.strip_prefix(". ").or_else(|| rest.strip_prefix(") ")) {
            return rest;
        }
    }
    t
}

/// Splits a connective-extraction response on newlines and commas, strips
/// list markers and surrounding quotes/punctuation, normalizes and dedups.
pub fn parse_connective_response(response: &str) -> Vec<String> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for item in response.split(['\n', ',']) {
        let item = strip_list_marker(item)
            .trim_matches(|c: char| c.is_whitespace() || EDGE_NOISE.contains(&c));
        let c = normalize_connective(item);
        if c.is_empty() || matches!(c.as_str(), "none" | "n/a") {
            continue;
        }
        if seen.insert(c.clone()) {
            out.push(c);
        }
    }
    out
}

/// Asks the model for the causal connectives of `text`.
pub fn extract_connectives_text(
    text: &str,
    llm: &LlmHandle,
) -> Result<Vec<String>, RepositoryError> {
    let prompt = connective_prompt(text, &llm.catalog);
    let (_, outcome) = llm.ask(&prompt);
    let response = match outcome {
        Ok(r) => r,
        Err(LlmError::EmptyCompletion) => {
            return Err(RepositoryError::UnparseableResponse(String::new()))
        }
        Err(e) => return Err(e.into()),
    };
    let connectives = parse_connective_response(&response);
    if connectives.is_empty() {
        return Err(RepositoryError::UnparseableResponse(response));
    }
    Ok(connectives)
}

pub fn extract_connectives(
    sentence: &TaggedSentence,
    llm: &LlmHandle,
) -> Result<Vec<String>, RepositoryError> {
    if !sentence.is_causal() {
        return Err(RepositoryError::NonCausalSentence(sentence.id.clone()));
    }
    extract_connectives_text(&sentence.raw_text, llm)
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConnectiveIndex {
    pub cap: usize,
    pub entries: BTreeMap<String, Vec<String>>,
}

impl ConnectiveIndex {
    /// Groups candidate ids by connective and keeps a seeded uniform sample
    /// of at most `cap` per connective, listed in id order.
    pub fn build<'a>(
        records: impl IntoIterator<Item = &'a ExampleRecord>,
        cap: usize,
        seed: u64,
    ) -> Self {
        let mut candidates: BTreeMap<String, Vec<String>> = BTreeMap::new();
        for r in records {
            for c in &r.connectives {
                candidates.entry(c.clone()).or_default().push(r.id.clone());
            }
        }
        let entries = candidates
            .into_iter()
            .map(|(connective, mut ids)| {
                ids.sort();
                ids.dedup();
                let keep = sampling::sample_positions_sorted(ids.len(), cap, seed, &connective);
                let kept = keep.into_iter().map(|i| ids[i].clone()).collect();
                (connective, kept)
            })
            .collect();
        ConnectiveIndex { cap, entries }
    }

    pub fn get(&self, connective: &str) -> &[String] {
        self.entries
            .get(connective)
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Repository {
    pub cap: usize,
    pub seed: u64,
    pub records: BTreeMap<String, ExampleRecord>,
    pub index: ConnectiveIndex,
}

impl Repository {
    /// Wraps stored records and rebuilds their index.
    pub fn from_records(
        records: impl IntoIterator<Item = ExampleRecord>,
        cap: usize,
        seed: u64,
    ) -> Self {
        let records: BTreeMap<String, ExampleRecord> =
            records.into_iter().map(|r| (r.id.clone(), r)).collect();
        let index = ConnectiveIndex::build(records.values(), cap, seed);
        Repository {
            cap,
            seed,
            records,
            index,
        }
    }

    pub fn get(&self, id: &str) -> Option<&ExampleRecord> {
        self.records.get(id)
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct BuildConfig {
    pub cap: usize,
    pub seed: u64,
    pub concurrency: usize,
}

impl Default for BuildConfig {
    fn default() -> Self {
        BuildConfig {
            cap: DEFAULT_CAP,
            seed: 0,
            concurrency: 4,
        }
    }
}

#[derive(Debug)]
pub struct BuildOutcome {
    pub repository: Repository,
    /// Sentences whose extraction response held no connective.
    pub skipped: Vec<String>,
    /// Sentences with connectives that lost every per-connective draw.
    pub unsampled: usize,
}

/// Extracts connectives for every sentence, then samples the index. Provider
/// failures abort the build; with a recording gateway every answer received
/// so far is already in the transcript, so rerunning resumes without
/// repeating calls.
pub fn build_repository(
    corpus: &[TaggedSentence],
    llm: &LlmHandle,
    cfg: &BuildConfig,
) -> Result<BuildOutcome, RepositoryError> {
    if corpus.is_empty() {
        return Err(RepositoryError::EmptyCorpus);
    }
    let mut sentences: Vec<&TaggedSentence> = corpus.iter().collect();
    sentences.sort_by(|a, b| a.id.cmp(&b.id));
    for w in sentences.windows(2) {
        if w[0].id == w[1].id {
            return Err(RepositoryError::DuplicateId(w[0].id.clone()));
        }
    }
    if let Some(s) = sentences.iter().find(|s| !s.is_causal()) {
        return Err(RepositoryError::NonCausalSentence(s.id.clone()));
    }

    let mut first_error = None;
    let mut extracted = Vec::with_capacity(sentences.len());
    pool::for_each_ordered(
        &sentences,
        cfg.concurrency,
        |s| extract_connectives(s, llm),
        |i, result| {
            match result {
                Ok(c) => extracted.push((sentences[i], Some(c))),
                Err(RepositoryError::UnparseableResponse(r)) => {
                    log::warn!(
                        "skipping {}: no connective in response {r:?}",
                        sentences[i].id
                    );
                    extracted.push((sentences[i], None));
                }
                Err(e) => {
                    first_error = Some(e);
                    return false;
                }
            }
            true
        },
    );
    if let Some(e) = first_error {
        return Err(e);
    }

    let skipped = extracted
        .iter()
        .filter(|(_, c)| c.is_none())
        .map(|(s, _)| s.id.clone())
        .collect();
    let candidates: Vec<ExampleRecord> = extracted
        .into_iter()
        .filter_map(|(s, c)| c.map(|c| ExampleRecord::from_sentence(s, c)))
        .collect();
    let index = ConnectiveIndex::build(&candidates, cfg.cap, cfg.seed);

    let mut indexed_under: BTreeMap<&str, HashSet<&str>> = BTreeMap::new();
    for (connective, ids) in &index.entries {
        for id in ids {
            indexed_under
                .entry(id.as_str())
                .or_default()
                .insert(connective.as_str());
        }
    }
    let mut unsampled = 0;
    let mut stored = Vec::new();
    for mut rec in candidates.iter().cloned() {
        let Some(keys) = indexed_under.get(rec.id.as_str()) else {
            unsampled += 1;
            continue;
        };
        rec.connectives.retain(|c| keys.contains(c.as_str()));
        rec.connective_unverified = !connectives_verified(&rec.raw_text, &rec.connectives);
        stored.push(rec);
    }
    let repository = Repository::from_records(stored, cfg.cap, cfg.seed);
    debug_assert_eq!(repository.index, index);
    Ok(BuildOutcome {
        repository,
        skipped,
        unsampled,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RepositoryStats {
    pub total_records: usize,
    pub unique_connectives: usize,
    /// Examples-per-connective → number of connectives with that many.
    pub frequency_histogram: BTreeMap<usize, usize>,
    pub connectives_with_at_least_5: usize,
    /// Index entries counted with multiplicity.
    pub total_entries: usize,
}

pub fn repository_stats(repo: &Repository) -> RepositoryStats {
    let mut frequency_histogram = BTreeMap::new();
    let mut total_entries = 0;
    let mut connectives_with_at_least_5 = 0;
    for ids in repo.index.entries.values() {
        *frequency_histogram.entry(ids.len()).or_insert(0) += 1;
        total_entries += ids.len();
        if ids.len() >= 5 {
            connectives_with_at_least_5 += 1;
        }
    }
    RepositoryStats {
        total_records: repo.records.len(),
        unique_connectives: repo.index.len(),
        frequency_histogram,
        connectives_with_at_least_5,
        total_entries,
    }
}

/// Up to `n` connectives per frequency category, drawn with `seed`.
pub fn sample_connectives_by_frequency(
    repo: &Repository,
    n: usize,
    seed: u64,
) -> BTreeMap<usize, Vec<String>> {
    let mut by_freq: BTreeMap<usize, Vec<String>> = BTreeMap::new();
    for (c, ids) in &repo.index.entries {
        by_freq.entry(ids.len()).or_default().push(c.clone());
    }
    by_freq
        .into_iter()
        .map(|(freq, keys)| {
            let picked =
                sampling::sample_positions_sorted(keys.len(), n, seed, &format!("stats-{freq}"));
            (freq, picked.into_iter().map(|i| keys[i].clone()).collect())
        })
        .collect()
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    schema_version: u64,
    cap: usize,
    seed: u64,
}

/// Writes the repository as JSONL. The file is written beside `path` and
/// renamed into place, so a failed save never leaves a partial file.
pub fn save_repository(repo: &Repository, path: &Path) -> Result<(), RepositoryError> {
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    let file_name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let tmp = dir.join(format!(".{file_name}.tmp"));
    {
        let mut w = BufWriter::new(File::create(&tmp)?);
        let header = Header {
            schema_version: SCHEMA_VERSION as u64,
            cap: repo.cap,
            seed: repo.seed,
        };
        serde_json::to_writer(&mut w, &header).map_err(std::io::Error::other)?;
        w.write_all(b"\n")?;
        for rec in repo.records.values() {
            serde_json::to_writer(&mut w, rec).map_err(std::io::Error::other)?;
            w.write_all(b"\n")?;
        }
        w.into_inner().map_err(|e| e.into_error())?.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_repository(path: &Path) -> Result<Repository, RepositoryError> {
    let reader = BufReader::new(File::open(path)?);
    let mut lines = reader.lines().enumerate();
    let corrupt = |line: usize, message: String| RepositoryError::CorruptRecord { line, message };

    let header_line = match lines.next() {
        Some((_, l)) => l?,
        None => return Err(corrupt(1, "missing header".into())),
    };
    let raw: serde_json::Value =
        serde_json::from_str(&header_line).map_err(|e| corrupt(1, e.to_string()))?;
    let found = raw
        .get("schema_version")
        .and_then(serde_json::Value::as_u64)
        .ok_or_else(|| corrupt(1, "header lacks schema_version".into()))?;
    if found != SCHEMA_VERSION as u64 {
        return Err(RepositoryError::SchemaVersionMismatch { found });
    }
    let header: Header = serde_json::from_value(raw).map_err(|e| corrupt(1, e.to_string()))?;

    let mut records = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in lines {
        let line = line?;
        let n = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let rec: ExampleRecord =
            serde_json::from_str(&line).map_err(|e| corrupt(n, e.to_string()))?;
        if rec.connectives.is_empty() {
            return Err(corrupt(n, format!("record {} has no connectives", rec.id)));
        }
        if !seen.insert(rec.id.clone()) {
            return Err(corrupt(n, format!("duplicate record id {}", rec.id)));
        }
        records.push(rec);
    }
    Ok(Repository::from_records(records, header.cap, header.seed))
}
