//! Example selection: zeroshot, random fewshot, kNN RAG, Pattern RAG and
//! kNN+Pattern RAG.
//!
//! Pattern RAG compares the input sentence's causal connectives against the
//! repository's index keys and draws examples from every key that is
//! similar enough. kNN RAG ranks repository sentences by embedding cosine
//! similarity. kNN+Pattern concatenates the two, kNN block first, dropping
//! repeated records.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;
use std::sync::{Arc, RwLock};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding::{
    embed, embed_batch, knn_search, EmbeddingCache, EmbeddingError, EmbeddingProvider,
    EmbeddingVector,
};
use crate::llm::LlmError;
use crate::prompting::LlmHandle;
use crate::repository::{
    extract_connectives_text, normalize_connective, ExampleRecord, Repository, RepositoryError,
};
use crate::sampling;

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error("connective is empty")]
    EmptyConnective,
    #[error("invalid retrieval config: {0}")]
    InvalidConfig(String),
    #[error("embedding error: {0}")]
    Embedding(#[from] EmbeddingError),
    #[error("provider error: {0}")]
    Provider(#[from] LlmError),
    #[error("strategy {0} needs embeddings for the repository")]
    MissingEmbeddings(StrategyKind),
    #[error("strategy {0} needs a model to extract input connectives")]
    MissingModel(StrategyKind),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum StrategyKind {
    #[serde(rename = "zeroshot")]
    Zeroshot,
    #[serde(rename = "random")]
    Random,
    #[serde(rename = "knn")]
    Knn,
    #[serde(rename = "pattern")]
    Pattern,
    #[serde(rename = "knn-pattern")]
    KnnPattern,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 5] = [
        StrategyKind::Zeroshot,
        StrategyKind::Random,
        StrategyKind::Knn,
        StrategyKind::Pattern,
        StrategyKind::KnnPattern,
    ];

    pub fn name(self) -> &'static str {
        match self {
            StrategyKind::Zeroshot => "zeroshot",
            StrategyKind::Random => "random",
            StrategyKind::Knn => "knn",
            StrategyKind::Pattern => "pattern",
            StrategyKind::KnnPattern => "knn-pattern",
        }
    }

    pub fn needs_embeddings(self) -> bool {
        matches!(self, StrategyKind::Knn | StrategyKind::KnnPattern)
    }

    pub fn needs_connectives(self) -> bool {
        matches!(self, StrategyKind::Pattern | StrategyKind::KnnPattern)
    }
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for StrategyKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "zeroshot" | "zero-shot" => Ok(StrategyKind::Zeroshot),
            "random" => Ok(StrategyKind::Random),
            "knn" => Ok(StrategyKind::Knn),
            "pattern" => Ok(StrategyKind::Pattern),
            "knn-pattern" | "knn_pattern" | "knn+pattern" => Ok(StrategyKind::KnnPattern),
            other => Err(format!(
                "unknown strategy {other:?} (expected zeroshot, random, knn, pattern or knn-pattern)"
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Matcher {
    #[serde(rename = "edit-ratio")]
    EditRatio,
    #[serde(rename = "token-containment")]
    TokenContainment,
}

impl fmt::Display for Matcher {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Matcher::EditRatio => "edit-ratio",
            Matcher::TokenContainment => "token-containment",
        })
    }
}

impl FromStr for Matcher {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "edit-ratio" => Ok(Matcher::EditRatio),
            "token-containment" => Ok(Matcher::TokenContainment),
            other => Err(format!(
                "unknown matcher {other:?} (expected edit-ratio or token-containment)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalConfig {
    pub k: usize,
    pub similarity_threshold: f64,
    pub matcher: Matcher,
    pub seed: u64,
    pub fallback_to_random: bool,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        RetrievalConfig {
            k: 10,
            similarity_threshold: 0.90,
            matcher: Matcher::EditRatio,
            seed: 0,
            fallback_to_random: true,
        }
    }
}

impl RetrievalConfig {
    pub fn validate(&self) -> Result<(), RetrievalError> {
        if self.k == 0 {
            return Err(RetrievalError::InvalidConfig("k must be at least 1".into()));
        }
        if !(self.similarity_threshold > 0.0 && self.similarity_threshold <= 1.0) {
            return Err(RetrievalError::InvalidConfig(format!(
                "similarity threshold {} is outside (0, 1]",
                self.similarity_threshold
            )));
        }
        Ok(())
    }

    /// Strictly above the threshold; an exact match always qualifies so a
    /// threshold of 1.0 still means "identical".
    pub fn accepts(&self, similarity: f64) -> bool {
        similarity > self.similarity_threshold || similarity >= 1.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExampleOrigin {
    Random,
    Knn,
    Pattern,
    RandomFallback,
}

#[derive(Debug, Clone)]
pub struct RetrievedExample<'a> {
    pub record: &'a ExampleRecord,
    pub origin: ExampleOrigin,
    /// Cosine similarity for kNN hits, connective similarity for pattern hits.
    pub score: Option<f64>,
    pub matched_connective: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProvenanceEntry {
    pub record_id: String,
    pub origin: ExampleOrigin,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub matched_connective: Option<String>,
}

#[derive(Debug, Clone)]
pub struct RetrievalResult<'a> {
    pub strategy: StrategyKind,
    pub examples: Vec<RetrievedExample<'a>>,
    pub fallback_used: bool,
}

impl<'a> RetrievalResult<'a> {
    pub fn empty(strategy: StrategyKind) -> Self {
        RetrievalResult {
            strategy,
            examples: Vec::new(),
            fallback_used: false,
        }
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn ids(&self) -> Vec<&str> {
        self.examples.iter().map(|e| e.record.id.as_str()).collect()
    }

    pub fn provenance(&self) -> Vec<ProvenanceEntry> {
        self.examples
            .iter()
            .map(|e| ProvenanceEntry {
                record_id: e.record.id.clone(),
                origin: e.origin,
                score: e.score,
                matched_connective: e.matched_connective.clone(),
            })
            .collect()
    }
}

/// Unit-cost Levenshtein distance over Unicode scalar values.
pub fn edit_distance(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    if a.is_empty() {
        return b.len();
    }
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, ca) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, cb) in b.iter().enumerate() {
            let substitute = prev[j] + usize::from(ca != cb);
            cur[j + 1] = substitute.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

fn edit_ratio(a: &str, b: &str) -> f64 {
    let longest = a.chars().count().max(b.chars().count());
    1.0 - edit_distance(a, b) as f64 / longest as f64
}

fn contains_token_run(longer: &[&str], shorter: &[&str]) -> bool {
    shorter.len() <= longer.len() && longer.windows(shorter.len()).any(|w| w == shorter)
}

/// Similarity in [0, 1] between two normalized connectives.
pub fn connective_similarity(a: &str, b: &str, matcher: Matcher) -> Result<f64, RetrievalError> {
    let (a, b) = (a.trim(), b.trim());
    if a.is_empty() || b.is_empty() {
        return Err(RetrievalError::EmptyConnective);
    }
    match matcher {
        Matcher::EditRatio => Ok(edit_ratio(a, b)),
        Matcher::TokenContainment => {
            let ta: Vec<&str> = a.split_whitespace().collect();
            let tb: Vec<&str> = b.split_whitespace().collect();
            let (short, long) = if ta.len() <= tb.len() {
                (&ta, &tb)
            } else {
                (&tb, &ta)
            };
            if contains_token_run(long, short) {
                Ok(1.0)
            } else {
                Ok(edit_ratio(a, b))
            }
        }
    }
}

pub fn retrieve_random<'a>(repo: &'a Repository, cfg: &RetrievalConfig) -> RetrievalResult<'a> {
    random_block(repo, cfg, ExampleOrigin::Random, StrategyKind::Random)
}

fn random_block<'a>(
    repo: &'a Repository,
    cfg: &RetrievalConfig,
    origin: ExampleOrigin,
    strategy: StrategyKind,
) -> RetrievalResult<'a> {
    let records: Vec<&ExampleRecord> = repo.records.values().collect();
    let examples = sampling::sample_positions(records.len(), cfg.k, cfg.seed, "random")
        .into_iter()
        .map(|i| RetrievedExample {
            record: records[i],
            origin,
            score: None,
            matched_connective: None,
        })
        .collect();
    RetrievalResult {
        strategy,
        examples,
        fallback_used: origin == ExampleOrigin::RandomFallback,
    }
}

/// Embeddings of every repository sentence, for kNN retrieval.
pub struct KnnIndex {
    provider: Arc<dyn EmbeddingProvider>,
    cache: Arc<EmbeddingCache>,
    vectors: BTreeMap<String, EmbeddingVector>,
}

impl KnnIndex {
    pub fn build(
        repo: &Repository,
        provider: Arc<dyn EmbeddingProvider>,
        cache: Arc<EmbeddingCache>,
    ) -> Result<Self, EmbeddingError> {
        let ids: Vec<&String> = repo.records.keys().collect();
        let texts: Vec<String> = repo.records.values().map(|r| r.raw_text.clone()).collect();
        let vectors = if texts.is_empty() {
            BTreeMap::new()
        } else {
            ids.into_iter()
                .cloned()
                .zip(embed_batch(&texts, provider.as_ref(), &cache)?)
                .collect()
        };
        Ok(KnnIndex {
            provider,
            cache,
            vectors,
        })
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn vectors(&self) -> &BTreeMap<String, EmbeddingVector> {
        &self.vectors
    }

    pub fn embed_query(&self, text: &str) -> Result<EmbeddingVector, EmbeddingError> {
        embed(text, self.provider.as_ref(), &self.cache)
    }
}

pub fn retrieve_knn<'a>(
    input_text: &str,
    repo: &'a Repository,
    knn: &KnnIndex,
    cfg: &RetrievalConfig,
) -> Result<RetrievalResult<'a>, RetrievalError> {
    if repo.is_empty() {
        return Ok(RetrievalResult::empty(StrategyKind::Knn));
    }
    let query = knn.embed_query(input_text)?;
    let hits = knn_search(&query, &knn.vectors, cfg.k)?;
    let examples = hits
        .into_iter()
        .filter_map(|h| {
            repo.get(&h.record_id).map(|record| RetrievedExample {
                record,
                origin: ExampleOrigin::Knn,
                score: Some(h.similarity),
                matched_connective: None,
            })
        })
        .collect();
    Ok(RetrievalResult {
        strategy: StrategyKind::Knn,
        examples,
        fallback_used: false,
    })
}

/// Records indexed under any key similar enough to one of the input
/// connectives; a seeded sample of `k` when there are more.
pub fn retrieve_pattern<'a>(
    input_connectives: &[String],
    repo: &'a Repository,
    cfg: &RetrievalConfig,
) -> RetrievalResult<'a> {
    let mut inputs: Vec<String> = input_connectives
        .iter()
        .map(|c| normalize_connective(c))
        .filter(|c| !c.is_empty())
        .collect();
    inputs.sort();
    inputs.dedup();

    // record id → (best similarity, key it came from)
    let mut candidates: BTreeMap<&str, (f64, &str)> = BTreeMap::new();
    for (key, ids) in &repo.index.entries {
        let best = inputs
            .iter()
            .filter_map(|input| connective_similarity(input, key, cfg.matcher).ok())
            .fold(f64::NEG_INFINITY, f64::max);
        if !cfg.accepts(best) {
            continue;
        }
        for id in ids {
            let slot = candidates
                .entry(id.as_str())
                .or_insert((best, key.as_str()));
            if best > slot.0 {
                *slot = (best, key.as_str());
            }
        }
    }

    if candidates.is_empty() {
        if cfg.fallback_to_random && !repo.is_empty() {
            return random_block(
                repo,
                cfg,
                ExampleOrigin::RandomFallback,
                StrategyKind::Pattern,
            );
        }
        return RetrievalResult::empty(StrategyKind::Pattern);
    }

    let candidates: Vec<(&str, (f64, &str))> = candidates.into_iter().collect();
    let salt = format!("pattern:{}", inputs.join("|"));
    let examples = sampling::sample_positions_sorted(candidates.len(), cfg.k, cfg.seed, &salt)
        .into_iter()
        .filter_map(|i| {
            let (id, (score, key)) = candidates[i];
            repo.get(id).map(|record| RetrievedExample {
                record,
                origin: ExampleOrigin::Pattern,
                score: Some(score),
                matched_connective: Some(key.to_string()),
            })
        })
        .collect();
    RetrievalResult {
        strategy: StrategyKind::Pattern,
        examples,
        fallback_used: false,
    }
}

/// kNN block followed by the pattern block, keeping the first occurrence of
/// each record.
pub fn combine_knn_pattern<'a>(
    knn: RetrievalResult<'a>,
    pattern: RetrievalResult<'a>,
) -> RetrievalResult<'a> {
    let mut seen = std::collections::HashSet::new();
    let fallback_used = pattern.fallback_used;
    let examples = knn
        .examples
        .into_iter()
        .chain(pattern.examples)
        .filter(|e| seen.insert(e.record.id.clone()))
        .collect();
    RetrievalResult {
        strategy: StrategyKind::KnnPattern,
        examples,
        fallback_used,
    }
}

pub fn retrieve_knn_pattern<'a>(
    input_text: &str,
    input_connectives: &[String],
    repo: &'a Repository,
    knn: &KnnIndex,
    cfg: &RetrievalConfig,
) -> Result<RetrievalResult<'a>, RetrievalError> {
    let knn_block = retrieve_knn(input_text, repo, knn, cfg)?;
    let pattern_block = retrieve_pattern(input_connectives, repo, cfg);
    Ok(combine_knn_pattern(knn_block, pattern_block))
}

/// Input-sentence connectives, memoized by sentence id.
#[derive(Default)]
pub struct ConnectiveCache {
    entries: RwLock<HashMap<String, Vec<String>>>,
}

impl ConnectiveCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, sentence_id: &str) -> Option<Vec<String>> {
        self.entries.read().unwrap().get(sentence_id).cloned()
    }

    pub fn insert(&self, sentence_id: &str, connectives: Vec<String>) {
        self.entries
            .write()
            .unwrap()
            .entry(sentence_id.to_string())
            .or_insert(connectives);
    }
}

/// Runs the connective-extraction prompt on a bare input sentence. A
/// response without connectives yields an empty list.
pub fn input_connectives(
    sentence_id: &str,
    sentence: &str,
    llm: &LlmHandle,
    cache: &ConnectiveCache,
) -> Result<Vec<String>, LlmError> {
    if let Some(hit) = cache.get(sentence_id) {
        return Ok(hit);
    }
    let connectives = match extract_connectives_text(sentence, llm) {
        Ok(c) => c,
        Err(RepositoryError::UnparseableResponse(_)) => Vec::new(),
        Err(RepositoryError::Provider(e)) => return Err(e),
        Err(other) => {
            unreachable!("connective extraction only fails on the provider or parsing: {other}")
        }
    };
    cache.insert(sentence_id, connectives.clone());
    Ok(connectives)
}

/// Everything a strategy may need, bundled for per-instance selection.
pub struct Retriever<'r> {
    pub repo: &'r Repository,
    pub cfg: RetrievalConfig,
    pub knn: Option<&'r KnnIndex>,
    pub llm: Option<&'r LlmHandle>,
    pub connective_cache: ConnectiveCache,
}

impl<'r> Retriever<'r> {
    pub fn new(repo: &'r Repository, cfg: RetrievalConfig) -> Self {
        Retriever {
            repo,
            cfg,
            knn: None,
            llm: None,
            connective_cache: ConnectiveCache::new(),
        }
    }

    pub fn with_knn(mut self, knn: &'r KnnIndex) -> Self {
        self.knn = Some(knn);
        self
    }

    pub fn with_llm(mut self, llm: &'r LlmHandle) -> Self {
        self.llm = Some(llm);
        self
    }

    fn connectives_for(
        &self,
        strategy: StrategyKind,
        id: &str,
        text: &str,
    ) -> Result<Vec<String>, RetrievalError> {
        let llm = self.llm.ok_or(RetrievalError::MissingModel(strategy))?;
        Ok(input_connectives(id, text, llm, &self.connective_cache)?)
    }

    pub fn retrieve(
        &self,
        strategy: StrategyKind,
        sentence_id: &str,
        text: &str,
    ) -> Result<RetrievalResult<'r>, RetrievalError> {
        self.cfg.validate()?;
        let knn = || self.knn.ok_or(RetrievalError::MissingEmbeddings(strategy));
        match strategy {
            StrategyKind::Zeroshot => Ok(RetrievalResult::empty(strategy)),
            StrategyKind::Random => Ok(retrieve_random(self.repo, &self.cfg)),
            StrategyKind::Knn => retrieve_knn(text, self.repo, knn()?, &self.cfg),
            StrategyKind::Pattern => {
                let inputs = self.connectives_for(strategy, sentence_id, text)?;
                Ok(retrieve_pattern(&inputs, self.repo, &self.cfg))
            }
            StrategyKind::KnnPattern => {
                let knn = knn()?;
                let inputs = self.connectives_for(strategy, sentence_id, text)?;
                retrieve_knn_pattern(text, &inputs, self.repo, knn, &self.cfg)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::HashingEmbedder;
    use crate::llm::{Gateway, ModelSettings, ScriptedBackend};
    use crate::prompting::PromptCatalog;

    fn rec(id: &str, text: &str, connectives: &[&str]) -> ExampleRecord {
        ExampleRecord {
            id: id.into(),
            raw_text: text.into(),
            tagged_text: text.into(),
            pairs: vec![],
            connectives: connectives.iter().map(|c| c.to_string()).collect(),
            source: "t".into(),
            connective_unverified: false,
        }
    }

    fn synthetic() -> Repository {
        let mut records = Vec::new();
        for i in 0..12 {
            records.push(rec(
                &format!("cb-{i:02}"),
                &format!("effect {i} is caused by cause {i}"),
                &["caused by"],
            ));
        }
        for i in 0..3 {
            records.push(rec(
                &format!("lt-{i:02}"),
                &format!("cause {i} will lead to effect {i}"),
                &["lead to"],
            ));
        }
        for i in 0..5 {
            records.push(rec(
                &format!("ib-{i:02}"),
                &format!("effect {i} induced by drug {i}"),
                &["induced by"],
            ));
        }
        Repository::from_records(records, 12, 1)
    }

    #[test]
    fn similarity_values() {
        let s = |a, b, m| connective_similarity(a, b, m).unwrap();
        assert_eq!(s("induced by", "induced by", Matcher::EditRatio), 1.0);
        assert!((s("caused by", "caused by the", Matcher::EditRatio) - 9.0 / 13.0).abs() < 1e-12);
        assert_eq!(
            s("caused by", "caused by the", Matcher::TokenContainment),
            1.0
        );
        assert_eq!(s("lead to", "leads to", Matcher::EditRatio), 0.875);
        assert_eq!(s("lead to", "leads to", Matcher::TokenContainment), 0.875);
        assert!(matches!(
            connective_similarity("", "x", Matcher::EditRatio),
            Err(RetrievalError::EmptyConnective)
        ));
    }

    #[test]
    fn edit_distance_basics() {
        assert_eq!(edit_distance("", "abc"), 3);
        assert_eq!(edit_distance("kitten", "sitting"), 3);
        assert_eq!(edit_distance("ü", "u"), 1);
    }

    #[test]
    fn random_is_seeded() {
        let repo = synthetic();
        let cfg = RetrievalConfig {
            seed: 5,
            ..Default::default()
        };
        let a = retrieve_random(&repo, &cfg);
        assert_eq!(a.ids(), retrieve_random(&repo, &cfg).ids());
        assert_eq!(a.len(), 10);

        let small = Repository::from_records(
            vec![
                rec("a", "x", &["c"]),
                rec("b", "y", &["c"]),
                rec("c", "z", &["c"]),
            ],
            10,
            0,
        );
        assert_eq!(retrieve_random(&small, &cfg).len(), 3);
    }

    #[test]
    fn pattern_caps_at_k() {
        let repo = synthetic();
        let r = retrieve_pattern(&["caused by".into()], &repo, &RetrievalConfig::default());
        assert_eq!(r.len(), 10);
        assert!(!r.fallback_used);
        assert!(r
            .examples
            .iter()
            .all(|e| e.score == Some(1.0) && e.record.id.starts_with("cb-")));
    }

    #[test]
    fn pattern_fallback() {
        let repo = synthetic();
        let r = retrieve_pattern(
            &["caused by the".into()],
            &repo,
            &RetrievalConfig::default(),
        );
        assert!(r.fallback_used);
        assert_eq!(r.len(), 10);
        assert!(r
            .examples
            .iter()
            .all(|e| e.origin == ExampleOrigin::RandomFallback));

        let cfg = RetrievalConfig {
            fallback_to_random: false,
            ..Default::default()
        };
        assert!(retrieve_pattern(&[], &repo, &cfg).is_empty());
    }

    #[test]
    fn threshold_one_means_identical() {
        let repo = synthetic();
        let cfg = RetrievalConfig {
            similarity_threshold: 1.0,
            fallback_to_random: false,
            ..Default::default()
        };
        assert_eq!(retrieve_pattern(&["lead to".into()], &repo, &cfg).len(), 3);
        assert!(retrieve_pattern(&["leads to".into()], &repo, &cfg).is_empty());
    }

    fn knn_index(repo: &Repository) -> KnnIndex {
        KnnIndex::build(
            repo,
            Arc::new(HashingEmbedder::new(64)),
            Arc::new(EmbeddingCache::in_memory()),
        )
        .unwrap()
    }

    #[test]
    fn knn_puts_identical_text_first() {
        let repo = synthetic();
        let knn = knn_index(&repo);
        let r = retrieve_knn(
            "cause 2 will lead to effect 2",
            &repo,
            &knn,
            &RetrievalConfig::default(),
        )
        .unwrap();
        assert_eq!(r.len(), 10);
        assert_eq!(r.examples[0].record.id, "lt-02");
        assert_eq!(r.examples[0].score, Some(1.0));
        let scores: Vec<f64> = r.examples.iter().map(|e| e.score.unwrap()).collect();
        assert!(scores.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn knn_pattern_dedups_and_orders() {
        let repo = synthetic();
        let knn = knn_index(&repo);
        let cfg = RetrievalConfig::default();
        let r = retrieve_knn_pattern(
            "effect 1 induced by drug 1",
            &["induced by".into()],
            &repo,
            &knn,
            &cfg,
        )
        .unwrap();
        let ids = r.ids();
        let mut unique = ids.clone();
        unique.sort();
        unique.dedup();
        assert_eq!(unique.len(), ids.len());
        assert!(ids.len() <= 20);
        assert_eq!(r.examples[0].origin, ExampleOrigin::Knn);
    }

    #[test]
    fn retriever_extracts_and_caches_input_connectives() {
        let repo = synthetic();
        let backend = Arc::new(ScriptedBackend::constant("caused by"));
        let llm = LlmHandle::new(
            Gateway::live(backend.clone()),
            PromptCatalog::default(),
            ModelSettings::new("m"),
        );
        let retriever = Retriever::new(&repo, RetrievalConfig::default()).with_llm(&llm);
        let a = retriever
            .retrieve(StrategyKind::Pattern, "in-1", "fever is caused by flu")
            .unwrap();
        let b = retriever
            .retrieve(StrategyKind::Pattern, "in-1", "fever is caused by flu")
            .unwrap();
        assert_eq!(a.ids(), b.ids());
        assert_eq!(backend.calls(), 1);
        assert!(matches!(
            retriever.retrieve(StrategyKind::Knn, "in-1", "x"),
            Err(RetrievalError::MissingEmbeddings(StrategyKind::Knn))
        ));
        assert!(retriever
            .retrieve(StrategyKind::Zeroshot, "in-1", "x")
            .unwrap()
            .is_empty());
    }

    #[test]
    fn empty_model_answer_gives_no_connectives() {
        let backend = Arc::new(ScriptedBackend::constant("none"));
        let llm = LlmHandle::new(
            Gateway::live(backend),
            PromptCatalog::default(),
            ModelSettings::new("m"),
        );
        assert!(
            input_connectives("x", "the cat sat", &llm, &ConnectiveCache::new())
                .unwrap()
                .is_empty()
        );
    }

    #[test]
    fn config_validation() {
        assert!(RetrievalConfig {
            k: 0,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(RetrievalConfig {
            similarity_threshold: 0.0,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(RetrievalConfig {
            similarity_threshold: 1.5,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(RetrievalConfig::default().validate().is_ok());
        assert_eq!(
            "knn+pattern".parse::<StrategyKind>().unwrap(),
            StrategyKind::KnnPattern
        );
        assert_eq!(
            "token_containment".parse::<Matcher>().unwrap(),
            Matcher::TokenContainment
        );
    }
}
