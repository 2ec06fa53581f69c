//! Sentence embeddings, a write-through cache, and exact cosine kNN search.

use std::collections::{BTreeMap, HashMap};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Mutex, RwLock};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::collapse_whitespace;
use crate::llm::{
    classify_http, endpoint, http_client, with_retry, LlmError, RetryPolicy, API_KEY_ENV,
};

#[derive(Debug, Error)]
pub enum EmbeddingError {
    #[error("provider error: {0}")]
    Provider(#[from] LlmError),
    #[error("dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("zero vector has no direction")]
    ZeroVector,
    #[error("vector contains a non-finite value")]
    NonFinite,
    #[error("cannot embed empty text")]
    EmptyText,
    #[error("kNN corpus is empty")]
    EmptyCorpus,
    #[error("k must be at least 1")]
    InvalidK,
    #[error("embedding cache {path}: {message}")]
    Cache { path: PathBuf, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    pub values: Vec<f64>,
    pub model_id: String,
}

impl EmbeddingVector {
    pub fn new(values: Vec<f64>, model_id: impl Into<String>) -> Result<Self, EmbeddingError> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(EmbeddingError::NonFinite);
        }
        Ok(EmbeddingVector {
            values,
            model_id: model_id.into(),
        })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct EmbeddingKey {
    pub content_hash: String,
    pub model_id: String,
}

/// Lowercase and collapse whitespace.
pub fn normalize_text(text: &str) -> String {
    collapse_whitespace(&text.to_lowercase())
}

impl EmbeddingKey {
    pub fn new(text: &str, model_id: &str) -> Self {
        EmbeddingKey {
            content_hash: hex::encode(Sha256::digest(normalize_text(text).as_bytes())),
            model_id: model_id.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NeighborHit {
    pub record_id: String,
    pub similarity: f64,
}

pub trait EmbeddingProvider: Send + Sync {
    fn model_id(&self) -> &str;
    fn embed_texts(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, EmbeddingError>;
}

/// Offline embedder: each whitespace token of the normalized text is hashed
/// into one of `dim` buckets, counts are accumulated, and the result is
/// L2-normalized. It carries no semantics and exists for offline runs.
#[derive(Debug)]
pub struct HashingEmbedder {
    dim: usize,
    model_id: String,
    calls: AtomicUsize,
}

impl HashingEmbedder {
    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        HashingEmbedder {
            dim,
            model_id: format!("local-hash-{dim}"),
            calls: AtomicUsize::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    fn embed_one(&self, text: &str) -> Vec<f64> {
        let mut v = vec![0.0; self.dim];
        for token in normalize_text(text).split(' ').filter(|t| !t.is_empty()) {
            let digest = Sha256::digest(token.as_bytes());
            let bucket = u64::from_le_bytes(digest[..8].try_into().unwrap()) % self.dim as u64;
            v[bucket as usize] += 1.0;
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            v.iter_mut().for_each(|x| *x /= norm);
        }
        v
    }
}

impl EmbeddingProvider for HashingEmbedder {
    fn model_id(&self) -> &str {
        &self.model_id
    }

    fn embed_texts(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, EmbeddingError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        Ok(texts.iter().map(|t| self.embed_one(t)).collect())
    }
}

/// OpenAI-compatible `/v1/embeddings` client.
pub struct HttpEmbedder {
    client: reqwest::blocking::Client,
    url: String,
    model_id: String,
    api_key: Option<String>,
    retry: RetryPolicy,
}

impl HttpEmbedder {
    pub fn new(base_url: &str, model_id: &str, api_key: Option<String>) -> Self {
        HttpEmbedder {
            client: http_client(Duration::from_secs(60)),
            url: endpoint(base_url, "embeddings"),
            model_id: model_id.to_string(),
            api_key,
            retry: RetryPolicy::default(),
        }
    }

    pub fn from_env(base_url: &str, model_id: &str) -> Self {
        Self::new(base_url, model_id, std::env::var(API_KEY_ENV).ok())
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }
}

#[derive(Serialize)]
struct EmbeddingBody<'a> {
    model: &'a str,
    input: &'a [String],
}

#[derive(Deserialize)]
struct EmbeddingReply {
    data: Vec<EmbeddingDatum>,
}

#[derive(Deserialize)]
struct EmbeddingDatum {
    #[serde(default)]
    index: usize,
    embedding: Vec<f64>,
}

impl EmbeddingProvider for HttpEmbedder {
    fn model_id(&self) -> &str {
        &self.model_id
    }

    fn embed_texts(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, EmbeddingError> {
        let body = EmbeddingBody {
            model: &self.model_id,
            input: texts,
        };
        let value = with_retry(&self.retry, || {
            let mut rb = self.client.post(&self.url).json(&body);
            if let Some(key) = &self.api_key {
                rb = rb.bearer_auth(key);
            }
            classify_http(rb.send())
        })?;
        let mut reply: EmbeddingReply =
            serde_json::from_value(value).map_err(|e| LlmError::BadResponse(e.to_string()))?;
        if reply.data.len() != texts.len() {
            return Err(LlmError::BadResponse(format!(
                "asked for {} embeddings, got {}",
                texts.len(),
                reply.data.len()
            ))
            .into());
        }
        reply.data.sort_by_key(|d| d.index);
        Ok(reply.data.into_iter().map(|d| d.embedding).collect())
    }
}

#[derive(Serialize, Deserialize)]
struct CacheLine {
    key: String,
    model: String,
    dim: usize,
    vector: Vec<f64>,
}

/// Vectors keyed by (normalized-text hash, model). Optionally persisted as
/// JSONL; every insert is appended to the file.
pub struct EmbeddingCache {
    entries: RwLock<HashMap<EmbeddingKey, EmbeddingVector>>,
    dims: RwLock<HashMap<String, usize>>,
    writer: Option<(PathBuf, Mutex<File>)>,
}

impl EmbeddingCache {
    pub fn in_memory() -> Self {
        EmbeddingCache {
            entries: RwLock::new(HashMap::new()),
            dims: RwLock::new(HashMap::new()),
            writer: None,
        }
    }

    /// Loads `path` if it exists and appends new vectors to it.
    pub fn open(path: &Path) -> Result<Self, EmbeddingError> {
        let err = |message: String| EmbeddingError::Cache {
            path: path.to_path_buf(),
            message,
        };
        let cache = EmbeddingCache::in_memory();
        if path.exists() {
            let reader = BufReader::new(File::open(path).map_err(|e| err(e.to_string()))?);
            for (i, line) in reader.lines().enumerate() {
                let line = line.map_err(|e| err(e.to_string()))?;
                if line.trim().is_empty() {
                    continue;
                }
                let entry: CacheLine =
                    serde_json::from_str(&line).map_err(|e| err(format!("line {}: {e}", i + 1)))?;
                if entry.dim != entry.vector.len() {
                    return Err(err(format!(
                        "line {}: dim {} but {} values",
                        i + 1,
                        entry.dim,
                        entry.vector.len()
                    )));
                }
                let key = EmbeddingKey {
                    content_hash: entry.key,
                    model_id: entry.model.clone(),
                };
                cache.insert_unpersisted(key, EmbeddingVector::new(entry.vector, entry.model)?)?;
            }
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| err(e.to_string()))?;
        Ok(EmbeddingCache {
            writer: Some((path.to_path_buf(), Mutex::new(file))),
            ..cache
        })
    }

    pub fn len(&self) -> usize {
        self.entries.read().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, key: &EmbeddingKey) -> Option<EmbeddingVector> {
        self.entries.read().unwrap().get(key).cloned()
    }

    fn check_dim(&self, model_id: &str, dim: usize) -> Result<(), EmbeddingError> {
        let mut dims = self.dims.write().unwrap();
        match dims.get(model_id) {
            Some(&expected) if expected != dim => Err(EmbeddingError::DimensionMismatch {
                expected,
                found: dim,
            }),
            Some(_) => Ok(()),
            None => {
                dims.insert(model_id.to_string(), dim);
                Ok(())
            }
        }
    }

    fn insert_unpersisted(
        &self,
        key: EmbeddingKey,
        v: EmbeddingVector,
    ) -> Result<(), EmbeddingError> {
        self.check_dim(&v.model_id, v.dim())?;
        self.entries.write().unwrap().insert(key, v);
        Ok(())
    }

    pub fn insert(&self, key: EmbeddingKey, v: EmbeddingVector) -> Result<(), EmbeddingError> {
        self.check_dim(&v.model_id, v.dim())?;
        let mut entries = self.entries.write().unwrap();
        if entries.contains_key(&key) {
            return Ok(());
        }
        if let Some((path, file)) = &self.writer {
            let line = CacheLine {
                key: key.content_hash.clone(),
                model: v.model_id.clone(),
                dim: v.dim(),
                vector: v.values.clone(),
            };
            let mut text = serde_json::to_string(&line).expect("cache line serializes");
            text.push('\n');
            file.lock()
                .unwrap()
                .write_all(text.as_bytes())
                .map_err(|e| EmbeddingError::Cache {
                    path: path.clone(),
                    message: e.to_string(),
                })?;
        }
        entries.insert(key, v);
        Ok(())
    }
}

pub fn embed(
    text: &str,
    provider: &dyn EmbeddingProvider,
    cache: &EmbeddingCache,
) -> Result<EmbeddingVector, EmbeddingError> {
    embed_batch(&[text.to_string()], provider, cache).map(|mut v| v.remove(0))
}

pub const EMBED_BATCH_SIZE: usize = 64;

/// Embeds many texts, sending only cache misses to the provider.
pub fn embed_batch(
    texts: &[String],
    provider: &dyn EmbeddingProvider,
    cache: &EmbeddingCache,
) -> Result<Vec<EmbeddingVector>, EmbeddingError> {
    if texts.iter().any(|t| t.trim().is_empty()) {
        return Err(EmbeddingError::EmptyText);
    }
    let model = provider.model_id();
    let keys: Vec<EmbeddingKey> = texts.iter().map(|t| EmbeddingKey::new(t, model)).collect();
    let mut misses: Vec<usize> = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for (i, k) in keys.iter().enumerate() {
        if cache.get(k).is_none() && seen.insert(k.clone()) {
            misses.push(i);
        }
    }
    for chunk in misses.chunks(EMBED_BATCH_SIZE) {
        let batch: Vec<String> = chunk.iter().map(|&i| texts[i].clone()).collect();
        let vectors = provider.embed_texts(&batch)?;
        for (&i, values) in chunk.iter().zip(vectors) {
            cache.insert(keys[i].clone(), EmbeddingVector::new(values, model)?)?;
        }
    }
    Ok(keys
        .iter()
        .map(|k| cache.get(k).expect("every key was filled above"))
        .collect())
}

/// `dot(a, b) / (|a| |b|)`, clamped to [-1, 1].
pub fn cosine_similarity(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64, EmbeddingError> {
    cosine(&a.values, &b.values)
}

pub(crate) fn cosine(a: &[f64], b: &[f64]) -> Result<f64, EmbeddingError> {
    if a.len() != b.len() {
        return Err(EmbeddingError::DimensionMismatch {
            expected: a.len(),
            found: b.len(),
        });
    }
    let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return Err(EmbeddingError::ZeroVector);
    }
    Ok((dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0))
}

/// Exact top-`k` by cosine similarity; ties go to the smaller record id.
pub fn knn_search(
    query: &EmbeddingVector,
    corpus: &BTreeMap<String, EmbeddingVector>,
    k: usize,
) -> Result<Vec<NeighborHit>, EmbeddingError> {
    if k == 0 {
        return Err(EmbeddingError::InvalidK);
    }
    if corpus.is_empty() {
        return Err(EmbeddingError::EmptyCorpus);
    }
    let mut hits = corpus
        .iter()
        .map(|(id, v)| {
            cosine_similarity(query, v).map(|similarity| NeighborHit {
                record_id: id.clone(),
                similarity,
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    let cmp = |a: &NeighborHit, b: &NeighborHit| {
        b.similarity
            .total_cmp(&a.similarity)
            .then_with(|| a.record_id.cmp(&b.record_id))
    };
    if hits.len() > k {
        hits.select_nth_unstable_by(k - 1, cmp);
        hits.truncate(k);
    }
    hits.sort_by(cmp);
    Ok(hits)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn v(values: &[f64]) -> EmbeddingVector {
        EmbeddingVector::new(values.to_vec(), "m").unwrap()
    }

    #[test]
    fn cosine_examples() {
        assert!((cosine_similarity(&v(&[1.0, 2.0]), &v(&[1.0, 2.0])).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(
            cosine_similarity(&v(&[1.0, 0.0]), &v(&[0.0, 1.0])).unwrap(),
            0.0
        );
        // 32 / (sqrt(14) * sqrt(77))
        let s = cosine_similarity(&v(&[1.0, 2.0, 3.0]), &v(&[4.0, 5.0, 6.0])).unwrap();
        assert!((s - 0.974632).abs() < 1e-6, "{s}");
        assert!(matches!(
            cosine_similarity(&v(&[1.0]), &v(&[1.0, 2.0])),
            Err(EmbeddingError::DimensionMismatch { .. })
        ));
        assert!(matches!(
            cosine_similarity(&v(&[0.0, 0.0]), &v(&[1.0, 2.0])),
            Err(EmbeddingError::ZeroVector)
        ));
    }

    #[test]
    fn knn_basic() {
        let corpus: BTreeMap<String, EmbeddingVector> = [
            ("a", v(&[1.0, 0.0])),
            ("b", v(&[0.0, 1.0])),
            ("c", v(&[1.0, 1.0])),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect();
        let hits = knn_search(&v(&[0.0, 1.0]), &corpus, 1).unwrap();
        assert_eq!(hits[0].record_id, "b");
        assert_eq!(hits[0].similarity, 1.0);

        let all = knn_search(&v(&[1.0, 0.0]), &corpus, 10).unwrap();
        assert_eq!(
            all.iter().map(|h| h.record_id.as_str()).collect::<Vec<_>>(),
            ["a", "c", "b"]
        );

        assert!(matches!(
            knn_search(&v(&[1.0, 0.0]), &corpus, 0),
            Err(EmbeddingError::InvalidK)
        ));
        assert!(matches!(
            knn_search(&v(&[1.0, 0.0]), &BTreeMap::new(), 1),
            Err(EmbeddingError::EmptyCorpus)
        ));
    }

    #[test]
    fn knn_ties_break_on_id() {
        let corpus: BTreeMap<String, EmbeddingVector> = ["z", "m", "a"]
            .iter()
            .map(|k| (k.to_string(), v(&[2.0, 2.0])))
            .collect();
        let hits = knn_search(&v(&[1.0, 1.0]), &corpus, 2).unwrap();
        assert_eq!(
            hits.iter()
                .map(|h| h.record_id.as_str())
                .collect::<Vec<_>>(),
            ["a", "m"]
        );
    }

    #[test]
    fn hashing_embedder_is_deterministic_and_unit() {
        let e = HashingEmbedder::new(32);
        let a = e
            .embed_texts(&["abc".into(), "abc".into(), "Fever  is caused by flu".into()])
            .unwrap();
        assert_eq!(a[0], a[1]);
        let norm: f64 = a[2].iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-12);
        assert_eq!(
            e.embed_texts(&["FEVER is caused by flu".into()]).unwrap()[0],
            a[2]
        );
    }

    #[test]
    fn cache_hit_skips_provider() {
        let e = HashingEmbedder::new(8);
        let cache = EmbeddingCache::in_memory();
        let first = embed("fever is caused by flu", &e, &cache).unwrap();
        let second = embed("fever is caused by flu", &e, &cache).unwrap();
        assert_eq!(first, second);
        assert_eq!(e.calls(), 1);
        assert!(matches!(
            embed("  ", &e, &cache),
            Err(EmbeddingError::EmptyText)
        ));
    }

    struct Shifty {
        calls: AtomicUsize,
    }

    impl EmbeddingProvider for Shifty {
        fn model_id(&self) -> &str {
            "shifty"
        }
        fn embed_texts(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, EmbeddingError> {
            let dim = if self.calls.fetch_add(1, Ordering::SeqCst) == 0 {
                1536
            } else {
                512
            };
            Ok(texts.iter().map(|_| vec![0.5; dim]).collect())
        }
    }

    #[test]
    fn dimension_change_is_rejected() {
        let p = Shifty {
            calls: AtomicUsize::new(0),
        };
        let cache = EmbeddingCache::in_memory();
        assert_eq!(embed("one", &p, &cache).unwrap().dim(), 1536);
        assert!(matches!(
            embed("two", &p, &cache),
            Err(EmbeddingError::DimensionMismatch {
                expected: 1536,
                found: 512
            })
        ));
    }

    #[test]
    fn persisted_cache_round_trips_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cache.jsonl");
        let e = HashingEmbedder::new(24);
        let texts: Vec<String> = (0..20)
            .map(|i| format!("sentence number {i} with words {}", i * 7))
            .collect();
        let original = {
            let cache = EmbeddingCache::open(&path).unwrap();
            embed_batch(&texts, &e, &cache).unwrap()
        };
        let reopened = EmbeddingCache::open(&path).unwrap();
        assert_eq!(reopened.len(), 20);
        for (t, v) in texts.iter().zip(&original) {
            let got = reopened.get(&EmbeddingKey::new(t, e.model_id())).unwrap();
            let bits =
                |x: &EmbeddingVector| x.values.iter().map(|f| f.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(&got), bits(v));
        }
    }

    fn vec_strategy(dim: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-10.0f64..10.0, dim)
            .prop_filter("nonzero", |v| v.iter().any(|x| x.abs() > 1e-3))
    }

    proptest! {
        #[test]
        fn cosine_symmetric_and_scale_invariant(
            (a, b) in (1usize..16).prop_flat_map(|d| (vec_strategy(d), vec_strategy(d))),
            c in 0.01f64..100.0,
        ) {
            let (va, vb) = (v(&a), v(&b));
            let ab = cosine_similarity(&va, &vb).unwrap();
            prop_assert!((ab - cosine_similarity(&vb, &va).unwrap()).abs() < 1e-12);
            let scaled = v(&b.iter().map(|x| x * c).collect::<Vec<_>>());
            prop_assert!((ab - cosine_similarity(&va, &scaled).unwrap()).abs() < 1e-9);
            prop_assert!((-1.0..=1.0).contains(&ab));
        }
    }
}
