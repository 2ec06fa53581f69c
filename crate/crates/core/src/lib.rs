//! Connective-indexed fewshot example retrieval for LLM causality detection
//! and extraction, with replayable model calls and scoring.

pub mod corpus;
pub mod embedding;
pub mod evaluation;
pub mod llm;
pub mod pool;
pub mod prompting;
pub mod repository;
pub mod retrieval;
pub mod runner;
pub mod sampling;

pub use corpus::{
    CauseEffectPair, DatasetFormat, DatasetSplit, Label, LabeledInstance, TaggedSentence, Triplet,
};
pub use embedding::{
    EmbeddingCache, EmbeddingProvider, EmbeddingVector, HashingEmbedder, HttpEmbedder,
};
pub use evaluation::{DetectionMetrics, MatchingMode, MetricsReport, TripletMetrics};
pub use llm::{BackendMode, ChatBackend, CompletionRequest, Gateway, ModelSettings, Transcript};
pub use prompting::{LlmHandle, PromptCatalog};
pub use repository::{ExampleRecord, Repository};
pub use retrieval::{Matcher, RetrievalConfig, RetrievalResult, StrategyKind};
