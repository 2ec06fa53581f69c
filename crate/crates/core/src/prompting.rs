//! Task prompts and response parsers.
//!
//! Prompt wording lives in a versioned catalog file (`prompts/catalog.txt`,
//! compiled in as the default). Retrieved examples are appended after the
//! base prompt behind a lead-in sentence whose count matches the number of
//! examples actually shown.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::Path;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{collapse_whitespace, CauseEffectPair};
use crate::evaluation::normalized_tokens;
use crate::llm::{request_hash, CompletionRequest, Gateway, LlmError, ModelSettings};
use crate::retrieval::{RetrievalResult, StrategyKind};

pub const DEFAULT_CATALOG: &str = include_str!("../prompts/catalog.txt");

const REQUIRED_BLOCKS: [&str; 8] = [
    "connective.system",
    "connective.user",
    "detection.system",
    "detection.user",
    "extraction.system",
    "extraction.user",
    "extraction.single_pair",
    "examples.lead_in",
];

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PromptError {
    #[error("catalog line {line}: {message}")]
    Catalog { line: usize, message: String },
    #[error("catalog is missing block [{0}]")]
    MissingBlock(String),
    #[error("catalog has no catalog_version header")]
    MissingVersion,
    #[error("could not read catalog: {0}")]
    Io(String),
    #[error("unparseable response: {0:?}")]
    UnparseableResponse(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptCatalog {
    pub version: String,
    blocks: BTreeMap<String, String>,
}

impl PromptCatalog {
    pub fn parse(text: &str) -> Result<Self, PromptError> {
        let mut version = None;
        let mut blocks = BTreeMap::new();
        let mut current: Option<(String, Vec<&str>)> = None;
        for (i, line) in text.lines().enumerate() {
            let trimmed = line.trim();
            if trimmed.starts_with('[') && trimmed.ends_with(']') && trimmed.len() > 2 {
                if let Some((name, body)) = current.take() {
                    blocks.insert(name, body.join("\n").trim().to_string());
                }
                let name = trimmed[1..trimmed.len() - 1].trim().to_string();
                if blocks.contains_key(&name) {
                    return Err(PromptError::Catalog {
                        line: i + 1,
                        message: format!("duplicate block [{name}]"),
                    });
                }
                current = Some((name, Vec::new()));
                continue;
            }
            match current.as_mut() {
                Some((_, body)) => body.push(line),
                None if trimmed.is_empty() || trimmed.starts_with('#') => {}
                None => {
                    let (key, value) =
                        trimmed
                            .split_once('=')
                            .ok_or_else(|| PromptError::Catalog {
                                line: i + 1,
                                message: "expected `key = value` or a [block] header".into(),
                            })?;
                    if key.trim() != "catalog_version" {
                        return Err(PromptError::Catalog {
                            line: i + 1,
                            message: format!("unknown header key {:?}", key.trim()),
                        });
                    }
                    version = Some(value.trim().to_string());
                }
            }
        }
        if let Some((name, body)) = current.take() {
            blocks.insert(name, body.join("\n").trim().to_string());
        }
        let version = version
            .filter(|v| !v.is_empty())
            .ok_or(PromptError::MissingVersion)?;
        for name in REQUIRED_BLOCKS {
            if !blocks.contains_key(name) {
                return Err(PromptError::MissingBlock(name.to_string()));
            }
        }
        Ok(PromptCatalog { version, blocks })
    }

    pub fn load(path: &Path) -> Result<Self, PromptError> {
        Self::parse(&fs::read_to_string(path).map_err(|e| PromptError::Io(e.to_string()))?)
    }

    pub fn block(&self, name: &str) -> &str {
        self.blocks.get(name).map(String::as_str).unwrap_or("")
    }

    fn fill(&self, name: &str, sentence: &str) -> String {
        self.block(name).replace("{sentence}", sentence)
    }

    pub fn lead_in(&self, count: usize) -> String {
        self.block("examples.lead_in")
            .replace("{count}", &count.to_string())
    }
}

impl Default for PromptCatalog {
    fn default() -> Self {
        Self::parse(DEFAULT_CATALOG).expect("bundled catalog is valid")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssembledPrompt {
    pub system_text: String,
    pub user_text: String,
    pub example_count: usize,
    pub strategy: StrategyKind,
    pub catalog_version: String,
}

impl AssembledPrompt {
    pub fn to_request(
        &self,
        model_id: &str,
        temperature: f64,
        max_output_tokens: u32,
    ) -> CompletionRequest {
        CompletionRequest {
            system_text: self.system_text.clone(),
            user_text: self.user_text.clone(),
            model_id: model_id.to_string(),
            temperature,
            max_output_tokens,
            catalog_version: self.catalog_version.clone(),
        }
    }
}

/// A gateway plus the catalog and model settings its prompts are built with.
pub struct LlmHandle {
    pub gateway: Gateway,
    pub catalog: PromptCatalog,
    pub settings: ModelSettings,
}

impl LlmHandle {
    pub fn new(gateway: Gateway, catalog: PromptCatalog, settings: ModelSettings) -> Self {
        LlmHandle {
            gateway,
            catalog,
            settings,
        }
    }

    pub fn request(&self, prompt: &AssembledPrompt) -> CompletionRequest {
        prompt.to_request(
            &self.settings.model_id,
            self.settings.temperature,
            self.settings.max_output_tokens,
        )
    }

    /// Sends the prompt; returns the request hash alongside the outcome.
    pub fn ask(&self, prompt: &AssembledPrompt) -> (String, Result<String, LlmError>) {
        let req = self.request(prompt);
        let hash = request_hash(&req);
        (hash, self.gateway.complete(&req).map(|r| r.text))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ExampleStyle {
    Detection,
    Extraction,
}

fn example_line(
    n: usize,
    tagged_text: &str,
    connectives: &[String],
    style: ExampleStyle,
) -> String {
    match style {
        ExampleStyle::Detection => format!("{n}. {tagged_text}"),
        ExampleStyle::Extraction => {
            format!(
                "{n}. {tagged_text} (causal connective: {})",
                connectives.join(", ")
            )
        }
    }
}

fn append_examples(
    user_text: &mut String,
    catalog: &PromptCatalog,
    examples: &RetrievalResult<'_>,
    style: ExampleStyle,
) {
    if examples.is_empty() {
        return;
    }
    user_text.push_str("\n\n");
    user_text.push_str(&catalog.lead_in(examples.len()));
    for (i, ex) in examples.examples.iter().enumerate() {
        user_text.push('\n');
        user_text.push_str(&example_line(
            i + 1,
            &ex.record.tagged_text,
            &ex.record.connectives,
            style,
        ));
    }
}

pub fn connective_prompt(sentence: &str, catalog: &PromptCatalog) -> AssembledPrompt {
    AssembledPrompt {
        system_text: catalog.block("connective.system").to_string(),
        user_text: catalog.fill("connective.user", &collapse_whitespace(sentence)),
        example_count: 0,
        strategy: StrategyKind::Zeroshot,
        catalog_version: catalog.version.clone(),
    }
}

pub fn detection_prompt(
    sentence: &str,
    examples: &RetrievalResult<'_>,
    catalog: &PromptCatalog,
) -> AssembledPrompt {
    let mut user_text = catalog.fill("detection.user", &collapse_whitespace(sentence));
    append_examples(&mut user_text, catalog, examples, ExampleStyle::Detection);
    AssembledPrompt {
        system_text: catalog.block("detection.system").to_string(),
        user_text,
        example_count: examples.len(),
        strategy: examples.strategy,
        catalog_version: catalog.version.clone(),
    }
}

/// Extraction examples additionally name their causal connective.
pub fn extraction_prompt(
    sentence: &str,
    examples: &RetrievalResult<'_>,
    single_pair: bool,
    catalog: &PromptCatalog,
) -> AssembledPrompt {
    let mut user_text = catalog.fill("extraction.user", &collapse_whitespace(sentence));
    if single_pair {
        user_text.push_str("\n\n");
        user_text.push_str(catalog.block("extraction.single_pair"));
    }
    append_examples(&mut user_text, catalog, examples, ExampleStyle::Extraction);
    AssembledPrompt {
        system_text: catalog.block("extraction.system").to_string(),
        user_text,
        example_count: examples.len(),
        strategy: examples.strategy,
        catalog_version: catalog.version.clone(),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DetectionPrediction {
    pub label: u8,
    pub raw_response: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtractionPrediction {
    pub pairs: Vec<CauseEffectPair>,
    pub raw_response: String,
    pub overlap_flag: bool,
    /// Cause or effect spans left without a partner.
    pub unmatched_spans: usize,
}

static DIGIT: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\b[01]\b").unwrap());
static SPAN: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?s)<cause>(.*?)</cause>|<effect>(.*?)</effect>").unwrap());

/// First standalone `1` or `0` in the response.
pub fn parse_detection(response: &str) -> Result<DetectionPrediction, PromptError> {
    let m = DIGIT
        .find(response.trim())
        .ok_or_else(|| PromptError::UnparseableResponse(response.to_string()))?;
    Ok(DetectionPrediction {
        label: if m.as_str() == "1" { 1 } else { 0 },
        raw_response: response.to_string(),
    })
}

fn shares_token(a: &str, b: &str) -> bool {
    let a: HashSet<String> = normalized_tokens(a).into_iter().collect();
    normalized_tokens(b).iter().any(|t| a.contains(t))
}

/// Tagged spans in order; the i-th cause is paired with the i-th effect.
pub fn parse_extraction(response: &str) -> Result<ExtractionPrediction, PromptError> {
    let mut causes = Vec::new();
    let mut effects = Vec::new();
    for cap in SPAN.captures_iter(response) {
        if let Some(c) = cap.get(1) {
            let phrase = collapse_whitespace(c.as_str());
            if !phrase.is_empty() {
                causes.push(phrase);
            }
        } else if let Some(e) = cap.get(2) {
            let phrase = collapse_whitespace(e.as_str());
            if !phrase.is_empty() {
                effects.push(phrase);
            }
        }
    }
    let paired = causes.len().min(effects.len());
    if paired == 0 {
        return Err(PromptError::UnparseableResponse(response.to_string()));
    }
    let unmatched_spans = causes.len() + effects.len() - 2 * paired;
    if unmatched_spans > 0 {
        log::warn!("dropping {unmatched_spans} unpaired cause/effect span(s)");
    }
    let pairs: Vec<CauseEffectPair> = causes
        .into_iter()
        .zip(effects)
        .map(|(cause, effect)| CauseEffectPair { cause, effect })
        .collect();
    let overlap_flag = pairs.iter().any(|p| shares_token(&p.cause, &p.effect));
    Ok(ExtractionPrediction {
        pairs,
        raw_response: response.to_string(),
        overlap_flag,
        unmatched_spans,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::repository::ExampleRecord;
    use crate::retrieval::{ExampleOrigin, RetrievedExample};

    fn record(id: &str, tagged: &str, connective: &str) -> ExampleRecord {
        let s = crate::corpus::parse_tagged_sentence(tagged, "t", 0).unwrap();
        ExampleRecord {
            id: id.into(),
            raw_text: s.raw_text,
            tagged_text: s.tagged_text,
            pairs: s.pairs,
            connectives: vec![connective.into()],
            source: "t".into(),
            connective_unverified: false,
        }
    }

    fn result<'a>(records: &'a [ExampleRecord], strategy: StrategyKind) -> RetrievalResult<'a> {
        RetrievalResult {
            strategy,
            examples: records
                .iter()
                .map(|r| RetrievedExample {
                    record: r,
                    origin: ExampleOrigin::Random,
                    score: None,
                    matched_connective: None,
                })
                .collect(),
            fallback_used: false,
        }
    }

    fn lavas() -> ExampleRecord {
        record(
            "t-1",
            "Highly viscous <cause>lavas</cause> lead to a violent <effect>eruption</effect>.",
            "lead to",
        )
    }

    #[test]
    fn bundled_catalog_parses() {
        let c = PromptCatalog::default();
        assert_eq!(c.version, "1");
        assert!(c
            .lead_in(10)
            .starts_with("Below are 10 example sentences which show causality relation"));
    }

    #[test]
    fn catalog_errors() {
        assert_eq!(
            PromptCatalog::parse("[a]\nx"),
            Err(PromptError::MissingVersion)
        );
        assert!(matches!(
            PromptCatalog::parse("catalog_version = 1\n[connective.system]\nx"),
            Err(PromptError::MissingBlock(_))
        ));
        assert!(matches!(
            PromptCatalog::parse("stray line\n"),
            Err(PromptError::Catalog { line: 1, .. })
        ));
    }

    #[test]
    fn zeroshot_detection_has_no_lead_in() {
        let c = PromptCatalog::default();
        let p = detection_prompt(
            "fever is caused by flu",
            &RetrievalResult::empty(StrategyKind::Zeroshot),
            &c,
        );
        assert_eq!(p.example_count, 0);
        assert!(!p.user_text.contains("Below are"));
        assert!(p.user_text.contains("fever is caused by flu"));
    }

    #[test]
    fn lead_in_appears_once_with_true_count() {
        let c = PromptCatalog::default();
        let records: Vec<ExampleRecord> = (0..20)
            .map(|i| {
                let mut r = lavas();
                r.id = format!("t-{i:02}");
                r
            })
            .collect();
        let p10 = detection_prompt("x causes y", &result(&records[..10], StrategyKind::Knn), &c);
        assert_eq!(p10.example_count, 10);
        assert_eq!(p10.user_text.matches("Below are").count(), 1);
        assert!(p10.user_text.contains("Below are 10 example"));
        assert_eq!(p10.user_text.matches("<cause>lavas</cause>").count(), 10);

        let p20 = detection_prompt(
            "x causes y",
            &result(&records, StrategyKind::KnnPattern),
            &c,
        );
        assert_eq!(p20.example_count, 20);
        assert!(p20.user_text.contains("Below are 20 example"));
    }

    #[test]
    fn extraction_prompt_variants() {
        let c = PromptCatalog::default();
        let single = extraction_prompt(
            "s",
            &RetrievalResult::empty(StrategyKind::Zeroshot),
            true,
            &c,
        );
        assert!(single
            .user_text
            .contains("Extract only one cause-effect pair"));
        let multi = extraction_prompt(
            "s",
            &RetrievalResult::empty(StrategyKind::Zeroshot),
            false,
            &c,
        );
        assert!(!multi
            .user_text
            .contains("Extract only one cause-effect pair"));
        assert!(!multi.user_text.contains("Below are"));

        let recs = [lavas()];
        let with = extraction_prompt("s", &result(&recs, StrategyKind::Pattern), false, &c);
        assert!(with.user_text.contains(
            "1. Highly viscous <cause>lavas</cause> lead to a violent <effect>eruption</effect>. (causal connective: lead to)"
        ));
    }

    #[test]
    fn assembly_is_deterministic() {
        let c = PromptCatalog::default();
        let recs = [lavas()];
        let a = extraction_prompt("a b", &result(&recs, StrategyKind::Random), true, &c);
        let b = extraction_prompt("a b", &result(&recs, StrategyKind::Random), true, &c);
        assert_eq!(a, b);
        assert_eq!(
            crate::llm::request_hash(&a.to_request("m", 0.0, 64)),
            crate::llm::request_hash(&b.to_request("m", 0.0, 64))
        );
    }

    #[test]
    fn detection_parsing() {
        assert_eq!(parse_detection("1").unwrap().label, 1);
        assert_eq!(parse_detection("Answer: 0.").unwrap().label, 0);
        assert_eq!(parse_detection(" 10 reasons, verdict 1").unwrap().label, 1);
        assert!(matches!(
            parse_detection("maybe"),
            Err(PromptError::UnparseableResponse(_))
        ));
    }

    #[test]
    fn extraction_parsing() {
        let p = parse_extraction(
            "<cause>salmonella bacteria</cause> <effect>foodborne illness</effect>",
        )
        .unwrap();
        assert_eq!(
            p.pairs,
            vec![CauseEffectPair::new("salmonella bacteria", "foodborne illness").unwrap()]
        );
        assert!(!p.overlap_flag);

        let p = parse_extraction("<cause>a</cause> x <effect>b</effect> <cause>c</cause> <effect>d</effect> <effect>e</effect>")
            .unwrap();
        assert_eq!(p.pairs.len(), 2);
        assert_eq!(
            (p.pairs[1].cause.as_str(), p.pairs[1].effect.as_str()),
            ("c", "d")
        );
        assert_eq!(p.unmatched_spans, 1);

        assert!(parse_extraction("the cause is stress").is_err());
        assert!(parse_extraction("<cause>x</cause> only").is_err());

        let o =
            parse_extraction("<cause>weapons blast</cause> <effect>the blast</effect>").unwrap();
        assert!(o.overlap_flag);
    }

    #[test]
    fn parse_of_rendered_example_reproduces_pairs() {
        let c = PromptCatalog::default();
        let recs = [lavas()];
        let p = extraction_prompt("s", &result(&recs, StrategyKind::Pattern), false, &c);
        let line = p.user_text.lines().last().unwrap();
        assert_eq!(parse_extraction(line).unwrap().pairs, recs[0].pairs);
    }
}
