//! Regenerates the replay fixtures under `tests/fixtures/replay`.
//!
//! A scripted stand-in model answers every prompt from `model_script.json`:
//! each test sentence says when the model gets it right (always, never,
//! whenever examples are present, or only when an example shares its cue
//! word) and how it fails otherwise. The example DB and one transcript per
//! strategy are recorded, and prediction files are written to the output
//! directory for independent scoring.
//!
//! ```text
//! cargo run -p causal-rag-core --example record_fixtures -- [fixture-dir] [prediction-dir]
//! ```

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use causal_rag::corpus::{load_dataset, CauseEffectPair, DatasetFormat, DatasetSplit};
use causal_rag::embedding::{EmbeddingCache, HashingEmbedder};
use causal_rag::llm::{
    CompletionRequest, Gateway, LlmError, ModelSettings, ScriptedBackend, Transcript,
};
use causal_rag::prompting::{LlmHandle, PromptCatalog};
use causal_rag::repository::{build_repository, save_repository, BuildConfig};
use causal_rag::retrieval::{KnnIndex, StrategyKind};
use causal_rag::runner::{run_experiment, ExperimentConfig, PredictionWriter, RunContext, Task};
use serde::Deserialize;

const CONNECTIVES: &[&str] = &[
    "caused by",
    "caused",
    "lead to",
    "leads to",
    "led to",
    "leading to",
    "due to",
    "because of",
    "resulted in",
    "triggered",
    "triggering",
    "-induced",
    "after",
    "stems from",
    "from",
    "produced",
];

#[derive(Deserialize)]
struct Rule {
    when: String,
    fail: String,
    #[serde(default)]
    style: String,
}

#[derive(Deserialize)]
struct Behavior {
    cue: String,
    detect: Option<Rule>,
    extract: Option<Rule>,
}

struct Model {
    catalog: PromptCatalog,
    script: HashMap<String, Behavior>,
    gold: HashMap<String, Vec<CauseEffectPair>>,
}

fn is_word_char(c: Option<char>) -> bool {
    c.is_some_and(|c| c.is_alphanumeric())
}

/// Connectives from the fixed list, longest first, in sentence order.
fn find_connectives(sentence: &str) -> Vec<String> {
    let lower = sentence.to_lowercase();
    let mut by_len: Vec<&str> = CONNECTIVES.to_vec();
    by_len.sort_by_key(|c| std::cmp::Reverse(c.len()));
    let mut taken: Vec<(usize, usize)> = Vec::new();
    let mut found: Vec<(usize, String)> = Vec::new();
    for c in by_len {
        for (start, _) in lower.match_indices(c) {
            let end = start + c.len();
            let before = lower[..start].chars().next_back();
            let after = lower[end..].chars().next();
            let bounded = (c.starts_with('-') || !is_word_char(before)) && !is_word_char(after);
            if bounded && !taken.iter().any(|&(s, e)| start < e && s < end) {
                taken.push((start, end));
                found.push((start, c.to_string()));
            }
        }
    }
    found.sort();
    found.into_iter().map(|(_, c)| c).collect()
}

fn render(pairs: &[CauseEffectPair]) -> String {
    pairs
        .iter()
        .map(|p| {
            format!(
                "<cause>{}</cause> => <effect>{}</effect>",
                p.cause, p.effect
            )
        })
        .collect::<Vec<_>>()
        .join("; ")
}

fn swap(p: &CauseEffectPair) -> CauseEffectPair {
    CauseEffectPair {
        cause: p.effect.clone(),
        effect: p.cause.clone(),
    }
}

impl Model {
    fn succeeds(&self, rule: &Rule, cue: &str, examples: &str) -> bool {
        match rule.when.as_str() {
            "always" => true,
            "never" => false,
            "examples" => !examples.is_empty(),
            "pattern" => !cue.is_empty() && examples.to_lowercase().contains(cue),
            other => panic!("unknown rule {other}"),
        }
    }

    fn answer(&self, req: &CompletionRequest) -> Result<String, LlmError> {
        let sentence = req
            .user_text
            .split_once("Sentence: ")
            .and_then(|(_, rest)| rest.lines().next())
            .expect("prompt names its sentence");
        if req.system_text == self.catalog.block("connective.system") {
            return Ok(find_connectives(sentence).join("\n"));
        }
        let examples = req
            .user_text
            .split_once("Below are ")
            .map_or("", |(_, rest)| rest);
        let behavior = &self.script[sentence];
        let gold = &self.gold[sentence];

        if req.system_text == self.catalog.block("detection.system") {
            let rule = behavior.detect.as_ref().expect("detection rule");
            let label = u8::from(!gold.is_empty());
            let said = if self.succeeds(rule, &behavior.cue, examples) {
                label
            } else if rule.fail == "unparseable" {
                return Ok("I am not sure.".into());
            } else {
                1 - label
            };
            return Ok(if rule.style == "verbose" {
                format!("The answer is {said}.")
            } else {
                said.to_string()
            });
        }

        let rule = behavior.extract.as_ref().expect("extraction rule");
        let single = req
            .user_text
            .contains(self.catalog.block("extraction.single_pair"));
        let mut pairs: Vec<CauseEffectPair> = if self.succeeds(rule, &behavior.cue, examples) {
            gold.clone()
        } else {
            match rule.fail.as_str() {
                "swap" => gold.iter().map(swap).collect(),
                "partial" if gold.len() > 1 => gold[..1].to_vec(),
                "extra" => gold.iter().cloned().chain(gold.first().map(swap)).collect(),
                "unparseable" => return Ok("I could not identify a cause and an effect.".into()),
                _ => gold
                    .iter()
                    .map(|p| match p.cause.split_once(' ') {
                        Some((_, rest)) => CauseEffectPair {
                            cause: rest.to_string(),
                            effect: p.effect.clone(),
                        },
                        None => swap(p),
                    })
                    .collect(),
            }
        };
        if single {
            pairs.truncate(1);
        }
        Ok(render(&pairs))
    }
}

fn fresh_transcript(path: &Path) -> Arc<Transcript> {
    let _ = fs::remove_file(path);
    Arc::new(Transcript::open_append(path).expect("transcript"))
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let dir = PathBuf::from(
        args.get(1)
            .map_or("crates/core/tests/fixtures/replay", String::as_str),
    );
    let out = PathBuf::from(
        args.get(2)
            .map_or("target/fixture-predictions", String::as_str),
    );
    fs::create_dir_all(dir.join("transcripts")).unwrap();
    fs::create_dir_all(&out).unwrap();

    let load = |name: &str| load_dataset(&dir.join(name), DatasetFormat::Canonical).expect(name);
    let (train, detection, extraction) = (
        load("train.jsonl"),
        load("detection.jsonl"),
        load("extraction.jsonl"),
    );
    let script: HashMap<String, Behavior> =
        serde_json::from_str(&fs::read_to_string(dir.join("model_script.json")).unwrap()).unwrap();
    let gold = [&detection, &extraction]
        .iter()
        .flat_map(|s| s.instances.iter())
        .map(|i| (i.sentence.raw_text.clone(), i.sentence.pairs.clone()))
        .collect();
    let model = Arc::new(Model {
        catalog: PromptCatalog::default(),
        script,
        gold,
    });
    let m = model.clone();
    let backend = Arc::new(ScriptedBackend::new(move |req| m.answer(req)));
    let handle = |transcript| {
        LlmHandle::new(
            Gateway::record(backend.clone(), transcript),
            PromptCatalog::default(),
            ModelSettings::new("scripted"),
        )
    };

    let llm = handle(fresh_transcript(&dir.join("transcripts/build.jsonl")));
    let sentences: Vec<_> = train.causal_sentences().cloned().collect();
    let build = BuildConfig {
        cap: 10,
        seed: 7,
        concurrency: 1,
    };
    let repo = build_repository(&sentences, &llm, &build)
        .expect("build")
        .repository;
    save_repository(&repo, &dir.join("db.jsonl")).unwrap();
    println!(
        "db: {} records, {} connectives",
        repo.len(),
        repo.index.len()
    );

    let knn = KnnIndex::build(
        &repo,
        Arc::new(HashingEmbedder::new(256)),
        Arc::new(EmbeddingCache::in_memory()),
    )
    .unwrap();
    let runs: [(&str, &DatasetSplit, Task, bool); 3] = [
        ("detect", &detection, Task::Detect, false),
        ("extract-single", &detection, Task::Extract, true),
        ("extract", &extraction, Task::Extract, false),
    ];
    for strategy in StrategyKind::ALL {
        let llm = handle(fresh_transcript(
            &dir.join(format!("transcripts/{strategy}.jsonl")),
        ));
        let ctx = RunContext {
            repo: &repo,
            llm: &llm,
            knn: Some(&knn),
        };
        let mut summary = BTreeMap::new();
        for (name, split, task, single_pair) in runs {
            let cfg = ExperimentConfig {
                task,
                strategy,
                single_pair,
                k: 10,
                seed: 7,
                concurrency: 1,
                embed_dim: 256,
                model_id: "scripted".into(),
                transcript: Some(PathBuf::from("unused")),
                ..Default::default()
            };
            let path = out.join(format!("{strategy}__{name}.jsonl"));
            let mut writer = PredictionWriter::open(&path, true).unwrap();
            let outcome =
                run_experiment(&cfg, split, &ctx, &BTreeMap::new(), |r| writer.write(r)).unwrap();
            summary.insert(name, outcome.report.metric_values());
        }
        println!("{strategy}: {summary:?}");
    }
}
