//! Detection and extraction scoring.
//!
//! Phrase comparison is a directional containment test: every normalized
//! gold token must appear, contiguously and in order, inside the predicted
//! phrase.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{CauseEffectPair, Triplet};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EvalError {
    #[error("nothing to evaluate")]
    EmptyInput,
    #[error("label {0} is not binary")]
    NonBinaryLabel(u8),
}

/// Lowercased whitespace tokens with punctuation trimmed from both edges.
/// Inner punctuation (hyphens, apostrophes) is kept.
pub fn normalized_tokens(phrase: &str) -> Vec<String> {
    phrase
        .split_whitespace()
        .map(|t| {
            t.trim_matches(|c: char| !c.is_alphanumeric())
                .to_lowercase()
        })
        .filter(|t| !t.is_empty())
        .collect()
}

fn contains_run(haystack: &[String], needle: &[String]) -> bool {
    !needle.is_empty()
        && needle.len() <= haystack.len()
        && haystack.windows(needle.len()).any(|w| w == needle)
}

pub fn containment_match(gold_phrase: &str, predicted_phrase: &str) -> bool {
    contains_run(
        &normalized_tokens(predicted_phrase),
        &normalized_tokens(gold_phrase),
    )
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl ConfusionCounts {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Harmonic mean of precision and recall. The metric structs compute F1
/// from counts instead, which rounds once.
pub fn f1_score(precision: f64, recall: f64) -> f64 {
    if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionMetrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub counts: ConfusionCounts,
    /// Predictions that could not be parsed; each is scored as wrong.
    pub unparseable: usize,
}

impl DetectionMetrics {
    pub fn from_counts(counts: ConfusionCounts, unparseable: usize) -> Self {
        DetectionMetrics {
            accuracy: ratio(counts.tp + counts.tn, counts.total()),
            precision: ratio(counts.tp, counts.tp + counts.fp),
            recall: ratio(counts.tp, counts.tp + counts.fn_),
            f1: ratio(2 * counts.tp, 2 * counts.tp + counts.fp + counts.fn_),
            counts,
            unparseable,
        }
    }
}

/// Scores `(predicted, gold)` pairs with causal = 1 as the positive class.
/// A missing prediction counts as the wrong label.
pub fn detection_metrics(preds: &[(Option<u8>, u8)]) -> Result<DetectionMetrics, EvalError> {
    if preds.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let mut counts = ConfusionCounts::default();
    let mut unparseable = 0;
    for &(predicted, gold) in preds {
        if gold > 1 {
            return Err(EvalError::NonBinaryLabel(gold));
        }
        let predicted = match predicted {
            Some(p) if p > 1 => return Err(EvalError::NonBinaryLabel(p)),
            Some(p) => p,
            None => {
                unparseable += 1;
                1 - gold
            }
        };
        match (predicted, gold) {
            (1, 1) => counts.tp += 1,
            (1, 0) => counts.fp += 1,
            (0, 0) => counts.tn += 1,
            _ => counts.fn_ += 1,
        }
    }
    Ok(DetectionMetrics::from_counts(counts, unparseable))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtractionOutcome {
    pub sentence_id: String,
    pub success: bool,
    pub cause_matched: bool,
    pub effect_matched: bool,
    pub overlap_flag: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SinglePairCase {
    pub sentence_id: String,
    pub gold: CauseEffectPair,
    /// First predicted pair, if the response parsed.
    pub predicted: Option<CauseEffectPair>,
    pub overlap_flag: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SinglePairMetrics {
    pub accuracy: f64,
    pub successes: usize,
    pub total: usize,
    pub unparseable: usize,
}

pub fn single_pair_accuracy(
    cases: &[SinglePairCase],
) -> Result<(f64, Vec<ExtractionOutcome>), EvalError> {
    if cases.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let outcomes: Vec<ExtractionOutcome> = cases
        .iter()
        .map(|c| {
            let (cause_matched, effect_matched) = match &c.predicted {
                Some(p) => (
                    containment_match(&c.gold.cause, &p.cause),
                    containment_match(&c.gold.effect, &p.effect),
                ),
                None => (false, false),
            };
            ExtractionOutcome {
                sentence_id: c.sentence_id.clone(),
                success: cause_matched && effect_matched,
                cause_matched,
                effect_matched,
                overlap_flag: c.overlap_flag,
            }
        })
        .collect();
    let successes = outcomes.iter().filter(|o| o.success).count();
    Ok((ratio(successes, outcomes.len()), outcomes))
}

pub fn single_pair_metrics(cases: &[SinglePairCase]) -> Result<SinglePairMetrics, EvalError> {
    let (accuracy, outcomes) = single_pair_accuracy(cases)?;
    Ok(SinglePairMetrics {
        accuracy,
        successes: outcomes.iter().filter(|o| o.success).count(),
        total: outcomes.len(),
        unparseable: cases.iter().filter(|c| c.predicted.is_none()).count(),
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchingMode {
    /// Gold triplets in order, each taking the first unused compatible prediction.
    #[default]
    Greedy,
    /// Maximum bipartite matching.
    Optimal,
}

impl fmt::Display for MatchingMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MatchingMode::Greedy => "greedy",
            MatchingMode::Optimal => "optimal",
        })
    }
}

impl FromStr for MatchingMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "greedy" => Ok(MatchingMode::Greedy),
            "optimal" => Ok(MatchingMode::Optimal),
            other => Err(format!(
                "unknown matching mode {other:?} (expected greedy or optimal)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TripletMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub matched: usize,
    pub predicted_total: usize,
    pub gold_total: usize,
}

impl TripletMetrics {
    pub fn from_counts(matched: usize, predicted_total: usize, gold_total: usize) -> Self {
        TripletMetrics {
            precision: ratio(matched, predicted_total),
            recall: ratio(matched, gold_total),
            f1: ratio(2 * matched, predicted_total + gold_total),
            matched,
            predicted_total,
            gold_total,
        }
    }
}

pub fn triplet_compatible(gold: &Triplet, predicted: &Triplet) -> bool {
    gold.sentence_id == predicted.sentence_id
        && containment_match(&gold.cause, &predicted.cause)
        && containment_match(&gold.effect, &predicted.effect)
}

fn greedy_matches(adj: &[Vec<usize>], n_pred: usize) -> usize {
    let mut used = vec![false; n_pred];
    let mut matched = 0;
    for candidates in adj {
        if let Some(&p) = candidates.iter().find(|&&p| !used[p]) {
            used[p] = true;
            matched += 1;
        }
    }
    matched
}

fn augment(g: usize, adj: &[Vec<usize>], seen: &mut [bool], owner: &mut [Option<usize>]) -> bool {
    for &p in &adj[g] {
        if seen[p] {
            continue;
        }
        seen[p] = true;
        if owner[p].is_none_or(|other| augment(other, adj, seen, owner)) {
            owner[p] = Some(g);
            return true;
        }
    }
    false
}

fn optimal_matches(adj: &[Vec<usize>], n_pred: usize) -> usize {
    let mut owner = vec![None; n_pred];
    (0..adj.len())
        .filter(|&g| augment(g, adj, &mut vec![false; n_pred], &mut owner))
        .count()
}

/// Number of gold triplets paired one-to-one with a compatible prediction.
pub fn count_matches(gold: &[Triplet], predicted: &[Triplet], mode: MatchingMode) -> usize {
    let adj: Vec<Vec<usize>> = gold
        .iter()
        .map(|g| {
            predicted
                .iter()
                .enumerate()
                .filter(|(_, p)| triplet_compatible(g, p))
                .map(|(i, _)| i)
                .collect()
        })
        .collect();
    match mode {
        MatchingMode::Greedy => greedy_matches(&adj, predicted.len()),
        MatchingMode::Optimal => optimal_matches(&adj, predicted.len()),
    }
}

pub fn triplet_metrics(
    gold: &[Triplet],
    predicted: &[Triplet],
    mode: MatchingMode,
) -> TripletMetrics {
    let matched = count_matches(gold, predicted, mode);
    if mode == MatchingMode::Greedy && log::log_enabled!(log::Level::Info) {
        let best = count_matches(gold, predicted, MatchingMode::Optimal);
        if best != matched {
            log::info!("greedy matching paired {matched} triplet(s) where {best} were possible");
        }
    }
    TripletMetrics::from_counts(matched, predicted.len(), gold.len())
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ExampleCountSummary {
    pub mean: f64,
    pub min: usize,
    pub max: usize,
    pub fallback_instances: usize,
}

impl ExampleCountSummary {
    pub fn from_counts(counts: &[usize], fallback_instances: usize) -> Self {
        if counts.is_empty() {
            return ExampleCountSummary {
                fallback_instances,
                ..Default::default()
            };
        }
        ExampleCountSummary {
            mean: counts.iter().sum::<usize>() as f64 / counts.len() as f64,
            min: *counts.iter().min().unwrap(),
            max: *counts.iter().max().unwrap(),
            fallback_instances,
        }
    }
}

/// Metrics plus the effective configuration that produced them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub config: BTreeMap<String, String>,
    pub instances: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub detection: Option<DetectionMetrics>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub single_pair: Option<SinglePairMetrics>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub triplets: Option<TripletMetrics>,
    pub examples: ExampleCountSummary,
}

impl MetricsReport {
    /// Flat `(name, value)` list in a fixed order.
    pub fn metric_values(&self) -> Vec<(&'static str, f64)> {
        let mut out = Vec::new();
        if let Some(d) = &self.detection {
            out.extend([
                ("accuracy", d.accuracy),
                ("f1", d.f1),
                ("precision", d.precision),
                ("recall", d.recall),
                ("unparseable", d.unparseable as f64),
            ]);
        }
        if let Some(s) = &self.single_pair {
            out.extend([
                ("single_pair_accuracy", s.accuracy),
                ("unparseable", s.unparseable as f64),
            ]);
        }
        if let Some(t) = &self.triplets {
            out.extend([
                ("triplet_precision", t.precision),
                ("triplet_recall", t.recall),
                ("triplet_f1", t.f1),
            ]);
        }
        out.extend([
            ("examples_mean", self.examples.mean),
            ("examples_min", self.examples.min as f64),
            ("examples_max", self.examples.max as f64),
            (
                "fallback_instances",
                self.examples.fallback_instances as f64,
            ),
        ]);
        out
    }

    pub fn to_table(&self) -> String {
        let mut rows: Vec<(String, String)> = self
            .config
            .iter()
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect();
        rows.push(("instances".into(), self.instances.to_string()));
        for (name, value) in self.metric_values() {
            let shown = if value.fract() == 0.0 && !name.contains("accuracy") {
                format!("{value:.0}")
            } else {
                format!("{value:.4}")
            };
            rows.push((name.to_string(), shown));
        }
        let width = rows.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
        let mut out = String::new();
        for (k, v) in rows {
            let _ = writeln!(out, "{k:<width$}  {v}");
        }
        out
    }
}
