//! Cause/effect annotated sentences and the dataset files they come from.
//!
//! Sentences carry inline `<cause>…</cause>` / `<effect>…</effect>` markup in
//! their tagged form. Datasets are stored on disk as canonical JSON Lines; the
//! native layouts of the three source corpora are converted by importers in
//! this module.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const CAUSE_OPEN: &str = "<cause>";
pub const CAUSE_CLOSE: &str = "</cause>";
pub const EFFECT_OPEN: &str = "<effect>";
pub const EFFECT_CLOSE: &str = "</effect>";

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CorpusError {
    #[error("unbalanced {tag} tag at byte {offset}")]
    UnbalancedTags { tag: &'static str, offset: usize },
    #[error("nested {inner} tag inside {outer} at byte {offset}")]
    NestedTags {
        outer: &'static str,
        inner: &'static str,
        offset: usize,
    },
    #[error("{tag} tag encloses no text")]
    EmptyPhrase { tag: &'static str },
    #[error("cause and effect are the same phrase: {0:?}")]
    IdenticalPhrases(String),
    #[error(
        "inline tags are ambiguous ({causes} cause, {effects} effect); multi-pair sentences need explicit pairs"
    )]
    AmbiguousPairing { causes: usize, effects: usize },
    #[error("unknown dataset format {0:?} (expected canonical, semeval, ade or li)")]
    UnknownFormat(String),
    #[error("line {line}: {message}")]
    MalformedRecord { line: usize, message: String },
    #[error("dataset contains no records")]
    EmptyDataset,
    #[error("duplicate instance id {0:?}")]
    DuplicateId(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for CorpusError {
    fn from(e: std::io::Error) -> Self {
        CorpusError::Io(e.to_string())
    }
}

/// A single cause phrase and the effect phrase it produces.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CauseEffectPair {
    pub cause: String,
    pub effect: String,
}

impl CauseEffectPair {
    /// Builds a pair with whitespace-collapsed phrases.
    pub fn new(cause: &str, effect: &str) -> Result<Self, CorpusError> {
        let cause = collapse_whitespace(cause);
        let effect = collapse_whitespace(effect);
        if cause.is_empty() {
            return Err(CorpusError::EmptyPhrase { tag: "cause" });
        }
        if effect.is_empty() {
            return Err(CorpusError::EmptyPhrase { tag: "effect" });
        }
        if cause == effect {
            return Err(CorpusError::IdenticalPhrases(cause));
        }
        Ok(CauseEffectPair { cause, effect })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaggedSentence {
    pub id: String,
    pub raw_text: String,
    pub tagged_text: String,
    pub pairs: Vec<CauseEffectPair>,
    pub source: String,
}

impl TaggedSentence {
    pub fn is_causal(&self) -> bool {
        !self.pairs.is_empty()
    }

    pub fn triplets(&self) -> impl Iterator<Item = Triplet> + '_ {
        self.pairs.iter().map(move |p| Triplet {
            sentence_id: self.id.clone(),
            cause: p.cause.clone(),
            effect: p.effect.clone(),
        })
    }
}

/// `(sentence, cause, effect)`: the unit scored in multi-pair extraction.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Triplet {
    pub sentence_id: String,
    pub cause: String,
    pub effect: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Label {
    NonCausal,
    Causal,
}

impl Label {
    pub fn as_u8(self) -> u8 {
        match self {
            Label::NonCausal => 0,
            Label::Causal => 1,
        }
    }

    pub fn from_u8(v: u8) -> Option<Self> {
        match v {
            0 => Some(Label::NonCausal),
            1 => Some(Label::Causal),
            _ => None,
        }
    }
}

impl Serialize for Label {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u8(self.as_u8())
    }
}

impl<'de> Deserialize<'de> for Label {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let v = u8::deserialize(d)?;
        Label::from_u8(v)
            .ok_or_else(|| serde::de::Error::custom(format!("label must be 0 or 1, got {v}")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledInstance {
    pub sentence: TaggedSentence,
    pub label: Label,
}

impl LabeledInstance {
    pub fn id(&self) -> &str {
        &self.sentence.id
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub total: usize,
    pub causal: usize,
    pub non_causal: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetSplit {
    pub name: String,
    pub instances: Vec<LabeledInstance>,
    pub counts: SplitCounts,
}

impl DatasetSplit {
    /// Validates ids and computes counts.
    pub fn new(
        name: impl Into<String>,
        instances: Vec<LabeledInstance>,
    ) -> Result<Self, CorpusError> {
        let mut seen = HashSet::new();
        let mut counts = SplitCounts::default();
        for inst in &instances {
            if !seen.insert(inst.id().to_string()) {
                return Err(CorpusError::DuplicateId(inst.id().to_string()));
            }
            counts.total += 1;
            match inst.label {
                Label::Causal => counts.causal += 1,
                Label::NonCausal => counts.non_causal += 1,
            }
        }
        Ok(DatasetSplit {
            name: name.into(),
            instances,
            counts,
        })
    }

    pub fn causal_sentences(&self) -> impl Iterator<Item = &TaggedSentence> {
        self.instances
            .iter()
            .filter(|i| i.label == Label::Causal)
            .map(|i| &i.sentence)
    }

    pub fn get(&self, id: &str) -> Option<&LabeledInstance> {
        self.instances.iter().find(|i| i.id() == id)
    }

    pub fn gold_triplets(&self) -> Vec<Triplet> {
        self.causal_sentences().flat_map(|s| s.triplets()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DatasetStats {
    pub total: usize,
    pub causal: usize,
    pub non_causal: usize,
    pub triplets: usize,
    /// Causal sentences keyed by their exact pair count.
    pub pairs_per_sentence: BTreeMap<usize, usize>,
}

pub fn dataset_stats(split: &DatasetSplit) -> DatasetStats {
    let mut pairs_per_sentence = BTreeMap::new();
    let mut triplets = 0;
    for s in split.causal_sentences() {
        triplets += s.pairs.len();
        *pairs_per_sentence.entry(s.pairs.len()).or_insert(0) += 1;
    }
    DatasetStats {
        total: split.counts.total,
        causal: split.counts.causal,
        non_causal: split.counts.non_causal,
        triplets,
        pairs_per_sentence,
    }
}

pub fn collapse_whitespace(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Removes cause/effect markers and collapses whitespace.
pub fn strip_tags(tagged_text: &str) -> String {
    let mut out = tagged_text.to_string();
    for tag in [CAUSE_OPEN, CAUSE_CLOSE, EFFECT_OPEN, EFFECT_CLOSE] {
        out = out.replace(tag, "");
    }
    collapse_whitespace(&out)
}

pub fn sentence_id(source: &str, ordinal: usize) -> String {
    format!("{source}-{ordinal:06}")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
enum TagKind {
    Cause,
    Effect,
}

impl TagKind {
    fn name(self) -> &'static str {
        match self {
            TagKind::Cause => "cause",
            TagKind::Effect => "effect",
        }
    }
}

/// Tagged spans in textual order.
fn scan_spans(line: &str) -> Result<Vec<(TagKind, String)>, CorpusError> {
    const MARKERS: [(&str, TagKind, bool); 4] = [
        (CAUSE_OPEN, TagKind::Cause, true),
        (CAUSE_CLOSE, TagKind::Cause, false),
        (EFFECT_OPEN, TagKind::Effect, true),
        (EFFECT_CLOSE, TagKind::Effect, false),
    ];
    let mut spans = Vec::new();
    let mut open: Option<(TagKind, usize, usize)> = None;
    let mut pos = 0;
    while pos < line.len() {
        let rest = &line[pos..];
        let Some(&(marker, kind, is_open)) = MARKERS.iter().find(|(m, _, _)| rest.starts_with(m))
        else {
            pos += rest.chars().next().map_or(1, char::len_utf8);
            continue;
        };
        match (is_open, open) {
            (true, None) => open = Some((kind, pos, pos + marker.len())),
            (true, Some((outer, _, _))) => {
                return Err(CorpusError::NestedTags {
                    outer: outer.name(),
                    inner: kind.name(),
                    offset: pos,
                })
            }
            (false, Some((k, _, start))) if k == kind => {
                let phrase = strip_tags(&line[start..pos]);
                if phrase.is_empty() {
                    return Err(CorpusError::EmptyPhrase { tag: kind.name() });
                }
                spans.push((kind, phrase));
                open = None;
            }
            (false, _) => {
                return Err(CorpusError::UnbalancedTags {
                    tag: kind.name(),
                    offset: pos,
                })
            }
        }
        pos += marker.len();
    }
    if let Some((kind, offset, _)) = open {
        return Err(CorpusError::UnbalancedTags {
            tag: kind.name(),
            offset,
        });
    }
    Ok(spans)
}

/// Parses a sentence with inline markup. Only a single cause/effect tag pair
/// is accepted inline; anything else needs explicit pairs.
pub fn parse_tagged_sentence(
    line: &str,
    source: &str,
    ordinal: usize,
) -> Result<TaggedSentence, CorpusError> {
    let spans = scan_spans(line)?;
    let causes: Vec<&str> = spans
        .iter()
        .filter(|(k, _)| *k == TagKind::Cause)
        .map(|(_, p)| p.as_str())
        .collect();
    let effects: Vec<&str> = spans
        .iter()
        .filter(|(k, _)| *k == TagKind::Effect)
        .map(|(_, p)| p.as_str())
        .collect();
    let pairs = match (causes.len(), effects.len()) {
        (0, 0) => Vec::new(),
        (1, 1) => vec![CauseEffectPair::new(causes[0], effects[0])?],
        (c, e) => {
            return Err(CorpusError::AmbiguousPairing {
                causes: c,
                effects: e,
            })
        }
    };
    Ok(TaggedSentence {
        id: sentence_id(source, ordinal),
        raw_text: strip_tags(line),
        tagged_text: line.trim().to_string(),
        pairs,
        source: source.to_string(),
    })
}

/// Finds a free occurrence of `needle` in `haystack`, skipping byte ranges in
/// `taken`. Occurrences at token boundaries win over ones inside a word.
fn find_free(haystack: &str, needle: &str, taken: &[(usize, usize)]) -> Option<usize> {
    let word = |c: Option<char>| c.is_some_and(char::is_alphanumeric);
    let mut inside_word = None;
    let mut from = 0;
    while let Some(rel) = haystack[from..].find(needle) {
        let start = from + rel;
        let end = start + needle.len();
        if !taken.iter().any(|&(s, e)| start < e && s < end) {
            let glued_left =
                word(needle.chars().next()) && word(haystack[..start].chars().next_back());
            let glued_right =
                word(needle.chars().next_back()) && word(haystack[end..].chars().next());
            if !glued_left && !glued_right {
                return Some(start);
            }
            inside_word.get_or_insert(start);
        }
        from = start + haystack[start..].chars().next().map_or(1, char::len_utf8);
    }
    inside_word
}

/// Inserts cause/effect markup around the first free occurrence of each
/// distinct phrase. Phrases that cannot be located are left untagged.
pub fn render_tagged(raw_text: &str, pairs: &[CauseEffectPair]) -> String {
    let mut spans: Vec<(usize, usize, TagKind)> = Vec::new();
    let mut done: HashSet<(TagKind, &str)> = HashSet::new();
    for pair in pairs {
        for (kind, phrase) in [
            (TagKind::Cause, pair.cause.as_str()),
            (TagKind::Effect, pair.effect.as_str()),
        ] {
            if !done.insert((kind, phrase)) {
                continue;
            }
            let taken: Vec<(usize, usize)> = spans.iter().map(|&(s, e, _)| (s, e)).collect();
            if let Some(start) = find_free(raw_text, phrase, &taken) {
                spans.push((start, start + phrase.len(), kind));
            }
        }
    }
    spans.sort_by_key(|&(s, _, _)| s);
    let mut out = String::with_capacity(raw_text.len() + spans.len() * 17);
    let mut cursor = 0;
    for (start, end, kind) in spans {
        let (open, close) = match kind {
            TagKind::Cause => (CAUSE_OPEN, CAUSE_CLOSE),
            TagKind::Effect => (EFFECT_OPEN, EFFECT_CLOSE),
        };
        out.push_str(&raw_text[cursor..start]);
        out.push_str(open);
        out.push_str(&raw_text[start..end]);
        out.push_str(close);
        cursor = end;
    }
    out.push_str(&raw_text[cursor..]);
    out
}

/// One line of a canonical dataset file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CanonicalRecord {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    pub text: String,
    pub label: Label,
    #[serde(default)]
    pub pairs: Vec<CauseEffectPair>,
    pub source: String,
}

impl CanonicalRecord {
    fn into_instance(self, ordinal: usize, line: usize) -> Result<LabeledInstance, CorpusError> {
        let malformed = |message: String| CorpusError::MalformedRecord { line, message };
        let raw_text = strip_tags(&self.text);
        if raw_text.is_empty() {
            return Err(malformed("empty text".into()));
        }
        let mut pairs = Vec::with_capacity(self.pairs.len());
        for p in &self.pairs {
            let pair =
                CauseEffectPair::new(&p.cause, &p.effect).map_err(|e| malformed(e.to_string()))?;
            for phrase in [&pair.cause, &pair.effect] {
                if !raw_text.contains(phrase.as_str()) {
                    return Err(malformed(format!(
                        "phrase {phrase:?} does not occur in text"
                    )));
                }
            }
            pairs.push(pair);
        }
        match self.label {
            Label::Causal if pairs.is_empty() => {
                return Err(malformed("causal record without pairs".into()))
            }
            Label::NonCausal if !pairs.is_empty() => {
                return Err(malformed("non-causal record with pairs".into()))
            }
            _ => {}
        }
        let id = self
            .id
            .unwrap_or_else(|| sentence_id(&self.source, ordinal));
        let tagged_text = render_tagged(&raw_text, &pairs);
        Ok(LabeledInstance {
            sentence: TaggedSentence {
                id,
                raw_text,
                tagged_text,
                pairs,
                source: self.source,
            },
            label: self.label,
        })
    }

    pub fn from_instance(inst: &LabeledInstance) -> Self {
        CanonicalRecord {
            id: Some(inst.sentence.id.clone()),
            text: inst.sentence.raw_text.clone(),
            label: inst.label,
            pairs: inst.sentence.pairs.clone(),
            source: inst.sentence.source.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetFormat {
    Canonical,
    Semeval,
    Ade,
    Li,
}

impl DatasetFormat {
    pub fn source_name(self) -> &'static str {
        match self {
            DatasetFormat::Canonical => "canonical",
            DatasetFormat::Semeval => "semeval",
            DatasetFormat::Ade => "ade",
            DatasetFormat::Li => "li",
        }
    }
}

impl FromStr for DatasetFormat {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "canonical" | "jsonl" => Ok(DatasetFormat::Canonical),
            "semeval" => Ok(DatasetFormat::Semeval),
            "ade" => Ok(DatasetFormat::Ade),
            "li" => Ok(DatasetFormat::Li),
            other => Err(CorpusError::UnknownFormat(other.to_string())),
        }
    }
}

impl fmt::Display for DatasetFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.source_name())
    }
}

fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim_end_matches('\r')))
        .filter(|(_, l)| !l.trim().is_empty())
}

fn parse_label(field: &str, line: usize) -> Result<Label, CorpusError> {
    field
        .trim()
        .parse::<u8>()
        .ok()
        .and_then(Label::from_u8)
        .ok_or_else(|| CorpusError::MalformedRecord {
            line,
            message: format!("label must be 0 or 1, got {field:?}"),
        })
}

/// `label<TAB>sentence`, causal sentences carrying one inline cause/effect tag pair.
fn import_semeval(text: &str, source: &str) -> Result<Vec<LabeledInstance>, CorpusError> {
    let mut out = Vec::new();
    for (ordinal, (line, content)) in content_lines(text).enumerate() {
        let (label, sentence) =
            content
                .split_once('\t')
                .ok_or_else(|| CorpusError::MalformedRecord {
                    line,
                    message: "expected label<TAB>sentence".into(),
                })?;
        let label = parse_label(label, line)?;
        let sentence = parse_tagged_sentence(sentence, source, ordinal).map_err(|e| {
            CorpusError::MalformedRecord {
                line,
                message: e.to_string(),
            }
        })?;
        if (label == Label::Causal) != sentence.is_causal() {
            return Err(CorpusError::MalformedRecord {
                line,
                message: "label disagrees with tags".into(),
            });
        }
        out.push(LabeledInstance { sentence, label });
    }
    Ok(out)
}

/// ADE corpus layout: `PMID|sentence|effect|begin|end|drug|begin|end` for
/// drug/adverse-effect relations, `PMID NEG sentence` for negatives.
fn import_ade(text: &str, source: &str) -> Result<Vec<LabeledInstance>, CorpusError> {
    let mut out = Vec::new();
    for (ordinal, (line, content)) in content_lines(text).enumerate() {
        let fields: Vec<&str> = content.split('|').collect();
        let canonical = if fields.len() == 8 {
            CanonicalRecord {
                id: None,
                text: fields[1].to_string(),
                label: Label::Causal,
                pairs: vec![CauseEffectPair {
                    cause: fields[5].to_string(),
                    effect: fields[2].to_string(),
                }],
                source: source.to_string(),
            }
        } else {
            let mut parts = content.splitn(3, ' ');
            match (parts.next(), parts.next(), parts.next()) {
                (Some(_pmid), Some("NEG"), Some(sentence)) => CanonicalRecord {
                    id: None,
                    text: sentence.to_string(),
                    label: Label::NonCausal,
                    pairs: Vec::new(),
                    source: source.to_string(),
                },
                _ => {
                    return Err(CorpusError::MalformedRecord {
                        line,
                        message: "expected 8 pipe-separated fields or `PMID NEG sentence`".into(),
                    })
                }
            }
        };
        out.push(canonical.into_instance(ordinal, line)?);
    }
    Ok(out)
}

/// `label<TAB>sentence<TAB>cause => effect | cause => effect`; the third
/// field is omitted (or empty) for non-causal sentences. Inline tags in the
/// sentence are stripped.
fn import_li(text: &str, source: &str) -> Result<Vec<LabeledInstance>, CorpusError> {
    let mut out = Vec::new();
    for (ordinal, (line, content)) in content_lines(text).enumerate() {
        let mut fields = content.split('\t');
        let (Some(label), Some(sentence)) = (fields.next(), fields.next()) else {
            return Err(CorpusError::MalformedRecord {
                line,
                message: "expected label<TAB>sentence[<TAB>pairs]".into(),
            });
        };
        let label = parse_label(label, line)?;
        let mut pairs = Vec::new();
        for item in fields
            .next()
            .unwrap_or("")
            .split('|')
            .filter(|s| !s.trim().is_empty())
        {
            let (cause, effect) =
                item.split_once("=>")
                    .ok_or_else(|| CorpusError::MalformedRecord {
                        line,
                        message: format!("pair {item:?} is not `cause => effect`"),
                    })?;
            pairs.push(CauseEffectPair {
                cause: cause.to_string(),
                effect: effect.to_string(),
            });
        }
        let record = CanonicalRecord {
            id: None,
            text: sentence.to_string(),
            label,
            pairs,
            source: source.to_string(),
        };
        out.push(record.into_instance(ordinal, line)?);
    }
    Ok(out)
}

fn import_canonical(text: &str) -> Result<Vec<LabeledInstance>, CorpusError> {
    let mut out = Vec::new();
    for (ordinal, (line, content)) in content_lines(text).enumerate() {
        let record: CanonicalRecord =
            serde_json::from_str(content).map_err(|e| CorpusError::MalformedRecord {
                line,
                message: e.to_string(),
            })?;
        out.push(record.into_instance(ordinal, line)?);
    }
    Ok(out)
}

/// Parses dataset text in the given layout.
pub fn parse_dataset(
    text: &str,
    format: DatasetFormat,
    name: &str,
) -> Result<DatasetSplit, CorpusError> {
    let source = format.source_name();
    let instances = match format {
        DatasetFormat::Canonical => import_canonical(text)?,
        DatasetFormat::Semeval => import_semeval(text, source)?,
        DatasetFormat::Ade => import_ade(text, source)?,
        DatasetFormat::Li => import_li(text, source)?,
    };
    if instances.is_empty() {
        return Err(CorpusError::EmptyDataset);
    }
    DatasetSplit::new(name, instances)
}

pub fn load_dataset(path: &Path, format: DatasetFormat) -> Result<DatasetSplit, CorpusError> {
    let text = fs::read_to_string(path)?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| format.source_name().to_string());
    parse_dataset(&text, format, &name)
}

/// Writes a split as canonical JSON Lines, one record per instance in split order.
pub fn write_canonical<W: Write>(split: &DatasetSplit, mut out: W) -> std::io::Result<()> {
    for inst in &split.instances {
        let line = serde_json::to_string(&CanonicalRecord::from_instance(inst))
            .map_err(std::io::Error::other)?;
        out.write_all(line.as_bytes())?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn parses_single_pair_from_inline_tags() {
        let s = parse_tagged_sentence(
            "Highly viscous <cause> lavas </cause> lead to a violent <effect> eruption </effect>.",
            "demo",
            3,
        )
        .unwrap();
        assert_eq!(
            s.pairs,
            vec![CauseEffectPair::new("lavas", "eruption").unwrap()]
        );
        assert_eq!(
            s.raw_text,
            "Highly viscous lavas lead to a violent eruption ."
        );
        assert_eq!(s.id, "demo-000003");
    }

    #[test]
    fn untagged_line_passes_through() {
        let s = parse_tagged_sentence("no tags here.", "demo", 0).unwrap();
        assert!(s.pairs.is_empty());
        assert_eq!(s.raw_text, "no tags here.");
    }

    #[test]
    fn malformed_tags_are_rejected() {
        assert!(matches!(
            parse_tagged_sentence("a <cause> b </cause> c <effect>", "d", 0),
            Err(CorpusError::UnbalancedTags { tag: "effect", .. })
        ));
        assert!(matches!(
            parse_tagged_sentence("a </cause> b", "d", 0),
            Err(CorpusError::UnbalancedTags { tag: "cause", .. })
        ));
        assert!(matches!(
            parse_tagged_sentence("<cause>a <effect>b</effect></cause>", "d", 0),
            Err(CorpusError::NestedTags { .. })
        ));
        assert_eq!(
            parse_tagged_sentence("<cause>  </cause> x <effect>y</effect>", "d", 0),
            Err(CorpusError::EmptyPhrase { tag: "cause" })
        );
        assert!(matches!(
            parse_tagged_sentence(
                "<cause>a</cause> and <cause>b</cause> cause <effect>c</effect>",
                "d",
                0
            ),
            Err(CorpusError::AmbiguousPairing {
                causes: 2,
                effects: 1
            })
        ));
    }

    #[test]
    fn strip_tags_examples() {
        assert_eq!(
            strip_tags("<cause> lavas </cause> lead to <effect> eruption </effect>"),
            "lavas lead to eruption"
        );
        assert_eq!(strip_tags("plain"), "plain");
        assert_eq!(strip_tags("a  <cause>b</cause>  c"), "a b c");
    }

    #[test]
    fn hyphenated_attachment_survives() {
        let s = parse_tagged_sentence(
            "the onset of <cause> troglitazone </cause> -induced <effect> liver injury </effect> is insidious",
            "ade",
            1,
        )
        .unwrap();
        assert_eq!(s.pairs[0].cause, "troglitazone");
        assert!(s.raw_text.contains("troglitazone -induced liver injury"));
    }

    #[test]
    fn canonical_counts_and_generated_ids() {
        let text = concat!(
            r#"{"text":"Stress causes fever.","label":1,"pairs":[{"cause":"Stress","effect":"fever"}],"source":"t"}"#,
            "\n",
            r#"{"text":"The cat sat.","label":0,"source":"t"}"#,
            "\n"
        );
        let split = parse_dataset(text, DatasetFormat::Canonical, "x").unwrap();
        assert_eq!(
            split.counts,
            SplitCounts {
                total: 2,
                causal: 1,
                non_causal: 1
            }
        );
        assert_eq!(split.instances[0].id(), "t-000000");
        assert_eq!(split.instances[1].id(), "t-000001");
        assert_eq!(
            split.instances[0].sentence.tagged_text,
            "<cause>Stress</cause> causes <effect>fever</effect>."
        );
    }

    #[test]
    fn empty_and_malformed_datasets() {
        assert_eq!(
            parse_dataset("", DatasetFormat::Canonical, "x"),
            Err(CorpusError::EmptyDataset)
        );
        let bad = "{\"text\":\"a\",\"label\":1,\"pairs\":[],\"source\":\"t\"}\n";
        assert!(matches!(
            parse_dataset(bad, DatasetFormat::Canonical, "x"),
            Err(CorpusError::MalformedRecord { line: 1, .. })
        ));
        let not_json = "{\"text\":\"a\",\"label\":0,\"source\":\"t\"}\n{oops\n";
        assert!(matches!(
            parse_dataset(not_json, DatasetFormat::Canonical, "x"),
            Err(CorpusError::MalformedRecord { line: 2, .. })
        ));
        assert!(matches!(
            "conll".parse::<DatasetFormat>(),
            Err(CorpusError::UnknownFormat(_))
        ));
    }

    #[test]
    fn native_importers() {
        let semeval = "1\tDogs develop a <effect>fever</effect> from <cause>stress</cause> and/or pain.\n0\tThe researchers placed the compound in a tube.\n";
        let split = parse_dataset(semeval, DatasetFormat::Semeval, "s").unwrap();
        assert_eq!(split.counts.causal, 1);
        assert_eq!(split.instances[0].sentence.pairs[0].cause, "stress");

        let ade = "10030778|Benzocaine-induced methemoglobinemia has been reported.|methemoglobinemia|11|28|Benzocaine|0|10\n123 NEG The man placed the cartridge into the printer.\n";
        let split = parse_dataset(ade, DatasetFormat::Ade, "a").unwrap();
        assert_eq!(
            split.counts,
            SplitCounts {
                total: 2,
                causal: 1,
                non_causal: 1
            }
        );
        assert_eq!(split.instances[0].sentence.pairs[0].cause, "Benzocaine");
        assert_eq!(
            split.instances[0].sentence.pairs[0].effect,
            "methemoglobinemia"
        );

        let li = "1\tParalysis or convulsions are caused by hormone deficiencies and imbalances .\thormone deficiencies and imbalances => Paralysis | hormone deficiencies and imbalances => convulsions\n0\tThis theme has been covered in science fiction like Star Trek.\n";
        let split = parse_dataset(li, DatasetFormat::Li, "l").unwrap();
        let stats = dataset_stats(&split);
        assert_eq!(stats.triplets, 2);
        assert_eq!(stats.pairs_per_sentence, BTreeMap::from([(2, 1)]));
        assert_eq!(
            split.instances[0].sentence.tagged_text,
            "<effect>Paralysis</effect> or <effect>convulsions</effect> are caused by <cause>hormone deficiencies and imbalances</cause> ."
        );
    }

    #[test]
    fn stats_of_non_causal_split() {
        let text = (0..3)
            .map(|i| format!("{{\"text\":\"plain {i}\",\"label\":0,\"source\":\"n\"}}\n"))
            .collect::<String>();
        let stats = dataset_stats(&parse_dataset(&text, DatasetFormat::Canonical, "n").unwrap());
        assert_eq!((stats.total, stats.causal, stats.non_causal), (3, 0, 3));
        assert!(stats.pairs_per_sentence.is_empty());
    }

    #[test]
    fn canonical_writer_round_trips() {
        let text = "{\"id\":\"q-1\",\"text\":\"Smoke causes cancer.\",\"label\":1,\"pairs\":[{\"cause\":\"Smoke\",\"effect\":\"cancer\"}],\"source\":\"q\"}\n";
        let split = parse_dataset(text, DatasetFormat::Canonical, "q").unwrap();
        let mut buf = Vec::new();
        write_canonical(&split, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), text);
    }

    #[test]
    fn render_prefers_whole_words() {
        let pairs = [CauseEffectPair {
            cause: "ai aj".into(),
            effect: "hh".into(),
        }];
        assert_eq!(
            render_tagged("ahh hh ba ai aj hha", &pairs),
            "ahh <effect>hh</effect> ba <cause>ai aj</cause> hha"
        );
        let pairs = [CauseEffectPair {
            cause: "Benzocaine".into(),
            effect: "methemoglobinemia".into(),
        }];
        assert_eq!(
            render_tagged("Benzocaine-induced methemoglobinemia.", &pairs),
            "<cause>Benzocaine</cause>-induced <effect>methemoglobinemia</effect>."
        );
    }

    fn word() -> impl Strategy<Value = String> {
        "[a-z]{1,6}"
    }

    proptest! {
        #[test]
        fn parse_then_strip_equals_strip(
            pre in prop::collection::vec(word(), 0..4),
            cause in prop::collection::vec(word(), 1..3),
            mid in prop::collection::vec(word(), 1..4),
            effect in prop::collection::vec(word(), 1..3),
            post in prop::collection::vec(word(), 0..4),
        ) {
            let line = format!(
                "{} <cause> {} </cause>  {} <effect>{}</effect> {}",
                pre.join(" "), cause.join(" "), mid.join(" "), effect.join(" "), post.join(" ")
            );
            match parse_tagged_sentence(&line, "p", 0) {
                Ok(s) => {
                    prop_assert_eq!(&s.raw_text, &strip_tags(&line));
                    for p in &s.pairs {
                        prop_assert!(s.raw_text.contains(&p.cause));
                        prop_assert!(s.raw_text.contains(&p.effect));
                    }
                }
                Err(CorpusError::IdenticalPhrases(_)) => prop_assume!(false),
                Err(e) => prop_assert!(false, "unexpected {e}"),
            }
        }

        #[test]
        fn render_reproduces_tag_structure(
            words in prop::collection::btree_set("[a-z]{2,6}", 6..12),
            cause_first in any::<bool>(),
        ) {
            // Distinct words, so each phrase has exactly one occurrence.
            let w: Vec<String> = words.into_iter().collect();
            let (c, e) = (w[1..3].join(" "), w[4].clone());
            let line = if cause_first {
                format!("{} <cause>{}</cause> {} <effect>{}</effect> {}", w[0], c, w[3], e, w[5..].join(" "))
            } else {
                format!("{} <effect>{}</effect> {} <cause>{}</cause> {}", w[0], e, w[3], c, w[5..].join(" "))
            };
            let parsed = parse_tagged_sentence(&line, "p", 0).unwrap();
            let rendered = render_tagged(&parsed.raw_text, &parsed.pairs);
            let reparsed = parse_tagged_sentence(&rendered, "p", 0).unwrap();
            prop_assert_eq!(reparsed.pairs, parsed.pairs);
            prop_assert_eq!(rendered, collapse_whitespace(&line));
        }
    }
}
