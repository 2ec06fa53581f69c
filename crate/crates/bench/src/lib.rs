//! Seeded synthetic inputs for the retrieval and scoring benchmarks.

use std::collections::BTreeMap;

use causal_rag::corpus::{CauseEffectPair, Triplet};
use causal_rag::embedding::EmbeddingVector;
use causal_rag::repository::{ExampleRecord, Repository};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const CONNECTIVES: &[&str] = &[
    "caused by",
    "because of",
    "due to",
    "led to",
    "leads to",
    "resulted in",
    "triggered",
    "as a result of",
    "owing to",
    "gave rise to",
    "brought about",
    "stems from",
];

const WORDS: &[&str] = &[
    "rain", "flood", "delay", "fever", "stress", "outage", "storm", "price", "demand", "drug",
    "rash", "fire", "wire", "snow", "traffic", "crash", "loss", "growth", "drought", "famine",
];

fn phrase(rng: &mut ChaCha8Rng, len: usize) -> String {
    (0..len)
        .map(|_| *WORDS.choose(rng).unwrap())
        .collect::<Vec<_>>()
        .join(" ")
}

/// `n` unit vectors of dimension `dim` keyed `r00000`, `r00001`, ...
pub fn random_vectors(n: usize, dim: usize, seed: u64) -> BTreeMap<String, EmbeddingVector> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| (format!("r{i:05}"), random_vector(&mut rng, dim)))
        .collect()
}

pub fn random_vector(rng: &mut ChaCha8Rng, dim: usize) -> EmbeddingVector {
    let mut values: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
    values.iter_mut().for_each(|v| *v /= norm);
    EmbeddingVector::new(values, "bench").unwrap()
}

/// A repository of `n` records spread over the connective list.
pub fn synthetic_repository(n: usize, seed: u64) -> Repository {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let records = (0..n).map(|i| {
        let connective = CONNECTIVES[i % CONNECTIVES.len()];
        let (cause, effect) = (phrase(&mut rng, 2), phrase(&mut rng, 2));
        ExampleRecord {
            id: format!("r{i:05}"),
            raw_text: format!("{effect} {connective} {cause}."),
            tagged_text: format!("<effect>{effect}</effect> {connective} <cause>{cause}</cause>."),
            pairs: vec![CauseEffectPair { cause, effect }],
            connectives: vec![connective.to_string()],
            source: "bench".into(),
            connective_unverified: false,
        }
    });
    Repository::from_records(records, 10, seed)
}

/// Gold triplets for `sentences` sentences and a noisy prediction set:
/// some pairs are copied, some swapped, some widened by a word.
pub fn triplet_sets(sentences: usize, seed: u64) -> (Vec<Triplet>, Vec<Triplet>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut gold = Vec::new();
    let mut predicted = Vec::new();
    for s in 0..sentences {
        let sentence_id = format!("s{s:05}");
        for _ in 0..rng.gen_range(1..=3) {
            let (cause, effect) = (phrase(&mut rng, 3), phrase(&mut rng, 2));
            let t = Triplet {
                sentence_id: sentence_id.clone(),
                cause: cause.clone(),
                effect: effect.clone(),
            };
            match rng.gen_range(0..4) {
                0 => predicted.push(t.clone()),
                1 => predicted.push(Triplet {
                    sentence_id: sentence_id.clone(),
                    cause: effect,
                    effect: cause,
                }),
                2 => predicted.push(Triplet {
                    sentence_id: sentence_id.clone(),
                    cause: format!("the {cause}"),
                    effect,
                }),
                _ => {}
            }
            gold.push(t);
        }
    }
    (gold, predicted)
}
